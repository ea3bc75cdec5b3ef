import configparser
import hashlib
import random
import struct
from importlib import resources

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from timeguard.protocol import (
    HEARTBEAT_MAX_LEN,
    HEARTBEAT_MIN_LEN,
    AgentKey,
    AuthFailure,
    CodecError,
    Direction,
    HeartbeatMsg,
    MalformedDatagram,
    SealedDatagram,
    SignalCode,
    SignalPayload,
    TestDoubleCipher,
    compute_response,
    datagram_sender,
    decode_heartbeat,
    derive_nonce,
    encode_heartbeat,
    verify_response,
)

CIPHER = TestDoubleCipher()
KEY = AgentKey(5, bytes(range(100, 132)))
OTHER = AgentKey(6, bytes(range(1, 33)))


# --- independent reference construction ----------------------------------


def ref_plaintext(direction, ordinal, challenge, tag, ts, code, detail):
    return (
        bytes([direction])
        + ordinal.to_bytes(8, "big")
        + challenge
        + tag
        + ts.to_bytes(8, "big", signed=True)
        + bytes([code, len(detail)])
        + detail
    )


def ref_seal(node, key, nonce, pt):
    header = b"CRF1" + node.to_bytes(8, "big") + nonce + len(pt).to_bytes(2, "big")
    ks = hashlib.shake_256(b"ks" + key + nonce).digest(len(pt))
    ct = bytes(a ^ b for a, b in zip(pt, ks))
    tag = hashlib.blake2b(header + pt, key=key, digest_size=16, person=b"crf1-tag").digest()
    return header + ct + tag


def ref_response(key, challenge, ordinal, t):
    data = challenge + ordinal.to_bytes(8, "big") + t.to_bytes(8, "big", signed=True)
    return hashlib.blake2b(data, key=key, digest_size=16, person=b"crf1-response").digest()


def golden_vectors():
    parser = configparser.ConfigParser()
    parser.read_string(resources.files("timeguard").joinpath("data/golden_vectors.txt").read_text())
    return {name: parser[name] for name in parser.sections()}


# --- codec -----------------------------------------------------------------


def test_first_down_is_51_bytes():
    msg = HeartbeatMsg(Direction.DOWN, 1, bytes(16), 0)
    # 1 + 8 + 16 + 16 + 8 + 1 + 1 + 0
    golden = bytes.fromhex("01" "0000000000000001" + "00" * 16 + "00" * 16 + "00" * 8 + "00" "00")
    assert len(golden) == 51
    assert encode_heartbeat(msg) == golden
    assert decode_heartbeat(golden) == msg


def test_encoding_matches_reference_layout():
    c, t = bytes(range(16)), bytes(range(16, 32))
    msg = HeartbeatMsg(Direction.UP, 2**40 + 3, c, -123_456, t, SignalPayload(SignalCode.AGENT_LOCAL_ANOMALY, b"xyz"))
    assert encode_heartbeat(msg) == ref_plaintext(2, 2**40 + 3, c, t, -123_456, 3, b"xyz")


@pytest.mark.parametrize(
    "mutate, why",
    [
        (lambda b: b"\x03" + b[1:], "unknown direction"),
        (lambda b: b"\x00" + b[1:], "zero direction"),
        (lambda b: b[:50] + b"\x41" + b[51:], "detail length over 64"),
        (lambda b: b + b"\x00", "trailing byte"),
        (lambda b: b[:49] + b"\x09" + b[50:], "unknown signal code"),
    ],
)
def test_decode_rejects(mutate, why):
    good = encode_heartbeat(HeartbeatMsg(Direction.DOWN, 1, bytes(16), 0))
    with pytest.raises(CodecError):
        decode_heartbeat(mutate(good))


def test_down_requires_zero_tag():
    with pytest.raises(ValueError):
        HeartbeatMsg(Direction.DOWN, 1, bytes(16), 0, b"\x01" * 16)


def test_detail_limit():
    SignalPayload(SignalCode.NONE, bytes(64))
    with pytest.raises(ValueError):
        SignalPayload(SignalCode.NONE, bytes(65))


def messages():
    direction = st.sampled_from(list(Direction))
    return st.builds(
        lambda d, o, c, t, ts, code, detail: HeartbeatMsg(
            d, o, c, ts, bytes(16) if d is Direction.DOWN else t, SignalPayload(code, detail)
        ),
        direction,
        st.integers(0, 2**64 - 1),
        st.binary(min_size=16, max_size=16),
        st.binary(min_size=16, max_size=16),
        st.integers(-(2**63), 2**63 - 1),
        st.sampled_from(list(SignalCode)),
        st.binary(max_size=64),
    )


def random_message(rng: random.Random) -> HeartbeatMsg:
    d = rng.choice(list(Direction))
    return HeartbeatMsg(
        d,
        rng.getrandbits(64),
        rng.randbytes(16),
        rng.randrange(-(2**63), 2**63),
        bytes(16) if d is Direction.DOWN else rng.randbytes(16),
        SignalPayload(rng.choice(list(SignalCode)), rng.randbytes(rng.randrange(65))),
    )


def test_codec_round_trips_ten_thousand_messages():
    rng = random.Random(20240901)
    for _ in range(10_000):
        msg = random_message(rng)
        data = encode_heartbeat(msg)
        assert HEARTBEAT_MIN_LEN <= len(data) <= HEARTBEAT_MAX_LEN
        assert decode_heartbeat(data) == msg
        assert encode_heartbeat(decode_heartbeat(data)) == data


@given(messages())
def test_every_truncation_is_rejected(msg):
    data = encode_heartbeat(msg)
    for n in range(len(data)):
        with pytest.raises(CodecError):
            decode_heartbeat(data[:n])


@settings(max_examples=500)
@given(st.binary(min_size=HEARTBEAT_MIN_LEN, max_size=HEARTBEAT_MAX_LEN))
def test_codec_totality(blob):
    try:
        msg = decode_heartbeat(blob)
    except CodecError:
        return
    assert encode_heartbeat(msg) == blob


@settings(max_examples=300)
@given(messages())
def test_codec_totality_on_valid_encodings(msg):
    data = encode_heartbeat(msg)
    assert encode_heartbeat(decode_heartbeat(data)) == data


# --- sealed envelope -------------------------------------------------------


def test_golden_vectors_match_independent_construction():
    vectors = golden_vectors()
    assert len(vectors) == 5
    for name, v in vectors.items():
        node = int(v["node"])
        key = bytes.fromhex(v["key"])
        nonce = bytes.fromhex(v["nonce"])
        pt = bytes.fromhex(v["plaintext"])
        sealed = bytes.fromhex(v["sealed"])
        assert ref_seal(node, key, nonce, pt) == sealed, name
        assert CIPHER.seal_bytes(AgentKey(node, key), nonce, pt) == sealed, name
        assert CIPHER.open_bytes(AgentKey(node, key), sealed) == pt, name
        msg = decode_heartbeat(pt)
        assert nonce == derive_nonce(msg.direction, msg.ordinal), name
        if msg.direction is Direction.UP:
            assert msg.response_tag == ref_response(key, msg.challenge, msg.ordinal, msg.timestamp), name


def test_golden_down_first_plaintext():
    v = golden_vectors()["down-first"]
    assert v["plaintext"] == "01" + "0000000000000001" + "00" * 42


def test_seal_open_round_trip():
    pt = encode_heartbeat(HeartbeatMsg(Direction.UP, 9, b"c" * 16, 1234, b"t" * 16))
    nonce = derive_nonce(Direction.UP, 9)
    dg = CIPHER.seal(KEY, nonce, pt)
    assert dg.sender == KEY.node and len(dg.ciphertext) == len(pt)
    assert CIPHER.open(KEY, dg) == pt
    assert SealedDatagram.from_bytes(dg.to_bytes()) == dg
    assert datagram_sender(dg.to_bytes()) == KEY.node


def test_last_tag_byte_flipped():
    data = bytearray(CIPHER.seal_bytes(KEY, derive_nonce(Direction.DOWN, 1), b"hello"))
    data[-1] ^= 1
    with pytest.raises(AuthFailure):
        CIPHER.open_bytes(KEY, bytes(data))


def test_wrong_key_fails():
    data = CIPHER.seal_bytes(KEY, derive_nonce(Direction.DOWN, 1), b"hello")
    with pytest.raises(AuthFailure):
        CIPHER.open_bytes(OTHER, data)


def test_every_single_bit_flip_fails():
    pt = encode_heartbeat(HeartbeatMsg(Direction.UP, 3, bytes(range(16)), 90_000, bytes(16)))
    data = CIPHER.seal_bytes(KEY, derive_nonce(Direction.UP, 3), pt)
    for i in range(len(data)):
        for bit in range(8):
            bad = bytearray(data)
            bad[i] ^= 1 << bit
            region_framing = i < 4 or 24 <= i < 26
            expected = MalformedDatagram if region_framing else AuthFailure
            with pytest.raises(expected):
                CIPHER.open_bytes(KEY, bytes(bad))


def test_sealed_truncations_are_malformed():
    data = CIPHER.seal_bytes(KEY, derive_nonce(Direction.DOWN, 1), bytes(51))
    for n in range(len(data)):
        with pytest.raises(MalformedDatagram):
            CIPHER.open_bytes(KEY, data[:n])


def test_bad_magic_is_malformed():
    data = CIPHER.seal_bytes(KEY, derive_nonce(Direction.DOWN, 1), b"x")
    with pytest.raises(MalformedDatagram):
        SealedDatagram.from_bytes(b"XRF1" + data[4:])


def test_no_plaintext_timestamp_in_sealed_bytes():
    rng = random.Random(7)
    for _ in range(2000):
        msg = random_message(rng)
        sealed = CIPHER.seal_bytes(KEY, derive_nonce(msg.direction, msg.ordinal), encode_heartbeat(msg))
        assert struct.pack(">q", msg.timestamp) not in sealed


@given(st.sampled_from(list(Direction)), st.integers(0, 2**64 - 1), st.integers(0, 2**64 - 1))
def test_nonce_determinism(direction, a, b):
    assert derive_nonce(direction, a) == derive_nonce(direction, a)
    assert len(derive_nonce(direction, a)) == 12
    if a != b:
        assert derive_nonce(direction, a) != derive_nonce(direction, b)
    other = Direction.UP if direction is Direction.DOWN else Direction.DOWN
    assert derive_nonce(direction, a) != derive_nonce(other, a)


def test_seal_is_deterministic():
    a = CIPHER.seal_bytes(KEY, derive_nonce(Direction.UP, 4), b"payload")
    b = CIPHER.seal_bytes(KEY, derive_nonce(Direction.UP, 4), b"payload")
    assert a == b


def test_chacha_binding_meets_contract():
    pytest.importorskip("cryptography")
    from timeguard.protocol import ChaChaCipher

    cipher = ChaChaCipher()
    nonce = derive_nonce(Direction.UP, 11)
    data = cipher.seal_bytes(KEY, nonce, b"heartbeat")
    assert cipher.open_bytes(KEY, data) == b"heartbeat"
    for i in (5, 13, 30, len(data) - 1):
        bad = bytearray(data)
        bad[i] ^= 0x80
        with pytest.raises(AuthFailure):
            cipher.open_bytes(KEY, bytes(bad))
    with pytest.raises(AuthFailure):
        cipher.open_bytes(OTHER, data)


# --- challenge / response --------------------------------------------------


def test_response_matches_reference():
    c = bytes(range(16))
    assert compute_response(KEY, c, 7, -5) == ref_response(KEY.key_bytes, c, 7, -5)


def test_response_verifies():
    c = b"\x42" * 16
    tag = compute_response(KEY, c, 1, 30_000)
    assert verify_response(KEY, c, 1, 30_000, tag)


@pytest.mark.parametrize(
    "change",
    [
        dict(ordinal=2),
        dict(t=30_001),
        dict(challenge=b"\x43" + b"\x42" * 15),
        dict(key=OTHER),
    ],
)
def test_response_binds_every_input(change):
    args = dict(key=KEY, challenge=b"\x42" * 16, ordinal=1, t=30_000)
    tag = compute_response(args["key"], args["challenge"], args["ordinal"], args["t"])
    args.update(change)
    assert not verify_response(args["key"], args["challenge"], args["ordinal"], args["t"], tag)


def test_random_tags_never_verify():
    rng = random.Random(1_000_000)
    c = rng.randbytes(16)
    accepted = sum(verify_response(KEY, c, 1, 30_000, rng.randbytes(16)) for _ in range(1_000_000))
    assert accepted == 0
