"""Heartbeat wire format, sealed datagrams and challenge/response tags.

Plaintext heartbeat layout (big-endian)::

    direction   1   0x01 down (CC -> agent), 0x02 up (agent -> CC)
    ordinal     8   unsigned
    challenge  16
    resp_tag   16   zero on down messages
    timestamp   8   signed ms
    sig_code    1
    detail_len  1   <= 64
    detail      n

Sealed datagram layout::

    magic "CRF1" | sender u64 | nonce 12 | ct_len u16 | ciphertext | tag 16

The header (magic, sender, nonce, ct_len) is authenticated together with the
plaintext, so a flipped sender or nonce bit fails to open.
"""

from __future__ import annotations

import enum
import functools
import hashlib
import hmac
import struct
from dataclasses import dataclass, field

from .core_time import Timestamp

CC_NODE = 0

MAGIC = b"CRF1"
NONCE_LEN = 12
TAG_LEN = 16
CHALLENGE_LEN = 16
KEY_LEN = 32
MAX_DETAIL = 64

_HB = struct.Struct(">BQ16s16sqBB")
_HDR = struct.Struct(">4sQ12sH")
HEARTBEAT_MIN_LEN = _HB.size  # 51
HEARTBEAT_MAX_LEN = _HB.size + MAX_DETAIL
ZERO16 = bytes(16)


class ProtocolError(Exception):
    pass


class CodecError(ProtocolError):
    """Plaintext heartbeat bytes do not decode."""


class MalformedDatagram(ProtocolError):
    """Sealed datagram framing is broken (magic, lengths)."""


class AuthFailure(ProtocolError):
    """Authentication tag mismatch: tampering or the wrong key."""


class NodeRole(enum.Enum):
    GUEST = "Guest"
    HOST = "Host"


class Direction(enum.IntEnum):
    DOWN = 1
    UP = 2


class SignalCode(enum.IntEnum):
    NONE = 0
    GUEST_REPORTS_HOST_COMPROMISED = 1
    HOST_REPORTS_GUEST_COMPROMISED = 2
    AGENT_LOCAL_ANOMALY = 3


@dataclass(frozen=True, slots=True)
class SignalPayload:
    code: SignalCode = SignalCode.NONE
    detail: bytes = b""

    def __post_init__(self) -> None:
        if len(self.detail) > MAX_DETAIL:
            raise ValueError(f"signal detail is {len(self.detail)} bytes, max {MAX_DETAIL}")

    @classmethod
    def accuse(cls, code: SignalCode, node: int) -> SignalPayload:
        return cls(code, node.to_bytes(8, "big"))

    def accused(self) -> int | None:
        """Node named in the detail field, if it carries one."""
        if len(self.detail) == 8:
            return int.from_bytes(self.detail, "big")
        return None


NO_SIGNAL = SignalPayload()


@dataclass(frozen=True, slots=True)
class AgentKey:
    node: int
    key_bytes: bytes

    def __post_init__(self) -> None:
        if len(self.key_bytes) != KEY_LEN:
            raise ValueError(f"agent keys are {KEY_LEN} bytes")

    @classmethod
    def derive(cls, node: int, seed: int | str) -> AgentKey:
        """Deterministic key for simulations; never use for real deployments."""
        material = hashlib.sha256(f"timeguard-key:{seed}:{node}".encode()).digest()
        return cls(node, material)


_U64 = 1 << 64


@dataclass(frozen=True, slots=True)
class HeartbeatMsg:
    direction: Direction
    ordinal: int
    challenge: bytes
    timestamp: Timestamp
    response_tag: bytes = ZERO16
    signal: SignalPayload = field(default=NO_SIGNAL)

    def __post_init__(self) -> None:
        if (len(self.challenge) == CHALLENGE_LEN and len(self.response_tag) == TAG_LEN
                and 0 <= self.ordinal < _U64 and (self.direction is Direction.UP or self.response_tag == ZERO16)):
            return
        if len(self.challenge) != CHALLENGE_LEN or len(self.response_tag) != TAG_LEN:
            raise ValueError("challenge and response tag are 16 bytes each")
        if self.direction is Direction.DOWN and self.response_tag != ZERO16:
            raise ValueError("down heartbeats carry a zeroed response tag")
        if not 0 <= self.ordinal < _U64:
            raise ValueError("ordinal out of u64 range")


def encode_heartbeat(msg: HeartbeatMsg) -> bytes:
    sig = msg.signal
    return _HB.pack(
        msg.direction, msg.ordinal, msg.challenge, msg.response_tag,
        msg.timestamp, sig.code, len(sig.detail),
    ) + sig.detail


def decode_heartbeat(data: bytes) -> HeartbeatMsg:
    if len(data) < HEARTBEAT_MIN_LEN:
        raise CodecError(f"heartbeat truncated: {len(data)} < {HEARTBEAT_MIN_LEN} bytes")
    direction, ordinal, challenge, tag, ts, code, dlen = _HB.unpack_from(data)
    if dlen > MAX_DETAIL:
        raise CodecError(f"signal detail length {dlen} exceeds {MAX_DETAIL}")
    if len(data) != HEARTBEAT_MIN_LEN + dlen:
        raise CodecError(f"expected {HEARTBEAT_MIN_LEN + dlen} bytes, got {len(data)}")
    try:
        return HeartbeatMsg(
            Direction(direction), ordinal, challenge, ts, tag,
            SignalPayload(SignalCode(code), bytes(data[HEARTBEAT_MIN_LEN:])),
        )
    except ValueError as exc:
        raise CodecError(str(exc)) from None


@dataclass(frozen=True, slots=True)
class SealedDatagram:
    sender: int
    nonce: bytes
    ciphertext: bytes
    auth_tag: bytes

    def header(self) -> bytes:
        return _HDR.pack(MAGIC, self.sender, self.nonce, len(self.ciphertext))

    def to_bytes(self) -> bytes:
        return self.header() + self.ciphertext + self.auth_tag

    @classmethod
    def from_bytes(cls, data: bytes) -> SealedDatagram:
        ct_len = _check_frame(data)
        _, sender, nonce, _ = _HDR.unpack_from(data)
        body = data[_HDR.size:]
        return cls(sender, bytes(nonce), bytes(body[:ct_len]), bytes(body[ct_len:]))


def _check_frame(data: bytes) -> int:
    """Validate magic and lengths; returns the ciphertext length."""
    if len(data) < _HDR.size + TAG_LEN:
        raise MalformedDatagram("datagram shorter than header and tag")
    if data[:4] != MAGIC:
        raise MalformedDatagram(f"bad magic {bytes(data[:4])!r}")
    ct_len = int.from_bytes(data[_HDR.size - 2:_HDR.size], "big")
    if len(data) != _HDR.size + ct_len + TAG_LEN:
        raise MalformedDatagram("ciphertext length does not match datagram size")
    return ct_len


def datagram_sender(data: bytes) -> int:
    """Sender id from a sealed datagram's header (framing is checked)."""
    _check_frame(data)
    return int.from_bytes(data[4:12], "big")


def derive_nonce(direction: Direction, ordinal: int) -> bytes:
    """Per-message nonce: direction byte, three zero bytes, ordinal as u64."""
    return bytes((direction, 0, 0, 0)) + ordinal.to_bytes(8, "big")


class TestDoubleCipher:
    """Deterministic authenticated cipher for reproducible simulation traces.

    Keystream is SHAKE-256 over key and nonce; the tag is a 16-byte keyed
    BLAKE2b over the datagram header and the plaintext. Not a vetted AEAD.
    """

    __test__ = False
    name = "test-double"

    @staticmethod
    @functools.lru_cache(maxsize=4096)
    def _prefix(key: bytes):
        return hashlib.shake_256(b"ks" + key)

    @classmethod
    def _xor(cls, data: bytes, key: bytes, nonce: bytes) -> bytes:
        n = len(data)
        h = cls._prefix(key).copy()
        h.update(nonce)
        ks = h.digest(n)
        return (int.from_bytes(data, "big") ^ int.from_bytes(ks, "big")).to_bytes(n, "big")

    @staticmethod
    def _tag(key: bytes, header: bytes, plaintext: bytes) -> bytes:
        return hashlib.blake2b(header + plaintext, key=key, digest_size=TAG_LEN, person=b"crf1-tag").digest()

    def seal_bytes(self, key: AgentKey, nonce: bytes, plaintext: bytes) -> bytes:
        if len(nonce) != NONCE_LEN:
            raise ValueError("nonce must be 12 bytes")
        kb = key.key_bytes
        header = _HDR.pack(MAGIC, key.node, nonce, len(plaintext))
        return header + self._xor(plaintext, kb, nonce) + self._tag(kb, header, plaintext)

    def open_bytes(self, key: AgentKey, data: bytes) -> bytes:
        ct_len = _check_frame(data)
        hs = _HDR.size
        header = data[:hs]
        nonce = data[12:24]
        kb = key.key_bytes
        pt = self._xor(data[hs:hs + ct_len], kb, nonce)
        if not hmac.compare_digest(self._tag(kb, header, pt), data[hs + ct_len:]):
            raise AuthFailure(f"tag mismatch for datagram from node {int.from_bytes(data[4:12], 'big')}")
        return pt

    def seal(self, key: AgentKey, nonce: bytes, plaintext: bytes) -> SealedDatagram:
        return SealedDatagram.from_bytes(self.seal_bytes(key, nonce, plaintext))

    def open(self, key: AgentKey, dg: SealedDatagram) -> bytes:
        return self.open_bytes(key, dg.to_bytes())


class ChaChaCipher:
    """ChaCha20-Poly1305 binding of the same envelope (needs ``cryptography``)."""

    name = "chacha20poly1305"

    def __init__(self) -> None:
        from cryptography.hazmat.primitives.ciphers.aead import ChaCha20Poly1305

        self._aead = ChaCha20Poly1305
        self._cache: dict[bytes, object] = {}

    def _get(self, key: bytes):
        aead = self._cache.get(key)
        if aead is None:
            aead = self._cache[key] = self._aead(key)
        return aead

    def seal(self, key: AgentKey, nonce: bytes, plaintext: bytes) -> SealedDatagram:
        header = _HDR.pack(MAGIC, key.node, nonce, len(plaintext))
        out = self._get(key.key_bytes).encrypt(nonce, plaintext, header)
        return SealedDatagram(key.node, nonce, out[:-TAG_LEN], out[-TAG_LEN:])

    def open(self, key: AgentKey, dg: SealedDatagram) -> bytes:
        from cryptography.exceptions import InvalidTag

        try:
            return self._get(key.key_bytes).decrypt(dg.nonce, dg.ciphertext + dg.auth_tag, dg.header())
        except InvalidTag:
            raise AuthFailure(f"tag mismatch for datagram from node {dg.sender}") from None

    def seal_bytes(self, key: AgentKey, nonce: bytes, plaintext: bytes) -> bytes:
        return self.seal(key, nonce, plaintext).to_bytes()

    def open_bytes(self, key: AgentKey, data: bytes) -> bytes:
        return self.open(key, SealedDatagram.from_bytes(data))


DEFAULT_CIPHER = TestDoubleCipher()


def seal(key: AgentKey, nonce: bytes, plaintext: bytes, cipher=DEFAULT_CIPHER) -> SealedDatagram:
    return cipher.seal(key, nonce, plaintext)


def open_sealed(key: AgentKey, dg: SealedDatagram, cipher=DEFAULT_CIPHER) -> bytes:
    return cipher.open(key, dg)


_CR_PACK = struct.Struct(">Qq")


def compute_response(key: AgentKey, challenge: bytes, ordinal: int, perceived_time: Timestamp) -> bytes:
    """Keyed PRF over challenge, ordinal and perceived time.

    Binding the perceived time means an old response cannot be replayed with a
    fresh timestamp.
    """
    data = challenge + _CR_PACK.pack(ordinal, perceived_time)
    return hashlib.blake2b(data, key=key.key_bytes, digest_size=TAG_LEN, person=b"crf1-response").digest()


def verify_response(key: AgentKey, challenge: bytes, ordinal: int, perceived_time: Timestamp, tag: bytes) -> bool:
    return hmac.compare_digest(compute_response(key, challenge, ordinal, perceived_time), tag)
