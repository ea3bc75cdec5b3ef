"""Acceptance criteria, one test per criterion.

Each test prints a ``PASS``/``FAIL`` line (visible even under output capture)
before asserting, so ``pytest tests/test_acceptance.py -v`` doubles as the
acceptance report.
"""

import configparser
import random
import time
from importlib import resources

import pytest

from timeguard.attacks import AttackKind
from timeguard.controller import CheckConfig, CloudController, VerdictKind
from timeguard.core_time import ValidationMode
from timeguard.harness.config import ExperimentConfig
from timeguard.harness.metrics import emit_report
from timeguard.harness.runner import (
    LOADED_BASE,
    is_monotone,
    run_experiment,
    run_matrix,
    simulate,
    sweep_load,
    world_params,
)
from timeguard.protocol import (
    AgentKey,
    CodecError,
    Direction,
    HeartbeatMsg,
    NodeRole,
    SignalCode,
    SignalPayload,
    TestDoubleCipher,
    compute_response,
    decode_heartbeat,
    derive_nonce,
    encode_heartbeat,
)
from timeguard.simnet import (
    LinkModel,
    OracleOutcome,
    SimulationModel,
    ask_oracle,
    link_transmit,
)
from timeguard.world import CloudWorld

NO_HACKS = dict(guest_hack_prob=0.0, host_hack_prob=0.0)
SILENT = dict(guest_fail_prob=0.0, host_fail_prob=0.0, loss_prob=0.0, jitter_ms=0, **NO_HACKS)


@pytest.fixture
def verdict(capsys):
    def emit(number: int, title: str, ok: bool, detail: str) -> None:
        with capsys.disabled():
            print(f"\n{'PASS' if ok else 'FAIL'} [{number:>2}] {title}: {detail}")
    return emit


def test_01_clean_run_baseline(verdict):
    cfg = ExperimentConfig(run_minutes=60, n_hosts=5, guests_per_host=20).with_(**SILENT)
    t0 = time.perf_counter()
    report = run_experiment(cfg)
    wall = time.perf_counter() - t0
    counts = {k.value: report.total(k) for k in VerdictKind}
    ok = report.verdict_total == 0 and wall < 5.0
    verdict(1, "clean-run baseline", ok, f"verdicts={counts} wall={wall:.2f}s")
    assert report.verdict_total == 0
    assert wall < 5.0


def test_02_response_fp_zero(verdict):
    cfg = ExperimentConfig(run_minutes=60).with_(host_fail_prob=0.02, loss_prob=0.02, jitter_ms=10, **NO_HACKS)
    totals = [run_experiment(cfg.with_(seed=s)).total(VerdictKind.RESPONSE) for s in range(10)]
    ok = all(t == 0 for t in totals)
    verdict(2, "response errors without hacking", ok, f"per-seed Response totals={totals}")
    assert ok


def _timeout_trace(delay_ms: int) -> int:
    key = AgentKey.derive(1, "acceptance")
    cc = CloudController(CheckConfig(), rng=random.Random(0))
    cc.register_node(1, key, NodeRole.HOST)
    ((_, down),) = cc.cc_tick(0)
    tag = compute_response(key, down.challenge, 1, delay_ms)
    up = HeartbeatMsg(Direction.UP, 1, down.challenge, delay_ms, tag)
    data = TestDoubleCipher().seal_bytes(key, derive_nonce(Direction.UP, 1), encode_heartbeat(up))
    cc.on_heartbeat(data, delay_ms)
    cc.flush(delay_ms)
    return sum(1 for v in cc.published if v.kind is VerdictKind.TIMEOUT)


def test_03_timeout_fidelity(verdict):
    late, early = _timeout_trace(310_000), _timeout_trace(290_000)
    ok = (late, early) == (1, 0)
    verdict(3, "timeout classification", ok, f"310s -> {late} timeout, 290s -> {early} timeout")
    assert late == 1
    assert early == 0


def test_04_clock_jump_detection_latency(verdict):
    cfg = ExperimentConfig(run_minutes=30, n_hosts=2, guests_per_host=5).with_(**SILENT)
    at = cfg.horizon_ms // 2 + 10_000
    world = CloudWorld(world_params(cfg, trace=True))
    target = world.guests[3]
    world.schedule_run(cfg.horizon_ms)
    world.schedule_attack(at, target, AttackKind.clock_jump(-60_000))
    world.run(cfg.horizon_ms)

    first_exchange = next(t for t in range(0, cfg.horizon_ms, cfg.check.hb_period_ms) if t >= at)
    hits = [v for v in world.verdicts if v.node == target and v.kind is VerdictKind.TIMELINE]
    others = [v for v in world.verdicts if v.node != target]
    latency = hits[0].cc_time - first_exchange if hits else None
    bound = cfg.check.hb_period_ms + cfg.check.timeline_check_ms
    ok = bool(hits) and 0 <= latency <= bound and not others
    verdict(4, "clock-jump detection", ok,
            f"first timeline verdict {latency} ms after the first post-attack heartbeat (bound {bound} ms)")
    assert hits
    assert 0 <= latency <= 60_000
    assert hits[0].cc_time - at <= 60_000
    assert not others


def test_05_scenario_matrix(verdict):
    first = run_matrix(seed=0)
    second = run_matrix(seed=0)
    passed = sum(r.passed for r in first)
    deterministic = [r.line() for r in first] == [r.line() for r in second]
    ok = passed == 16 and deterministic
    failing = [r.line() for r in first if not r.passed]
    verdict(5, "scenario matrix", ok, f"{passed}/16 cells conform, deterministic={deterministic} {failing}")
    assert passed == 16, failing
    assert deterministic


def test_06_load_timeout_monotone(verdict):
    points = sweep_load(LOADED_BASE, steps=4)
    series = [(p.congestion_factor, p.timeouts) for p in points]
    ok = [f for f, _ in series] == [1, 2, 4, 8] and is_monotone(points) and points[-1].timeouts > points[0].timeouts
    verdict(6, "load vs timeouts", ok, f"(factor, timeouts)={series}")
    assert [f for f, _ in series] == [1, 2, 4, 8]
    assert all(a.timeouts <= b.timeouts for a, b in zip(points, points[1:]))
    assert points[-1].timeouts > points[0].timeouts


def test_07_reorder_timeline_fps(verdict):
    cfg = ExperimentConfig(run_minutes=60).with_(base_latency_ms=20_000, jitter_ms=40_000, **NO_HACKS)
    arrival_fp = sorted_fp = 0
    same_traces = True
    for seed in range(10):
        a = simulate(cfg.with_(seed=seed))
        s = simulate(cfg.with_(seed=seed, timeline_mode=ValidationMode.ORDINAL_SORTED))
        arrival_fp += a.report.fp(VerdictKind.TIMELINE)
        sorted_fp += s.report.fp(VerdictKind.TIMELINE)
        same_traces &= (a.world.totals() == s.world.totals() and a.world.truth.records == s.world.truth.records)
    ok = arrival_fp > 0 and sorted_fp == 0 and same_traces
    verdict(7, "reorder-induced timeline FPs", ok,
            f"ArrivalOrder FP={arrival_fp}, OrdinalSorted FP={sorted_fp}, identical traces={same_traces}")
    assert same_traces
    assert arrival_fp > 0
    assert sorted_fp == 0


def test_08_statistical_oracles(verdict):
    link = LinkModel(base_latency_ms=5, jitter_ms=10, loss_prob=0.02)
    rng = random.Random("acceptance:link")
    drops = sum(link_transmit(link, b"", 1, 0, 0, rng) is None for _ in range(100_000))
    model = SimulationModel()
    rng = random.Random("acceptance:oracle")
    hacks = sum(ask_oracle(model, NodeRole.GUEST, rng) is OracleOutcome.HACKED for _ in range(10_000))
    ok = 1850 <= drops <= 2150 and 430 <= hacks <= 570
    verdict(8, "statistical oracles", ok, f"drops={drops} in [1850, 2150], hacks={hacks} in [430, 570]")
    assert 1850 <= drops <= 2150
    assert 430 <= hacks <= 570


def _random_msg(rng):
    d = rng.choice(list(Direction))
    return HeartbeatMsg(d, rng.getrandbits(64), rng.randbytes(16), rng.randrange(-(2**63), 2**63),
                        bytes(16) if d is Direction.DOWN else rng.randbytes(16),
                        SignalPayload(rng.choice(list(SignalCode)), rng.randbytes(rng.randrange(65))))


def test_09_determinism_and_codec(verdict):
    cfg = ExperimentConfig(run_minutes=30, n_hosts=3, guests_per_host=5, seed=42)
    csv_same = emit_report(run_experiment(cfg)) == emit_report(run_experiment(cfg))

    parser = configparser.ConfigParser()
    parser.read_string(resources.files("timeguard").joinpath("data/golden_vectors.txt").read_text())
    cipher = TestDoubleCipher()
    golden_ok = 0
    for name in parser.sections():
        v = parser[name]
        key = AgentKey(int(v["node"]), bytes.fromhex(v["key"]))
        sealed = cipher.seal_bytes(key, bytes.fromhex(v["nonce"]), bytes.fromhex(v["plaintext"]))
        golden_ok += sealed.hex() == v["sealed"]

    rng = random.Random(9)
    round_trips = truncations = 0
    for _ in range(10_000):
        msg = _random_msg(rng)
        data = encode_heartbeat(msg)
        round_trips += decode_heartbeat(data) == msg
        rejected = 0
        for n in range(len(data)):
            try:
                decode_heartbeat(data[:n])
            except CodecError:
                rejected += 1
        truncations += rejected == len(data)
    ok = csv_same and golden_ok == 5 == len(parser.sections()) and round_trips == 10_000 == truncations
    verdict(9, "determinism and codec", ok,
            f"csv identical={csv_same}, golden {golden_ok}/5, round-trips {round_trips}/10000, "
            f"truncation-rejecting messages {truncations}/10000")
    assert csv_same
    assert golden_ok == 5 and len(parser.sections()) == 5
    assert round_trips == 10_000
    assert truncations == 10_000


def test_10_scale(verdict):
    cfg = ExperimentConfig(run_minutes=480, n_hosts=10, guests_per_host=100)
    t0 = time.perf_counter()
    report = run_experiment(cfg)
    wall = time.perf_counter() - t0
    closed = report.sent == report.delivered + report.dropped
    ok = closed and wall < 60.0
    verdict(10, "1000 guests for 480 minutes", ok,
            f"wall={wall:.1f}s sent={report.sent} delivered={report.delivered} dropped={report.dropped}")
    assert closed
    assert wall < 60.0
