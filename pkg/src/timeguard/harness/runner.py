"""Seeded experiment runs, the scenario matrix and the congestion sweep."""

from __future__ import annotations

import statistics
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Sequence

from ..attacks import (
    Channel,
    DetectionExpectation,
    Outcome,
    Protecting,
    ScenarioCell,
    all_cells,
    scenario_expectation,
    scenario_plan,
)
from ..controller import CheckConfig, Trust, VerdictKind
from ..protocol import SignalCode
from ..simnet import LinkModel, SimulationModel
from ..world import CloudWorld, WorldParams
from .config import ExperimentConfig
from .metrics import (
    KIND_ORDER,
    HackIndex,
    MetricsReport,
    build_report,
    is_true_positive,
)


def fp_window_ms(check: CheckConfig) -> int:
    """Attribution window for a verdict to an earlier hack.

    HeartbeatMiss is only published at a timeout sweep after the grace period
    has elapsed, so the window must cover the grace plus one sweep interval.
    """
    return check.timeout_threshold_ms + (check.miss_grace_periods + 1) * check.hb_period_ms


def world_params(config: ExperimentConfig, **overrides) -> WorldParams:
    params = WorldParams(
        n_hosts=config.n_hosts,
        guests_per_host=config.guests_per_host,
        check=config.check,
        link=config.link,
        model=config.model,
        forgeable_agents=config.forgeable_agents,
        seed=config.seed,
        timeline_mode=config.timeline_mode,
        probe_tolerance_ms=config.probe_tolerance_ms,
    )
    for key, value in overrides.items():
        setattr(params, key, value)
    return params


def scenario_targets(world: CloudWorld) -> dict[str, int]:
    host = world.hosts[0]
    targets = {"host": host}
    if world.guests_of.get(host):
        targets["guest"] = world.guests_of[host][0]
    return targets


def attack_onset(config: ExperimentConfig) -> int:
    return config.horizon_ms // 4


@dataclass
class RunResult:
    config: ExperimentConfig
    world: CloudWorld
    report: MetricsReport


def simulate(config: ExperimentConfig, **overrides) -> RunResult:
    """Run one configuration and keep the world around for inspection."""
    world = CloudWorld(world_params(config, **overrides))
    t_end = config.horizon_ms
    world.schedule_run(t_end)
    if config.scenario is not None:
        targets = scenario_targets(world)
        at = attack_onset(config)
        for planned in scenario_plan(config.scenario):
            if planned.target in targets:
                world.schedule_attack(at, targets[planned.target], planned.attack)
    world.run(t_end)
    totals = world.totals()
    report = build_report(
        world.verdicts, world.truth, fp_window_ms(config.check),
        sent=totals.sent, delivered=totals.delivered, dropped=totals.dropped,
        config_hash=config.config_hash(), seed=config.seed, host_of=world.host_of,
    )
    return RunResult(config, world, report)


def run_experiment(config: ExperimentConfig) -> MetricsReport:
    return simulate(config).report


@dataclass
class RepeatedSummary:
    seeds: list[int]
    reports: list[MetricsReport]

    def totals(self, kind: VerdictKind) -> list[int]:
        return [r.total(kind) for r in self.reports]

    def mean(self, kind: VerdictKind) -> float:
        return statistics.fmean(self.totals(kind))

    def spread(self, kind: VerdictKind) -> float:
        """Sample standard deviation (0 for a single run)."""
        values = self.totals(kind)
        return statistics.stdev(values) if len(values) > 1 else 0.0

    def table(self) -> str:
        lines = [f"{'kind':<14}{'mean':>10}{'stdev':>10}"]
        for kind in KIND_ORDER:
            lines.append(f"{kind.value:<14}{self.mean(kind):>10.2f}{self.spread(kind):>10.2f}")
        return "\n".join(lines) + "\n"


def run_repeated(config: ExperimentConfig, seeds: Sequence[int], workers: int = 1) -> RepeatedSummary:
    configs = [config.with_(seed=s) for s in seeds]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            reports = list(pool.map(run_experiment, configs))
    else:
        reports = [run_experiment(c) for c in configs]
    return RepeatedSummary(list(seeds), reports)


# --- scenario matrix ------------------------------------------------------

MATRIX_BASE = ExperimentConfig(
    run_minutes=20,
    n_hosts=2,
    guests_per_host=3,
    link=LinkModel(base_latency_ms=5, jitter_ms=0, loss_prob=0.0),
    model=SimulationModel(0.0, 0.0, 0.0, 0.0),
)


@dataclass
class CellResult:
    cell: ScenarioCell
    expectation: DetectionExpectation
    tp_against_attackers: int
    verdicts_total: int
    verdicts_against_host: int
    channels: frozenset[Channel]
    guest_trust: Trust
    failures: list[str] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return not self.failures

    def line(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        via = ",".join(sorted(c.value for c in self.channels)) or "-"
        text = (f"{status} {self.cell.cell_id:<52} expect={self.expectation.outcome.value:<14} "
                f"tp={self.tp_against_attackers} verdicts={self.verdicts_total} via={via}")
        if self.failures:
            text += "  (" + "; ".join(self.failures) + ")"
        return text


def observed_channels(result: RunResult, attackers: set[int], since: int) -> frozenset[Channel]:
    world = result.world
    hosts = set(world.hosts)
    hacks = HackIndex(world.truth)
    window = fp_window_ms(result.config.check)
    seen: set[Channel] = set()
    for at, sender, payload in world.cc.signal_log:
        if at < since or payload.code is SignalCode.NONE:
            continue
        seen.add(Channel.HOST_SIGNAL if sender in hosts else Channel.GUEST_SIGNAL)
    for v in world.verdicts:
        if v.node not in attackers or not is_true_positive(v, hacks, window):
            continue
        seen.add(Channel.HEARTBEAT_MISS if v.kind is VerdictKind.HEARTBEAT_MISS else Channel.CC_VERDICT)
    return frozenset(seen)


def check_cell(cell: ScenarioCell, seed: int = 0, base: ExperimentConfig = MATRIX_BASE) -> CellResult:
    config = base.with_(scenario=cell, forgeable_agents=cell.forgeable, seed=seed)
    result = simulate(config)
    world = result.world
    targets = scenario_targets(world)
    attackers = {targets[p.target] for p in scenario_plan(cell) if p.target in targets}
    exp = scenario_expectation(cell)

    hacks = HackIndex(world.truth)
    window = fp_window_ms(config.check)
    tp = sum(1 for v in world.verdicts if v.node in attackers and is_true_positive(v, hacks, window))
    against_host = sum(1 for v in world.verdicts if v.node == targets["host"])
    channels = observed_channels(result, attackers, attack_onset(config))
    guest_trust = world.cc.trust(targets["guest"])

    failures = []
    if exp.outcome is Outcome.TRIVIALLY_CLEAN:
        if world.verdicts:
            failures.append(f"{len(world.verdicts)} verdicts in a clean cell")
    elif exp.outcome is Outcome.NOT_DETECTED:
        if tp:
            failures.append(f"{tp} true-positive verdicts where none are possible")
    else:
        if tp < 1:
            failures.append("attack went undetected")
        if exp.via and not (channels & exp.via):
            failures.append("no expected detection channel fired")
        if exp.ambiguous and guest_trust is not Trust.SUSPECT:
            failures.append(f"guest trust is {guest_trust.name}, expected SUSPECT")
        if (cell.protecting is Protecting.HOST_TIME and not cell.host_malicious and against_host):
            failures.append(f"{against_host} verdicts against the honest host")
    return CellResult(cell, exp, tp, len(world.verdicts), against_host, channels, guest_trust, failures)


def run_matrix(seed: int = 0, base: ExperimentConfig = MATRIX_BASE) -> list[CellResult]:
    return [check_cell(cell, seed, base) for cell in all_cells()]


# --- congestion sweep -----------------------------------------------------

LOADED_BASE = ExperimentConfig(
    run_minutes=60,
    link=LinkModel(base_latency_ms=10_000, jitter_ms=20_000, loss_prob=0.02),
    model=SimulationModel(guest_hack_prob=0.0, host_hack_prob=0.0),
)


@dataclass
class SweepPoint:
    congestion_factor: float
    timeouts: int
    report: MetricsReport


def congestion_factors(steps: int) -> list[float]:
    return [float(2 ** i) for i in range(steps)]


def sweep_load(config: ExperimentConfig = LOADED_BASE, steps: int = 4) -> list[SweepPoint]:
    points = []
    for factor in congestion_factors(steps):
        report = run_experiment(config.with_(congestion_factor=factor))
        points.append(SweepPoint(factor, report.total(VerdictKind.TIMEOUT), report))
    return points


def is_monotone(points: Sequence[SweepPoint]) -> bool:
    """Non-decreasing timeouts, and strictly more at the top than the bottom."""
    counts = [p.timeouts for p in points]
    if len(counts) < 2:
        return True
    return all(a <= b for a, b in zip(counts, counts[1:])) and counts[-1] > counts[0]
