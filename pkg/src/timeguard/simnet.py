"""Deterministic discrete-event core, link model and fault/attack oracle."""

from __future__ import annotations

import enum
import heapq
import json
import random
from dataclasses import dataclass, field
from typing import Any, Callable, NamedTuple

from .core_time import Timestamp
from .protocol import NodeRole


class SchedulingInPast(ValueError):
    pass


class EventKind(enum.IntEnum):
    DELIVER = 1
    AGENT_TICK = 2
    CC_TICK = 3
    SWEEP = 4
    INJECT_ORACLE = 5
    ATTACK_AT = 6


class SimEvent(NamedTuple):
    at: Timestamp
    seq: int
    kind: EventKind
    node: int | None = None
    payload: Any = None


class TraceRecord(NamedTuple):
    at: Timestamp
    kind: str
    node: int | None


class Simulator:
    """Event queue ordered by ``(at, seq)``; ``seq`` is assigned on scheduling."""

    def __init__(self, start: Timestamp = 0, *, trace: bool = True) -> None:
        self.now = start
        self._queue: list[SimEvent] = []
        self._seq = 0
        self.trace: list[TraceRecord] | None = [] if trace else None
        self.executed = 0

    def __len__(self) -> int:
        return len(self._queue)

    def schedule(self, at: Timestamp, kind: EventKind, node: int | None = None, payload: Any = None) -> SimEvent:
        if at < self.now:
            raise SchedulingInPast(f"cannot schedule at {at}, now is {self.now}")
        ev = SimEvent(at, self._seq, kind, node, payload)
        self._seq += 1
        heapq.heappush(self._queue, ev)
        return ev

    def peek_time(self) -> Timestamp | None:
        return self._queue[0].at if self._queue else None

    def run_until(self, t_end: Timestamp, handler: Callable[[SimEvent], None] | None = None,
                  *, only: Callable[[SimEvent], bool] | None = None) -> list[TraceRecord] | None:
        """Execute events with ``at <= t_end`` in order; ``now`` ends at ``t_end``.

        With ``only`` given, events failing the predicate are discarded
        instead of executed (used to drain in-flight traffic at the horizon).
        """
        if t_end < self.now:
            raise SchedulingInPast(f"t_end {t_end} is before now {self.now}")
        queue = self._queue
        trace = self.trace
        pop = heapq.heappop
        while queue and queue[0].at <= t_end:
            ev = pop(queue)
            if only is not None and not only(ev):
                continue
            self.now = ev.at
            self.executed += 1
            if trace is not None:
                trace.append(TraceRecord(ev.at, ev.kind.name, ev.node))
            if handler is not None:
                handler(ev)
        self.now = t_end
        return trace

    def export_trace(self) -> str:
        """Newline-delimited JSON event log, for debugging."""
        if self.trace is None:
            return ""
        return "".join(json.dumps({"at": r.at, "kind": r.kind, "node": r.node}) + "\n" for r in self.trace)


@dataclass(frozen=True, slots=True)
class LinkModel:
    base_latency_ms: int = 5
    jitter_ms: int = 10
    loss_prob: float = 0.02
    congestion_factor: float = 1.0
    # load-dependent slowdown: multiplier 1 + alpha * in_flight / capacity
    congestion_alpha: float = 1.0
    congestion_capacity: int = 1000

    def __post_init__(self) -> None:
        if not 0.0 <= self.loss_prob <= 1.0:
            raise ValueError(f"loss_prob must be in [0, 1], got {self.loss_prob}")
        if self.base_latency_ms < 0 or self.jitter_ms < 0:
            raise ValueError("latencies must be non-negative")
        if self.congestion_factor < 1:
            raise ValueError(f"congestion_factor must be >= 1, got {self.congestion_factor}")
        if self.congestion_alpha < 0 or self.congestion_capacity <= 0:
            raise ValueError("congestion_alpha must be >= 0 and congestion_capacity > 0")


class Cause(enum.Enum):
    INFRASTRUCTURE_FAILURE = "InfrastructureFailure"
    HACK = "Hack"


class TruthRecord(NamedTuple):
    at: Timestamp
    node: int
    cause: Cause
    detail: str


@dataclass
class GroundTruthLog:
    records: list[TruthRecord] = field(default_factory=list)
    # (at, node) when a compromised node was put back into a clean state;
    # these are repairs, not perturbations, so they live outside ``records``
    restorations: list[tuple[Timestamp, int]] = field(default_factory=list)

    def record(self, at: Timestamp, node: int, cause: Cause, detail: str) -> None:
        self.records.append(TruthRecord(at, node, cause, detail))

    def restore(self, at: Timestamp, node: int) -> None:
        self.restorations.append((at, node))

    def hacks(self) -> list[TruthRecord]:
        return [r for r in self.records if r.cause is Cause.HACK]

    def count(self, cause: Cause) -> int:
        return sum(1 for r in self.records if r.cause is cause)


def link_transmit(link: LinkModel, datagram: bytes, src: int, dst: int, now: Timestamp,
                  rng: random.Random, *, in_flight: int = 0,
                  truth: GroundTruthLog | None = None) -> Timestamp | None:
    """Delivery time for one datagram, or ``None`` if the link drops it."""
    if link.loss_prob and rng.random() < link.loss_prob:
        if truth is not None:
            truth.record(now, src, Cause.INFRASTRUCTURE_FAILURE, f"PacketLoss->{dst}")
        return None
    raw = link.base_latency_ms
    if link.jitter_ms:
        raw += rng.random() * link.jitter_ms
    load = 1.0 + link.congestion_alpha * in_flight / link.congestion_capacity
    delay = int(link.congestion_factor * load * raw)
    # float rounding must never undercut the base latency
    return now + max(delay, link.base_latency_ms)


@dataclass(frozen=True, slots=True)
class SimulationModel:
    guest_fail_prob: float = 0.00001
    host_fail_prob: float = 0.02
    guest_hack_prob: float = 0.05
    host_hack_prob: float = 0.02

    def __post_init__(self) -> None:
        for name in ("guest_fail_prob", "host_fail_prob", "guest_hack_prob", "host_hack_prob"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"{name} must be in [0, 1], got {v}")


class OracleOutcome(enum.Enum):
    OK = "Ok"
    FAIL = "Fail"
    HACKED = "Hacked"


def ask_oracle(model: SimulationModel, node_class: NodeRole, rng: random.Random) -> OracleOutcome:
    """One oracle epoch for one node: fail first, else maybe hacked."""
    if node_class is NodeRole.HOST:
        fail, hack = model.host_fail_prob, model.host_hack_prob
    else:
        fail, hack = model.guest_fail_prob, model.guest_hack_prob
    if fail and rng.random() < fail:
        return OracleOutcome.FAIL
    if hack and rng.random() < hack:
        return OracleOutcome.HACKED
    return OracleOutcome.OK
