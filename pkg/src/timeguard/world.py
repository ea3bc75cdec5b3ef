"""Simulated cloud: one controller, hosts, guests and the links between them."""

from __future__ import annotations

import gc
import random
from dataclasses import dataclass, field
from typing import Iterable

from .agent import ActionKind, AgentState, agent_on_challenge, agent_rollback, new_agent
from .attacks import AttackKind, applicable_attacks, apply_attack
from .controller import (
    CheckConfig,
    CloudController,
    CountermeasureKind,
    DetectionVerdict,
    SweepKind,
    UnknownSender,
)
from .core_time import Timestamp, ValidationMode, clock_read
from .protocol import (
    CC_NODE,
    DEFAULT_CIPHER,
    AgentKey,
    Direction,
    NodeRole,
    ProtocolError,
    decode_heartbeat,
    derive_nonce,
    encode_heartbeat,
)
from .simnet import (
    Cause,
    EventKind,
    GroundTruthLog,
    LinkModel,
    OracleOutcome,
    SimEvent,
    SimulationModel,
    Simulator,
    ask_oracle,
    link_transmit,
)


@dataclass
class TrafficCounters:
    sent: int = 0
    delivered: int = 0
    dropped: int = 0


@dataclass
class WorldParams:
    n_hosts: int = 6
    guests_per_host: int = 10
    check: CheckConfig = field(default_factory=CheckConfig)
    link: LinkModel = field(default_factory=LinkModel)
    model: SimulationModel = field(default_factory=SimulationModel)
    forgeable_agents: bool = False
    seed: int = 0
    timeline_mode: ValidationMode = ValidationMode.ARRIVAL_ORDER
    probe_tolerance_ms: int = 1000
    oracle: bool = True
    trace: bool = False
    ledger_window: int | None = -1
    wire_log: bool = False


class CloudWorld:
    """Builds the topology and drives it from one event loop.

    Hosts are numbered ``1..n_hosts``; guests follow, grouped by host.
    Each stochastic concern draws from its own seeded stream so that, for
    instance, toggling the oracle does not reshuffle link delays.
    """

    def __init__(self, params: WorldParams | None = None, *, cipher=DEFAULT_CIPHER) -> None:
        self.params = p = params or WorldParams()
        if p.n_hosts < 1:
            raise ValueError("need at least one host")
        self.cipher = cipher
        seed = p.seed
        self.link_rng = random.Random(f"{seed}:link")
        self.oracle_rng = random.Random(f"{seed}:oracle")
        self.agent_rng = random.Random(f"{seed}:agent")
        self.sim = Simulator(trace=p.trace)
        self.truth = GroundTruthLog()
        self.cc = CloudController(p.check, rng=random.Random(f"{seed}:cc"),
                                  timeline_mode=p.timeline_mode, ledger_window=p.ledger_window,
                                  cipher=cipher)
        self.agents: dict[int, AgentState] = {}
        self.keys: dict[int, AgentKey] = {}
        self.guests_of: dict[int, tuple[int, ...]] = {}
        self.host_of: dict[int, int] = {}
        self.hosts: list[int] = []
        self.guests: list[int] = []
        self.suppressing_hosts: set[int] = set()
        self.failed_until: dict[int, Timestamp] = {}
        self.last_up: dict[int, bytes] = {}
        self.down = TrafficCounters()
        self.up = TrafficCounters()
        self.in_flight = 0
        self.suppressed = 0
        self.countermeasures: list = []
        self.wire_sent: list[tuple[int, int, bytes]] | None = [] if p.wire_log else None
        self.wire_delivered: list[tuple[int, int, bytes]] | None = [] if p.wire_log else None
        self._draining = False
        self._build()

    def _build(self) -> None:
        p = self.params
        for h in range(1, p.n_hosts + 1):
            self._add(h, NodeRole.HOST, None)
            self.hosts.append(h)
        for h in range(1, p.n_hosts + 1):
            members = []
            for j in range(p.guests_per_host):
                g = p.n_hosts + (h - 1) * p.guests_per_host + j + 1
                self._add(g, NodeRole.GUEST, h)
                self.host_of[g] = h
                self.guests.append(g)
                members.append(g)
            self.guests_of[h] = tuple(members)

    def _add(self, node: int, role: NodeRole, host: int | None) -> None:
        key = AgentKey.derive(node, self.params.seed)
        self.keys[node] = key
        self.agents[node] = new_agent(node, role, key, host=host, forgeable=self.params.forgeable_agents,
                                      tolerance_ms=self.params.probe_tolerance_ms)
        self.cc.register_node(node, key, role, 0, host=host)

    @property
    def nodes(self) -> list[int]:
        return self.hosts + self.guests

    # --- scheduling ---------------------------------------------------------

    def schedule_run(self, t_end: Timestamp) -> None:
        """Pre-schedule ticks, sweeps and oracle epochs up to ``t_end``."""
        c = self.params.check
        sim = self.sim
        # sweeps at an instant run before the tick at that instant
        periodic = sorted(
            [(t, 0, SweepKind.RESPONSE) for t in range(c.response_check_ms, t_end + 1, c.response_check_ms)]
            + [(t, 1, SweepKind.TIMELINE) for t in range(c.timeline_check_ms, t_end + 1, c.timeline_check_ms)]
            + [(t, 2, SweepKind.TIMEOUT) for t in range(c.timeout_threshold_ms, t_end + 1, c.timeout_threshold_ms)]
            + [(t, 3, None) for t in range(0, t_end, c.hb_period_ms)]
            + ([(t, 4, None) for t in range(c.hb_period_ms // 2, t_end, c.hb_period_ms)]
               if self.params.oracle else []),
            key=lambda x: (x[0], x[1]),
        )
        for t, order, kind in periodic:
            if order < 3:
                sim.schedule(t, EventKind.SWEEP, None, kind)
            elif order == 3:
                sim.schedule(t, EventKind.CC_TICK)
            else:
                sim.schedule(t, EventKind.INJECT_ORACLE)

    def schedule_attack(self, at: Timestamp, node: int, attack: AttackKind) -> None:
        self.sim.schedule(at, EventKind.ATTACK_AT, node, attack)

    def run(self, t_end: Timestamp) -> None:
        """Run to ``t_end``, drain traffic still in flight, publish leftovers."""
        # the event loop allocates millions of acyclic objects; generational
        # collection passes over them cost a quarter of the runtime
        collecting = gc.isenabled()
        gc.disable()
        try:
            self.sim.run_until(t_end, self.handle)
            self._draining = True
            only = _is_delivery
            while self.sim.peek_time() is not None:
                self.sim.run_until(self.sim.peek_time(), self.handle, only=only)
            self.sim.now = max(self.sim.now, t_end)
            self.cc.flush(t_end)
        finally:
            if collecting:
                gc.enable()

    # --- event handling -----------------------------------------------------

    def handle(self, ev: SimEvent) -> None:
        kind = ev.kind
        if kind is EventKind.DELIVER:
            self._deliver(ev)
        elif kind is EventKind.CC_TICK:
            self._tick(ev.at)
        elif kind is EventKind.SWEEP:
            self._sweep(ev.at, ev.payload)
        elif kind is EventKind.INJECT_ORACLE:
            self._oracle(ev.at)
        elif kind is EventKind.ATTACK_AT:
            apply_attack(self, ev.node, ev.payload, ev.at)

    def _transmit(self, data: bytes, src: int, dst: int, now: Timestamp, counters: TrafficCounters) -> None:
        counters.sent += 1
        if self.wire_sent is not None:
            self.wire_sent.append((src, dst, data))
        guest = dst if src == CC_NODE else src
        host = self.host_of.get(guest)
        if host is not None and host in self.suppressing_hosts:
            counters.dropped += 1
            self.suppressed += 1
            return
        at = link_transmit(self.params.link, data, src, dst, now, self.link_rng,
                           in_flight=self.in_flight, truth=self.truth)
        if at is None:
            counters.dropped += 1
            return
        self.in_flight += 1
        self.sim.schedule(at, EventKind.DELIVER, dst, (src, data))

    def _tick(self, now: Timestamp) -> None:
        cipher = self.cipher
        for node, down in self.cc.cc_tick(now):
            sealed = cipher.seal_bytes(self.keys[node], derive_nonce(Direction.DOWN, down.ordinal),
                                       encode_heartbeat(down))
            self._transmit(sealed, CC_NODE, node, now, self.down)

    def _deliver(self, ev: SimEvent) -> None:
        self.in_flight -= 1
        src, data = ev.payload
        dst = ev.node
        if self.wire_delivered is not None:
            self.wire_delivered.append((src, dst, data))
        if dst == CC_NODE:
            self.up.delivered += 1
            if self._draining:
                return
            try:
                self.cc.on_heartbeat(data, ev.at)
            except UnknownSender:
                pass
            return
        self.down.delivered += 1
        if self._draining:
            return
        self._agent_receive(dst, data, ev.at)

    def _is_failed(self, node: int, now: Timestamp) -> bool:
        fu = self.failed_until
        if fu.get(node, -1) > now:
            return True
        host = self.host_of.get(node)
        return host is not None and fu.get(host, -1) > now

    def _agent_receive(self, node: int, data: bytes, now: Timestamp) -> None:
        if self.failed_until and self._is_failed(node, now):
            return
        state = self.agents[node]
        key = self.keys[node]
        try:
            down = decode_heartbeat(self.cipher.open_bytes(key, data))
        except ProtocolError:
            return
        state, action = agent_on_challenge(state, down, now, self._peer_readings(state, now), self.agent_rng)
        self.agents[node] = state
        if action.kind is not ActionKind.SEND_UP:
            return
        up = action.msg
        sealed = self.cipher.seal_bytes(key, derive_nonce(Direction.UP, up.ordinal), encode_heartbeat(up))
        self.last_up[node] = sealed
        self._transmit(sealed, node, CC_NODE, now, self.up)

    def _peer_readings(self, state: AgentState, now: Timestamp) -> dict[int, Timestamp]:
        agents = self.agents
        if state.role is NodeRole.GUEST:
            host = state.host
            return {host: clock_read(agents[host].clock, now)}
        return {g: clock_read(agents[g].clock, now) for g in self.guests_of.get(state.node, ())}

    def _sweep(self, now: Timestamp, kind: SweepKind) -> None:
        self.cc.sweep(now, kind)
        if kind is not SweepKind.RESPONSE:
            return
        signals = self.cc.drain_signals()
        if not signals:
            return
        for cm in self.cc.resolve_accusations(signals, now):
            self.countermeasures.append((now, cm))
            if cm.kind is CountermeasureKind.REQUEST_ROLLBACK:
                before = self.agents[cm.target]
                after = agent_rollback(before)
                if after is not before:
                    self.agents[cm.target] = after
                    self.truth.restore(now, cm.target)

    def _oracle(self, now: Timestamp) -> None:
        model = self.params.model
        rng = self.oracle_rng
        period = self.params.check.hb_period_ms
        forgeable = self.params.forgeable_agents
        for node in self.nodes:
            role = self.agents[node].role
            outcome = ask_oracle(model, role, rng)
            if outcome is OracleOutcome.OK:
                continue
            if outcome is OracleOutcome.FAIL:
                self.failed_until[node] = now + period
                self.truth.record(now, node, Cause.INFRASTRUCTURE_FAILURE, "NodeFailure")
            else:
                attack = rng.choice(applicable_attacks(role is NodeRole.HOST, forgeable))
                apply_attack(self, node, attack, now)

    def replay_last_up(self, node: int, now: Timestamp) -> None:
        """Re-send the node's most recent Up, byte for byte."""
        data = self.last_up.get(node)
        if data is not None:
            self._transmit(data, node, CC_NODE, now, self.up)

    # --- results ------------------------------------------------------------

    @property
    def verdicts(self) -> list[DetectionVerdict]:
        return self.cc.published

    def totals(self) -> TrafficCounters:
        return TrafficCounters(
            self.down.sent + self.up.sent,
            self.down.delivered + self.up.delivered,
            self.down.dropped + self.up.dropped,
        )

    def verdicts_against(self, nodes: Iterable[int]) -> list[DetectionVerdict]:
        wanted = set(nodes)
        return [v for v in self.verdicts if v.node in wanted]


def _is_delivery(ev: SimEvent) -> bool:
    return ev.kind is EventKind.DELIVER
