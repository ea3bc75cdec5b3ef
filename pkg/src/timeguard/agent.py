"""Guest/host time-controller agents.

Agents only speak when challenged: each down heartbeat is answered by one up
heartbeat carrying the agent's perceived time, a response tag and at most one
queued signal. Before answering, an honest agent runs two local checks:

* offset check: its perceived time minus the CC timestamp in the challenge
  should stay roughly constant; a step larger than the tolerance means the
  agent's clock moved under it;
* cross-probe: a guest compares its clock with its host's, a host with each
  of its guests'.

Combining the two lets a guest tell "my own clock was altered" (both fire)
from "my host altered the time it feeds me" (only one fires).
"""

from __future__ import annotations

import enum
import random
from dataclasses import dataclass, field, replace
from typing import Mapping

from .attacks import CLOCK_ATTACKS, AttackKind, AttackType, InapplicableAttack
from .core_time import TamperAction, Timestamp, VirtualClock, clock_read, clock_tamper
from .protocol import (
    CC_NODE,
    NO_SIGNAL,
    AgentKey,
    Direction,
    HeartbeatMsg,
    NodeRole,
    SignalCode,
    SignalPayload,
    compute_response,
)

DEFAULT_TOLERANCE_MS = 1000


class Behavior(enum.Enum):
    HONEST = "Honest"
    SUPPRESS_HEARTBEATS = "SuppressHeartbeats"
    TAMPERED_CLOCK = "TamperedClock"
    FORGE_RESPONSES = "ForgeResponses"
    SHUTDOWN = "Shutdown"
    # a malicious host answers in this agent's name with its extracted key
    FORGED_BY_HOST = "ForgedByHost"


@dataclass(frozen=True, slots=True)
class AgentState:
    node: int
    role: NodeRole
    key: AgentKey
    clock: VirtualClock = field(default_factory=VirtualClock.identity)
    host: int | None = None
    next_ordinal: int = 1
    behavior: Behavior = Behavior.HONEST
    forgeable: bool = False
    # attacker controls the agent code: no honest self-reports, guests lie
    lying: bool = False
    baseline: VirtualClock = field(default_factory=VirtualClock.identity)
    tolerance_ms: int = DEFAULT_TOLERANCE_MS
    ref_offset: int | None = None
    reported: frozenset[int] = frozenset()
    pending: tuple[SignalPayload, ...] = ()

    def __post_init__(self) -> None:
        if self.role is NodeRole.GUEST and self.host is None:
            raise ValueError("a guest agent must reference its host")
        if self.node == CC_NODE:
            raise ValueError("node id 0 is reserved for the cloud controller")


def new_agent(node: int, role: NodeRole, key: AgentKey, *, host: int | None = None,
              clock: VirtualClock | None = None, forgeable: bool = False,
              tolerance_ms: int = DEFAULT_TOLERANCE_MS) -> AgentState:
    clock = clock or VirtualClock.identity()
    return AgentState(node, role, key, clock, host=host, forgeable=forgeable,
                      baseline=clock, tolerance_ms=tolerance_ms)


class ActionKind(enum.Enum):
    SEND_UP = "SendUp"
    SILENT = "Silent"


@dataclass(frozen=True, slots=True)
class AgentAction:
    kind: ActionKind
    msg: HeartbeatMsg | None = None
    to: int = CC_NODE


SILENT = AgentAction(ActionKind.SILENT)


def agent_cross_probe(state: AgentState, peer_reading: Timestamp, now: Timestamp,
                      tolerance_ms: int = DEFAULT_TOLERANCE_MS, peer: int | None = None) -> SignalPayload | None:
    """Compare this agent's clock with a peer reading taken at the same instant.

    Fires only on strict excess over the tolerance. A guest's signal names its
    host; a host's names ``peer`` (the probed guest).
    """
    if abs(clock_read(state.clock, now) - peer_reading) <= tolerance_ms:
        return None
    if state.role is NodeRole.GUEST:
        return SignalPayload.accuse(SignalCode.GUEST_REPORTS_HOST_COMPROMISED, state.host)
    return SignalPayload.accuse(SignalCode.HOST_REPORTS_GUEST_COMPROMISED, peer if peer is not None else 0)


def _self_report() -> SignalPayload:
    return SignalPayload(SignalCode.AGENT_LOCAL_ANOMALY)


def _probe(state: AgentState, down: HeartbeatMsg, perceived: Timestamp, now: Timestamp,
           peer_readings: Mapping[int, Timestamp] | None):
    """Run local checks; returns (ref_offset, reported, new signals).

    ``perceived`` is this agent's own reading at ``now``, so the divergence
    test is the same one :func:`agent_cross_probe` applies.
    """
    tol = state.tolerance_ms
    offset = perceived - down.timestamp
    local_jump = state.ref_offset is not None and abs(offset - state.ref_offset) > tol
    readings = peer_readings or {}
    reported = set(state.reported)
    signals: list[SignalPayload] = []

    if state.role is NodeRole.GUEST:
        host = state.host
        diverged = host in readings and abs(perceived - readings[host]) > tol
        if local_jump:
            # Own clock moved relative to CC time. If it also left the host's
            # clock behind, the guest itself was altered; otherwise the host
            # moved both.
            signals.append(_self_report() if diverged
                           else SignalPayload.accuse(SignalCode.GUEST_REPORTS_HOST_COMPROMISED, host))
        elif diverged and host not in reported:
            signals.append(SignalPayload.accuse(SignalCode.GUEST_REPORTS_HOST_COMPROMISED, host))
        if diverged:
            reported.add(host)
        else:
            reported.discard(host)
    else:
        if local_jump:
            signals.append(_self_report())
        for guest in sorted(readings):
            diverged = abs(perceived - readings[guest]) > tol
            if diverged and guest not in reported and not local_jump:
                signals.append(SignalPayload.accuse(SignalCode.HOST_REPORTS_GUEST_COMPROMISED, guest))
            if diverged:
                reported.add(guest)
            else:
                reported.discard(guest)

    if state.lying:
        signals = []
    if reported == state.reported:
        return offset, state.reported, signals
    return offset, frozenset(reported), signals


def agent_on_challenge(state: AgentState, down: HeartbeatMsg, now: Timestamp,
                       peer_readings: Mapping[int, Timestamp] | None = None,
                       rng: random.Random | None = None) -> tuple[AgentState, AgentAction]:
    """Answer one authenticated down heartbeat."""
    behavior = state.behavior
    if behavior is Behavior.SHUTDOWN or behavior is Behavior.SUPPRESS_HEARTBEATS:
        return state, SILENT

    ordinal = state.next_ordinal
    signal = NO_SIGNAL
    if behavior is Behavior.FORGED_BY_HOST:
        perceived = clock_read(state.baseline, now)
        tag = compute_response(state.key, down.challenge, ordinal, perceived)
        new_state = replace(state, next_ordinal=ordinal + 1)
    elif behavior is Behavior.FORGE_RESPONSES:
        perceived = clock_read(state.clock, now)
        tag = (rng or random).randbytes(16)
        new_state = replace(state, next_ordinal=ordinal + 1)
    else:
        perceived = clock_read(state.clock, now)
        tag = compute_response(state.key, down.challenge, ordinal, perceived)
        ref, reported, fresh = _probe(state, down, perceived, now, peer_readings)
        pending = state.pending + tuple(fresh)
        if pending:
            signal, pending = pending[0], pending[1:]
        # positional construction; dataclasses.replace dominates large runs
        new_state = AgentState(state.node, state.role, state.key, state.clock, state.host, ordinal + 1,
                               behavior, state.forgeable, state.lying, state.baseline, state.tolerance_ms,
                               ref, reported, pending)

    up = HeartbeatMsg(Direction.UP, ordinal, down.challenge, perceived, tag, signal)
    return new_state, AgentAction(ActionKind.SEND_UP, up)


def agent_apply_compromise(state: AgentState, attack: AttackKind, now: Timestamp) -> AgentState:
    t = attack.type
    if t in CLOCK_ATTACKS:
        action = (TamperAction.jump(attack.delta_ms) if t is AttackType.CLOCK_JUMP
                  else TamperAction.rate_change(attack.rate))
        clock = clock_tamper(state.clock, action, now)
        behavior = state.behavior
        if behavior in (Behavior.HONEST, Behavior.TAMPERED_CLOCK):
            behavior = Behavior.TAMPERED_CLOCK
        if not state.forgeable or behavior is Behavior.FORGED_BY_HOST:
            return replace(state, clock=clock, behavior=behavior)
        pending = state.pending
        if state.role is NodeRole.GUEST:
            pending = pending + (SignalPayload.accuse(SignalCode.GUEST_REPORTS_HOST_COMPROMISED, state.host),)
        return replace(state, clock=clock, behavior=behavior, lying=True, pending=pending)
    if t is AttackType.SUPPRESS_HEARTBEATS:
        return replace(state, behavior=Behavior.SUPPRESS_HEARTBEATS)
    if t is AttackType.FORGE_RESPONSE:
        return replace(state, behavior=Behavior.FORGE_RESPONSES)
    if t is AttackType.AGENT_SHUTDOWN:
        return replace(state, behavior=Behavior.SHUTDOWN)
    if t is AttackType.REPLAY_HEARTBEAT:
        # replays are injected on the wire; the agent itself is untouched
        return state
    if t is AttackType.HOST_FORGES_GUEST:
        if not state.forgeable:
            raise InapplicableAttack(f"node {state.node} runs an unforgeable agent")
        return replace(state, behavior=Behavior.FORGED_BY_HOST, lying=False, pending=())
    if t is AttackType.HOST_SUPPRESSES_GUEST_TRAFFIC:
        if state.role is not NodeRole.HOST:
            raise InapplicableAttack("only a host can suppress guest traffic")
        return state
    raise InapplicableAttack(f"unsupported attack {attack}")


def shift_clock(state: AgentState, delta_ms: int, now: Timestamp) -> AgentState:
    """Clock shift imposed from outside (a host moving its guests' time)."""
    return replace(state, clock=clock_tamper(state.clock, TamperAction.jump(delta_ms), now))


def agent_rollback(state: AgentState) -> AgentState:
    """Restore the pre-compromise snapshot; a no-op for an untouched agent."""
    if state.clock == state.baseline and state.behavior is Behavior.HONEST and not state.lying:
        return state
    return replace(state, clock=state.baseline, behavior=Behavior.HONEST, lying=False,
                   ref_offset=None, reported=frozenset(), pending=())
