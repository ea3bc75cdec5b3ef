"""Adversary catalogue and the 16-cell resiliency matrix.

A :class:`ScenarioCell` fixes whether agents are forgeable, which of
host/guest is malicious, and whose time is being protected. Each cell maps to
a :class:`DetectionExpectation` and to a concrete attack plan that the
simulator can execute.
"""

from __future__ import annotations

import enum
import json
from dataclasses import dataclass, field
from fractions import Fraction
from importlib import resources
from typing import Iterable

from .core_time import Timestamp


class AttackType(enum.Enum):
    CLOCK_JUMP = "ClockJump"
    CLOCK_SKEW = "ClockSkew"
    SUPPRESS_HEARTBEATS = "SuppressHeartbeats"
    FORGE_RESPONSE = "ForgeResponse"
    REPLAY_HEARTBEAT = "ReplayHeartbeat"
    AGENT_SHUTDOWN = "AgentShutdown"
    HOST_FORGES_GUEST = "HostForgesGuest"
    HOST_SUPPRESSES_GUEST_TRAFFIC = "HostSuppressesGuestTraffic"


HOST_ONLY = frozenset({AttackType.HOST_FORGES_GUEST, AttackType.HOST_SUPPRESSES_GUEST_TRAFFIC})
CLOCK_ATTACKS = frozenset({AttackType.CLOCK_JUMP, AttackType.CLOCK_SKEW})


@dataclass(frozen=True, slots=True)
class AttackKind:
    type: AttackType
    delta_ms: int = 0
    rate: Fraction = Fraction(1)

    def __post_init__(self) -> None:
        if self.type is AttackType.CLOCK_JUMP and self.delta_ms == 0:
            raise ValueError("ClockJump needs a non-zero delta")
        if self.type is AttackType.CLOCK_SKEW:
            if not isinstance(self.rate, Fraction):
                object.__setattr__(self, "rate", Fraction(self.rate))
            if self.rate <= 0 or self.rate == 1:
                raise ValueError("ClockSkew needs a positive rate other than 1")

    @classmethod
    def clock_jump(cls, delta_ms: int) -> AttackKind:
        return cls(AttackType.CLOCK_JUMP, delta_ms=int(delta_ms))

    @classmethod
    def clock_skew(cls, rate) -> AttackKind:
        return cls(AttackType.CLOCK_SKEW, rate=Fraction(rate))

    @classmethod
    def of(cls, type_: AttackType) -> AttackKind:
        return cls(type_)

    def __str__(self) -> str:
        if self.type is AttackType.CLOCK_JUMP:
            return f"ClockJump({self.delta_ms})"
        if self.type is AttackType.CLOCK_SKEW:
            return f"ClockSkew({self.rate})"
        return self.type.value


class InapplicableAttack(ValueError):
    pass


# What the stochastic oracle picks from when a node is hacked.
ORACLE_CATALOGUE: tuple[AttackKind, ...] = (
    AttackKind.clock_jump(-60_000),
    AttackKind.clock_skew(Fraction(1, 2)),
    AttackKind.of(AttackType.SUPPRESS_HEARTBEATS),
    AttackKind.of(AttackType.FORGE_RESPONSE),
    AttackKind.of(AttackType.REPLAY_HEARTBEAT),
    AttackKind.of(AttackType.AGENT_SHUTDOWN),
    AttackKind.of(AttackType.HOST_FORGES_GUEST),
    AttackKind.of(AttackType.HOST_SUPPRESSES_GUEST_TRAFFIC),
)


def applicable_attacks(is_host: bool, forgeable: bool) -> tuple[AttackKind, ...]:
    out = []
    for a in ORACLE_CATALOGUE:
        if a.type in HOST_ONLY and not is_host:
            continue
        if a.type is AttackType.HOST_FORGES_GUEST and not forgeable:
            continue
        out.append(a)
    return tuple(out)


def apply_attack(world, node: int, attack: AttackKind, at: Timestamp) -> None:
    """Install ``attack`` on ``node`` inside a running world.

    ``world`` is duck-typed (see :class:`timeguard.world.CloudWorld`). A host
    clock jump also shifts the clocks of all guests it hosts. A Hack record is
    appended to the ground-truth log only once the attack has been applied.
    """
    from .agent import agent_apply_compromise, shift_clock
    from .protocol import NodeRole
    from .simnet import Cause

    state = world.agents[node]
    is_host = state.role is NodeRole.HOST
    if attack.type in HOST_ONLY and not is_host:
        raise InapplicableAttack(f"{attack} only applies to hosts, node {node} is a guest")

    if attack.type is AttackType.HOST_FORGES_GUEST:
        guests = world.guests_of.get(node, ())
        updated = {g: agent_apply_compromise(world.agents[g], attack, at) for g in guests}
        updated[node] = agent_apply_compromise(state, attack, at)
        world.agents.update(updated)
    elif attack.type is AttackType.HOST_SUPPRESSES_GUEST_TRAFFIC:
        world.suppressing_hosts.add(node)
    elif attack.type is AttackType.REPLAY_HEARTBEAT:
        world.replay_last_up(node, at)
    else:
        world.agents[node] = agent_apply_compromise(state, attack, at)
        if is_host and attack.type is AttackType.CLOCK_JUMP:
            for g in world.guests_of.get(node, ()):
                world.agents[g] = shift_clock(world.agents[g], attack.delta_ms, at)

    world.truth.record(at, node, Cause.HACK, str(attack))


# --- resiliency matrix ----------------------------------------------------


class Protecting(enum.Enum):
    GUEST_TIME = "guest-time"
    HOST_TIME = "host-time"


class Outcome(enum.Enum):
    DETECTED = "Detected"
    NOT_DETECTED = "NotDetected"
    TRIVIALLY_CLEAN = "TriviallyClean"


class Channel(enum.Enum):
    GUEST_SIGNAL = "GuestSignal"
    HOST_SIGNAL = "HostSignal"
    CC_VERDICT = "CcVerdict"
    HEARTBEAT_MISS = "HeartbeatMiss"


@dataclass(frozen=True, slots=True)
class ScenarioCell:
    forgeable: bool
    host_malicious: bool
    guest_malicious: bool
    protecting: Protecting

    @property
    def cell_id(self) -> str:
        return "/".join((
            "forgeable" if self.forgeable else "unforgeable",
            self.protecting.value,
            "malicious-host" if self.host_malicious else "honest-host",
            "malicious-guest" if self.guest_malicious else "honest-guest",
        ))

    @classmethod
    def parse(cls, text: str) -> ScenarioCell:
        parts = text.strip().lower().split("/")
        if len(parts) != 4:
            raise ValueError(f"scenario id needs 4 '/'-separated parts: {text!r}")
        forge, prot, host, guest = parts
        try:
            return cls(
                forgeable={"forgeable": True, "unforgeable": False}[forge],
                protecting=Protecting(prot),
                host_malicious={"malicious-host": True, "honest-host": False}[host],
                guest_malicious={"malicious-guest": True, "honest-guest": False}[guest],
            )
        except (KeyError, ValueError):
            raise ValueError(f"unknown scenario id {text!r}") from None


def all_cells() -> list[ScenarioCell]:
    return [
        ScenarioCell(f, h, g, p)
        for f in (False, True)
        for p in Protecting
        for h in (True, False)
        for g in (True, False)
    ]


@dataclass(frozen=True, slots=True)
class DetectionExpectation:
    outcome: Outcome
    via: frozenset[Channel] = field(default_factory=frozenset)
    # Detection happens but the CC is left with mutual accusations it cannot
    # settle, so trust resolution stays at Suspect.
    ambiguous: bool = False


def scenario_expectation(cell: ScenarioCell) -> DetectionExpectation:
    if not cell.host_malicious and not cell.guest_malicious:
        return DetectionExpectation(Outcome.TRIVIALLY_CLEAN)
    C = Channel
    if not cell.forgeable:
        if cell.host_malicious and cell.guest_malicious:
            return DetectionExpectation(Outcome.DETECTED, frozenset({C.GUEST_SIGNAL, C.HOST_SIGNAL, C.HEARTBEAT_MISS}))
        if cell.host_malicious:
            return DetectionExpectation(Outcome.DETECTED, frozenset({C.GUEST_SIGNAL, C.CC_VERDICT}))
        # malicious guest, honest host
        if cell.protecting is Protecting.HOST_TIME:
            # the guest cannot touch host time: nothing to detect on the protected timeline
            return DetectionExpectation(Outcome.DETECTED, frozenset())
        return DetectionExpectation(Outcome.DETECTED, frozenset({C.HOST_SIGNAL, C.CC_VERDICT}))
    if cell.host_malicious:
        return DetectionExpectation(Outcome.NOT_DETECTED)
    return DetectionExpectation(Outcome.DETECTED, frozenset({C.CC_VERDICT}), ambiguous=True)


@dataclass(frozen=True, slots=True)
class PlannedAttack:
    target: str  # "host" or "guest"
    attack: AttackKind


def scenario_plan(cell: ScenarioCell) -> tuple[PlannedAttack, ...]:
    """Attacks injected (in order, at the same instant) to realise a cell."""
    jump = AttackKind.clock_jump(-60_000)
    plan: list[PlannedAttack] = []
    if not cell.forgeable:
        if cell.host_malicious:
            plan.append(PlannedAttack("host", jump))
        if cell.guest_malicious:
            if cell.host_malicious:
                plan.append(PlannedAttack("guest", AttackKind.of(AttackType.AGENT_SHUTDOWN)))
            else:
                plan.append(PlannedAttack("guest", jump))
        return tuple(plan)
    if cell.guest_malicious:
        plan.append(PlannedAttack("guest", jump))
    if cell.host_malicious:
        plan.append(PlannedAttack("host", AttackKind.of(AttackType.HOST_FORGES_GUEST)))
        plan.append(PlannedAttack("host", jump))
    return tuple(plan)


def load_catalogue() -> dict[str, dict]:
    """Human-readable scenario catalogue shipped as package data."""
    text = resources.files("timeguard").joinpath("data/scenarios.json").read_text()
    return {entry["id"]: entry for entry in json.loads(text)["cells"]}


def catalogue_entry(cell: ScenarioCell) -> dict:
    exp = scenario_expectation(cell)
    return {
        "id": cell.cell_id,
        "forgeable": cell.forgeable,
        "protecting": cell.protecting.value,
        "host_malicious": cell.host_malicious,
        "guest_malicious": cell.guest_malicious,
        "outcome": exp.outcome.value,
        "via": sorted(c.value for c in exp.via),
        "ambiguous": exp.ambiguous,
        "plan": [f"{p.target}:{p.attack}" for p in scenario_plan(cell)],
    }


def parse_channels(names: Iterable[str]) -> frozenset[Channel]:
    return frozenset(Channel(n) for n in names)
