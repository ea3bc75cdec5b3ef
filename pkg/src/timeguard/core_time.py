"""Clock model, timestamps and the timeline validator.

Timestamps are plain ``int`` milliseconds since a fixed epoch. Every node in
the simulator owns a :class:`VirtualClock`, an affine function of virtual
time that an attacker may jump or skew.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass
from fractions import Fraction
from typing import Iterable, Sequence, Union

Timestamp = int

Rate = Union[int, Fraction]


@dataclass(frozen=True, slots=True)
class VirtualClock:
    anchor_virtual: Timestamp = 0
    anchor_reading: Timestamp = 0
    rate: Fraction = Fraction(1)

    def __post_init__(self) -> None:
        if not isinstance(self.rate, Fraction):
            object.__setattr__(self, "rate", Fraction(self.rate))
        if self.rate <= 0:
            raise ValueError(f"clock rate must be positive, got {self.rate}")

    @classmethod
    def identity(cls) -> VirtualClock:
        return cls(0, 0, Fraction(1))


class TamperKind(enum.Enum):
    JUMP = "Jump"
    RATE_CHANGE = "RateChange"


@dataclass(frozen=True, slots=True)
class TamperAction:
    kind: TamperKind
    delta_ms: int = 0
    new_rate: Fraction = Fraction(1)

    def __post_init__(self) -> None:
        if self.kind is TamperKind.RATE_CHANGE:
            if not isinstance(self.new_rate, Fraction):
                object.__setattr__(self, "new_rate", Fraction(self.new_rate))
            if self.new_rate <= 0:
                raise ValueError(f"RateChange needs a positive rate, got {self.new_rate}")

    @classmethod
    def jump(cls, delta_ms: int) -> TamperAction:
        return cls(TamperKind.JUMP, delta_ms=int(delta_ms))

    @classmethod
    def rate_change(cls, new_rate: Rate) -> TamperAction:
        return cls(TamperKind.RATE_CHANGE, new_rate=Fraction(new_rate))


def clock_read(clock: VirtualClock, now: Timestamp) -> Timestamp:
    """Reading of ``clock`` at virtual instant ``now``, rounded half-up to the ms."""
    rate = clock.rate
    num, den = rate.numerator, rate.denominator
    elapsed = now - clock.anchor_virtual
    if den == 1:
        return clock.anchor_reading + num * elapsed
    return clock.anchor_reading + (2 * num * elapsed + den) // (2 * den)


def clock_tamper(clock: VirtualClock, action: TamperAction, now: Timestamp) -> VirtualClock:
    """Apply a tamper action at ``now``.

    A jump shifts the whole affine line, so ``Jump(d)`` followed by
    ``Jump(-d)`` restores every reading exactly. A rate change re-anchors at
    the current reading, so there is no discontinuity at ``now``.
    """
    if action.kind is TamperKind.JUMP:
        return VirtualClock(clock.anchor_virtual, clock.anchor_reading + action.delta_ms, clock.rate)
    if action.new_rate <= 0:
        raise ValueError(f"RateChange needs a positive rate, got {action.new_rate}")
    return VirtualClock(now, clock_read(clock, now), action.new_rate)


@dataclass(frozen=True, slots=True)
class TimelineEntry:
    ordinal: int
    reported_ts: Timestamp
    receipt_ts: Timestamp = 0

    def __post_init__(self) -> None:
        if self.ordinal < 1:
            raise ValueError(f"ordinals start at 1, got {self.ordinal}")


class ViolationReason(enum.Enum):
    NON_INCREASING_TIMESTAMP = "NonIncreasingTimestamp"
    DUPLICATE_ORDINAL = "DuplicateOrdinal"


@dataclass(frozen=True, slots=True)
class TimelineViolation:
    at_ordinal: int
    prev_ordinal: int
    reason: ViolationReason


class ValidationMode(enum.Enum):
    ARRIVAL_ORDER = "arrival"
    ORDINAL_SORTED = "ordinal"


def _entries(items: Iterable) -> list[TimelineEntry]:
    out = []
    for item in items:
        if isinstance(item, TimelineEntry):
            out.append(item)
        else:
            out.append(TimelineEntry(*item))
    return out


def validate_timeline(
    entries: Sequence[TimelineEntry],
    mode: ValidationMode = ValidationMode.ARRIVAL_ORDER,
) -> list[TimelineViolation]:
    """Check a node's received heartbeats for a strictly increasing timeline.

    ``entries`` must be in CC arrival order. Plain ``(ordinal, reported_ts)``
    tuples are accepted for convenience.

    In arrival-order mode an entry is flagged when its reported time is not
    above the largest reported time seen earlier; a late but honest datagram
    is therefore flagged. Ordinal-sorted mode applies the same rule after
    sorting by ordinal, which tolerates reordering in transit. Equal
    timestamps count as violations in both modes, and so does any repeated
    ordinal.
    """
    items = _entries(entries)
    if mode is ValidationMode.ARRIVAL_ORDER:
        return _validate_arrival(items)
    return _validate_sorted(items)


def _validate_arrival(items: list[TimelineEntry]) -> list[TimelineViolation]:
    out: list[TimelineViolation] = []
    seen: set[int] = set()
    max_ts: int | None = None
    max_ordinal = 0
    # last arrival's ordinal, and the latest one differing from it; a
    # violation never names its own ordinal as the previous one
    last = before_last = 0
    for e in items:
        if e.ordinal in seen:
            prev = last if last != e.ordinal else before_last
            out.append(TimelineViolation(e.ordinal, prev, ViolationReason.DUPLICATE_ORDINAL))
        elif max_ts is not None and e.reported_ts <= max_ts:
            out.append(TimelineViolation(e.ordinal, max_ordinal, ViolationReason.NON_INCREASING_TIMESTAMP))
        if e.ordinal not in seen and (max_ts is None or e.reported_ts > max_ts):
            max_ts = e.reported_ts
            max_ordinal = e.ordinal
        seen.add(e.ordinal)
        if e.ordinal != last:
            before_last, last = last, e.ordinal
    return out


def _validate_sorted(items: list[TimelineEntry]) -> list[TimelineViolation]:
    # Stable sort keeps arrival order among duplicates, so the later arrival is
    # the one flagged. Comparing against the running maximum (not only the
    # immediate neighbour) flags every ordinal that has any earlier-ordinal
    # entry at or above its timestamp.
    return _validate_arrival(sorted(items, key=lambda e: e.ordinal))
