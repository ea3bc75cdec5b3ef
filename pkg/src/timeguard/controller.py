"""Cloud Controller: trusted time, per-node ledgers, verdicts and countermeasures.

Arrivals are classified as they come in; verdicts are only *published* by the
periodic sweeps, so every published verdict carries the sweep's CC time.
"""

from __future__ import annotations

import bisect
import enum
import random
from collections import deque
from dataclasses import dataclass, field
from typing import Iterable, NamedTuple

from .core_time import TimelineEntry, Timestamp, ValidationMode
from .protocol import (
    CC_NODE,
    DEFAULT_CIPHER,
    AgentKey,
    Direction,
    HeartbeatMsg,
    MalformedDatagram,
    NodeRole,
    ProtocolError,
    SealedDatagram,
    SignalCode,
    SignalPayload,
    datagram_sender,
    decode_heartbeat,
    verify_response,
)


class ControllerError(Exception):
    pass


class DuplicateNode(ControllerError):
    pass


class UnknownSender(ControllerError):
    pass


@dataclass(frozen=True, slots=True)
class CheckConfig:
    hb_period_ms: int = 30_000
    response_check_ms: int = 30_000
    timeline_check_ms: int = 30_000
    timeout_threshold_ms: int = 300_000
    miss_grace_periods: int = 3

    def __post_init__(self) -> None:
        for name in ("hb_period_ms", "response_check_ms", "timeline_check_ms",
                     "timeout_threshold_ms", "miss_grace_periods"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if self.timeout_threshold_ms <= self.hb_period_ms:
            raise ValueError("timeout_threshold_ms must exceed hb_period_ms")


class VerdictKind(enum.Enum):
    TIMELINE = "Timeline"
    TIMEOUT = "Timeout"
    RESPONSE = "Response"
    HEARTBEAT_MISS = "HeartbeatMiss"


class SweepKind(enum.Enum):
    RESPONSE = "Response"
    TIMELINE = "Timeline"
    TIMEOUT = "Timeout"


class DetectionVerdict(NamedTuple):
    node: int
    kind: VerdictKind
    ordinal: int | None
    cc_time: Timestamp
    # CC time at which the heartbeat was classified (before publication)
    detected_at: Timestamp | None = None


class Trust(enum.IntEnum):
    TRUSTED = 0
    SUSPECT = 1
    COMPROMISED = 2


class CountermeasureKind(enum.Enum):
    MARK_COMPROMISED = "MarkCompromised"
    REQUEST_ROLLBACK = "RequestRollback"


class Countermeasure(NamedTuple):
    kind: CountermeasureKind
    target: int


class PendingChallenge(NamedTuple):
    challenge: bytes
    issued_at: Timestamp


@dataclass
class NodeLedger:
    node: int
    key: AgentKey
    role: NodeRole
    host: int | None = None
    entries: deque = field(default_factory=deque)
    max_reported_ts: Timestamp | None = None
    seen_ordinals: set = field(default_factory=set)
    # down ordinal -> challenge; the challenge index is for matching Ups
    pending: dict = field(default_factory=dict)
    by_challenge: dict = field(default_factory=dict)
    trust: Trust = Trust.TRUSTED
    last_arrival: Timestamp = 0
    last_challenge_at: Timestamp | None = None
    next_down_ordinal: int = 1
    missing: bool = False
    # ordinal-sorted online index (accepted entries only)
    sorted_ordinals: list = field(default_factory=list)
    sorted_ts: list = field(default_factory=list)


class CloudController:
    """Single owner of all ledgers; feed it events in time order."""

    def __init__(self, check: CheckConfig | None = None, *, rng: random.Random | None = None,
                 timeline_mode: ValidationMode = ValidationMode.ARRIVAL_ORDER,
                 ledger_window: int | None = -1, cipher=DEFAULT_CIPHER) -> None:
        self.check = check or CheckConfig()
        self.rng = rng or random.Random(0)
        self.timeline_mode = timeline_mode
        if ledger_window == -1:
            ledger_window = 10 * self.check.miss_grace_periods
        self.ledger_window = ledger_window
        self.cipher = cipher
        self.ledgers: dict[int, NodeLedger] = {}
        self.now: Timestamp = 0
        self._unpublished: dict[VerdictKind, list[tuple[int, int | None, Timestamp]]] = {
            k: [] for k in VerdictKind
        }
        self.published: list[DetectionVerdict] = []
        self.last_verdict_at: dict[int, Timestamp] = {}
        self._signals: list[tuple[int, SignalPayload, Timestamp]] = []
        # every authenticated signal ever received: (receipt time, sender, payload)
        self.signal_log: list[tuple[Timestamp, int, SignalPayload]] = []
        self._accusations: dict[tuple[int, int], Timestamp] = {}
        self.unknown_senders = 0
        self.malformed = 0

    # --- registry -----------------------------------------------------------

    def register_node(self, node: int, key: AgentKey, role: NodeRole, now: Timestamp = 0,
                      host: int | None = None) -> NodeLedger:
        if node == CC_NODE:
            raise ControllerError("node id 0 is reserved for the cloud controller")
        if node in self.ledgers:
            raise DuplicateNode(f"node {node} is already registered")
        ledger = NodeLedger(node, key, role, host, entries=deque(maxlen=self.ledger_window),
                            last_arrival=now)
        self.ledgers[node] = ledger
        return ledger

    def lookup(self, node: int) -> NodeLedger:
        return self.ledgers[node]

    # --- challenges ---------------------------------------------------------

    def cc_tick(self, now: Timestamp) -> list[tuple[int, HeartbeatMsg]]:
        """Issue a fresh Down to every node whose period has elapsed."""
        self.now = now
        period = self.check.hb_period_ms
        horizon = now - 10 * self.check.timeout_threshold_ms
        randbytes = self.rng.randbytes
        out = []
        for node, led in self.ledgers.items():
            if led.last_challenge_at is not None and now - led.last_challenge_at < period:
                continue
            ordinal = led.next_down_ordinal
            led.next_down_ordinal = ordinal + 1
            challenge = randbytes(16)
            led.pending[ordinal] = PendingChallenge(challenge, now)
            led.by_challenge[challenge] = ordinal
            led.last_challenge_at = now
            if next(iter(led.pending.values())).issued_at < horizon:
                self._prune(led, horizon)
            out.append((node, HeartbeatMsg(Direction.DOWN, ordinal, challenge, now)))
        return out

    @staticmethod
    def _prune(led: NodeLedger, horizon: Timestamp) -> None:
        # pending is in issue order, so the stale ones are at the front
        pending = led.pending
        while pending:
            ordinal = next(iter(pending))
            if pending[ordinal].issued_at >= horizon:
                return
            del led.by_challenge[pending.pop(ordinal).challenge]

    # --- arrivals -----------------------------------------------------------

    def on_heartbeat(self, datagram: SealedDatagram | bytes, receipt_ts: Timestamp) -> VerdictKind | None:
        """Classify one Up. Returns the (not yet published) verdict kind, if any."""
        self.now = receipt_ts
        data = datagram.to_bytes() if isinstance(datagram, SealedDatagram) else datagram
        try:
            sender = datagram_sender(data)
        except MalformedDatagram:
            self.malformed += 1
            return None
        led = self.ledgers.get(sender)
        if led is None:
            self.unknown_senders += 1
            raise UnknownSender(f"datagram from unregistered node {sender}")

        msg = self._authenticate(led, data)
        if msg is None:
            return self._classify(led, VerdictKind.RESPONSE, None, receipt_ts)

        down_ordinal = led.by_challenge.pop(msg.challenge)
        issued_at = led.pending.pop(down_ordinal).issued_at
        led.entries.append(TimelineEntry(msg.ordinal, msg.timestamp, receipt_ts))
        led.last_arrival = receipt_ts
        led.missing = False
        if msg.signal.code is not SignalCode.NONE:
            self._signals.append((led.node, msg.signal, receipt_ts))
            self.signal_log.append((receipt_ts, led.node, msg.signal))

        if self._timeline_violation(led, msg.ordinal, msg.timestamp):
            return self._classify(led, VerdictKind.TIMELINE, msg.ordinal, receipt_ts)
        if receipt_ts - issued_at > self.check.timeout_threshold_ms:
            return self._classify(led, VerdictKind.TIMEOUT, msg.ordinal, receipt_ts)
        return None

    def _authenticate(self, led: NodeLedger, data: bytes) -> HeartbeatMsg | None:
        try:
            msg = decode_heartbeat(self.cipher.open_bytes(led.key, data))
        except ProtocolError:
            return None
        if msg.direction is not Direction.UP or msg.challenge not in led.by_challenge:
            # unknown or already answered challenge: a replay or a forgery
            return None
        if not verify_response(led.key, msg.challenge, msg.ordinal, msg.timestamp, msg.response_tag):
            return None
        return msg

    def _timeline_violation(self, led: NodeLedger, ordinal: int, ts: Timestamp) -> bool:
        if ordinal in led.seen_ordinals:
            return True
        led.seen_ordinals.add(ordinal)
        if self.timeline_mode is ValidationMode.ARRIVAL_ORDER:
            if led.max_reported_ts is not None and ts <= led.max_reported_ts:
                return True
            led.max_reported_ts = ts
            return False
        # ordinal-sorted: compare with the accepted neighbours by ordinal
        i = bisect.bisect_left(led.sorted_ordinals, ordinal)
        if i > 0 and led.sorted_ts[i - 1] >= ts:
            return True
        if i < len(led.sorted_ordinals) and led.sorted_ts[i] <= ts:
            return True
        led.sorted_ordinals.insert(i, ordinal)
        led.sorted_ts.insert(i, ts)
        if led.max_reported_ts is None or ts > led.max_reported_ts:
            led.max_reported_ts = ts
        return False

    def _classify(self, led: NodeLedger, kind: VerdictKind, ordinal: int | None, at: Timestamp) -> VerdictKind:
        self._unpublished[kind].append((led.node, ordinal, at))
        self.last_verdict_at[led.node] = at
        return kind

    # --- publication --------------------------------------------------------

    def sweep(self, now: Timestamp, kind: SweepKind) -> list[DetectionVerdict]:
        self.now = now
        if kind is SweepKind.RESPONSE:
            out = self._flush(now, VerdictKind.RESPONSE)
        elif kind is SweepKind.TIMELINE:
            out = self._flush(now, VerdictKind.TIMELINE)
        else:
            out = self._flush(now, VerdictKind.TIMEOUT) + self._misses(now)
        self.published.extend(out)
        return out

    def flush(self, now: Timestamp) -> list[DetectionVerdict]:
        """Publish everything still unpublished (end of run); no miss check."""
        self.now = now
        out: list[DetectionVerdict] = []
        for kind in (VerdictKind.RESPONSE, VerdictKind.TIMELINE, VerdictKind.TIMEOUT):
            out.extend(self._flush(now, kind))
        self.published.extend(out)
        return out

    def _flush(self, now: Timestamp, kind: VerdictKind) -> list[DetectionVerdict]:
        acc = self._unpublished[kind]
        if not acc:
            return []
        self._unpublished[kind] = []
        return [DetectionVerdict(node, kind, ordinal, now, at) for node, ordinal, at in acc]

    def _misses(self, now: Timestamp) -> list[DetectionVerdict]:
        grace = self.check.miss_grace_periods * self.check.hb_period_ms
        limit = now - grace
        out = []
        for node, led in self.ledgers.items():
            if led.missing or led.last_arrival > limit or not led.pending:
                continue
            oldest = next(iter(led.pending.values())).issued_at
            if oldest <= limit:
                # one miss per silence episode; cleared by the next arrival
                led.missing = True
                self.last_verdict_at[node] = now
                out.append(DetectionVerdict(node, VerdictKind.HEARTBEAT_MISS, None, now, now))
        return out

    def unpublished_count(self) -> int:
        return sum(len(v) for v in self._unpublished.values())

    # --- signals and trust --------------------------------------------------

    def drain_signals(self) -> list[tuple[int, SignalPayload]]:
        out = [(sender, payload) for sender, payload, _ in self._signals]
        self._signals = []
        return out

    def _accused(self, sender: int, payload: SignalPayload) -> int | None:
        if payload.code is SignalCode.AGENT_LOCAL_ANOMALY:
            return sender
        target = payload.accused()
        if target is None or target not in self.ledgers or target == sender:
            return None
        return target

    def _raise_trust(self, node: int, level: Trust) -> None:
        led = self.ledgers[node]
        if level > led.trust:
            led.trust = level

    def resolve_accusations(self, signals: Iterable[tuple[int, SignalPayload]],
                            now: Timestamp | None = None) -> list[Countermeasure]:
        """Conservative trust policy over authenticated signals."""
        now = self.now if now is None else now
        window = self.check.timeout_threshold_ms
        self._accusations = {k: t for k, t in self._accusations.items() if t >= now - window}

        batch = []
        for sender, payload in signals:
            accused = self._accused(sender, payload)
            if accused is None:
                continue
            batch.append((sender, accused))
            self._accusations[(sender, accused)] = now

        out: list[Countermeasure] = []
        for sender, accused in batch:
            mutual = sender != accused and (accused, sender) in self._accusations
            if mutual and self._guest_host_pair(sender, accused):
                self._raise_trust(sender, Trust.SUSPECT)
                self._raise_trust(accused, Trust.SUSPECT)
                continue
            seen = self.last_verdict_at.get(accused)
            if seen is not None and seen >= now - window:
                if self.ledgers[accused].trust is not Trust.COMPROMISED:
                    self._raise_trust(accused, Trust.COMPROMISED)
                    out.append(Countermeasure(CountermeasureKind.MARK_COMPROMISED, accused))
                    if self.ledgers[accused].role is NodeRole.GUEST:
                        out.append(Countermeasure(CountermeasureKind.REQUEST_ROLLBACK, accused))
            else:
                self._raise_trust(accused, Trust.SUSPECT)
        return out

    def _guest_host_pair(self, a: int, b: int) -> bool:
        la, lb = self.ledgers[a], self.ledgers[b]
        return la.host == b or lb.host == a

    def trust(self, node: int) -> Trust:
        return self.ledgers[node].trust
