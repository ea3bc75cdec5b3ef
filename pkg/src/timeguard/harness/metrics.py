"""False-positive accounting and report emission."""

from __future__ import annotations

import bisect
import csv
import enum
import io
from collections import Counter, defaultdict
from dataclasses import dataclass, field
from typing import Iterable, Mapping

from ..controller import DetectionVerdict, VerdictKind
from ..simnet import GroundTruthLog

KIND_ORDER = (VerdictKind.TIMELINE, VerdictKind.TIMEOUT, VerdictKind.RESPONSE, VerdictKind.HEARTBEAT_MISS)


@dataclass
class KindStats:
    total: int = 0
    fp: int = 0

    @property
    def tp(self) -> int:
        return self.total - self.fp

    @property
    def fp_percent(self) -> float | None:
        """``None`` when there is nothing to divide by."""
        return 100.0 * self.fp / self.total if self.total else None


def format_percent(value: float | None) -> str:
    return "n/a" if value is None else f"{value:.1f}"


class HackIndex:
    """Hack times per node, for window lookups.

    With ``persistent`` set, a hack stays in effect until the node is next
    restored, so a lasting compromise keeps attributing verdicts to it.
    """

    def __init__(self, truth: GroundTruthLog, persistent: bool = False) -> None:
        times: dict[int, list[int]] = defaultdict(list)
        for rec in truth.hacks():
            times[rec.node].append(rec.at)
        self._times = {node: sorted(ts) for node, ts in times.items()}
        self._until: dict[int, list[float]] = {}
        if persistent:
            restored: dict[int, list[int]] = defaultdict(list)
            for at, node in truth.restorations:
                restored[node].append(at)
            for node, ts in self._times.items():
                fixes = sorted(restored.get(node, ()))
                ends = []
                for t in ts:
                    j = bisect.bisect_left(fixes, t)
                    ends.append(fixes[j] if j < len(fixes) else float("inf"))
                # running max so the ends are sorted alongside the starts
                for k in range(1, len(ends)):
                    ends[k] = max(ends[k], ends[k - 1])
                self._until[node] = ends

    def any_within(self, node: int, lo: int, hi: int) -> bool:
        ts = self._times.get(node)
        if not ts:
            return False
        i = bisect.bisect_left(ts, lo)
        if i < len(ts) and ts[i] <= hi:
            return True
        ends = self._until.get(node)
        # an earlier hack whose effect lasted into the window
        return bool(ends) and i > 0 and ends[i - 1] >= lo


def is_true_positive(verdict: DetectionVerdict, hacks: HackIndex, window_ms: int,
                     host_of: Mapping[int, int] | None = None) -> bool:
    lo, hi = verdict.cc_time - window_ms, verdict.cc_time
    if hacks.any_within(verdict.node, lo, hi):
        return True
    # a hacked host moves the time its guests see
    host = host_of.get(verdict.node) if host_of else None
    return host is not None and hacks.any_within(host, lo, hi)


def compute_false_positives(verdicts: Iterable[DetectionVerdict], truth: GroundTruthLog, window_ms: int,
                            host_of: Mapping[int, int] | None = None,
                            persistent: bool = False) -> dict[VerdictKind, KindStats]:
    """Split verdicts into true and false positives against the ground truth.

    A verdict is a true positive when a Hack on the same node (or, with
    ``host_of``, on that node's host) lies in ``[cc_time - window_ms, cc_time]``.
    ``persistent`` extends each hack until the node's next restoration.
    """
    hacks = HackIndex(truth, persistent)
    stats = {k: KindStats() for k in KIND_ORDER}
    for v in verdicts:
        s = stats[v.kind]
        s.total += 1
        if not is_true_positive(v, hacks, window_ms, host_of):
            s.fp += 1
    return stats


@dataclass
class MetricsReport:
    kinds: dict[VerdictKind, KindStats] = field(default_factory=lambda: {k: KindStats() for k in KIND_ORDER})
    # (minute, kind) -> count
    buckets: dict[tuple[int, VerdictKind], int] = field(default_factory=dict)
    sent: int = 0
    delivered: int = 0
    dropped: int = 0
    config_hash: str = ""
    seed: int = 0

    def total(self, kind: VerdictKind) -> int:
        return self.kinds[kind].total

    def fp(self, kind: VerdictKind) -> int:
        return self.kinds[kind].fp

    @property
    def verdict_total(self) -> int:
        return sum(s.total for s in self.kinds.values())


def build_report(verdicts: list[DetectionVerdict], truth: GroundTruthLog, window_ms: int, *,
                 sent: int, delivered: int, dropped: int, config_hash: str, seed: int,
                 host_of: Mapping[int, int] | None = None, persistent: bool = True) -> MetricsReport:
    counts = Counter((v.cc_time // 60_000, v.kind) for v in verdicts)
    return MetricsReport(
        kinds=compute_false_positives(verdicts, truth, window_ms, host_of, persistent),
        buckets=dict(sorted(counts.items(), key=lambda kv: (kv[0][0], KIND_ORDER.index(kv[0][1])))),
        sent=sent, delivered=delivered, dropped=dropped,
        config_hash=config_hash, seed=seed,
    )


class ReportFormat(enum.Enum):
    CSV = "csv"
    SUMMARY = "summary"


def emit_report(report: MetricsReport, fmt: ReportFormat = ReportFormat.CSV) -> str:
    if fmt is ReportFormat.CSV:
        return _emit_csv(report)
    return _emit_summary(report)


def _emit_csv(report: MetricsReport) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["kind", "total", "fp", "fp_percent"])
    for kind in KIND_ORDER:
        s = report.kinds[kind]
        if s.total:
            w.writerow([kind.value, s.total, s.fp, format_percent(s.fp_percent)])
    w.writerow(["minute", "kind", "count"])
    for (minute, kind), count in report.buckets.items():
        w.writerow([minute, kind.value, count])
    buf.write(f"# sent={report.sent} delivered={report.delivered} dropped={report.dropped}\n")
    buf.write(f"# config_hash={report.config_hash}\n# seed={report.seed}\n")
    return buf.getvalue()


def _emit_summary(report: MetricsReport) -> str:
    lines = [f"{'kind':<14}{'total':>8}{'fp':>8}{'fp%':>8}"]
    for kind in KIND_ORDER:
        s = report.kinds[kind]
        lines.append(f"{kind.value:<14}{s.total:>8}{s.fp:>8}{format_percent(s.fp_percent):>8}")
    lines.append(f"heartbeats: sent={report.sent} delivered={report.delivered} dropped={report.dropped}")
    lines.append(f"config_hash={report.config_hash}")
    lines.append(f"seed={report.seed}")
    return "\n".join(lines) + "\n"
