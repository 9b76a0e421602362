"""Message statistics and rank-sum comparisons.

Report averages are exact sums (``math.fsum``) divided by counts, so any
independent recomputation that sums the same values gets the same bits.
"""
from __future__ import annotations

import csv
import io
import itertools
import math
import statistics
from collections import Counter
from dataclasses import asdict, dataclass, fields
from typing import Iterable, Mapping, Sequence

from .netsim import EVENT_KINDS, EventLog

__all__ = [
    "SimReport",
    "ComparisonResult",
    "status_histogram",
    "compute_report",
    "wilcoxon_rank_sum",
    "compare_samples",
    "median",
    "tradeoff_table",
    "TRADEOFF_METRICS",
]


def status_histogram(log: EventLog | Iterable[tuple]) -> dict[str, int]:
    """Count of events per status, with every status present."""
    events = log.events if isinstance(log, EventLog) else log
    counts = Counter(e[1] for e in events)
    return {k: counts.get(k, 0) for k in EVENT_KINDS}


_REPORT_KEYS = {
    "created": "n_created",
    "started": "n_started",
    "relayed": "n_relayed",
    "aborted": "n_aborted",
    "dropped": "n_dropped",
    "removed": "n_removed",
    "delivered": "n_delivered",
    "delivery_prob": "delivery_probability",
    "overhead_ratio": "overhead_ratio",
    "latency_avg": "latency_avg",
    "hopcount_avg": "hopcount_avg",
    "buffertime_avg": "buffertime_avg",
}


@dataclass(frozen=True)
class SimReport:
    """Message statistics of one run. Undefined averages are ``None``."""

    n_created: int = 0
    n_started: int = 0
    n_relayed: int = 0
    n_aborted: int = 0
    n_dropped: int = 0
    n_removed: int = 0
    n_delivered: int = 0
    delivery_probability: float | None = None
    overhead_ratio: float | None = None
    latency_avg: float | None = None
    hopcount_avg: float | None = None
    buffertime_avg: float | None = None
    in_flight_at_end: int = 0

    @property
    def fitness(self) -> float:
        return self.delivery_probability or 0.0

    def to_text(self, title: str = "") -> str:
        """``key: value`` block in MessageStatsReport naming."""
        lines = [f"Message stats for scenario {title}".rstrip()]
        for key, attr in _REPORT_KEYS.items():
            v = getattr(self, attr)
            lines.append(f"{key}: {'NaN' if v is None else repr(v)}")
        lines.append(f"in_flight: {self.in_flight_at_end}")
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str) -> "SimReport":
        kw = {}
        inverse = dict(_REPORT_KEYS, in_flight="in_flight_at_end")
        for line in text.splitlines():
            if ":" not in line or line.startswith("Message stats"):
                continue
            key, val = (s.strip() for s in line.split(":", 1))
            attr = inverse.get(key)
            if attr is None:
                continue
            if attr.startswith("n_") or attr == "in_flight_at_end":
                kw[attr] = int(val)
            else:
                kw[attr] = None if val == "NaN" else float(val)
        return cls(**kw)

    def csv_header(self) -> list[str]:
        return [f.name for f in fields(self)]

    def csv_row(self) -> list[str]:
        return ["" if v is None else repr(v) for v in asdict(self).values()]


def compute_report(log: EventLog) -> SimReport:
    counts = status_histogram(log)
    created, delivered, relayed = counts["created"], counts["delivered"], counts["relayed"]
    latencies = []
    for t, kind, mid, _, _ in log.events:
        if kind == "delivered":
            latencies.append(t - log.creation_times[mid])
    hops = list(log.hop_counts.values())
    res = log.buffer_residence
    return SimReport(
        n_created=created,
        n_started=counts["started"],
        n_relayed=relayed,
        n_aborted=counts["aborted"],
        n_dropped=counts["dropped"],
        n_removed=counts["removed"],
        n_delivered=delivered,
        delivery_probability=delivered / created if created else None,
        overhead_ratio=(relayed - delivered) / delivered if delivered else None,
        latency_avg=math.fsum(latencies) / delivered if delivered else None,
        hopcount_avg=math.fsum(hops) / len(hops) if hops else None,
        buffertime_avg=math.fsum(res) / len(res) if res else None,
        in_flight_at_end=log.in_flight_at_end,
    )


# ----------------------------------------------------------------- statistics

def _midranks(values: Sequence[float]) -> list[float]:
    order = sorted(range(len(values)), key=lambda i: values[i])
    ranks = [0.0] * len(values)
    i = 0
    while i < len(order):
        j = i
        while j + 1 < len(order) and values[order[j + 1]] == values[order[i]]:
            j += 1
        r = (i + j) / 2 + 1
        for k in range(i, j + 1):
            ranks[order[k]] = r
        i = j + 1
    return ranks


def wilcoxon_rank_sum(a: Sequence[float], b: Sequence[float], exact_max: int = 16) -> float:
    """Two-sided rank-sum p-value.

    Exact over all rank assignments when ``len(a) + len(b) <= exact_max``,
    otherwise the tie-corrected normal approximation with continuity
    correction.
    """
    na, nb = len(a), len(b)
    if na < 1 or nb < 1:
        raise ValueError("both samples need at least one observation")
    pooled = list(a) + list(b)
    if len(set(pooled)) == 1:
        return 1.0
    n = na + nb
    ranks = _midranks(pooled)
    w = sum(ranks[:na])
    mu = na * (n + 1) / 2
    dev = abs(w - mu)
    if n <= exact_max:
        eps = 1e-9
        hits = total = 0
        for combo in itertools.combinations(ranks, na):
            total += 1
            if abs(sum(combo) - mu) >= dev - eps:
                hits += 1
        return hits / total
    ties = Counter(pooled).values()
    tie_term = sum(t ** 3 - t for t in ties) / (n * (n - 1))
    var = na * nb / 12 * ((n + 1) - tie_term)
    z = max(0.0, dev - 0.5) / math.sqrt(var)
    return min(1.0, math.erfc(z / math.sqrt(2)))


def median(values: Iterable[float | None]) -> float | None:
    vals = [v for v in values if v is not None]
    return statistics.median(vals) if vals else None


@dataclass(frozen=True)
class ComparisonResult:
    label_a: str
    label_b: str
    sample_a: tuple[float, ...]
    sample_b: tuple[float, ...]
    median_a: float
    median_b: float
    p_value: float

    HEADER = ("label_a", "label_b", "median_a", "median_b", "p_value", "n_a", "n_b")

    def csv_row(self) -> list[str]:
        return [self.label_a, self.label_b, repr(self.median_a), repr(self.median_b),
                repr(self.p_value), str(len(self.sample_a)), str(len(self.sample_b))]

    def to_csv(self) -> str:
        out = io.StringIO()
        w = csv.writer(out, lineterminator="\n")
        w.writerow(self.HEADER)
        w.writerow(self.csv_row())
        return out.getvalue()

    @staticmethod
    def parse_row(text: str) -> dict[str, object]:
        rows = list(csv.DictReader(io.StringIO(text)))
        r = rows[-1]
        return {"label_a": r["label_a"], "label_b": r["label_b"],
                "median_a": float(r["median_a"]), "median_b": float(r["median_b"]),
                "p_value": float(r["p_value"]), "n_a": int(r["n_a"]), "n_b": int(r["n_b"])}


def compare_samples(a: Sequence[float], b: Sequence[float], label_a: str = "a",
                    label_b: str = "b") -> ComparisonResult:
    return ComparisonResult(label_a, label_b, tuple(a), tuple(b), statistics.median(a),
                            statistics.median(b), wilcoxon_rank_sum(a, b))


TRADEOFF_METRICS = ("delivery_probability", "overhead_ratio", "latency_avg", "hopcount_avg",
                    "buffertime_avg")


def tradeoff_table(reports: Mapping[tuple[str, str], Sequence[SimReport]],
                   metrics: Sequence[str] = TRADEOFF_METRICS) -> str:
    """Median of each metric per (scenario, protocol) cell, as CSV."""
    out = io.StringIO()
    w = csv.writer(out, lineterminator="\n")
    w.writerow(["scenario", "protocol", *metrics])
    for (scenario, protocol), runs in reports.items():
        if not runs:
            raise ValueError(f"no runs for {scenario}/{protocol}")
        row = [scenario, protocol]
        for m in metrics:
            v = median(getattr(r, m) for r in runs)
            row.append("NaN" if v is None else repr(v))
        w.writerow(row)
    return out.getvalue()
