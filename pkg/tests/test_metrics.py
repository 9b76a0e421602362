import csv
import io
import math
import statistics

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import stats

from evodtn.metrics import (ComparisonResult, SimReport, compare_samples, compute_report, median,
                            status_histogram, tradeoff_table, wilcoxon_rank_sum)
from evodtn.netsim import EventLog
from evodtn.routing import run_simulation


def report_from_csv(text):
    """Brute-force recomputation of the report from the exported event rows."""
    rows = list(csv.DictReader(io.StringIO(text)))
    dest = {r["msg_id"]: int(r["to"]) for r in rows if r["kind"] == "created"}
    held = {}   # (host, msg) -> receive time of the stored copy
    hop = {}    # (host, msg) -> hop count of the last copy received; kept after drops
    created_at, delivered = {}, {}
    counts = {}
    residence = []
    for r in rows:
        t, kind, m, a, b = float(r["time"]), r["kind"], r["msg_id"], int(r["from"]), int(r["to"])
        counts[kind] = counts.get(kind, 0) + 1
        if kind == "created":
            created_at[m] = t
            held[(a, m)] = t
            hop[(a, m)] = 0
        elif kind == "relayed":
            # an evicted sender copy still finishes its transfer
            hops = hop[(a, m)] + 1
            if (b, m) not in held and dest[m] != b:
                held[(b, m)] = t
                hop[(b, m)] = hops
            elif dest[m] == b and m not in delivered:
                delivered[m] = (t, hops)
        elif kind == "dropped":
            residence.append(t - held.pop((a, m)))
    n_c, n_d, n_r = counts.get("created", 0), counts.get("delivered", 0), counts.get("relayed", 0)
    assert n_d == len(delivered)
    lat = [t - created_at[m] for m, (t, _) in delivered.items()]
    hops = [h for _, h in delivered.values()]
    return {
        "delivery_probability": n_d / n_c if n_c else None,
        "overhead_ratio": (n_r - n_d) / n_d if n_d else None,
        "latency_avg": math.fsum(lat) / n_d if n_d else None,
        "hopcount_avg": math.fsum(hops) / len(hops) if hops else None,
        "buffertime_avg": math.fsum(residence) / len(residence) if residence else None,
        "counts": counts,
    }


def test_formulas_on_a_handmade_log():
    log = EventLog()
    log.events = [(0.0, "created", "M1", 0, 2), (0.0, "created", "M2", 1, 0),
                  (1.0, "started", "M1", 0, 1), (2.0, "relayed", "M1", 0, 1),
                  (3.0, "started", "M1", 1, 2), (5.0, "relayed", "M1", 1, 2),
                  (5.0, "delivered", "M1", 1, 2), (9.0, "dropped", "M2", 1, 1)]
    log.creation_times = {"M1": 0.0, "M2": 0.0}
    log.hop_counts = {"M1": 2}
    log.buffer_residence = [9.0]
    r = compute_report(log)
    assert r.delivery_probability == 0.5
    assert r.overhead_ratio == 1.0
    assert r.latency_avg == 5.0
    assert r.hopcount_avg == 2.0
    assert r.buffertime_avg == 9.0
    assert r.n_dropped == 1 and r.n_removed == 0


def test_empty_log_has_undefined_averages():
    r = compute_report(EventLog())
    assert r.delivery_probability is None and r.latency_avg is None and r.fitness == 0.0
    assert "delivery_prob: NaN" in r.to_text()


def test_histogram_lists_every_status():
    h = status_histogram([(0.0, "created", "M1", 0, 1)])
    assert h["created"] == 1 and h["removed"] == 0 and len(h) == 7


@pytest.mark.parametrize("seed", range(10))
def test_report_equals_csv_recount(short_spec, seed):
    router = "epidemic" if seed % 2 == 0 else "prophet"
    log = run_simulation(short_spec, router, seed=seed)
    rep = compute_report(log)
    oracle = report_from_csv(log.to_csv())
    for key in ("delivery_probability", "overhead_ratio", "latency_avg", "hopcount_avg", "buffertime_avg"):
        assert getattr(rep, key) == oracle[key], key
    assert rep.n_relayed == oracle["counts"].get("relayed", 0)


def test_report_text_roundtrip(short_spec):
    rep = compute_report(run_simulation(short_spec, "epidemic"))
    assert SimReport.from_text(rep.to_text("x")) == rep
    none = SimReport()
    assert SimReport.from_text(none.to_text()) == none


def test_report_csv_row_aligns_with_header():
    r = SimReport(n_created=3, delivery_probability=0.5)
    assert len(r.csv_header()) == len(r.csv_row())
    assert r.csv_row()[r.csv_header().index("latency_avg")] == ""


# ---------------------------------------------------------------- Wilcoxon

def enumerated_p(a, b):
    pooled = np.array(list(a) + list(b), dtype=float)
    ranks = stats.rankdata(pooled)
    n, na = len(pooled), len(a)
    observed = ranks[:na].sum()
    mu = na * (n + 1) / 2
    hits = total = 0
    for mask in range(1 << n):
        if bin(mask).count("1") != na:
            continue
        s = sum(ranks[i] for i in range(n) if mask >> i & 1)
        total += 1
        hits += abs(s - mu) >= abs(observed - mu) - 1e-9
    return hits / total


def test_textbook_example():
    assert abs(wilcoxon_rank_sum([1, 2, 3], [4, 5, 6]) - 0.1) < 1e-12


def test_exact_matches_enumeration_for_all_small_sizes():
    rng = np.random.default_rng(3)
    for na in range(1, 12):
        for nb in range(1, 13 - na):
            for _ in range(3):
                # small integer range forces ties regularly
                a = rng.integers(0, 6, na).tolist()
                b = rng.integers(0, 6, nb).tolist()
                if len(set(a + b)) == 1:
                    assert wilcoxon_rank_sum(a, b) == 1.0
                    continue
                assert abs(wilcoxon_rank_sum(a, b) - enumerated_p(a, b)) < 1e-9, (a, b)


def test_exact_agrees_with_scipy_without_ties():
    rng = np.random.default_rng(4)
    for _ in range(20):
        a, b = rng.normal(size=6), rng.normal(0.8, size=7)
        ref = stats.mannwhitneyu(a, b, alternative="two-sided", method="exact").pvalue
        assert abs(wilcoxon_rank_sum(a, b) - ref) < 1e-9


@settings(max_examples=50, deadline=None)
@given(st.lists(st.integers(0, 30), min_size=9, max_size=15), st.lists(st.integers(0, 30), min_size=9, max_size=15))
def test_normal_approximation_matches_scipy(a, b):
    if len(set(a + b)) == 1:
        return
    ref = stats.mannwhitneyu(a, b, alternative="two-sided", method="asymptotic", use_continuity=True).pvalue
    assert abs(wilcoxon_rank_sum(a, b) - ref) < 1e-9


def test_p_value_is_symmetric():
    a, b = [0.31, 0.4, 0.35, 0.29], [0.5, 0.45, 0.38, 0.52, 0.6]
    assert wilcoxon_rank_sum(a, b) == wilcoxon_rank_sum(b, a)


def test_empty_sample_rejected():
    with pytest.raises(ValueError):
        wilcoxon_rank_sum([], [1.0])


def test_comparison_csv():
    res = compare_samples([1, 2, 3], [4, 5, 6], "evolved", "epidemic")
    row = ComparisonResult.parse_row(res.to_csv())
    assert row == {"label_a": "evolved", "label_b": "epidemic", "median_a": 2.0, "median_b": 5.0,
                   "p_value": res.p_value, "n_a": 3, "n_b": 3}


def test_tradeoff_medians():
    runs = [SimReport(delivery_probability=p, overhead_ratio=o, latency_avg=None)
            for p, o in ((0.2, 10.0), (0.4, 30.0), (0.3, 20.0), (0.5, 40.0))]
    text = tradeoff_table({("grid", "epidemic"): runs}, ("delivery_probability", "overhead_ratio", "latency_avg"))
    rows = list(csv.reader(io.StringIO(text)))
    assert rows[0] == ["scenario", "protocol", "delivery_probability", "overhead_ratio", "latency_avg"]
    assert rows[1][:2] == ["grid", "epidemic"]
    assert float(rows[1][2]) == statistics.median([0.2, 0.4, 0.3, 0.5])
    assert float(rows[1][3]) == 25.0 and rows[1][4] == "NaN"


def test_median_skips_undefined():
    assert median([None, 1.0, 3.0]) == 2.0
    assert median([None]) is None
