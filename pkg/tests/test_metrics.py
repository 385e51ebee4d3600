import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from routebench.control_schema import ControlRecord, FailureClass, RouteLabel
from routebench.metrics import (
    bootstrap_mean_interval,
    cell_means_with_bounds,
    compute_metrics,
    percentile,
    taxonomy_counts,
    wlc,
)
from routebench.runner import RequestOutcome


@given(st.lists(st.floats(-1e6, 1e6), min_size=1, max_size=60), st.floats(0, 100))
def test_percentile_matches_numpy_linear(xs, q):
    assert percentile(xs, q) == pytest.approx(np.percentile(xs, q, method="linear"), rel=1e-9, abs=1e-6)


def test_percentile_edges():
    assert percentile([5.0], 95) == 5.0
    assert percentile([1, 2, 3, 4], 50) == 2.5
    with pytest.raises(ValueError):
        percentile([], 50)


@pytest.mark.parametrize("fc, ra, sr, expected", [
    (100.0, 88.89, 72.22, 61.11),
    (100.0, 65.74, 65.97, 31.71),
    (53.40, 20.37, 12.50, 0.0),
    (100.0, 90.0, None, 90.0),
    (50.0, 40.0, None, 0.0),
])
def test_wlc(fc, ra, sr, expected):
    assert wlc(fc, ra, sr) == pytest.approx(expected, abs=1e-9)


def test_wlc_rejects_out_of_range():
    with pytest.raises(ValueError):
        wlc(101, 50, 50)


def row(i, route="dev", pred="dev", ok=True, state=False, retained=None, latency=100.0, tokens=(10, 5)):
    rec = ControlRecord(RouteLabel(pred), 0.9, True, False, "r") if ok else None
    return RequestOutcome(
        mode="MJ", backend="llama", constraint="limited", transport="stream", combo_index=0,
        request_index=i, prompt_id=f"p{i}", stratum="simple", ground_truth_route=route,
        state_sensitive=state, failure_class=FailureClass.OK if ok else FailureClass.JSON_PARSE_ERROR,
        record=rec, route_correct=(pred == route) if ok else None,
        state_retained=retained if ok and state else None,
        latency_ms=latency, prompt_tokens=tokens[0], completion_tokens=tokens[1],
    )


def test_compute_metrics_hand_example():
    rows = [
        row(0),                                         # ok, correct
        row(1, pred="chat"),                            # ok, wrong
        row(2, ok=False),                               # failed counts against RA
        row(3, route="chat", pred="chat", state=True, retained=True, latency=300.0),
        row(4, route="chat", pred="chat", state=True, retained=False, latency=500.0),
        row(5, route="chat", ok=False, state=True),     # failed state row: not retained
    ]
    m = compute_metrics(rows)
    assert m.fc_pct == pytest.approx(400 / 6)
    assert m.ra_pct == pytest.approx(300 / 6)
    assert m.sr_pct == pytest.approx(100 / 3)
    assert m.p50_ms == 100.0
    assert m.p95_ms == pytest.approx(percentile([100.0] * 4 + [300.0, 500.0], 95))
    assert m.total_tokens == 90
    assert m.per_route_accuracy["dev"] == pytest.approx(100 / 3)
    assert m.per_route_accuracy["doc"] is None
    assert m.wlc_pct == wlc(m.fc_pct, m.ra_pct, m.sr_pct)
    assert m.taxonomy_counts["json_parse_error"] == 2
    assert sum(m.taxonomy_counts.values()) == 6


def test_no_state_rows_gives_no_sr():
    m = compute_metrics([row(0), row(1)])
    assert m.sr_pct is None and m.wlc_pct == 100.0


def test_bootstrap_matches_exact_enumeration():
    # 4^4 = 256 equally likely resamples; mean is 10 + 2.5k with k ~ Binomial(4, 1/2),
    # so P(mean = 10) = P(mean = 20) = 1/16 > 2.5% and the 95% interval is exactly [10, 20]
    assert bootstrap_mean_interval([10, 10, 20, 20], 10_000, seed=0) == (10.0, 20.0)


def test_bootstrap_constant_sample_degenerates():
    assert bootstrap_mean_interval([7.5] * 4, 1000, seed=1) == (7.5, 7.5)


def test_bootstrap_seeded():
    a = bootstrap_mean_interval([1, 5, 2, 8], 2000, seed=3)
    assert a == bootstrap_mean_interval([1, 5, 2, 8], 2000, seed=3)


def test_cell_means_and_bounds():
    combos = [{"backend": "gemini", "mode": "MJ", "fc_pct": 100.0, "ra_pct": v, "sr_pct": 70.0,
               "p50_ms": 1000.0, "total_tokens": 100, "tail_amp": 1.5,
               "per_route_accuracy": {"dev": 80.0, "chat": 90.0}} for v in (80.0, 82.0, 84.0, 86.0)]
    (cell,) = cell_means_with_bounds(combos, 2000, 0)
    assert cell.means["ra_pct"] == 83.0
    assert cell.bounds["fc_pct"] == 0.0
    assert 0 < cell.bounds["ra_pct"] <= 3.0
    assert cell.wlc_pct == pytest.approx(53.0)
    assert cell.per_route_accuracy["dev"] == 80.0 and cell.per_route_accuracy["task"] is None


def test_taxonomy_partition(full_run):
    counts = taxonomy_counts(full_run)
    assert sum(counts.values()) == len(full_run) == 15_552
    assert set(counts) == {fc.value for fc in FailureClass}
