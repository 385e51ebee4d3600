"""Aggregation of outcome rows into FC/RA/SR, latency, token and WLC tables."""

from __future__ import annotations

import math
from collections import Counter, defaultdict
from collections.abc import Iterable, Sequence
from dataclasses import dataclass, field
from typing import Any

import numpy as np

from routebench.control_schema import FailureClass, RouteLabel
from routebench.runner import RequestOutcome

BOOTSTRAP_RESAMPLES = 10_000


def percentile(values: Sequence[float], q: float) -> float:
    """Linear-interpolation quantile: h = (n-1)*q/100 between floor and ceil."""
    if len(values) == 0:
        raise ValueError("percentile of empty list")
    if not 0 <= q <= 100:
        raise ValueError(f"q={q} outside [0, 100]")
    xs = sorted(values)
    h = (len(xs) - 1) * q / 100
    lo = math.floor(h)
    hi = min(lo + 1, len(xs) - 1)
    return xs[lo] + (h - lo) * (xs[hi] - xs[lo])


def wlc(fc_pct: float, ra_pct: float, sr_pct: float | None = None) -> float:
    """Workflow lower-bound completion: Fréchet lower bound on the joint event."""
    margins = [fc_pct, ra_pct] + ([sr_pct] if sr_pct is not None else [])
    for m in margins:
        if not 0 <= m <= 100:
            raise ValueError(f"margin {m} outside [0, 100]")
    return max(0.0, sum(margins) - 100 * (len(margins) - 1))


@dataclass
class MetricSummary:
    scope: dict[str, str]
    n_rows: int
    fc_pct: float
    ra_pct: float
    sr_pct: float | None
    p50_ms: float | None
    p95_ms: float | None
    total_tokens: int
    wlc_pct: float
    tail_amp: float | None
    per_route_accuracy: dict[str, float | None] = field(default_factory=dict)
    route_counts: dict[str, int] = field(default_factory=dict)
    taxonomy_counts: dict[str, int] = field(default_factory=dict)

    def to_dict(self) -> dict[str, Any]:
        return {
            **self.scope,
            "n_rows": self.n_rows,
            "fc_pct": self.fc_pct,
            "ra_pct": self.ra_pct,
            "sr_pct": self.sr_pct,
            "p50_ms": self.p50_ms,
            "p95_ms": self.p95_ms,
            "total_tokens": self.total_tokens,
            "wlc_pct": self.wlc_pct,
            "tail_amp": self.tail_amp,
            "per_route_accuracy": dict(self.per_route_accuracy),
            "route_counts": dict(self.route_counts),
            "taxonomy_counts": dict(self.taxonomy_counts),
        }


def compute_metrics(rows: Sequence[RequestOutcome], scope: dict[str, str] | None = None) -> MetricSummary:
    if not rows:
        raise ValueError("cannot compute metrics over an empty subset")
    n = len(rows)
    ok = sum(r.failure_class is FailureClass.OK for r in rows)
    # failed rows cannot route, so they count as incorrect
    correct = sum(bool(r.route_correct) for r in rows)
    state_rows = [r for r in rows if r.state_sensitive]
    sr = 100 * sum(bool(r.state_retained) for r in state_rows) / len(state_rows) if state_rows else None

    latencies = [r.latency_ms for r in rows if r.latency_ms is not None]
    p50 = percentile(latencies, 50) if latencies else None
    p95 = percentile(latencies, 95) if latencies else None

    per_route: dict[str, float | None] = {}
    counts: dict[str, int] = {}
    for route in RouteLabel:
        subset = [r for r in rows if r.ground_truth_route is route]
        counts[route.value] = len(subset)
        per_route[route.value] = (100 * sum(bool(r.route_correct) for r in subset) / len(subset)
                                  if subset else None)

    taxonomy = Counter(r.failure_class.value for r in rows)
    fc = 100 * ok / n
    ra = 100 * correct / n
    return MetricSummary(
        scope=scope or {},
        n_rows=n,
        fc_pct=fc,
        ra_pct=ra,
        sr_pct=sr,
        p50_ms=p50,
        p95_ms=p95,
        total_tokens=sum(r.total_tokens for r in rows),
        wlc_pct=wlc(fc, ra, sr),
        tail_amp=(p95 / p50) if p50 else None,
        per_route_accuracy=per_route,
        route_counts=counts,
        taxonomy_counts={fc_.value: taxonomy.get(fc_.value, 0) for fc_ in FailureClass},
    )


def group_rows(rows: Iterable[RequestOutcome], by: str = "combo") -> dict[tuple, list[RequestOutcome]]:
    """Group rows by ``combo`` (mode, backend, constraint, transport) or ``cell`` (backend, mode)."""
    groups: dict[tuple, list[RequestOutcome]] = defaultdict(list)
    for r in rows:
        groups[r.combo_key if by == "combo" else r.cell].append(r)
    return dict(groups)


def combo_metrics(rows: Sequence[RequestOutcome]) -> list[MetricSummary]:
    out = []
    for (mode, backend, constraint, transport), group in group_rows(rows, "combo").items():
        out.append(compute_metrics(group, {"backend": backend, "mode": mode,
                                           "constraint": constraint, "transport": transport}))
    return out


def bootstrap_mean_interval(values: Sequence[float], resamples: int = BOOTSTRAP_RESAMPLES,
                            seed: int = 0, level: float = 95.0) -> tuple[float, float]:
    """Percentile bootstrap interval of the mean."""
    x = np.asarray(values, dtype=float)
    if x.size == 0:
        raise ValueError("bootstrap of empty sample")
    rng = np.random.default_rng(seed)
    idx = rng.integers(0, x.size, size=(resamples, x.size))
    means = x[idx].mean(axis=1)
    tail = (100 - level) / 2
    return percentile(means.tolist(), tail), percentile(means.tolist(), 100 - tail)


CELL_METRICS = ("fc_pct", "ra_pct", "sr_pct", "p50_ms", "total_tokens")


@dataclass
class CellSummary:
    backend: str
    mode: str
    n_combos: int
    means: dict[str, float | None]
    bounds: dict[str, float | None]
    wlc_pct: float
    per_route_accuracy: dict[str, float | None]
    tail_amp: float | None = None
    subcondition_values: dict[str, list[float]] = field(default_factory=dict)

    def to_dict(self) -> dict[str, Any]:
        return {
            "backend": self.backend,
            "mode": self.mode,
            "n_combos": self.n_combos,
            **self.means,
            "bounds": dict(self.bounds),
            "wlc_pct": self.wlc_pct,
            "tail_amp": self.tail_amp,
            "per_route_accuracy": dict(self.per_route_accuracy),
            "subcondition_values": {k: list(v) for k, v in self.subcondition_values.items()},
        }


def _half_width(values: list[float], resamples: int, seed: int) -> float:
    if len(set(values)) <= 1:
        return 0.0
    lo, hi = bootstrap_mean_interval(values, resamples, seed)
    return (hi - lo) / 2


def cell_means_with_bounds(combos: Sequence[dict[str, Any]], resamples: int = BOOTSTRAP_RESAMPLES,
                           seed: int = 0) -> list[CellSummary]:
    """Backend x mode means over subcondition combos, with bootstrap half-width bounds.

    ``combos`` are combo-level metric dicts (see ``MetricSummary.to_dict``).
    WLC is taken from the cell-mean margins.
    """
    cells: dict[tuple[str, str], list[dict[str, Any]]] = defaultdict(list)
    for c in combos:
        cells[(c["backend"], c["mode"])].append(c)

    out = []
    for (backend, mode), members in cells.items():
        if not members:
            raise ValueError(f"cell {backend}/{mode} has no combos")
        means: dict[str, float | None] = {}
        bounds: dict[str, float | None] = {}
        values: dict[str, list[float]] = {}
        for metric in CELL_METRICS:
            vals = [m[metric] for m in members if m.get(metric) is not None]
            values[metric] = vals
            means[metric] = float(np.mean(vals)) if vals else None
            bounds[metric] = _half_width(vals, resamples, seed) if vals else None

        routes: dict[str, float | None] = {}
        for route in RouteLabel:
            vals = [m["per_route_accuracy"].get(route.value) for m in members
                    if m.get("per_route_accuracy")]
            vals = [v for v in vals if v is not None]
            routes[route.value] = float(np.mean(vals)) if vals else None
        amps = [m["tail_amp"] for m in members if m.get("tail_amp") is not None]

        out.append(CellSummary(
            backend=backend, mode=mode, n_combos=len(members), means=means, bounds=bounds,
            wlc_pct=wlc(means["fc_pct"], means["ra_pct"], means["sr_pct"]),
            per_route_accuracy=routes,
            tail_amp=float(np.mean(amps)) if amps else None,
            subcondition_values=values,
        ))
    return out


def taxonomy_counts(rows: Iterable[RequestOutcome]) -> dict[str, int]:
    counts = Counter(r.failure_class.value for r in rows)
    return {fc.value: counts.get(fc.value, 0) for fc in FailureClass}
