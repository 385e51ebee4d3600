"""Derive simulator profiles from reference cell rates.

The simulator draws format validity first, then (for valid outputs) a route
from the confusion row and, on state-sensitive prompts, a retention outcome
that forces the expected route when it succeeds. The confusion diagonal is
solved so that the marginal routing accuracy matches the target.
"""

from __future__ import annotations

import json
from importlib import resources
from pathlib import Path
from typing import Any

from routebench.control_schema import RouteLabel
from routebench.gateway import ProfileTable, SimulatorProfile

ROUTES = tuple(RouteLabel)
DEFAULT_STATE_FRACTION = 32 / 324
DEFAULT_LATENCY_SIGMA = 0.25


def load_cell_means(path: str | Path | None = None) -> list[dict[str, Any]]:
    if path is None:
        text = resources.files("routebench.data").joinpath("cell_means.json").read_text()
    else:
        text = Path(path).read_text()
    doc = json.loads(text)
    if doc.get("format") != "cell_means":
        raise ValueError("not a cell_means document")
    return doc["cells"]


def _diagonal(mean_diag: float, pinned: dict[RouteLabel, float]) -> list[float]:
    """Per-route diagonal with some routes pinned and the rest sharing the remainder."""
    free = [r for r in ROUTES if r not in pinned]
    rest = (len(ROUTES) * mean_diag - sum(pinned.values())) / len(free) if free else 0.0
    rest = min(1.0, max(0.0, rest))
    return [min(1.0, max(0.0, pinned.get(r, rest))) for r in ROUTES]


def calibrate_profile(fc_pct: float, ra_pct: float, sr_pct: float | None,
                      p50_ms: float, total_tokens: float, *,
                      requests: int = 324,
                      state_fraction: float = DEFAULT_STATE_FRACTION,
                      route_accuracy: dict[str, float | None] | None = None,
                      latency_sigma: float = DEFAULT_LATENCY_SIGMA) -> SimulatorProfile:
    fc = fc_pct / 100
    if fc <= 0:
        return SimulatorProfile(0.0, tuple(tuple(0.25 for _ in ROUTES) for _ in ROUTES), 0.0,
                                p50_ms, latency_sigma, max(1, round(total_tokens / requests)))

    acc = min(1.0, ra_pct / 100 / fc)
    sr_c = min(1.0, (sr_pct or 0.0) / 100 / fc)
    s = state_fraction
    # acc = s*(sr_c + (1-sr_c)*d) + (1-s)*d  solved for the mean diagonal d
    denom = 1 - s * sr_c
    d = (acc - s * sr_c) / denom if denom > 0 else 1.0
    d = min(1.0, max(0.0, d))

    pinned = {}
    for name, value in (route_accuracy or {}).items():
        if value is not None:
            pinned[RouteLabel(name)] = min(1.0, value / 100 / fc)
    diag = _diagonal(d, pinned)

    confusion = []
    for i, p in enumerate(diag):
        off = (1 - p) / 3
        row = [p if i == j else off for j in range(len(ROUTES))]
        row[i] = 1 - sum(x for j, x in enumerate(row) if j != i)
        confusion.append(tuple(row))

    return SimulatorProfile(
        fc_rate=fc,
        route_confusion=tuple(confusion),
        sr_success=sr_c,
        latency_median_ms=p50_ms,
        latency_sigma=latency_sigma,
        tokens_per_request=max(1, round(total_tokens / requests)),
    )


def calibrate_from_cells(cells: list[dict[str, Any]], **kwargs: Any) -> ProfileTable:
    return {
        (c["backend"], c["mode"]): calibrate_profile(
            c["fc_pct"], c["ra_pct"], c.get("sr_pct"), c["p50_ms"], c["total_tokens"],
            route_accuracy=c.get("per_route_accuracy"), **kwargs)
        for c in cells
    }
