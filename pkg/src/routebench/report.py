"""Result tables, Markdown/CSV rendering, and deployment recommendation."""

from __future__ import annotations

import csv
import io
import json
import math
from collections.abc import Mapping, Sequence
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

from routebench.control_schema import FailureClass, RouteLabel
from routebench.metrics import BOOTSTRAP_RESAMPLES, cell_means_with_bounds, wlc
from routebench.profiles import BACKENDS, CONSTRAINTS, MODES, TRANSPORTS
from routebench.stats import anova_for_metric, contrast_table

ANOVA_METRICS = ("ra_pct", "sr_pct", "fc_pct", "p50_ms", "total_tokens")
METRIC_LABELS = {
    "fc_pct": "FC%", "ra_pct": "RA%", "sr_pct": "SR%", "p50_ms": "p50(ms)",
    "p95_ms": "p95(ms)", "total_tokens": "Tokens", "wlc_pct": "WLC%",
}
TERM_LABELS = {"backend": "Backend", "mode": "Mode", "constraint": "Constraint",
               "transport": "Transport", "backend:mode": "Backend × mode", "Residual": "Residual"}


class ReportError(ValueError):
    pass


def expand_cell_means(cells: Sequence[Mapping[str, Any]]) -> list[dict[str, Any]]:
    """Treat each reference cell mean as the value of all four subcondition combos."""
    combos = []
    for cell in cells:
        for constraint in CONSTRAINTS:
            for transport in TRANSPORTS:
                sr = cell.get("sr_pct")
                combos.append({
                    "backend": cell["backend"], "mode": cell["mode"],
                    "constraint": constraint, "transport": transport,
                    "fc_pct": cell["fc_pct"], "ra_pct": cell["ra_pct"], "sr_pct": sr,
                    "p50_ms": cell.get("p50_ms"), "p95_ms": cell.get("p95_ms"),
                    "total_tokens": cell.get("total_tokens"),
                    "wlc_pct": wlc(cell["fc_pct"], cell["ra_pct"], sr),
                    "tail_amp": None,
                    "per_route_accuracy": dict(cell.get("per_route_accuracy") or {}),
                })
    return combos


def _order_key(backend: str, mode: str) -> tuple:
    b = BACKENDS.index(backend) if backend in BACKENDS else len(BACKENDS)
    m = MODES.index(mode) if mode in MODES else len(MODES)
    return (b, backend, m, mode)


@dataclass
class AnalysisTables:
    combos: list[dict[str, Any]]
    cells: list[dict[str, Any]]
    anova: dict[str, list[dict[str, Any]]]
    contrasts: list[dict[str, Any]]
    taxonomy: dict[str, int] | None = None
    notes: list[str] = field(default_factory=list)


def analyze_combos(combos: Sequence[Mapping[str, Any]], taxonomy: dict[str, int] | None = None,
                   resamples: int = BOOTSTRAP_RESAMPLES, seed: int = 0) -> AnalysisTables:
    """Cell means, Type-II ANOVA per metric, and MCLR contrasts from combo-level metrics."""
    if not combos:
        raise ReportError("no combos to analyze")
    cells = [c.to_dict() for c in cell_means_with_bounds(combos, resamples, seed)]
    cells.sort(key=lambda c: _order_key(c["backend"], c["mode"]))
    notes = []
    anova: dict[str, list[dict[str, Any]]] = {}
    for metric in ANOVA_METRICS:
        try:
            anova[metric] = [r.to_dict() for r in anova_for_metric(combos, metric)]
        except ValueError as exc:
            notes.append(f"ANOVA for {metric} skipped: {exc}")
    contrasts = [r.to_dict() for r in contrast_table(combos, resamples=resamples, seed=seed)]
    return AnalysisTables([dict(c) for c in combos], cells, anova, contrasts, taxonomy, notes)


# ---------------------------------------------------------------- render


def _fmt(value: Any, metric: str = "") -> str:
    if value is None:
        return "n/a"
    if isinstance(value, float) and math.isinf(value):
        return "inf"
    if metric == "total_tokens":
        return f"{round(value):d}"
    if isinstance(value, float):
        return f"{value:.2f}"
    return str(value)


def _p(value: float | None) -> str:
    if value is None:
        return ""
    return "<0.001" if value < 0.001 else f"{value:.3f}"


def table_cell_means(t: AnalysisTables) -> tuple[list[str], list[list[str]]]:
    head = ["Backend", "Mode"] + [METRIC_LABELS[m] for m in ("fc_pct", "ra_pct", "sr_pct", "p50_ms", "total_tokens")]
    rows = []
    for c in t.cells:
        row = [c["backend"], c["mode"]]
        for m in ("fc_pct", "ra_pct", "sr_pct", "p50_ms", "total_tokens"):
            row.append(f"{_fmt(c.get(m), m)} ± {_fmt(c['bounds'].get(m), m)}" if c.get(m) is not None else "n/a")
        rows.append(row)
    return head, rows


def table_anova(t: AnalysisTables, metrics: Sequence[str]) -> tuple[list[str], list[list[str]]]:
    head = ["Metric", "Effect", "SS", "df", "F", "p", "Partial eta squared"]
    rows = []
    for metric in metrics:
        for r in t.anova.get(metric, []):
            if r["term"] == "Residual":
                continue
            rows.append([METRIC_LABELS[metric], TERM_LABELS.get(r["term"], r["term"]),
                         f"{r['sum_sq']:.4g}", str(r["df"]), _fmt(r["F"]), _p(r["p"]),
                         f"{r['partial_eta_sq']:.3f}"])
    return head, rows


def table_contrasts(t: AnalysisTables) -> tuple[list[str], list[list[str]]]:
    metrics = ("ra_pct", "sr_pct", "p50_ms", "total_tokens")
    head = ["Backend", "Contrast"] + [METRIC_LABELS[m] for m in metrics]
    grouped: dict[tuple[str, str], dict[str, dict[str, Any]]] = {}
    for r in t.contrasts:
        grouped.setdefault((r["backend"], r["pair"]), {})[r["metric"]] = r
    rows = []
    for (backend, pair), by_metric in grouped.items():
        row = [backend, pair]
        for m in metrics:
            r = by_metric.get(m)
            row.append(f"{_fmt(r['delta'], m)} [{_fmt(r['ci_low'], m)}, {_fmt(r['ci_high'], m)}]"
                       if r else "n/a")
        rows.append(row)
    return head, rows


def table_wlc(t: AnalysisTables) -> tuple[list[str], list[list[str]]]:
    return ["Backend", "Mode", "WLC%"], [[c["backend"], c["mode"], _fmt(c["wlc_pct"])] for c in t.cells]


def table_route_slices(t: AnalysisTables) -> tuple[list[str], list[list[str]]]:
    head = ["Backend", "Mode"] + [f"{r.value} acc%" for r in RouteLabel]
    return head, [[c["backend"], c["mode"]] + [_fmt(c["per_route_accuracy"].get(r.value)) for r in RouteLabel]
                  for c in t.cells]


def table_taxonomy(t: AnalysisTables) -> tuple[list[str], list[list[str]]]:
    counts = t.taxonomy or {}
    total = sum(counts.values())
    rows = [[fc.value, str(counts.get(fc.value, 0))] for fc in FailureClass]
    rows.append(["total", str(total)])
    return ["Failure class", "Count"], rows


def table_tail(t: AnalysisTables) -> tuple[list[str], list[list[str]]]:
    return (["Backend", "Mode", "p95/p50"],
            [[c["backend"], c["mode"], _fmt(c.get("tail_amp"))] for c in t.cells])


def _markdown(head: list[str], rows: list[list[str]]) -> str:
    lines = ["| " + " | ".join(head) + " |", "|" + "|".join("---" for _ in head) + "|"]
    lines += ["| " + " | ".join(r) + " |" for r in rows]
    return "\n".join(lines)


def _csv(head: list[str], rows: list[list[str]]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(head)
    w.writerows(rows)
    return buf.getvalue()


def report_tables(t: AnalysisTables) -> dict[str, tuple[str, tuple[list[str], list[list[str]]]]]:
    out = {
        "cell_means": ("Backend × mode means with within-cell stability bounds", table_cell_means(t)),
        "anova_correctness": ("Correctness-oriented factorial effects (Type-II ANOVA)",
                              table_anova(t, ("ra_pct", "sr_pct", "fc_pct"))),
        "anova_efficiency": ("Efficiency-oriented factorial effects (Type-II ANOVA)",
                             table_anova(t, ("p50_ms", "total_tokens"))),
        "contrasts": ("MCLR contrasts against JSON baselines within each backend", table_contrasts(t)),
        "wlc": ("Workflow lower-bound completion", table_wlc(t)),
        "route_slices": ("Route-level accuracy", table_route_slices(t)),
        "tail_amplification": ("Tail-latency amplification", table_tail(t)),
    }
    if t.taxonomy is not None:
        out["taxonomy"] = ("Failure taxonomy", table_taxonomy(t))
    return out


def emit_report(t: AnalysisTables | None, fmt: str = "markdown") -> str | dict[str, str]:
    """Render all tables as one Markdown document or as ``{name: csv_text}``."""
    if t is None or not t.cells:
        raise ReportError("missing analysis input")
    tables = report_tables(t)
    if fmt == "csv":
        return {name: _csv(*tbl) for name, (_, tbl) in tables.items()}
    if fmt != "markdown":
        raise ValueError(f"unknown report format {fmt!r}")
    parts = ["# Structured routing benchmark report", ""]
    for title, tbl in tables.values():
        parts += [f"## {title}", "", _markdown(*tbl), ""]
    if t.notes:
        parts += ["## Notes", ""] + [f"- {n}" for n in t.notes] + [""]
    return "\n".join(parts)


def _json_safe(obj: Any) -> Any:
    if isinstance(obj, float) and not math.isfinite(obj):
        return "inf" if obj > 0 else ("-inf" if obj < 0 else None)
    if isinstance(obj, dict):
        return {k: _json_safe(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_json_safe(v) for v in obj]
    return obj


def write_json(path: Path, obj: Any) -> None:
    path.write_text(json.dumps(_json_safe(obj), indent=2, ensure_ascii=False) + "\n")


def write_analysis(t: AnalysisTables, out_dir: str | Path) -> list[Path]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = []
    for name, obj in (("combo_metrics.json", t.combos), ("cell_metrics.json", t.cells),
                      ("anova.json", t.anova), ("contrasts.json", t.contrasts),
                      ("taxonomy.json", t.taxonomy), ("notes.json", t.notes)):
        if obj is None:
            continue
        write_json(out / name, obj)
        written.append(out / name)
    for name, text in emit_report(t, "csv").items():
        (out / f"{name}.csv").write_text(text)
        written.append(out / f"{name}.csv")
    (out / "report.md").write_text(emit_report(t, "markdown"))
    written.append(out / "report.md")
    return written


# ------------------------------------------------------------- recommend


@dataclass(frozen=True)
class DeploymentPolicy:
    protected_routes: frozenset[RouteLabel] = frozenset()
    min_wlc_pct: float = 0.0
    min_ra_pct: float = 0.0
    min_sr_pct: float = 0.0
    max_p50_ms: float | None = None
    token_budget: int | None = None

    def __post_init__(self) -> None:
        object.__setattr__(self, "protected_routes", frozenset(RouteLabel(r) for r in self.protected_routes))
        for name in ("min_wlc_pct", "min_ra_pct", "min_sr_pct"):
            if not 0 <= getattr(self, name) <= 100:
                raise ValueError(f"{name} must lie in [0, 100]")
        if self.max_p50_ms is not None and self.max_p50_ms < 0:
            raise ValueError("max_p50_ms must be non-negative")
        if self.token_budget is not None and self.token_budget < 0:
            raise ValueError("token_budget must be non-negative")

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> DeploymentPolicy:
        data = dict(data)
        data.pop("schema_version", None)
        data["protected_routes"] = frozenset(data.get("protected_routes", ()))
        return cls(**data)

    @classmethod
    def load(cls, path: str | Path) -> DeploymentPolicy:
        return cls.from_dict(json.loads(Path(path).read_text()))


class MissingRouteSlices(ReportError):
    pass


def _violation(step: int, rule: str, value: Any, threshold: Any, **extra: Any) -> dict[str, Any]:
    return {"step": step, "rule": rule, "value": value, "threshold": threshold, **extra}


def _screen(cell: Mapping[str, Any], policy: DeploymentPolicy) -> list[dict[str, Any]]:
    """Violations of the first failing step (empty if admissible)."""
    slices = cell.get("per_route_accuracy") or {}
    step1 = []
    for route in sorted(policy.protected_routes, key=lambda r: r.value):
        if route.value not in slices:
            raise MissingRouteSlices(
                f"{cell['backend']}/{cell['mode']}: no {route.value!r} route slice for protected route")
        acc = slices[route.value]
        if acc is None:
            step1.append(_violation(1, "protected_route_unreported", None, policy.min_ra_pct,
                                    route=route.value))
        elif acc < policy.min_ra_pct:
            step1.append(_violation(1, "protected_route_accuracy", acc, policy.min_ra_pct,
                                    route=route.value))
    if step1:
        return step1

    step2 = []
    if cell["wlc_pct"] < policy.min_wlc_pct:
        step2.append(_violation(2, "wlc_floor", cell["wlc_pct"], policy.min_wlc_pct))
    if cell["ra_pct"] < policy.min_ra_pct:
        step2.append(_violation(2, "ra_floor", cell["ra_pct"], policy.min_ra_pct))
    sr = cell.get("sr_pct")
    if sr is not None and sr < policy.min_sr_pct:
        step2.append(_violation(2, "sr_floor", sr, policy.min_sr_pct))
    if policy.max_p50_ms is not None and (cell.get("p50_ms") or 0) > policy.max_p50_ms:
        step2.append(_violation(2, "p50_ceiling", cell["p50_ms"], policy.max_p50_ms))
    if policy.token_budget is not None and (cell.get("total_tokens") or 0) > policy.token_budget:
        step2.append(_violation(2, "token_budget", cell["total_tokens"], policy.token_budget))
    return step2


def _shortfall(v: dict[str, Any]) -> float:
    if v["value"] is None:
        return math.inf
    return abs(v["value"] - v["threshold"])


def _rank_key(cell: Mapping[str, Any]) -> tuple:
    p50 = cell.get("p50_ms")
    tokens = cell.get("total_tokens")
    transport = cell.get("transport")
    # transport only breaks exact ties; non-stream preferred
    t_rank = {None: 0, "non_stream": 0, "stream": 1}.get(transport, 2)
    return (math.inf if p50 is None else p50, math.inf if tokens is None else tokens, t_rank)


def recommend(cells: Sequence[Mapping[str, Any]], policy: DeploymentPolicy) -> dict[str, Any]:
    """Backend-conditioned selection: each backend is judged from its own cells only.

    Step 1 rejects packages whose protected-route accuracy is below ``min_ra_pct``;
    step 2 applies the workflow floors; step 3 ranks survivors by p50 then tokens,
    with transport as the last tie-breaker.
    """
    if not cells:
        raise ReportError("no cells to recommend from")
    by_backend: dict[str, list[Mapping[str, Any]]] = {}
    for c in cells:
        by_backend.setdefault(c["backend"], []).append(c)

    verdicts: dict[str, Any] = {}
    for backend in sorted(by_backend, key=lambda b: (BACKENDS.index(b) if b in BACKENDS else 99, b)):
        admissible, rejected = [], []
        for cell in by_backend[backend]:
            violations = _screen(cell, policy)
            package = {"mode": cell["mode"]}
            if cell.get("transport") is not None:
                package["transport"] = cell["transport"]
            if violations:
                rejected.append({**package, "step": violations[0]["step"], "reasons": violations})
            else:
                admissible.append((cell, package))
        admissible.sort(key=lambda cp: _rank_key(cp[0]))
        ranked = [{**pkg, "rank": i + 1, "p50_ms": c.get("p50_ms"), "total_tokens": c.get("total_tokens"),
                   "wlc_pct": c.get("wlc_pct"), "ra_pct": c.get("ra_pct"), "sr_pct": c.get("sr_pct")}
                  for i, (c, pkg) in enumerate(admissible)]
        verdict: dict[str, Any] = {
            "verdict": "admissible" if ranked else "no admissible package",
            "recommended": ranked[0] if ranked else None,
            "admissible": ranked,
            "rejected": rejected,
        }
        if not ranked:
            nearest = min(rejected, key=lambda r: max(_shortfall(v) for v in r["reasons"]))
            verdict["nearest_miss"] = nearest
        verdicts[backend] = verdict
    return {"policy": policy_to_dict(policy), "backends": verdicts}


def policy_to_dict(policy: DeploymentPolicy) -> dict[str, Any]:
    return {
        "protected_routes": sorted(r.value for r in policy.protected_routes),
        "min_wlc_pct": policy.min_wlc_pct,
        "min_ra_pct": policy.min_ra_pct,
        "min_sr_pct": policy.min_sr_pct,
        "max_p50_ms": policy.max_p50_ms,
        "token_budget": policy.token_budget,
    }


def recommendation_markdown(result: Mapping[str, Any]) -> str:
    lines = ["# Deployment recommendation", ""]
    for backend, v in result["backends"].items():
        lines.append(f"## {backend}: {v['verdict']}")
        for pkg in v["admissible"]:
            lines.append(f"- #{pkg['rank']} {pkg['mode']} (p50 {_fmt(pkg['p50_ms'])} ms, "
                         f"tokens {_fmt(pkg['total_tokens'], 'total_tokens')}, WLC {_fmt(pkg['wlc_pct'])}%)")
        for rej in v["rejected"]:
            why = "; ".join(
                f"{r['rule']}" + (f"[{r['route']}]" if "route" in r else "")
                + f" {_fmt(r['value'])} vs {_fmt(r['threshold'])}" for r in rej["reasons"])
            lines.append(f"- rejected {rej['mode']} at step {rej['step']}: {why}")
        lines.append("")
    return "\n".join(lines)
