"""Factorial OLS, Type-II ANOVA with partial eta squared, and bootstrap contrasts.

The default model is ``metric ~ backend * mode + constraint + transport`` with
treatment coding (first declared level is the reference).
"""

from __future__ import annotations

import math
from collections.abc import Mapping, Sequence
from dataclasses import dataclass
from typing import Any

import numpy as np

from routebench.profiles import BACKENDS, CONSTRAINTS, MODES, TRANSPORTS

DEFAULT_LEVELS: dict[str, tuple[str, ...]] = {
    "backend": BACKENDS,
    "mode": MODES,
    "constraint": CONSTRAINTS,
    "transport": TRANSPORTS,
}
DEFAULT_TERMS: tuple[tuple[str, ...], ...] = (
    ("backend",), ("mode",), ("backend", "mode"), ("constraint",), ("transport",),
)


class RankDeficientError(ValueError):
    def __init__(self, columns: list[str]):
        super().__init__(f"design is rank deficient; dependent columns: {columns}")
        self.columns = columns


def term_name(term: Sequence[str]) -> str:
    return ":".join(term)


@dataclass
class Design:
    X: np.ndarray
    columns: list[str]
    term_columns: dict[str, list[int]]

    def subset(self, terms: Sequence[Sequence[str]]) -> np.ndarray:
        cols = [0] + [c for t in terms for c in self.term_columns[term_name(t)]]
        return self.X[:, cols]


def build_design(observations: Sequence[Mapping[str, Any]],
                 levels: Mapping[str, Sequence[str]] | None = None,
                 terms: Sequence[Sequence[str]] = DEFAULT_TERMS) -> Design:
    """Treatment-coded design matrix with an intercept column first."""
    if levels is None:
        present = {f for t in terms for f in t}
        levels = {}
        for f in present:
            seen = {o[f] for o in observations}
            declared = [lvl for lvl in DEFAULT_LEVELS.get(f, ()) if lvl in seen]
            levels[f] = declared + sorted(seen - set(declared))
    n = len(observations)
    dummies: dict[str, dict[str, np.ndarray]] = {}
    for f, lv in levels.items():
        dummies[f] = {lvl: np.array([o[f] == lvl for o in observations], dtype=float) for lvl in lv[1:]}

    cols = [np.ones(n)]
    names = ["(Intercept)"]
    term_columns: dict[str, list[int]] = {}
    for term in terms:
        idx = []
        grids: list[list[tuple[str, np.ndarray]]] = [list(dummies[f].items()) for f in term]
        for combo in _product(grids):
            cols.append(np.prod([v for _, v in combo], axis=0))
            names.append(":".join(f"{f}[{lvl}]" for f, (lvl, _) in zip(term, combo)))
            idx.append(len(cols) - 1)
        term_columns[term_name(term)] = idx
    return Design(np.column_stack(cols), names, term_columns)


def _product(grids):
    if not grids:
        yield ()
        return
    for head in grids[0]:
        for rest in _product(grids[1:]):
            yield (head, *rest)


@dataclass
class OLSFit:
    coef: np.ndarray
    rss: float
    rank: int
    df_resid: int


def fit_ols(X: np.ndarray, y: np.ndarray, columns: Sequence[str] | None = None,
            tol: float = 1e-10) -> OLSFit:
    """Least squares via QR; raises RankDeficientError naming dependent columns."""
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    if X.ndim != 2 or X.shape[0] != y.shape[0]:
        raise ValueError("design and response shapes disagree")
    Q, R = np.linalg.qr(X)
    diag = np.abs(np.diag(R))
    scale = max(diag.max(initial=0.0), 1.0)
    bad = [i for i, d in enumerate(diag) if d <= tol * scale]
    if bad:
        names = list(columns) if columns is not None else [f"x{i}" for i in range(X.shape[1])]
        raise RankDeficientError([names[i] for i in bad])
    coef = np.linalg.solve(R, Q.T @ y)
    resid = y - X @ coef
    return OLSFit(coef, float(resid @ resid), X.shape[1], X.shape[0] - X.shape[1])


# ------------------------------------------------------ F distribution tail


def _betacf(a: float, b: float, x: float, eps: float = 1e-16, max_iter: int = 10_000) -> float:
    """Continued fraction for the incomplete beta (modified Lentz)."""
    tiny = 1e-300
    qab, qap, qam = a + b, a + 1.0, a - 1.0
    c = 1.0
    d = 1.0 - qab * x / qap
    d = 1.0 / (d if abs(d) > tiny else tiny)
    h = d
    for m in range(1, max_iter + 1):
        m2 = 2 * m
        aa = m * (b - m) * x / ((qam + m2) * (a + m2))
        d = 1.0 + aa * d
        d = 1.0 / (d if abs(d) > tiny else tiny)
        c = 1.0 + aa / c
        c = c if abs(c) > tiny else tiny
        h *= d * c
        aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2))
        d = 1.0 + aa * d
        d = 1.0 / (d if abs(d) > tiny else tiny)
        c = 1.0 + aa / c
        c = c if abs(c) > tiny else tiny
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < eps:
            return h
    raise ArithmeticError(f"incomplete beta did not converge (a={a}, b={b}, x={x})")


def betainc_regularized(a: float, b: float, x: float) -> float:
    """I_x(a, b) for a, b > 0 and 0 <= x <= 1."""
    if not 0.0 <= x <= 1.0:
        raise ValueError(f"x={x} outside [0, 1]")
    if x == 0.0 or x == 1.0:
        return x
    log_front = (math.lgamma(a + b) - math.lgamma(a) - math.lgamma(b)
                 + a * math.log(x) + b * math.log1p(-x))
    front = math.exp(log_front)
    if x < (a + 1.0) / (a + b + 2.0):
        return front * _betacf(a, b, x) / a
    return 1.0 - front * _betacf(b, a, 1.0 - x) / b


def f_upper_tail(F: float, df1: float, df2: float) -> float:
    """P(X > F) for X ~ F(df1, df2)."""
    if df1 <= 0 or df2 <= 0:
        raise ValueError("degrees of freedom must be positive")
    if F <= 0:
        return 1.0
    if math.isinf(F):
        return 0.0
    return betainc_regularized(df2 / 2, df1 / 2, df2 / (df2 + df1 * F))


# ----------------------------------------------------------------- ANOVA


@dataclass
class AnovaRow:
    term: str
    sum_sq: float
    df: int
    F: float | None
    p: float | None
    partial_eta_sq: float | None

    def to_dict(self) -> dict[str, Any]:
        return {"term": self.term, "sum_sq": self.sum_sq, "df": self.df, "F": self.F,
                "p": self.p, "partial_eta_sq": self.partial_eta_sq}


def _rss(design: Design, y: np.ndarray, terms: Sequence[Sequence[str]]) -> float:
    X = design.subset(terms)
    names = [design.columns[0]] + [design.columns[c] for t in terms
                                   for c in design.term_columns[term_name(t)]]
    return fit_ols(X, y, names).rss


def _rows(ss: dict[str, float], dfs: dict[str, int], rss: float, df_resid: int,
          zero_tol: float) -> list[AnovaRow]:
    rss = 0.0 if rss <= zero_tol else rss
    out = []
    for name, s in ss.items():
        s = 0.0 if s <= zero_tol else s
        df = dfs[name]
        if s == 0.0:
            F, p, eta = 0.0, 1.0, 0.0
        elif rss == 0.0:
            F, p, eta = math.inf, 0.0, 1.0
        else:
            F = (s / df) / (rss / df_resid)
            p = f_upper_tail(F, df, df_resid)
            eta = s / (s + rss)
        out.append(AnovaRow(name, s, df, F, p, eta))
    out.append(AnovaRow("Residual", rss, df_resid, None, None, None))
    return out


def _zero_tol(y: np.ndarray) -> float:
    # SS below this is floating-point noise; scales with c^2 like every SS
    return 1e-12 * max(float(y @ y), np.finfo(float).tiny)


def anova_type2(design: Design, y: Sequence[float],
                terms: Sequence[Sequence[str]] = DEFAULT_TERMS) -> list[AnovaRow]:
    """Type-II sums of squares by model comparison respecting marginality.

    SS(T) = RSS(M without T) - RSS(M with T), where M holds every term that
    does not contain T (so main effects are tested without their interaction).
    """
    y = np.asarray(y, dtype=float)
    terms = [t for t in terms if design.term_columns[term_name(t)]]
    full = fit_ols(design.subset(terms), y, None)
    if full.df_resid <= 0:
        raise ValueError("no residual degrees of freedom")
    ss, dfs = {}, {}
    for term in terms:
        name = term_name(term)
        others = [t for t in terms if t != term and not set(term) < set(t)]
        ss[name] = _rss(design, y, others) - _rss(design, y, [*others, term])
        dfs[name] = len(design.term_columns[name])
    return _rows(ss, dfs, full.rss, full.df_resid, _zero_tol(y))


def anova_type1(design: Design, y: Sequence[float],
                terms: Sequence[Sequence[str]] = DEFAULT_TERMS) -> list[AnovaRow]:
    """Sequential (Type-I) sums of squares in the given term order."""
    y = np.asarray(y, dtype=float)
    terms = [t for t in terms if design.term_columns[term_name(t)]]
    full = fit_ols(design.subset(terms), y, None)
    ss, dfs = {}, {}
    prev = _rss(design, y, [])
    for i, term in enumerate(terms):
        cur = _rss(design, y, terms[: i + 1])
        ss[term_name(term)] = prev - cur
        dfs[term_name(term)] = len(design.term_columns[term_name(term)])
        prev = cur
    return _rows(ss, dfs, full.rss, full.df_resid, _zero_tol(y))


def anova_for_metric(combos: Sequence[Mapping[str, Any]], metric: str,
                     terms: Sequence[Sequence[str]] = DEFAULT_TERMS) -> list[AnovaRow]:
    obs = [c for c in combos if c.get(metric) is not None]
    design = build_design(obs, terms=terms)
    return anova_type2(design, [float(c[metric]) for c in obs], terms)


# ------------------------------------------------------------ contrasts


@dataclass
class ContrastRow:
    backend: str
    pair: str
    metric: str
    delta: float
    ci_low: float
    ci_high: float

    def to_dict(self) -> dict[str, Any]:
        return {"backend": self.backend, "pair": self.pair, "metric": self.metric,
                "delta": self.delta, "ci_low": self.ci_low, "ci_high": self.ci_high}


def bootstrap_contrast(cell_a: Sequence[float], cell_b: Sequence[float], resamples: int = 10_000,
                       seed: int = 0, *, backend: str = "", pair: str = "a vs b",
                       metric: str = "") -> ContrastRow:
    """Mean difference a - b with a 95% percentile bootstrap interval.

    Each cell is resampled with replacement independently.
    """
    a = np.asarray(cell_a, dtype=float)
    b = np.asarray(cell_b, dtype=float)
    if a.size == 0 or b.size == 0:
        raise ValueError("contrast cells must be non-empty")
    if a.size != b.size:
        raise ValueError("contrast cells must have equal length")
    rng = np.random.default_rng(seed)
    ia = rng.integers(0, a.size, size=(resamples, a.size))
    ib = rng.integers(0, b.size, size=(resamples, b.size))
    # point estimate goes through the same reduction as the resamples so that
    # constant cells collapse exactly onto it
    delta = float(a[None, :].sum(axis=1)[0] / a.size - b[None, :].sum(axis=1)[0] / b.size)
    diffs = a[ia].sum(axis=1) / a.size - b[ib].sum(axis=1) / b.size
    lo, hi = np.percentile(diffs, [2.5, 97.5])
    return ContrastRow(backend, pair, metric, delta, float(lo), float(hi))


SUBCONDITION_ORDER = [(c, t) for c in CONSTRAINTS for t in TRANSPORTS]


def cell_values(combos: Sequence[Mapping[str, Any]], backend: str, mode: str, metric: str) -> list[float]:
    """Subcondition values of one cell in (constraint, transport) order."""
    members = [c for c in combos if c["backend"] == backend and c["mode"] == mode
               and c.get(metric) is not None]
    members.sort(key=lambda c: (SUBCONDITION_ORDER.index((c["constraint"], c["transport"]))
                                if (c["constraint"], c["transport"]) in SUBCONDITION_ORDER else 99,
                                c["constraint"], c["transport"]))
    return [float(c[metric]) for c in members]


def contrast_table(combos: Sequence[Mapping[str, Any]],
                   pairs: Sequence[tuple[str, str]] = (("MCLR", "MJ"), ("MCLR", "SJ")),
                   metrics: Sequence[str] = ("ra_pct", "sr_pct", "p50_ms", "total_tokens"),
                   resamples: int = 10_000, seed: int = 0) -> list[ContrastRow]:
    backends = [b for b in BACKENDS if any(c["backend"] == b for c in combos)]
    backends += sorted({c["backend"] for c in combos} - set(backends))
    out = []
    for backend in backends:
        for a, b in pairs:
            for metric in metrics:
                va = cell_values(combos, backend, a, metric)
                vb = cell_values(combos, backend, b, metric)
                if not va or not vb or len(va) != len(vb):
                    continue
                out.append(bootstrap_contrast(va, vb, resamples, seed, backend=backend,
                                              pair=f"{a} vs {b}", metric=metric))
    return out
