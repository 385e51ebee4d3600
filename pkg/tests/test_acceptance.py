"""End-to-end acceptance gate. Each test is one criterion; the terminal summary
prints a PASS/FAIL line per criterion."""

import itertools
import time

import numpy as np
import pytest

from routebench.calibration import load_cell_means
from routebench.compact_codec import CompactCode, decode_compact, emit_compact, reconstruct
from routebench.control_schema import ControlRecord, FailureClass, ParseFailure, RouteLabel, validate_schema
from routebench.gateway import Gateway, RequestContext, SimulatedBackend
from routebench.metrics import combo_metrics, compute_metrics, group_rows, taxonomy_counts, wlc
from routebench.profiles import (
    BACKENDS,
    CONSTRAINTS,
    MODES,
    TRANSPORTS,
    MatrixConfig,
    assemble_request,
    enumerate_matrix,
    realize,
)
from routebench.report import DeploymentPolicy, analyze_combos, expand_cell_means, recommend
from routebench.runner import iter_masked_lines, prompt_strata, run_matrix
from routebench.stats import anova_for_metric, anova_type1, anova_type2, build_design, f_upper_tail, fit_ols

from oracles import f_tail_quad

# rounding of two-decimal inputs can land a difference exactly on the tolerance
FLOAT_EPS = 1e-9

EXPECTED_WLC = {
    ("gemini", "MJ"): 61.11, ("gemini", "SJ"): 61.11, ("gemini", "MJS"): 17.03, ("gemini", "MCLR"): 31.71,
    ("openai", "MJ"): 57.53, ("openai", "SJ"): 57.76, ("openai", "MJS"): 13.02, ("openai", "MCLR"): 8.31,
    ("llama", "MJ"): 48.22, ("llama", "SJ"): 51.16, ("llama", "MJS"): 0.00, ("llama", "MCLR"): 0.00,
}

# (backend, pair): (RA, SR, p50, tokens)
EXPECTED_CONTRASTS = {
    ("gemini", "MCLR vs MJ"): (-23.15, -6.25, -139.19, -80327),
    ("gemini", "MCLR vs SJ"): (-23.15, -6.25, -147.73, -80327),
    ("openai", "MCLR vs MJ"): (-27.16, -22.05, -382.19, -75774),
    ("openai", "MCLR vs SJ"): (-27.39, -22.05, -379.98, -75780),
    ("llama", "MCLR vs MJ"): (-59.49, -56.25, -57.58, -74636),
    ("llama", "MCLR vs SJ"): (-59.57, -56.25, -61.21, -77634),
}

POLICY = DeploymentPolicy(protected_routes={"dev"}, min_ra_pct=50, min_wlc_pct=30)


def test_criterion_1_wlc_reproduction():
    start = time.perf_counter()
    cells = load_cell_means()
    got = {(c["backend"], c["mode"]): wlc(c["fc_pct"], c["ra_pct"], c["sr_pct"]) for c in cells}
    elapsed = time.perf_counter() - start
    assert set(got) == set(EXPECTED_WLC)
    for key, expected in EXPECTED_WLC.items():
        assert abs(got[key] - expected) <= 0.02 + FLOAT_EPS, (key, got[key], expected)
    assert elapsed < 1.0


def test_criterion_2_contrast_reproduction():
    tables = analyze_combos(expand_cell_means(load_cell_means()), resamples=10_000, seed=0)
    rows = {(r["backend"], r["pair"], r["metric"]): r for r in tables.contrasts}
    for (backend, pair), (ra, sr, p50, tokens) in EXPECTED_CONTRASTS.items():
        for metric, expected, tol in (("ra_pct", ra, 0.01), ("sr_pct", sr, 0.01), ("p50_ms", p50, 0.01)):
            got = rows[(backend, pair, metric)]["delta"]
            assert abs(got - expected) <= tol + FLOAT_EPS, (backend, pair, metric, got, expected)
        assert round(rows[(backend, pair, "total_tokens")]["delta"]) == tokens
    # every fixture cell is invariant across its subconditions
    for r in rows.values():
        assert r["ci_low"] == r["delta"] == r["ci_high"]


def test_criterion_3_matrix_cardinality(full_run):
    assert len(enumerate_matrix(MatrixConfig())) == 48
    assert len(full_run) == 15_552
    counts = taxonomy_counts(full_run)
    assert sum(counts.values()) == 15_552
    assert set(counts) == {fc.value for fc in FailureClass}


def test_criterion_4_codec_totality():
    start = time.perf_counter()
    n = 0
    for route, c, m, t in itertools.product(RouteLabel, range(101), (0, 1), (0, 1)):
        rec = reconstruct(CompactCode(route.value, str(c), str(m), str(t), "reason"))
        assert validate_schema(rec.to_dict()) == []
        original = ControlRecord(route, c / 100, bool(m), bool(t), "reason")
        assert decode_compact(emit_compact(original)) == original
        n += 1
    elapsed = time.perf_counter() - start
    assert n == 1616
    assert elapsed < 1.0


def test_criterion_5_anova_oracle_equivalence():
    grid = [dict(zip(("backend", "mode", "constraint", "transport"), k))
            for k in itertools.product(BACKENDS, MODES, CONSTRAINTS, TRANSPORTS)]
    design = build_design(grid)
    rng = np.random.default_rng(20240501)
    for _ in range(100):
        effects = rng.normal(0, rng.uniform(0.1, 20), size=design.X.shape[1])
        y = design.X @ effects + rng.normal(0, rng.uniform(0.01, 5), size=48)
        t2 = {r.term: r.sum_sq for r in anova_type2(design, y)}
        t1 = {r.term: r.sum_sq for r in anova_type1(design, y)}
        for term in t2:
            assert abs(t2[term] - t1[term]) <= 1e-8 * max(1.0, abs(t1[term])), term
        coef = fit_ols(design.X, y).coef
        oracle = np.linalg.solve(design.X.T @ design.X, design.X.T @ y)
        np.testing.assert_allclose(coef, oracle, rtol=0, atol=1e-8)

    for F, d1, d2 in itertools.product((0.05, 0.8, 2.5, 7.0, 30.0), (1, 2, 3, 6), (10, 34, 100)):
        assert abs(f_upper_tail(F, d1, d2) - f_tail_quad(F, d1, d2)) <= 1e-8, (F, d1, d2)


def test_criterion_6_interaction_detection(pool, sim_profiles):
    start = time.perf_counter()
    rows = run_matrix(MatrixConfig(), pool, Gateway.simulated(sim_profiles, 0), 0, workers=4)
    combos = [m.to_dict() for m in combo_metrics(rows)]
    anova = {r.term: r for r in anova_for_metric(combos, "ra_pct")}
    elapsed = time.perf_counter() - start

    calibrated = {(c["backend"], c["mode"]): c for c in load_cell_means()}
    for (backend, mode), cell_rows in group_rows(rows, "cell").items():
        m = compute_metrics(cell_rows)
        target = calibrated[(backend, mode)]
        assert abs(m.fc_pct - target["fc_pct"]) <= 3.0, (backend, mode, "fc", m.fc_pct)
        assert abs(m.ra_pct - target["ra_pct"]) <= 3.0, (backend, mode, "ra", m.ra_pct)

    for term in ("backend", "mode", "backend:mode"):
        assert anova[term].p < 0.001, term
    assert anova["backend:mode"].partial_eta_sq > 0.8
    assert elapsed < 60.0


def _realized(combo, text):
    try:
        return realize(combo, text)
    except ParseFailure as exc:
        return exc.failure_class


def test_criterion_7_transport_orthogonality(pool, sim_profiles, full_run_combos):
    sim = SimulatedBackend(sim_profiles, 0)
    strata = prompt_strata(pool)
    combos = {c.key: c for c in enumerate_matrix(MatrixConfig())}
    for mode, backend, constraint in itertools.product(MODES, BACKENDS, CONSTRAINTS):
        ns = combos[(mode, backend, constraint, "non_stream")]
        st = combos[(mode, backend, constraint, "stream")]
        for i in range(0, len(pool), 9):
            a = sim.complete(assemble_request(ns, pool[i]), RequestContext(ns, pool[i], i, strata[i]))
            b = sim.complete(assemble_request(st, pool[i]), RequestContext(st, pool[i], i, strata[i]))
            assert a.raw_text == b.raw_text
            assert _realized(ns, a.raw_text) == _realized(st, b.raw_text)

    transport = next(r for r in anova_for_metric(full_run_combos, "ra_pct") if r.term == "transport")
    assert transport.p > 0.05


def test_criterion_8_recommendation_fixtures():
    tables = analyze_combos(expand_cell_means(load_cell_means()), resamples=1000, seed=0)
    result = recommend(tables.cells, POLICY)["backends"]

    llama_mclr = next(r for r in result["llama"]["rejected"] if r["mode"] == "MCLR")
    assert llama_mclr["step"] == 1
    (reason,) = llama_mclr["reasons"]
    assert reason["rule"] == "protected_route_accuracy" and reason["route"] == "dev"
    assert reason["value"] == 0.0 and reason["threshold"] == 50

    gemini_mjs = next(r for r in result["gemini"]["rejected"] if r["mode"] == "MJS")
    assert gemini_mjs["step"] == 2
    wlc_reason = next(r for r in gemini_mjs["reasons"] if r["rule"] == "wlc_floor")
    assert wlc_reason["value"] == pytest.approx(17.03, abs=0.005) and wlc_reason["threshold"] == 30


def test_criterion_9_determinism(tmp_path, pool, sim_profiles):
    paths = []
    for workers in (1, 8):
        path = tmp_path / f"run_{workers}.jsonl"
        with open(path, "w") as fh:
            run_matrix(MatrixConfig(), pool, Gateway.simulated(sim_profiles, 42), 42, out=fh, workers=workers)
        paths.append(path)
    a, b = (list(iter_masked_lines(p)) for p in paths)
    assert len(a) == 1 + 15_552
    assert a == b
