import copy
import json
import random

import pytest

from routebench.calibration import load_cell_means
from routebench.report import (
    DeploymentPolicy,
    MissingRouteSlices,
    ReportError,
    analyze_combos,
    emit_report,
    expand_cell_means,
    recommend,
    write_analysis,
)

POLICY = DeploymentPolicy(protected_routes={"dev"}, min_ra_pct=50, min_wlc_pct=30)


@pytest.fixture(scope="module")
def fixture_tables():
    return analyze_combos(expand_cell_means(load_cell_means()), resamples=2000, seed=0)


def cell(t, backend, mode):
    return next(c for c in t.cells if (c["backend"], c["mode"]) == (backend, mode))


def test_expanded_fixture_reproduces_cell_means(fixture_tables):
    for src in load_cell_means():
        c = cell(fixture_tables, src["backend"], src["mode"])
        for m in ("fc_pct", "ra_pct", "sr_pct", "p50_ms", "total_tokens"):
            assert c[m] == pytest.approx(src[m])
            assert c["bounds"][m] == 0.0
        assert c["n_combos"] == 4


def test_fixture_anova_is_flagged_not_crashing(fixture_tables):
    # identical subconditions leave no residual variance
    ra = {r["term"]: r for r in fixture_tables.anova["ra_pct"]}
    assert ra["Residual"]["sum_sq"] == 0.0
    assert ra["transport"]["sum_sq"] == 0.0


def test_markdown_and_csv(fixture_tables):
    md = emit_report(fixture_tables)
    assert "| gemini | MJS | 17.03 |" in md
    assert "Backend × mode" in md
    csvs = emit_report(fixture_tables, "csv")
    assert csvs["wlc"].splitlines()[0] == "Backend,Mode,WLC%"
    assert "llama,MCLR,0.00" in csvs["wlc"]


def test_missing_input():
    with pytest.raises(ReportError):
        emit_report(None)
    with pytest.raises(ReportError):
        analyze_combos([])


def test_write_analysis(tmp_path, fixture_tables):
    written = write_analysis(fixture_tables, tmp_path)
    names = {p.name for p in written}
    assert {"cell_metrics.json", "anova.json", "contrasts.json", "report.md", "wlc.csv"} <= names
    json.loads((tmp_path / "anova.json").read_text())


def verdicts(cells, policy=POLICY):
    return recommend(cells, policy)["backends"]


def rejected(v, backend, mode):
    return next(r for r in v[backend]["rejected"] if r["mode"] == mode)


def test_recommend_fixture(fixture_tables):
    v = verdicts(fixture_tables.cells)
    llama_mclr = rejected(v, "llama", "MCLR")
    assert llama_mclr["step"] == 1
    assert llama_mclr["reasons"][0] == {"step": 1, "rule": "protected_route_accuracy", "value": 0.0,
                                        "threshold": 50, "route": "dev"}
    gem_mjs = rejected(v, "gemini", "MJS")
    assert gem_mjs["step"] == 2
    assert gem_mjs["reasons"][0]["rule"] == "wlc_floor"
    assert gem_mjs["reasons"][0]["value"] == pytest.approx(17.03, abs=0.005)
    assert v["gemini"]["recommended"]["mode"] == "MJ"
    assert {p["mode"] for p in v["openai"]["admissible"]} == {"MJ", "SJ"}


def test_ranking_by_latency_then_tokens():
    base = {"backend": "b", "fc_pct": 100, "ra_pct": 90, "sr_pct": 90, "wlc_pct": 80,
            "per_route_accuracy": {"dev": 90}}
    cells = [{**base, "mode": "A", "p50_ms": 200, "total_tokens": 10},
             {**base, "mode": "B", "p50_ms": 100, "total_tokens": 50},
             {**base, "mode": "C", "p50_ms": 100, "total_tokens": 40}]
    v = verdicts(cells)
    assert [p["mode"] for p in v["b"]["admissible"]] == ["C", "B", "A"]


def test_no_admissible_reports_nearest_miss():
    cells = [{"backend": "b", "mode": m, "fc_pct": 100, "ra_pct": ra, "sr_pct": 100, "wlc_pct": wlc,
              "p50_ms": 1, "total_tokens": 1, "per_route_accuracy": {"dev": 90}}
             for m, ra, wlc in (("A", 90, 20), ("B", 90, 29))]
    v = verdicts(cells)["b"]
    assert v["verdict"] == "no admissible package" and v["recommended"] is None
    assert v["nearest_miss"]["mode"] == "B"


def test_missing_protected_slice_is_error():
    cells = [{"backend": "b", "mode": "A", "fc_pct": 100, "ra_pct": 90, "sr_pct": 90, "wlc_pct": 80,
              "p50_ms": 1, "total_tokens": 1, "per_route_accuracy": {"chat": 90}}]
    with pytest.raises(MissingRouteSlices):
        recommend(cells, POLICY)


def test_verdicts_invariant_to_cell_order(fixture_tables):
    cells = copy.deepcopy(fixture_tables.cells)
    expected = verdicts(cells)
    random.Random(0).shuffle(cells)
    shuffled = verdicts(cells)
    for b in expected:
        assert shuffled[b]["admissible"] == expected[b]["admissible"]
        assert sorted(r["mode"] for r in shuffled[b]["rejected"]) == sorted(r["mode"] for r in expected[b]["rejected"])


def test_backends_judged_independently(fixture_tables):
    cells = fixture_tables.cells
    alone = verdicts([c for c in cells if c["backend"] == "llama"])["llama"]
    assert alone == verdicts(cells)["llama"]


def test_tightening_policy_never_adds_packages(fixture_tables):
    loose = verdicts(fixture_tables.cells)
    for tight in (DeploymentPolicy({"dev"}, 40, 50), DeploymentPolicy({"dev"}, 30, 80, 70),
                  DeploymentPolicy({"dev", "chat"}, 30, 50, max_p50_ms=1100)):
        strict = verdicts(fixture_tables.cells, tight)
        for b in loose:
            assert {p["mode"] for p in strict[b]["admissible"]} <= {p["mode"] for p in loose[b]["admissible"]}


def test_policy_validation(tmp_path):
    with pytest.raises(ValueError):
        DeploymentPolicy(min_wlc_pct=120)
    with pytest.raises(ValueError):
        DeploymentPolicy(protected_routes={"support"})
    path = tmp_path / "p.json"
    path.write_text(json.dumps({"protected_routes": ["dev"], "min_ra_pct": 50, "min_wlc_pct": 30}))
    assert DeploymentPolicy.load(path) == POLICY
