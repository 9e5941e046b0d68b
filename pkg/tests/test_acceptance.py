"""Acceptance criteria 1-10, each at its stated tolerance.

Every test prints one ``PASS``/``FAIL`` line (also collected into the pytest
terminal summary) before asserting.
"""
import math
import time

import numpy as np
import pytest

from conftest import ACCEPTANCE_LINES
from trajsum.basisfn import BasisSpec, TimeGrid, UniformWeight, endpoint_slope_vector, make_basis, weighted_slope_integral
from trajsum.harness import cli
from trajsum.harness.config import ScenarioSpec
from trajsum.harness.io import write_dataset_csv
from trajsum.harness.runner import run_cell
from trajsum.lmm import fit_lmm, marginal_covariance
from trajsum.missing import DEFAULT_DROPOUT_LAW, MissingnessSpec, apply_missingness
from trajsum.simgen import QUADRATIC_BETAS, RANDOM_EFFECT_COV, SIGMAS, embarc_like_trial, generate, make_scenario, quadratic_mean
from trajsum.summaries import change_score, efficiency_gap, expected_cs_under_dropout, var_cs_theoretical, var_mc_theoretical
from trajsum.wats import default_weight_basis, optimize_weight, weight_objective

GRID = TimeGrid.regular(0, 7)
QUAD = make_basis(BasisSpec.polynomial(2, (0, 7)))
X = QUAD.values(GRID.as_array())
D = np.asarray(RANDOM_EFFECT_COV)
TYPE1_BAND = (0.032, 0.072)


def report(n: int, ok: bool, detail: str) -> None:
    line = f"{'PASS' if ok else 'FAIL'} criterion {n}: {detail}"
    print(line)
    ACCEPTANCE_LINES.append(line)
    assert ok, line


def rates(spec: ScenarioSpec) -> dict:
    rows = run_cell(spec)
    return {r.estimator: r for r in rows}


def in_band(rate: float) -> bool:
    return TYPE1_BAND[0] <= rate <= TYPE1_BAND[1]


def test_criterion_01_exact_ats():
    t0 = time.perf_counter()
    G = endpoint_slope_vector(QUAD, GRID)
    S = weighted_slope_integral(QUAD, UniformWeight((0.0, 7.0)))
    errs = []
    for g, ats in ((1, -0.6), (2, -0.9), (3, -0.6)):
        beta = np.array(QUADRATIC_BETAS[g])
        errs += [abs(G @ beta - ats), abs(S @ beta - ats)]
    dt = time.perf_counter() - t0
    report(1, max(errs) < 1e-12 and dt < 1.0, f"ATS -0.6/-0.9/-0.6 max error {max(errs):.2e} in {dt:.3f}s")


def test_criterion_02_variance_oracle():
    V = marginal_covariance(D, 1.0, X)
    G = endpoint_slope_vector(QUAD, GRID)
    vcs = var_cs_theoretical(V, GRID, 100)
    vmc = var_mc_theoretical(D, 1.0, X, G, 100)
    resid = 0.0
    for s in SIGMAS:
        Vs = marginal_covariance(D, s ** 2, X)
        gap, _ = efficiency_gap(X, GRID, s ** 2, 100)
        resid = max(resid, abs(var_cs_theoretical(Vs, GRID, 100) - var_mc_theoretical(D, s ** 2, X, G, 100) - gap))
    ok = abs(vcs - 0.0077082) < 1e-6 and abs(vmc - 0.0075381) < 1e-6 and vmc < vcs and resid < 1e-10
    report(2, ok, f"Var(CS)={vcs:.7f} Var(MC)={vmc:.7f} decomposition residual {resid:.1e}")


def test_criterion_03_cs_dropout_bias():
    exact = expected_cs_under_dropout(quadratic_mean(1), GRID, DEFAULT_DROPOUT_LAW)
    sc = make_scenario("Q1vQ3")
    vals = []
    for r in range(2000):
        data = apply_missingness(generate(sc, 1.0, 100, 300_000 + r), MissingnessSpec.dropout(), 300_000 + r)
        vals.append(change_score(data, "1").value)
    vals = np.array(vals)
    mean, se = vals.mean(), vals.std(ddof=1) / np.sqrt(vals.size)
    ok = abs(exact + 0.77) < 1e-12 and abs(mean - exact) < 3 * se
    report(3, ok, f"E[CS]={exact:.4f}; Monte-Carlo mean {mean:.4f} (SE {se:.4f}); bias vs ATS {mean + 0.6:+.3f}")


def test_criterion_04_woodbury():
    worst = 0.0
    for s in SIGMAS:
        V = marginal_covariance(D, s ** 2, X)
        lhs = np.linalg.inv(X.T @ np.linalg.solve(V, X))
        worst = max(worst, np.abs(lhs - (s ** 2 * np.linalg.inv(X.T @ X) + D)).max())
    report(4, worst < 1e-8, f"max Woodbury residual {worst:.1e} over sigma grid")


@pytest.mark.slow
def test_criterion_05_type_one_complete_data():
    lines, ok = [], True
    for sid in ("Q1vQ3", "Q1vQ1"):
        for sigma in (1.0, 2.0):
            r = rates(ScenarioSpec(sid, sigma, reps=1000, seed=5))
            cell = " ".join(f"{k}={v.rate:.3f}" for k, v in r.items())
            ok &= all(in_band(v.rate) for v in r.values()) and not any(v.flagged for v in r.values())
            lines.append(f"{sid}@{sigma:g}[{cell}]")
    report(5, ok, "rejection rates in [0.032, 0.072]: " + "; ".join(lines))


@pytest.mark.slow
def test_criterion_06_missingness_inflation():
    r = rates(ScenarioSpec("Q1vQ3", 1.0, missingness=MissingnessSpec.dropout(), reps=1000, seed=6,
                           estimators=("MC", "CS")))
    ok = r["CS"].rate > 0.07 and in_band(r["MC"].rate)
    report(6, ok, f"dropout Q1vQ3 sigma=1: CS={r['CS'].rate:.3f} (>0.07), MC={r['MC'].rate:.3f} (in band)")


def _monotone(p: list[float]) -> bool:
    inversions = [b - a for a, b in zip(p, p[1:]) if b > a]
    return len(inversions) <= 1 and all(d <= 0.03 for d in inversions)


@pytest.mark.slow
def test_criterion_07_power_ordering():
    table = {}
    for sigma in SIGMAS:
        table[sigma] = rates(ScenarioSpec("Q1vQ2", sigma, reps=500, seed=7))
    ests = ("MC", "CS", "ANCOVA", "SLOPE")
    power = {e: [table[s][e].rate for s in SIGMAS] for e in ests}
    ordering = all(power["MC"][i] >= power["CS"][i] - 0.02 and power["MC"][i] >= power["ANCOVA"][i] - 0.02
                   for i in range(len(SIGMAS)))
    mono = {e: _monotone(power[e]) for e in ests}
    desc = "; ".join(f"{e}=" + "/".join(f"{p:.2f}" for p in power[e]) for e in ests)
    report(7, ordering and all(mono.values()),
           f"ordering {'ok' if ordering else 'violated'}, monotone {mono}: {desc}")


@pytest.mark.slow
def test_criterion_08_nonquadratic_slope_failure():
    r = rates(ScenarioSpec("NQ1vNQ2", 1.0, reps=500, seed=8, estimators=("MC", "SLOPE")))
    slope, mc = r["SLOPE"].rate, r["MC"].rate
    ok = 0.02 <= slope <= 0.10 and mc - slope >= 0.2
    report(8, ok, f"NQ1vNQ2 sigma=1: SLOPE={slope:.3f} in [0.02, 0.10], B-spline MC={mc:.3f}")


@pytest.mark.slow
def test_criterion_09_wats_optimizer():
    ub = default_weight_basis((0, 7))
    rng = np.random.default_rng(9)
    beats, worst_scale = 0, 0.0
    for r in range(200):
        data = generate(make_scenario("Q1vQ2"), 1.0, 100, 900_000 + r)
        f = fit_lmm(data, QUAD)
        f1, f2 = f["1"], f["2"]
        w = optimize_weight(f1, f2, ub, seed=r)
        beats += (not w.fallback) and w.objective > w.uniform_objective
        v = rng.standard_normal(ub.dim)
        a = weight_objective(ub, QUAD, v, f1.beta, f2.beta, f1.cov_beta, f2.cov_beta)
        b = weight_objective(ub, QUAD, 2 * v, f1.beta, f2.beta, f1.cov_beta, f2.cov_beta)
        worst_scale = max(worst_scale, abs(a - b) / max(abs(a), 1e-300))
    inflation = rates(ScenarioSpec("Q1vQ1", 1.0, reps=1000, seed=9, estimators=("WATS",)))["WATS"].rate
    ok = worst_scale < 1e-10 and beats >= 190 and inflation > 0.08
    report(9, ok, f"scale invariance {worst_scale:.1e}; optimum > uniform in {beats}/200; "
                  f"in-sample weighted test type-I {inflation:.3f} (>0.08)")


def test_criterion_10_embarc_substitute(tmp_path, capsys):
    data = embarc_like_trial(100, seed=10)
    law = (0.0, 0.03, 0.03, 0.05, 0.09, 0.8)
    data = apply_missingness(data, MissingnessSpec.dropout(law), 10)
    csv = write_dataset_csv(data, tmp_path / "embarc_like.csv")
    code = cli.main(["analyze", "--data", str(csv), "--out-dir", str(tmp_path / "out"), "--seed", "10"])
    import json
    rep = json.loads((tmp_path / "out" / "report.json").read_text())
    tests = rep["tests"]
    ok = (code == 0 and tests["LRT"]["df"] == 10
          and all(0 <= tests[k]["p_one_sided"] <= 1 for k in ("MC", "CS", "ANCOVA"))
          and len((tmp_path / "out" / "weight_curve.csv").read_text().splitlines()) == 202)
    ps = ", ".join(f"{k} one-sided p={tests[k]['p_one_sided']:.3f}" for k in ("CS", "MC", "ANCOVA"))
    report(10, ok, f"not reproducible (data unavailable); substitute pipeline on EMBARC-shaped CSV: "
                   f"LRT df={tests['LRT']['df']:g} p={tests['LRT']['p_two_sided']:.3f}; {ps}")
