import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy import stats

from trajsum.basisfn import BasisSpec, make_basis
from trajsum.data import DatasetError
from trajsum.inference import (DegenerateTestError, TestResult, ancova_test, lrt_groups, rubin_pool,
                               two_sample_t, wald_mc_test, welch_df, z_test)
from trajsum.simgen import generate, make_scenario
from trajsum.summaries import AncovaFit, SummaryEstimate

QUAD = make_basis(BasisSpec.polynomial(2, (0, 7)))


def est(kind, values):
    v = np.asarray(values, float)
    return SummaryEstimate(kind, float(v.mean()), float(v.var(ddof=1) / v.size), v.size, None, v)


@given(st.lists(st.floats(-10, 10), min_size=3, max_size=30),
       st.lists(st.floats(-10, 10), min_size=3, max_size=30))
def test_welch_matches_scipy(a, b):
    a, b = np.array(a), np.array(b)
    if a.var() < 1e-6 or b.var() < 1e-6:
        return
    res = two_sample_t(est("CS", a), est("CS", b))
    ref = stats.ttest_ind(a, b, equal_var=False)
    assert res.statistic == pytest.approx(ref.statistic, rel=1e-9)
    assert res.p_two_sided == pytest.approx(ref.pvalue, rel=1e-7, abs=1e-14)
    assert res.df == pytest.approx(ref.df, rel=1e-9)


def test_one_sided_orientation():
    a, b = est("CS", [1, 2, 3, 4.0]), est("CS", [3, 4, 5, 6.0])
    less = two_sample_t(a, b, "less")
    greater = two_sample_t(a, b, "greater")
    assert less.statistic < 0 and less.p_one_sided < 0.05
    assert less.p_one_sided + greater.p_one_sided == pytest.approx(1.0)
    assert less.p_two_sided == pytest.approx(2 * less.p_one_sided)
    with pytest.raises(ValueError):
        two_sample_t(a, b, "two-sided")


def test_wald_worked_example():
    # effect -0.6 vs -0.9 with variance 0.0075381 per group
    r = wald_mc_test(SummaryEstimate("MC", -0.6, 0.0075381, 100), SummaryEstimate("MC", -0.9, 0.0075381, 100))
    assert r.statistic == pytest.approx(0.3 / math.sqrt(2 * 0.0075381))
    assert r.statistic == pytest.approx(2.443, abs=1e-3)
    assert r.reference == "normal" and r.df is None
    assert r.p_two_sided == pytest.approx(2 * stats.norm.sf(r.statistic))


def test_zero_variance_rules():
    assert z_test(0.0, 0.0, "wald").p_two_sided == 1.0
    with pytest.raises(DegenerateTestError):
        z_test(0.1, 0.0, "wald")
    a = SummaryEstimate("CS", 1.0, 0.0, 5)
    b = SummaryEstimate("CS", 2.0, 0.0, 5)
    r = two_sample_t(a, b)
    assert r.degenerate and r.statistic == -math.inf and r.p_two_sided == 0.0 and r.p_one_sided == 0.0
    with pytest.raises(DegenerateTestError):
        two_sample_t(a, a)
    with pytest.raises(DatasetError):
        two_sample_t(SummaryEstimate("CS", 1.0, 0.1, 1), b)


def test_welch_df_limits():
    assert welch_df(1.0, 10, 1.0, 10) == pytest.approx(18.0)
    assert welch_df(1.0, 10, 0.0, 10) == pytest.approx(9.0)
    assert math.isinf(welch_df(0.0, 10, 0.0, 10))


def test_ancova_test_direction():
    fit = AncovaFit(1.0, 0.5, -2.1, 0.25, 97, 100)
    r = ancova_test(fit)
    assert r.statistic == pytest.approx(-4.2)
    assert r.df == 97 and r.alternative == "greater"
    assert r.p_one_sided == pytest.approx(stats.t(97).sf(-4.2))
    assert ancova_test(fit, "less").p_one_sided == pytest.approx(stats.t(97).cdf(-4.2))


def test_rubin_rules_by_hand():
    pairs = [(1.0, 0.5), (1.2, 0.4), (0.8, 0.6)]
    r = rubin_pool(pairs)
    W, B = 0.5, np.var([1.0, 1.2, 0.8], ddof=1)
    T = W + (1 + 1 / 3) * B
    assert r.pooled_estimate == pytest.approx(1.0)
    assert r.pooled_variance == pytest.approx(T)
    assert r.df == pytest.approx(2 * (1 + W / ((4 / 3) * B)) ** 2)
    t = r.test()
    assert t.p_two_sided == pytest.approx(2 * stats.t(r.df).sf(1.0 / math.sqrt(T)))


def test_rubin_identical_imputations_reduce_to_single():
    r = rubin_pool([(0.4, 0.04)] * 5)
    assert r.between == 0 and math.isinf(r.df)
    assert r.test().p_two_sided == pytest.approx(z_test(0.4, 0.04, "z").p_two_sided)
    with pytest.raises(ValueError):
        rubin_pool([(0.4, 0.04)])


def test_lrt_shapes():
    data = generate(make_scenario("Q1vQ2"), 1.0, 60, 2)
    r = lrt_groups(data, QUAD)
    assert r.df == 10 and r.statistic > 0 and r.p_two_sided < 0.05
    assert not r.flags
    null = generate(make_scenario("Q1vQ1"), 1.0, 60, 2)
    rn = lrt_groups(null, QUAD)
    assert rn.statistic >= 0 and rn.p_two_sided == pytest.approx(stats.chi2.sf(rn.statistic, 10))
    with pytest.raises(DatasetError):
        lrt_groups(data.subset("1"), QUAD)


def test_rejects_helper():
    r = TestResult(2.0, 0.04, 0.02, "x")
    assert r.rejects(0.05) and not r.rejects(0.01) and r.rejects(0.05, one_sided=True)
