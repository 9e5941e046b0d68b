import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy import stats

from trajsum.missing import (CALIBRATED_MNAR, DEFAULT_DROPOUT_LAW, EMConvergenceError, ImputationConfig,
                             MissingnessSpec, apply_missingness, em_mvn, impute_mvn)
from trajsum.simgen import generate, make_scenario


@pytest.fixture(scope="module")
def big():
    return generate(make_scenario("Q1vQ1"), 1.0, 2000, 4)


def test_none_is_identity(big):
    assert apply_missingness(big, MissingnessSpec.none(), 0) is big


def test_mcar_rate_and_baseline(big):
    inc = apply_missingness(big, MissingnessSpec.mcar(0.15), 1)
    miss = np.isnan(inc.values)
    assert not miss[:, 0].any()
    rate = miss[:, 1:].mean()
    assert abs(rate - 0.15) < 4 * np.sqrt(0.15 * 0.85 / miss[:, 1:].size)
    obs = ~miss
    np.testing.assert_array_equal(inc.values[obs], big.values[obs])


def test_dropout_is_monotone_with_default_law(big):
    inc = apply_missingness(big, MissingnessSpec.dropout(), 2)
    obs = ~np.isnan(inc.values)
    # monotone: once missing, always missing
    assert np.all(np.diff(obs.astype(int), axis=1) <= 0)
    last = obs.sum(axis=1) - 1
    counts = np.bincount(last, minlength=8)[1:] / big.n
    expect = np.array(DEFAULT_DROPOUT_LAW)
    chi2 = big.n * np.sum((counts[expect > 0] - expect[expect > 0]) ** 2 / expect[expect > 0])
    assert stats.chi2.sf(chi2, (expect > 0).sum() - 1) > 1e-3
    assert counts[0] == 0 and counts[1] == 0


def test_mnar_threshold_rate(big):
    spec = MissingnessSpec.mnar()
    inc = apply_missingness(big, spec, 3)
    rate = np.isnan(inc.values[:, 1:]).mean()
    assert rate == pytest.approx(stats.norm.cdf(-1.15 / 3.0), abs=0.01)
    cal = MissingnessSpec.from_config({"mechanism": "mnar", "preset": "calibrated"})
    assert cal.cutoff == pytest.approx(CALIBRATED_MNAR["cutoff"])
    rate = np.isnan(apply_missingness(big, cal, 3).values[:, 1:]).mean()
    assert rate == pytest.approx(0.15, abs=0.01)


def test_mnar_perturbation_changes_values(big):
    inc = apply_missingness(big, MissingnessSpec.mnar(perturb=True), 5)
    obs = ~np.isnan(inc.values)
    assert not np.allclose(inc.values[obs], big.values[obs])


def test_deterministic_streams(big):
    a = apply_missingness(big, MissingnessSpec.mcar(0.3), 9, 1)
    b = apply_missingness(big, MissingnessSpec.mcar(0.3), 9, 1)
    c = apply_missingness(big, MissingnessSpec.mcar(0.3), 9, 2)
    assert a == b and a != c


@pytest.mark.parametrize("cfg", [{"mechanism": "mcar", "rate": 1.5}, {"mechanism": "dropout", "law": [0.5, 0.6]},
                                 {"mechanism": "mnar", "latent_sd": 0}, {"mechanism": "mar"},
                                 {"mechanism": "mnar", "preset": "other"}])
def test_bad_specs(cfg):
    with pytest.raises(ValueError):
        MissingnessSpec.from_config(cfg)


@given(st.sampled_from([MissingnessSpec.none(), MissingnessSpec.mcar(0.2), MissingnessSpec.dropout(),
                        MissingnessSpec.mnar(perturb=True)]))
def test_config_round_trip(spec):
    assert MissingnessSpec.from_config(spec.to_config()) == spec


def test_wrong_length_dropout_law(big):
    with pytest.raises(ValueError):
        apply_missingness(big, MissingnessSpec.dropout((0.5, 0.5)), 0)


def test_em_recovers_mvn_parameters():
    rng = np.random.default_rng(0)
    S = np.array([[2.0, 0.8, 0.3], [0.8, 1.0, 0.2], [0.3, 0.2, 0.5]])
    mu = np.array([1.0, -1.0, 0.5])
    full = rng.multivariate_normal(mu, S, size=4000)
    Y = full.copy()
    Y[:, 1:][rng.random((4000, 2)) < 0.3] = np.nan
    m, C, it = em_mvn(Y)
    np.testing.assert_allclose(m, full.mean(axis=0), atol=0.05)
    np.testing.assert_allclose(C, np.cov(full.T, bias=True), atol=0.1)
    assert it > 1


def test_em_complete_data_is_mle():
    rng = np.random.default_rng(1)
    Y = rng.standard_normal((50, 3))
    m, C, _ = em_mvn(Y)
    np.testing.assert_allclose(m, Y.mean(axis=0), atol=1e-10)
    np.testing.assert_allclose(C, np.cov(Y.T, bias=True), atol=1e-8)


def test_em_iteration_cap():
    rng = np.random.default_rng(2)
    Y = rng.standard_normal((30, 4))
    Y[rng.random(Y.shape) < 0.4] = np.nan
    Y[:, 0] = 0.0 + rng.standard_normal(30)
    with pytest.raises(EMConvergenceError) as err:
        em_mvn(Y, max_iter=1, tol=1e-14)
    assert err.value.n_iter == 1


def test_imputation_preserves_observed_and_fills():
    data = generate(make_scenario("Q1vQ2"), 1.0, 60, 7)
    inc = apply_missingness(data, MissingnessSpec.dropout(), 7)
    done = impute_mvn(inc, ImputationConfig(M=5), 7)
    assert len(done) == 5
    obs = inc.observed
    for d in done:
        assert not np.isnan(d.values).any()
        np.testing.assert_array_equal(d.values[obs], inc.values[obs])
    assert not np.allclose(done[0].values, done[1].values)
    again = impute_mvn(inc, ImputationConfig(M=5), 7)
    assert all(a == b for a, b in zip(done, again))


def test_imputed_values_track_truth():
    data = generate(make_scenario("Q1vQ2"), 1.0, 300, 8)
    inc = apply_missingness(data, MissingnessSpec.mcar(0.3), 8)
    done = impute_mvn(inc, ImputationConfig(M=5), 8)
    miss = ~inc.observed
    err = np.mean([np.abs(d.values[miss] - data.values[miss]).mean() for d in done])
    spread = np.abs(data.values[miss] - data.values[miss].mean()).mean()
    assert err < 0.5 * spread


def test_imputation_config_validation():
    with pytest.raises(ValueError):
        ImputationConfig(M=1)


def test_degenerate_conditional_gives_conditional_mean():
    from trajsum.missing import _draw_conditional
    # second coordinate is an exact copy of the first: zero conditional variance
    S = np.array([[1.0, 1.0], [1.0, 1.0]])
    Y = np.array([[2.5, np.nan]])
    out = _draw_conditional(Y, np.array([0.0, 0.0]), S, np.random.default_rng(0))
    assert out[0, 1] == pytest.approx(2.5, abs=1e-9)


def test_between_imputation_variance_positive():
    from trajsum.inference import rubin_pool
    from trajsum.summaries import change_score
    data = generate(make_scenario("Q1vQ2"), 1.0, 100, 17)
    inc = apply_missingness(data, MissingnessSpec.mcar(0.15), 17)
    done = impute_mvn(inc, ImputationConfig(M=5), 17)
    pairs = [(change_score(d, "1").value, change_score(d, "1").variance) for d in done]
    r = rubin_pool(pairs)
    assert r.between > 0 and r.pooled_variance >= r.within


@pytest.mark.slow
def test_mi_mean_change_unbiased_under_mcar():
    from trajsum.basisfn import BasisSpec, endpoint_slope_vector, make_basis
    from trajsum.inference import rubin_pool
    from trajsum.lmm import fit_group
    from trajsum.summaries import mean_change
    basis = make_basis(BasisSpec.polynomial(2, (0, 7)))
    sc = make_scenario("Q1vQ1")
    G = endpoint_slope_vector(basis, sc.grid)
    pooled = []
    for r in range(500):
        data = generate(sc, 1.0, 100, 50_000 + r)
        inc = apply_missingness(data, MissingnessSpec.mcar(0.15), r)
        done = impute_mvn(inc, ImputationConfig(M=5), r)
        pairs = []
        for d in done:
            mc = mean_change(fit_group(d.group_values("1"), sc.grid, basis), G)
            pairs.append((mc.value, mc.variance))
        pooled.append(rubin_pool(pairs).pooled_estimate)
    pooled = np.array(pooled)
    se = pooled.std(ddof=1) / np.sqrt(pooled.size)
    assert abs(pooled.mean() + 0.6) < 3 * se
