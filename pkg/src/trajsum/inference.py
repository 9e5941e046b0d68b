"""Two-group tests on scalar summaries and pooling across imputations.

All two-group statistics are oriented as *first group minus second group*.
``alternative="less"`` asks whether the first group's value is lower (for a
lower-is-better outcome: whether the first group improves more), ``"greater"``
the reverse.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy import stats

from .basisfn import Basis, BasisSpec
from .data import DatasetError, LongitudinalDataset
from .lmm import fit_lmm
from .summaries import AncovaFit, SummaryEstimate


class DegenerateTestError(ValueError):
    """The test statistic is undefined (zero variance and zero difference, say)."""


@dataclass(frozen=True)
class TestResult:
    statistic: float
    p_two_sided: float
    p_one_sided: float
    method: str
    df: float | None = None
    alternative: str = "less"
    degenerate: bool = False
    flags: tuple = ()

    __test__ = False  # not a pytest class

    @property
    def reference(self) -> str:
        return "normal" if self.df is None else f"t({self.df:.4g})"

    def rejects(self, alpha: float, one_sided: bool = False) -> bool:
        return (self.p_one_sided if one_sided else self.p_two_sided) < alpha


def _check_alternative(alternative: str) -> None:
    if alternative not in ("less", "greater"):
        raise ValueError("alternative must be 'less' or 'greater'")


def _result(stat: float, method: str, df: float | None, alternative: str, **kw) -> TestResult:
    _check_alternative(alternative)
    dist = stats.norm if df is None or math.isinf(df) else stats.t(df)
    if math.isinf(stat):
        p_two = 0.0
        lower = 0.0 if stat < 0 else 1.0
    else:
        p_two = float(min(1.0, 2.0 * dist.sf(abs(stat))))
        lower = float(dist.cdf(stat))
    p_one = lower if alternative == "less" else 1.0 - lower
    if df is not None and math.isinf(df):
        df = None
    return TestResult(float(stat), p_two, float(p_one), method, df, alternative, **kw)


def z_test(diff: float, variance: float, method: str, alternative: str = "less") -> TestResult:
    if variance <= 0:
        if diff != 0:
            raise DegenerateTestError(f"{method}: zero variance with non-zero difference {diff}")
        return _result(0.0, method, None, alternative)
    return _result(diff / math.sqrt(variance), method, None, alternative)


def wald_mc_test(mc1: SummaryEstimate, mc2: SummaryEstimate, alternative: str = "less") -> TestResult:
    """``(MC_1 - MC_2) / sqrt(Var_1 + Var_2)`` against the standard normal."""
    return z_test(mc1.value - mc2.value, mc1.variance + mc2.variance, "wald", alternative)


def welch_df(v1: float, n1: int, v2: float, n2: int) -> float:
    """Satterthwaite degrees of freedom from the squared standard errors ``v_k`` of each mean."""
    num = (v1 + v2) ** 2
    den = (v1 ** 2 / (n1 - 1) if v1 > 0 else 0.0) + (v2 ** 2 / (n2 - 1) if v2 > 0 else 0.0)
    return num / den if den > 0 else math.inf


def two_sample_t(est1: SummaryEstimate, est2: SummaryEstimate, alternative: str = "less") -> TestResult:
    """Welch two-sample t test from two summaries (value, squared SE of the value, n).

    Zero variance in both groups gives an infinite statistic (p = 0) when the
    values differ, flagged ``degenerate``, and raises when they coincide.
    """
    if est1.n < 2 or est2.n < 2:
        raise DatasetError("the two-sample t test needs n >= 2 per group")
    diff = est1.value - est2.value
    v = est1.variance + est2.variance
    if v <= 0:
        if diff == 0:
            raise DegenerateTestError("both groups have zero variance and equal values")
        return _result(math.copysign(math.inf, diff), "welch_t", float(est1.n + est2.n - 2),
                       alternative, degenerate=True)
    df = welch_df(est1.variance, est1.n, est2.variance, est2.n)
    return _result(diff / math.sqrt(v), "welch_t", df, alternative)


def ancova_test(fit: AncovaFit, alternative: str = "greater") -> TestResult:
    """t test of ``alpha2`` (second-minus-first adjusted endpoint difference).

    The default ``"greater"`` matches a lower-is-better outcome where the first
    group is hypothesised to end lower.
    """
    if fit.se2 <= 0:
        if fit.alpha2 != 0:
            return _result(math.copysign(math.inf, fit.alpha2), "ancova_t", float(fit.df), alternative,
                           degenerate=True)
        return _result(0.0, "ancova_t", float(fit.df), alternative, degenerate=True)
    return _result(fit.alpha2 / math.sqrt(fit.se2), "ancova_t", float(fit.df), alternative)


def lrt_groups(data: LongitudinalDataset, basis: Basis | BasisSpec, random_dim: int | None = None,
               **fit_kwargs) -> TestResult:
    """Likelihood ratio test of one shared mixed model against one model per group.

    Degrees of freedom: parameters per model (fixed effects, distinct random-effect
    covariances, noise variance) times ``K - 1``.
    """
    if len(data.labels) < 2:
        raise DatasetError("the likelihood ratio test needs at least two groups")
    separate = fit_lmm(data, basis, random_dim, **fit_kwargs)
    pooled = fit_lmm(data.pooled(), basis, random_dim, **fit_kwargs)
    ll_sep = sum(f.loglik for f in separate.values())
    ll_pool = sum(f.loglik for f in pooled.values())
    stat = 2.0 * (ll_sep - ll_pool)
    flags = ()
    if stat < -1e-6:
        flags = ("optimization_failure",)
    stat = max(stat, 0.0)
    k = next(iter(pooled.values())).n_params
    df = k * (len(data.labels) - 1)
    p = float(stats.chi2.sf(stat, df))
    return TestResult(stat, p, p, "lrt", float(df), "two-sided", flags=flags)


@dataclass(frozen=True)
class MIResult:
    M: int
    estimates: tuple[float, ...]
    variances: tuple[float, ...]
    pooled_estimate: float
    pooled_variance: float
    within: float
    between: float
    df: float = field(default=math.inf)

    def test(self, method: str = "rubin_t", alternative: str = "less") -> TestResult:
        if self.pooled_variance <= 0:
            return z_test(self.pooled_estimate, 0.0, method, alternative)
        return _result(self.pooled_estimate / math.sqrt(self.pooled_variance), method, self.df, alternative)


def rubin_pool(results: Sequence[tuple[float, float]], M: int | None = None) -> MIResult:
    """Rubin's rules: ``T = W + (1 + 1/M) B`` with ``(M - 1)(1 + W / ((1 + 1/M) B))^2`` degrees of freedom."""
    res = np.asarray(results, dtype=float).reshape(-1, 2)
    M = res.shape[0] if M is None else int(M)
    if M < 2 or res.shape[0] != M:
        raise ValueError("Rubin pooling needs M >= 2 (estimate, variance) pairs")
    est, var = res[:, 0], res[:, 1]
    W = float(var.mean())
    B = float(est.var(ddof=1))
    T = W + (1.0 + 1.0 / M) * B
    df = math.inf if B <= 0 else (M - 1) * (1.0 + W / ((1.0 + 1.0 / M) * B)) ** 2
    return MIResult(M, tuple(est), tuple(var), float(est.mean()), T, W, B, df)
