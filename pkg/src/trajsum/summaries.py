"""Scalar summaries of group trajectories and their theoretical variances.

* CS  - change score: mean over subjects of (last - first) / (elapsed time),
        using each subject's last *available* observation.
* MC  - mean change: ``G' beta_hat`` from the mixed model, i.e. the average
        tangent slope of the fitted mean curve.
* SLOPE - fixed slope of a random intercept / random slope linear model.
* ANCOVA - group effect in ``final ~ baseline + group``.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Hashable, Sequence

import numpy as np

from .basisfn import BasisSpec, TimeGrid, make_basis
from .data import DatasetError, LongitudinalDataset
from .lmm import LmmFit, fit_group

SUMMARY_KINDS = ("CS", "MC", "SLOPE", "ANCOVA_EFFECT")


@dataclass(frozen=True)
class SummaryEstimate:
    kind: str
    value: float
    variance: float
    n: int
    group: Hashable = None
    subject_values: np.ndarray | None = field(default=None, repr=False, compare=False)
    excluded: int = 0

    def __post_init__(self):
        if self.kind not in SUMMARY_KINDS:
            raise ValueError(f"unknown summary kind {self.kind!r}")
        if not self.variance >= 0:
            raise ValueError(f"variance must be non-negative, got {self.variance}")
        if self.n < 1:
            raise ValueError("a summary needs at least one subject")

    @property
    def se(self) -> float:
        return float(np.sqrt(self.variance))


@dataclass(frozen=True)
class AncovaFit:
    """``final = alpha0 + alpha1 * baseline + alpha2 * group``; ``se2`` is the squared SE of ``alpha2``."""

    alpha0: float
    alpha1: float
    alpha2: float
    se2: float
    df: int
    n: int
    baseline_dropped: bool = False


@dataclass(frozen=True)
class DropoutLaw:
    """Probabilities ``p_j`` that a subject's last observation is at grid time ``j`` (j = 2..m)."""

    probabilities: tuple[float, ...]

    def __post_init__(self):
        p = np.asarray(self.probabilities, dtype=float)
        if np.any(p < 0) or abs(p.sum() - 1.0) > 1e-9:
            raise ValueError("dropout probabilities must be non-negative and sum to one")
        object.__setattr__(self, "probabilities", tuple(float(x) for x in p))


# ---------------------------------------------------------------------------
# Estimators
# ---------------------------------------------------------------------------

def subject_change_scores(data: LongitudinalDataset, group) -> tuple[np.ndarray, int]:
    """Per-subject ``(y_last - y_first) / (t_last - t_first)``; subjects with one observation are dropped."""
    Y = data.group_values(group)
    t = data.times
    obs = ~np.isnan(Y)
    first = obs.argmax(axis=1)
    last = Y.shape[1] - 1 - obs[:, ::-1].argmax(axis=1)
    ok = obs.any(axis=1) & (last > first)
    rows = np.flatnonzero(ok)
    slopes = (Y[rows, last[ok]] - Y[rows, first[ok]]) / (t[last[ok]] - t[first[ok]])
    return slopes, int((~ok).sum())


def change_score(data: LongitudinalDataset, group) -> SummaryEstimate:
    slopes, excluded = subject_change_scores(data, group)
    n = slopes.size
    if n == 0:
        raise DatasetError(f"group {group!r}: no subject has two observations")
    var = float(np.var(slopes, ddof=1) / n) if n > 1 else 0.0
    return SummaryEstimate("CS", float(slopes.mean()), var, n, group, slopes, excluded)


def mean_change(fit: LmmFit, G: np.ndarray) -> SummaryEstimate:
    """``G' beta`` with variance ``G' Cov(beta) G``."""
    G = np.asarray(G, dtype=float)
    if G.shape != fit.beta.shape:
        raise ValueError(f"G has shape {G.shape}, fixed effects have shape {fit.beta.shape}")
    var = float(G @ fit.cov_beta @ G)
    return SummaryEstimate("MC", float(G @ fit.beta), max(var, 0.0), fit.n_subjects, fit.label)


def slope_fit(data: LongitudinalDataset, group, **fit_kwargs) -> LmmFit:
    """Random intercept / random slope straight-line model for one group."""
    basis = make_basis(BasisSpec.polynomial(1, (data.grid.start, data.grid.end)))
    mask = data.group_mask(group)
    return fit_group(data.values[mask], data.grid, basis, label=group,
                     ids=[i for i, k in zip(data.ids, mask) if k], **fit_kwargs)


def straight_line_slope(data: LongitudinalDataset, group, **fit_kwargs) -> SummaryEstimate:
    fit = slope_fit(data, group, **fit_kwargs)
    return SummaryEstimate("SLOPE", float(fit.beta[1]), max(float(fit.cov_beta[1, 1]), 0.0),
                           fit.n_subjects, group)


def ancova(data: LongitudinalDataset, groups: Sequence | None = None) -> AncovaFit:
    """OLS of the final-time outcome on baseline and a group indicator (complete records only).

    The indicator is 1 for ``groups[1]``, so ``alpha2`` is the adjusted
    second-minus-first difference.  A constant baseline column is dropped.
    """
    labels = tuple(groups) if groups is not None else data.labels
    if len(labels) != 2:
        raise DatasetError("ANCOVA compares exactly two groups")
    base, final, ind = [], [], []
    for code, lab in ((0.0, labels[0]), (1.0, labels[1])):
        Y = data.group_values(lab)
        keep = ~np.isnan(Y[:, 0]) & ~np.isnan(Y[:, -1])
        base.append(Y[keep, 0])
        final.append(Y[keep, -1])
        ind.append(np.full(keep.sum(), code))
    x0, y, g = np.concatenate(base), np.concatenate(final), np.concatenate(ind)
    n = y.size
    if n < 4:
        raise DatasetError(f"ANCOVA needs at least 4 complete records, got {n}")
    if g.min() == g.max():
        raise DatasetError("ANCOVA needs complete records in both groups")
    dropped = bool(np.ptp(x0) <= 1e-12 * max(1.0, np.abs(x0).max()))
    X = np.column_stack([np.ones(n), g]) if dropped else np.column_stack([np.ones(n), x0, g])
    coef, *_ = np.linalg.lstsq(X, y, rcond=None)
    df = n - X.shape[1]
    resid = y - X @ coef
    s2 = float(resid @ resid / df)
    cov = s2 * np.linalg.inv(X.T @ X)
    if dropped:
        return AncovaFit(float(coef[0]), float("nan"), float(coef[1]), float(cov[1, 1]), df, n, True)
    return AncovaFit(float(coef[0]), float(coef[1]), float(coef[2]), float(cov[2, 2]), df, n)


# ---------------------------------------------------------------------------
# Theory
# ---------------------------------------------------------------------------

def endpoint_contrast(grid: TimeGrid) -> np.ndarray:
    """``h = (-1, 0, ..., 0, 1) / (t_m - t_1)``."""
    h = np.zeros(grid.m)
    h[0], h[-1] = -1.0 / grid.span, 1.0 / grid.span
    return h


def var_cs_theoretical(V: np.ndarray, grid: TimeGrid, n: int) -> float:
    """Variance of the complete-data change score: ``h' V h / n``."""
    h = endpoint_contrast(grid)
    return float(h @ np.asarray(V, dtype=float) @ h / n)


def var_mc_theoretical(D: np.ndarray, sigma2: float, X: np.ndarray, G: np.ndarray, n: int) -> float:
    """Variance of the complete-data mean change: ``G' (sigma2 (X'X)^-1 + D) G / n``."""
    X = np.asarray(X, dtype=float)
    XtX = X.T @ X
    if np.linalg.matrix_rank(XtX) < XtX.shape[0]:
        raise np.linalg.LinAlgError("X'X is singular")
    G = np.asarray(G, dtype=float)
    return float(G @ (sigma2 * np.linalg.solve(XtX, G) + np.asarray(D, float) @ G) / n)


def efficiency_gap(X: np.ndarray, grid: TimeGrid, sigma2: float, n: int) -> tuple[float, float]:
    """``(Var(CS) - Var(MC), h'Ph / h'h)`` from the projection onto the design columns."""
    X = np.asarray(X, dtype=float)
    h = endpoint_contrast(grid)
    P = X @ np.linalg.solve(X.T @ X, X.T)
    ratio = float(h @ P @ h / (h @ h))
    return float(sigma2 / n * (h @ h) * (1.0 - ratio)), ratio


def expected_cs_under_dropout(mu: Callable, grid: TimeGrid, law: DropoutLaw | Sequence[float]) -> float:
    """Expected change score when the last observed time is random with the given law."""
    p = np.asarray(law.probabilities if isinstance(law, DropoutLaw) else DropoutLaw(tuple(law)).probabilities)
    t = grid.as_array()
    if p.size != grid.m - 1:
        raise ValueError(f"law has {p.size} entries, grid needs {grid.m - 1}")
    m = np.asarray(mu(t), dtype=float)
    d = (m[1:] - m[0]) / (t[1:] - t[0])
    return float(p @ d)
