"""Maximum-likelihood linear mixed-effects models fitted separately per group.

The model for subject ``i`` in group ``k`` is

    y_i = X_i beta_k + Z_i b_i + e_i,   b_i ~ N(0, D_k),   e_i ~ N(0, sigma2_k I)

where ``X_i`` holds the fixed-effect basis at the subject's observed times and
``Z_i`` the random-effect design (by default the leading ``q`` columns of
``X_i``).  ``beta`` is profiled out by generalised least squares; the variance
parameters are optimised by Nelder-Mead over log-Cholesky coordinates of ``D``
plus ``log sigma2``.

Subjects that share the same set of observed grid times share ``V_i``, so the
likelihood is accumulated per missingness pattern from sufficient statistics.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Hashable

import numpy as np
from numba import njit

from .basisfn import Basis, BasisSpec, TimeGrid, make_basis
from .data import DatasetError, LongitudinalDataset, SubjectRecord
from .simplex import nelder_mead

LOG_2PI = math.log(2.0 * math.pi)
SINGULAR_RIDGE = 1e-8
EXTRA_RESTARTS = 4


class FitFailure(RuntimeError):
    """The optimiser stopped without converging; ``fit`` holds the best point found."""

    def __init__(self, message: str, fit: "LmmFit | None" = None):
        super().__init__(message)
        self.fit = fit


@njit(cache=True)
def _chol_lower(a):
    n = a.shape[0]
    L = np.zeros_like(a)
    for j in range(n):
        s = a[j, j]
        for k in range(j):
            s -= L[j, k] * L[j, k]
        if not (s > 0.0):
            return L, False
        d = math.sqrt(s)
        L[j, j] = d
        for i in range(j + 1, n):
            s = a[i, j]
            for k in range(j):
                s -= L[i, k] * L[j, k]
            L[i, j] = s / d
    return L, True


@njit(cache=True)
def _tri_inverse(L):
    n = L.shape[0]
    inv = np.zeros_like(L)
    for j in range(n):
        inv[j, j] = 1.0 / L[j, j]
        for i in range(j + 1, n):
            s = 0.0
            for k in range(j, i):
                s -= L[i, k] * inv[k, j]
            inv[i, j] = s / L[i, i]
    return inv


@njit(cache=True)
def _unpack_theta(theta, q, ridge):
    L = np.zeros((q, q))
    k = 0
    for i in range(q):
        for j in range(i + 1):
            if i == j:
                L[i, j] = math.exp(theta[k]) + ridge
            else:
                L[i, j] = theta[k]
            k += 1
    return L @ L.T, math.exp(theta[k])


@njit(cache=True)
def _profiled_nll(theta, q, masks, counts, sums, cross, Xg, Zg, ridge, info_out, score_out):
    """Negative log-likelihood with beta profiled out.

    Fills ``info_out`` with sum_i X_i' V_i^-1 X_i and ``score_out`` with
    sum_i X_i' V_i^-1 r_i (``r`` being the centred responses the statistics were
    built from).  Returns ``inf`` when some ``V`` is not positive definite.
    """
    D, s2 = _unpack_theta(theta, q, ridge)
    p = Xg.shape[1]
    info_out[:, :] = 0.0
    score_out[:] = 0.0
    logdet = 0.0
    trace = 0.0
    n_obs = 0.0
    for P in range(masks.shape[0]):
        idx = np.flatnonzero(masks[P])
        mp = idx.size
        Xp = np.ascontiguousarray(Xg[idx])
        Zp = np.ascontiguousarray(Zg[idx])
        V = Zp @ D @ Zp.T
        for i in range(mp):
            V[i, i] += s2
        C, ok = _chol_lower(V)
        if not ok:
            return np.inf
        ld = 0.0
        for i in range(mp):
            ld += math.log(C[i, i])
        Ci = _tri_inverse(C)
        Vi = Ci.T @ Ci
        nP = counts[P]
        VX = Vi @ Xp
        info_out += nP * (Xp.T @ VX)
        sP = np.ascontiguousarray(sums[P][idx])
        score_out += VX.T @ sP
        SP = np.ascontiguousarray(cross[P][idx])
        SP = np.ascontiguousarray(SP[:, idx])
        trace += np.sum(Vi * SP)
        logdet += 2.0 * nP * ld
        n_obs += nP * mp
    delta = np.linalg.solve(info_out, score_out)
    quad = trace - np.dot(score_out, delta)
    return 0.5 * (n_obs * 1.8378770664093453 + logdet + quad)


def n_cholesky(q: int) -> int:
    return q * (q + 1) // 2


def theta_from_params(D: np.ndarray, sigma2: float, floor: float = 1e-10) -> np.ndarray:
    """Log-Cholesky coordinates of ``(D, sigma2)``; ``D`` is floored to be positive definite."""
    D = np.asarray(D, dtype=float)
    q = D.shape[0]
    w, U = np.linalg.eigh(0.5 * (D + D.T))
    w = np.maximum(w, floor * max(1.0, w.max(initial=0.0)))
    L = np.linalg.cholesky((U * w) @ U.T)
    theta = []
    for i in range(q):
        for j in range(i + 1):
            theta.append(math.log(L[i, j]) if i == j else L[i, j])
    theta.append(math.log(sigma2))
    return np.array(theta)


def params_from_theta(theta: np.ndarray, q: int, ridge: float = 0.0) -> tuple[np.ndarray, float]:
    D, s2 = _unpack_theta(np.asarray(theta, dtype=float), q, ridge)
    return 0.5 * (D + D.T), float(s2)


class GroupProblem:
    """Likelihood of one group's data, cached as per-pattern sufficient statistics."""

    def __init__(self, Y: np.ndarray, Xg: np.ndarray, Zg: np.ndarray):
        Y = np.asarray(Y, dtype=float)
        self.Y, self.Xg, self.Zg = Y, np.ascontiguousarray(Xg, float), np.ascontiguousarray(Zg, float)
        self.p, self.q = self.Xg.shape[1], self.Zg.shape[1]
        obs = ~np.isnan(Y)
        rows, cols = np.nonzero(obs)
        X_all = self.Xg[cols]
        y_all = Y[rows, cols]
        self.n_obs = y_all.size
        self.beta0, *_ = np.linalg.lstsq(X_all, y_all, rcond=None)
        R = np.where(obs, Y - self.Xg @ self.beta0, 0.0)
        self.R = R
        patterns, inverse = np.unique(obs, axis=0, return_inverse=True)
        inverse = np.asarray(inverse).ravel()
        self.pattern_of = inverse
        P, m = patterns.shape
        self.masks = np.ascontiguousarray(patterns)
        self.counts = np.bincount(inverse, minlength=P).astype(float)
        self.sums = np.zeros((P, m))
        np.add.at(self.sums, inverse, R)
        self.cross = np.einsum("ni,nj->nij", R, R)
        cross = np.zeros((P, m, m))
        np.add.at(cross, inverse, self.cross)
        self.cross = cross
        self._info = np.zeros((self.p, self.p))
        self._score = np.zeros(self.p)
        self.ridge = 0.0

    @property
    def n_theta(self) -> int:
        return n_cholesky(self.q) + 1

    def nll(self, theta: np.ndarray) -> float:
        return _profiled_nll(np.asarray(theta, dtype=float), self.q, self.masks, self.counts, self.sums,
                             self.cross, self.Xg, self.Zg, self.ridge, self._info, self._score)

    def solve(self, theta: np.ndarray) -> tuple[np.ndarray, np.ndarray, float]:
        """``(beta, info, nll)`` at the variance parameters ``theta``."""
        val = self.nll(theta)
        info = self._info.copy()
        beta = self.beta0 + np.linalg.solve(info, self._score)
        return beta, info, val

    def moment_start(self) -> tuple[np.ndarray, float]:
        """Per-subject OLS start: pooled residual variance and covariance of subject coefficients."""
        q = self.q
        obs = ~np.isnan(self.Y)
        coefs, rss, dof = [], 0.0, 0
        for i in range(self.Y.shape[0]):
            idx = np.flatnonzero(obs[i])
            if idx.size <= q:
                continue
            Zi = self.Zg[idx]
            ri = self.R[i, idx]
            c, *_ = np.linalg.lstsq(Zi, ri, rcond=None)
            if np.linalg.matrix_rank(Zi) < q:
                continue
            coefs.append(c)
            rss += float(np.sum((ri - Zi @ c) ** 2))
            dof += idx.size - q
        resid = self.R[obs]
        sigma2 = rss / dof if dof > 0 else float(np.var(resid))
        if not np.isfinite(sigma2) or sigma2 <= 0:
            sigma2 = max(float(np.var(resid)), 1e-6)
        if len(coefs) >= 2:
            D = np.atleast_2d(np.cov(np.array(coefs).T))
        else:
            D = np.eye(q) * 0.1 * sigma2
        w, U = np.linalg.eigh(D)
        floor = 1e-3 * max(float(np.mean(np.diag(D))), 1e-6 * sigma2, 1e-12)
        D = (U * np.maximum(w, floor)) @ U.T
        return D, sigma2

    def initial_step(self, theta: np.ndarray) -> np.ndarray:
        q = self.q
        step = np.empty_like(theta)
        k = 0
        diag = {}
        for i in range(q):
            for j in range(i + 1):
                if i == j:
                    step[k] = 0.3
                    diag[i] = math.exp(theta[k])
                k += 1
        k = 0
        for i in range(q):
            for j in range(i + 1):
                if i != j:
                    step[k] = 0.3 * max(abs(theta[k]), 0.3 * diag[i])
                k += 1
        step[-1] = 0.3
        return step

    def blups(self, beta: np.ndarray, D: np.ndarray, sigma2: float) -> np.ndarray:
        """Random-effect predictions ``D Z_i' V_i^-1 (y_i - X_i beta)`` for every row of ``Y``."""
        out = np.zeros((self.Y.shape[0], self.q))
        for P, mask in enumerate(self.masks):
            idx = np.flatnonzero(mask)
            rows = np.flatnonzero(self.pattern_of == P)
            Zp, Xp = self.Zg[idx], self.Xg[idx]
            V = Zp @ D @ Zp.T + sigma2 * np.eye(idx.size)
            resid = self.Y[np.ix_(rows, idx)] - Xp @ beta
            out[rows] = np.linalg.solve(V, resid.T).T @ Zp @ D
        return out


@dataclass(frozen=True)
class LmmFit:
    """Maximum-likelihood fit for one group."""

    label: Hashable
    beta: np.ndarray
    D: np.ndarray
    sigma2: float
    cov_beta: np.ndarray
    loglik: float
    converged: bool
    blups: dict
    grid: TimeGrid
    basis: Basis
    random_basis: Basis | None
    X_grid: np.ndarray
    Z_grid: np.ndarray
    n_subjects: int
    n_obs: int
    n_iter: int = 0
    n_eval: int = 0
    history: tuple = ()
    diagnostics: dict = field(default_factory=dict)

    @property
    def p(self) -> int:
        return self.beta.size

    @property
    def q(self) -> int:
        return self.D.shape[0]

    @property
    def n_params(self) -> int:
        """Fixed effects, distinct entries of ``D`` and the noise variance."""
        return self.p + n_cholesky(self.q) + 1

    @property
    def random_leading(self) -> bool:
        """True when the random-effect design is the leading columns of the fixed design."""
        return self.random_basis is None

    def individual_coefficients(self, subject_id) -> np.ndarray:
        """``beta + b_i`` in the fixed basis (random effects padded with zeros)."""
        if not self.random_leading:
            raise ValueError("individual coefficients need the random design to be the leading fixed columns")
        b = np.zeros(self.p)
        b[: self.q] = self.blups[subject_id]
        return self.beta + b


def _random_design(basis: Basis, grid: TimeGrid, random_dim: int | None,
                   random_basis: Basis | None) -> tuple[np.ndarray, np.ndarray]:
    Xg = basis.values(grid.as_array())
    if random_basis is not None:
        Zg = random_basis.values(grid.as_array())
    else:
        q = basis.dim if random_dim is None else int(random_dim)
        if not 1 <= q <= basis.dim:
            raise ValueError(f"random-effect dimension {q} must be between 1 and {basis.dim}")
        Zg = Xg[:, :q]
    return Xg, Zg


def _check_identifiable(Y: np.ndarray, Xg: np.ndarray, q: int, label) -> None:
    obs = ~np.isnan(Y)
    n_k = Y.shape[0]
    p = Xg.shape[1]
    if n_k < 2:
        raise DatasetError(f"group {label!r}: need at least 2 subjects, got {n_k}")
    n_params = p + n_cholesky(q) + 1
    if obs.sum() <= n_params:
        raise DatasetError(f"group {label!r}: {obs.sum()} observations cannot identify {n_params} parameters")
    used = obs.any(axis=0)
    if np.linalg.matrix_rank(Xg[used]) < p:
        raise DatasetError(f"group {label!r}: fixed-effect design is rank deficient on the observed times")


def fit_group(Y: np.ndarray, grid: TimeGrid, basis: Basis, *, label="group", ids=None,
              random_dim: int | None = None, random_basis: Basis | None = None,
              start: tuple[np.ndarray, float] | None = None, max_iter: int = 2000,
              ftol: float = 1e-9, restarts: int = 1, strict: bool = True) -> LmmFit:
    """Fit one group's ``(n_k, m)`` outcome matrix (``NaN`` = missing)."""
    Xg, Zg = _random_design(basis, grid, random_dim, random_basis)
    Y = np.asarray(Y, dtype=float)
    _check_identifiable(Y, Xg, Zg.shape[1], label)
    prob = GroupProblem(Y, Xg, Zg)
    diagnostics: dict = {"patterns": int(prob.masks.shape[0])}
    D0, s20 = start if start is not None else prob.moment_start()
    theta = theta_from_params(D0, s20)
    if not np.isfinite(prob.nll(theta)):
        prob.ridge = SINGULAR_RIDGE
        diagnostics["ridge"] = SINGULAR_RIDGE
    res = nelder_mead(prob.nll, theta, step=prob.initial_step(theta), ftol=ftol, max_iter=max_iter)
    n_iter, n_eval, history = res.n_iter, res.n_eval, list(res.history)
    converged = res.converged
    # a simplex stalled in a narrow valley (near-singular D) is restarted from its best point
    attempt = 0
    while attempt < restarts or (not converged and attempt < restarts + EXTRA_RESTARTS):
        attempt += 1
        again = nelder_mead(prob.nll, res.x, step=0.5 * prob.initial_step(res.x), ftol=ftol,
                            max_iter=max_iter)
        n_iter += again.n_iter
        n_eval += again.n_eval
        history.extend(min(h, history[-1]) for h in again.history)
        improved = again.fun < res.fun - 10 * ftol
        if again.fun <= res.fun:
            res = again
        converged = again.converged
        if converged and not improved:
            break
    beta, info, nll = prob.solve(res.x)
    D, sigma2 = params_from_theta(res.x, prob.q, prob.ridge)
    cov_beta = np.linalg.inv(info)
    cov_beta = 0.5 * (cov_beta + cov_beta.T)
    ids = tuple(range(Y.shape[0])) if ids is None else tuple(ids)
    b = prob.blups(beta, D, sigma2)
    diagnostics["theta"] = res.x.copy()
    fit = LmmFit(label=label, beta=beta, D=D, sigma2=sigma2, cov_beta=cov_beta, loglik=-nll,
                 converged=converged, blups={i: b[r] for r, i in enumerate(ids)}, grid=grid,
                 basis=basis, random_basis=random_basis, X_grid=Xg, Z_grid=Zg,
                 n_subjects=Y.shape[0], n_obs=prob.n_obs, n_iter=n_iter, n_eval=n_eval,
                 history=tuple(history), diagnostics=diagnostics)
    if strict and not converged:
        raise FitFailure(f"group {label!r}: simplex did not converge in {max_iter} iterations", fit)
    return fit


def fit_lmm(data: LongitudinalDataset, basis: Basis | BasisSpec, random_dim: int | None = None,
            **kwargs) -> dict:
    """Fit every group of ``data`` separately; returns ``{label: LmmFit}``."""
    if isinstance(basis, BasisSpec):
        basis = make_basis(basis)
    fits = {}
    for label in data.labels:
        mask = data.group_mask(label)
        ids = [i for i, k in zip(data.ids, mask) if k]
        fits[label] = fit_group(data.values[mask], data.grid, basis, label=label, ids=ids,
                                random_dim=random_dim, **kwargs)
    return fits


def loglik_joint(data: LongitudinalDataset, basis: Basis | BasisSpec, pooled: bool,
                 random_dim: int | None = None, **kwargs) -> float:
    """Maximised log-likelihood with one shared model (``pooled``) or one model per group."""
    if pooled:
        data = data.pooled()
    return float(sum(f.loglik for f in fit_lmm(data, basis, random_dim, **kwargs).values()))


def blup(fit: LmmFit, subject: SubjectRecord) -> np.ndarray:
    """Best linear unbiased predictor of ``subject``'s random effects under ``fit``."""
    idx = np.array([fit.grid.index(t) for t in subject.times], dtype=int)
    Xi, Zi = fit.X_grid[idx], fit.Z_grid[idx]
    V = Zi @ fit.D @ Zi.T + fit.sigma2 * np.eye(idx.size)
    return fit.D @ Zi.T @ np.linalg.solve(V, subject.values - Xi @ fit.beta)


def marginal_covariance(D: np.ndarray, sigma2: float, Z: np.ndarray) -> np.ndarray:
    """``Z D Z' + sigma2 I``."""
    Z = np.asarray(Z, dtype=float)
    return Z @ np.asarray(D, float) @ Z.T + sigma2 * np.eye(Z.shape[0])


def gls(Y: np.ndarray, Xg: np.ndarray, Zg: np.ndarray, D: np.ndarray, sigma2: float
        ) -> tuple[np.ndarray, np.ndarray, float]:
    """GLS fixed effects, their covariance and the log-likelihood at known ``(D, sigma2)``.

    A direct subject-by-subject computation, independent of the pattern kernel.
    """
    p = Xg.shape[1]
    info = np.zeros((p, p))
    score = np.zeros(p)
    rows = []
    for y in np.asarray(Y, dtype=float):
        idx = np.flatnonzero(~np.isnan(y))
        Xi = Xg[idx]
        V = marginal_covariance(D, sigma2, Zg[idx])
        Vi = np.linalg.inv(V)
        info += Xi.T @ Vi @ Xi
        score += Xi.T @ Vi @ y[idx]
        rows.append((idx, V))
    cov = np.linalg.inv(info)
    beta = cov @ score
    ll = 0.0
    for y, (idx, V) in zip(np.asarray(Y, dtype=float), rows):
        r = y[idx] - Xg[idx] @ beta
        _, logdet = np.linalg.slogdet(V)
        ll -= 0.5 * (idx.size * LOG_2PI + logdet + r @ np.linalg.solve(V, r))
    return beta, cov, ll
