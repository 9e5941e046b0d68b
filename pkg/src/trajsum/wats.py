"""Data-driven weight functions for the weighted average tangent slope (WATS).

A weight is parameterised as ``w(t) = c * (u(t)' v)^2`` with a spline basis
``u``; squaring keeps it non-negative and ``c`` makes it integrate to one.  The
coefficients ``v`` maximise the squared standardised distance between the two
groups' weighted slopes,

    (S_w' (beta_1 - beta_2))^2 / (S_w' (Cov_1 + Cov_2) S_w),

which in terms of ``v`` is the ratio of two quartic forms ``v'A(v)v / v'B(v)v``.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .basisfn import (Basis, BasisSpec, UniformWeight, make_basis, quadrature_rule, segment_points,
                      weighted_slope_integral)
from .data import SubjectRecord
from .inference import TestResult, z_test
from .lmm import LmmFit, blup
from .simgen import WEIGHTS, stream
from .simplex import nelder_mead


def default_weight_basis(domain=(0.0, 7.0), n_interior: int = 2) -> Basis:
    """Cubic B-spline with equally spaced interior knots (6 functions by default)."""
    lo, hi = float(domain[0]), float(domain[1])
    knots = [lo + (hi - lo) * (j + 1) / (n_interior + 1) for j in range(n_interior)]
    return make_basis(BasisSpec.bspline((lo, hi), knots))


def _quad(*bases: Basis):
    dom = bases[0].domain
    nodes, wq = quadrature_rule(segment_points(dom, *(b.breakpoints for b in bases)))
    return nodes, wq


def gram(u_basis: Basis) -> np.ndarray:
    """``Q = int u u' dt`` so that ``int (u'v)^2 = v'Qv``."""
    nodes, wq = _quad(u_basis)
    U = u_basis.values(nodes)
    return (U * wq[:, None]).T @ U


@dataclass(frozen=True)
class WeightModel:
    """``w(t) = norm_const * (u(t)' v)^2``."""

    u_basis: Basis
    v: np.ndarray
    norm_const: float
    objective: float = float("nan")
    uniform_objective: float = float("nan")
    fallback: bool = False

    def __call__(self, t) -> np.ndarray:
        return self.norm_const * (self.u_basis.values(np.ravel(t)) @ self.v) ** 2

    @property
    def breakpoints(self) -> tuple[float, ...]:
        return self.u_basis.breakpoints

    @property
    def normalized_v(self) -> np.ndarray:
        """Coefficients with the normalisation folded in (``w = (u'v)^2`` exactly)."""
        return np.sqrt(self.norm_const) * self.v

    def integral(self) -> float:
        nodes, wq = _quad(self.u_basis)
        return float(wq @ self(nodes))

    def curve(self, n: int = 201) -> tuple[np.ndarray, np.ndarray]:
        lo, hi = self.u_basis.domain
        t = np.linspace(lo, hi, n)
        return t, self(t)


def normalize(u_basis: Basis, v) -> WeightModel:
    v = np.asarray(v, dtype=float)
    mass = float(v @ gram(u_basis) @ v)
    if not mass > 0:
        raise ValueError("coefficient vector gives an identically zero weight")
    return WeightModel(u_basis, v, 1.0 / mass)


def uniform_coefficients(u_basis: Basis, tol: float = 1e-8) -> np.ndarray | None:
    """``v`` with ``u(t)'v = 1`` on the domain, or ``None`` if constants are not spanned."""
    lo, hi = u_basis.domain
    t = np.linspace(lo, hi, 101)
    U = u_basis.values(t)
    v, *_ = np.linalg.lstsq(U, np.ones_like(t), rcond=None)
    if np.abs(U @ v - 1.0).max() > tol:
        return None
    return v


def wats_value(weight, basis: Basis, beta) -> float:
    """``S_w' beta``: the weighted average of the fitted tangent slopes."""
    return float(weighted_slope_integral(basis, weight) @ np.asarray(beta, dtype=float))


@dataclass(frozen=True)
class WatsMatrices:
    M1: np.ndarray
    M2: np.ndarray
    H: np.ndarray
    A: np.ndarray
    B: np.ndarray


def build_wats_matrices(u_basis: Basis, basis: Basis, v, beta1, beta2, cov1, cov2) -> WatsMatrices:
    """Quadratic-form matrices with ``theta_k = v'M_k v = v'H beta_k``,
    ``(theta_1 - theta_2)^2 = v'Av`` and ``Var(theta_1 - theta_2) = v'Bv``."""
    v = np.asarray(v, dtype=float)
    nodes, wq = _quad(u_basis, basis)
    U = u_basis.values(nodes)
    Gp = basis.derivative(nodes)

    def M(beta):
        s = wq * (Gp @ np.asarray(beta, dtype=float))
        return (U * s[:, None]).T @ U

    M1, M2 = M(beta1), M(beta2)
    H = (U * (wq * (U @ v))[:, None]).T @ Gp
    dM = M1 - M2
    A = dM @ np.outer(v, v) @ dM.T
    B = H @ (np.asarray(cov1, float) + np.asarray(cov2, float)) @ H.T
    return WatsMatrices(M1, M2, H, A, 0.5 * (B + B.T))


class _Objective:
    """Fast evaluation of ``v'Av / v'Bv`` through ``S(v) = H(v)'v``."""

    def __init__(self, u_basis: Basis, basis: Basis, dbeta: np.ndarray, cov: np.ndarray):
        nodes, wq = _quad(u_basis, basis)
        self.U = u_basis.values(nodes)
        self.GW = basis.derivative(nodes) * wq[:, None]
        self.dbeta = dbeta
        self.cov = cov

    def slope_vector(self, v) -> np.ndarray:
        return self.GW.T @ (self.U @ v) ** 2

    def __call__(self, v) -> float:
        s = self.slope_vector(np.asarray(v, dtype=float))
        den = float(s @ self.cov @ s)
        num = float(s @ self.dbeta) ** 2
        if den <= 0:
            return 0.0 if num == 0 else np.inf
        return num / den


def weight_objective(u_basis: Basis, basis: Basis, v, beta1, beta2, cov1, cov2) -> float:
    obj = _Objective(u_basis, basis, np.asarray(beta1, float) - np.asarray(beta2, float),
                     np.asarray(cov1, float) + np.asarray(cov2, float))
    return obj(v)


def optimize_weight(fit1: LmmFit, fit2: LmmFit, u_basis: Basis | None = None, seed=0,
                    n_starts: int = 10, max_iter: int = 5000, ftol: float = 1e-10) -> WeightModel:
    """Nelder-Mead multi-start maximisation of the standardised squared distance.

    Starts: the uniform-equivalent coefficients (when the weight basis spans
    constants) followed by ``n_starts`` random unit vectors.  The best objective
    wins; near-ties go to the smaller normalised coefficient vector.  If nothing
    beats the uniform weight, the uniform weight is returned with ``fallback=True``.
    """
    basis = fit1.basis
    if u_basis is None:
        u_basis = default_weight_basis(basis.domain)
    obj = _Objective(u_basis, basis, fit1.beta - fit2.beta, fit1.cov_beta + fit2.cov_beta)
    v_uni = uniform_coefficients(u_basis)
    G = weighted_slope_integral(basis, UniformWeight(basis.domain))
    den = float(G @ obj.cov @ G)
    uni_obj = float((G @ obj.dbeta) ** 2 / den) if den > 0 else 0.0

    rng = stream(seed, WEIGHTS)
    starts = [] if v_uni is None else [v_uni / np.linalg.norm(v_uni)]
    for _ in range(n_starts):
        z = rng.standard_normal(u_basis.dim)
        starts.append(z / np.linalg.norm(z))

    Q = gram(u_basis)
    best = None
    for x0 in starts:
        res = nelder_mead(lambda v: -obj(v), x0, step=0.25, ftol=ftol, max_iter=max_iter)
        val = -res.fun
        if not np.isfinite(val):
            continue
        mass = float(res.x @ Q @ res.x)
        if mass <= 0:
            continue
        size = float(np.linalg.norm(res.x) / np.sqrt(mass))
        if best is None or val > best[0] * (1 + 1e-9) or (
                val >= best[0] * (1 - 1e-9) and size < best[2]):
            best = (val, res.x, size)

    if best is None or best[0] <= uni_obj * (1 + 1e-12):
        if v_uni is None:
            raise RuntimeError("optimisation failed and the weight basis cannot represent a uniform weight")
        w = normalize(u_basis, v_uni)
        return WeightModel(u_basis, w.v, w.norm_const, uni_obj, uni_obj, fallback=True)
    w = normalize(u_basis, best[1])
    return WeightModel(u_basis, w.v, w.norm_const, best[0], uni_obj, fallback=False)


def individual_wats(weight, fit: LmmFit, subject) -> float:
    """Subject-level WATS ``S_w'(beta + b_i)`` using the BLUP of the subject's random effects.

    ``subject`` is either an id known to ``fit`` or a :class:`SubjectRecord`.
    """
    b = blup(fit, subject) if isinstance(subject, SubjectRecord) else fit.blups[subject]
    s_fixed = weighted_slope_integral(fit.basis, weight)
    if fit.random_basis is None:
        s_random = s_fixed[: fit.q]
    else:
        s_random = weighted_slope_integral(fit.random_basis, weight)
    return float(s_fixed @ fit.beta + s_random @ b)


def weighted_mc_test(weight, fit1: LmmFit, fit2: LmmFit, alternative: str = "less") -> TestResult:
    """Wald test of equal weighted slopes (no adjustment for an estimated weight)."""
    s = weighted_slope_integral(fit1.basis, weight)
    diff = float(s @ (fit1.beta - fit2.beta))
    var = float(s @ (fit1.cov_beta + fit2.cov_beta) @ s)
    return z_test(diff, var, "weighted_wald", alternative)
