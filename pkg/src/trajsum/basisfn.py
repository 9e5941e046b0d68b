"""Basis systems for mean trajectories and weight functions.

Two families are supported: raw monomials ``(1, t, ..., t^(p-1))`` and cubic
B-splines with user-placed interior knots.  Every basis answers three queries:
values, first derivatives and definite integrals of each basis function.
Weighted integrals are computed with composite Gauss-Legendre quadrature whose
segments follow the knots of all functions involved, so piecewise-polynomial
integrands are integrated exactly.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache
from typing import Callable, Iterable, Sequence

import numpy as np
from scipy.interpolate import BSpline

QUAD_NODES = 32
DOMAIN_TOL = 1e-9


class InvalidBasisSpec(ValueError):
    """Raised when a basis or grid specification violates its invariants."""


class DomainError(ValueError):
    """Raised when a basis is evaluated outside its domain."""


@dataclass(frozen=True)
class TimeGrid:
    """Common design times shared by all subjects; ``points[0]`` is baseline."""

    points: tuple[float, ...]

    def __post_init__(self):
        pts = tuple(float(p) for p in self.points)
        if len(pts) < 2:
            raise InvalidBasisSpec("a time grid needs at least two points")
        if not all(np.isfinite(pts)):
            raise InvalidBasisSpec("time grid points must be finite")
        if any(b <= a for a, b in zip(pts, pts[1:])):
            raise InvalidBasisSpec(f"time grid must be strictly increasing: {pts}")
        object.__setattr__(self, "points", pts)

    @property
    def m(self) -> int:
        return len(self.points)

    @property
    def start(self) -> float:
        return self.points[0]

    @property
    def end(self) -> float:
        return self.points[-1]

    @property
    def span(self) -> float:
        return self.points[-1] - self.points[0]

    def as_array(self) -> np.ndarray:
        return np.asarray(self.points, dtype=float)

    def index(self, t: float) -> int:
        """Position of design time ``t`` on the grid."""
        for j, p in enumerate(self.points):
            if abs(p - t) <= DOMAIN_TOL * max(1.0, abs(p)):
                return j
        raise DomainError(f"time {t} is not on the design grid {self.points}")

    @classmethod
    def regular(cls, start: float, stop: float, step: float = 1.0) -> "TimeGrid":
        n = int(round((stop - start) / step)) + 1
        return cls(tuple(start + step * j for j in range(n)))


@dataclass(frozen=True)
class BasisSpec:
    """Declarative description of a basis.

    ``kind`` is ``"polynomial"`` (raw monomials up to ``degree``) or
    ``"bspline"`` (cubic unless ``degree`` says otherwise).  For B-splines
    ``knots`` lists interior knots; ``None`` means one knot at the midpoint.
    """

    kind: str
    domain: tuple[float, float]
    degree: int = 2
    knots: tuple[float, ...] | None = None

    def __post_init__(self):
        object.__setattr__(self, "domain", (float(self.domain[0]), float(self.domain[1])))
        if self.knots is not None:
            object.__setattr__(self, "knots", tuple(float(k) for k in self.knots))

    @property
    def dim(self) -> int:
        if self.kind == "polynomial":
            return self.degree + 1
        return self.degree + 1 + len(self.interior_knots)

    @property
    def interior_knots(self) -> tuple[float, ...]:
        if self.kind != "bspline":
            return ()
        if self.knots is None:
            return (0.5 * (self.domain[0] + self.domain[1]),)
        return self.knots

    @classmethod
    def polynomial(cls, degree: int, domain: Sequence[float]) -> "BasisSpec":
        return cls("polynomial", tuple(domain), degree=degree)

    @classmethod
    def bspline(cls, domain: Sequence[float], knots: Sequence[float] | None = None,
                degree: int = 3) -> "BasisSpec":
        return cls("bspline", tuple(domain), degree=degree,
                   knots=None if knots is None else tuple(knots))

    @classmethod
    def from_config(cls, cfg: dict, domain: Sequence[float]) -> "BasisSpec":
        """Parse ``{"kind": "polynomial", "degree": 2}`` or ``{"kind": "bspline", "knots": [3.5]}``."""
        kind = cfg.get("kind")
        if kind == "polynomial":
            return cls.polynomial(int(cfg.get("degree", 2)), domain)
        if kind == "bspline":
            knots = cfg.get("knots")
            return cls.bspline(domain, knots, degree=int(cfg.get("degree", 3)))
        raise InvalidBasisSpec(f"unknown basis kind {kind!r}")

    def to_config(self) -> dict:
        if self.kind == "polynomial":
            return {"kind": "polynomial", "degree": self.degree}
        return {"kind": "bspline", "knots": list(self.interior_knots), "degree": self.degree}


class Basis:
    """Evaluable basis ``g(t) = (g_1(t), ..., g_p(t))`` on a closed interval."""

    spec: BasisSpec

    @property
    def dim(self) -> int:
        return self.spec.dim

    @property
    def domain(self) -> tuple[float, float]:
        return self.spec.domain

    @property
    def breakpoints(self) -> tuple[float, ...]:
        """Points where the basis functions may lose smoothness (domain ends included)."""
        lo, hi = self.domain
        return (lo, *self.spec.interior_knots, hi)

    def _check(self, t) -> np.ndarray:
        t = np.atleast_1d(np.asarray(t, dtype=float))
        lo, hi = self.domain
        tol = DOMAIN_TOL * max(1.0, abs(lo), abs(hi))
        bad = (t < lo - tol) | (t > hi + tol) | ~np.isfinite(t)
        if np.any(bad):
            raise DomainError(f"times {t[bad][:5]} fall outside the domain [{lo}, {hi}]")
        return np.clip(t, lo, hi)

    def values(self, t) -> np.ndarray:
        raise NotImplementedError

    def derivative(self, t) -> np.ndarray:
        raise NotImplementedError

    def integral(self, a: float | None = None, b: float | None = None) -> np.ndarray:
        raise NotImplementedError

    def __call__(self, t) -> np.ndarray:
        return self.values(t)

    def __repr__(self) -> str:
        return f"{type(self).__name__}({self.spec})"


class PolynomialBasis(Basis):
    def __init__(self, spec: BasisSpec):
        self.spec = spec
        self._powers = np.arange(spec.dim)

    def values(self, t) -> np.ndarray:
        t = self._check(t)
        return t[:, None] ** self._powers

    def derivative(self, t) -> np.ndarray:
        t = self._check(t)
        out = np.zeros((t.size, self.dim))
        if self.dim > 1:
            out[:, 1:] = self._powers[1:] * t[:, None] ** (self._powers[1:] - 1)
        return out

    def integral(self, a=None, b=None) -> np.ndarray:
        lo, hi = self.domain
        a = lo if a is None else float(self._check(a)[0])
        b = hi if b is None else float(self._check(b)[0])
        k = self._powers + 1
        return (b ** k - a ** k) / k


class BSplineBasis(Basis):
    """Clamped B-spline basis (scipy's ``BSpline`` carrying an identity coefficient matrix)."""

    def __init__(self, spec: BasisSpec):
        self.spec = spec
        lo, hi = spec.domain
        k = spec.degree
        knots = np.r_[[lo] * (k + 1), spec.interior_knots, [hi] * (k + 1)]
        self.knot_vector = knots
        self._spline = BSpline(knots, np.eye(spec.dim), k, extrapolate=True)
        self._deriv = self._spline.derivative()
        self._anti = self._spline.antiderivative()

    def values(self, t) -> np.ndarray:
        return self._spline(self._check(t))

    def derivative(self, t) -> np.ndarray:
        return self._deriv(self._check(t))

    def integral(self, a=None, b=None) -> np.ndarray:
        lo, hi = self.domain
        a = lo if a is None else float(self._check(a)[0])
        b = hi if b is None else float(self._check(b)[0])
        return self._anti(b) - self._anti(a)


def make_basis(spec: BasisSpec) -> Basis:
    """Build an evaluable basis from ``spec`` after validating it."""
    lo, hi = spec.domain
    if not (np.isfinite(lo) and np.isfinite(hi)) or hi <= lo:
        raise InvalidBasisSpec(f"invalid domain {spec.domain}")
    if spec.kind == "polynomial":
        if spec.degree < 0:
            raise InvalidBasisSpec("polynomial degree must be non-negative")
        return PolynomialBasis(spec)
    if spec.kind == "bspline":
        if spec.degree < 1:
            raise InvalidBasisSpec("B-spline degree must be at least 1")
        knots = spec.interior_knots
        if any(not (lo < k < hi) for k in knots):
            raise InvalidBasisSpec(f"interior knots {knots} must lie strictly inside ({lo}, {hi})")
        if any(b <= a for a, b in zip(knots, knots[1:])):
            raise InvalidBasisSpec("interior knots must be strictly increasing")
        return BSplineBasis(spec)
    raise InvalidBasisSpec(f"unknown basis kind {spec.kind!r}")


def eval_design(basis: Basis, times: Iterable[float]) -> np.ndarray:
    """Design matrix with row ``i`` equal to ``g(times[i])``."""
    times = np.asarray(list(times) if not isinstance(times, np.ndarray) else times, dtype=float)
    if times.size == 0:
        return np.zeros((0, basis.dim))
    return basis.values(times.ravel())


@lru_cache(maxsize=None)
def _leggauss(n: int) -> tuple[np.ndarray, np.ndarray]:
    return np.polynomial.legendre.leggauss(n)


def quadrature_rule(breakpoints: Iterable[float], n_nodes: int = QUAD_NODES) -> tuple[np.ndarray, np.ndarray]:
    """Composite Gauss-Legendre nodes and weights, ``n_nodes`` per segment."""
    pts = np.unique(np.asarray(list(breakpoints), dtype=float))
    if pts.size < 2:
        raise InvalidBasisSpec("quadrature needs an interval with two distinct end points")
    x, w = _leggauss(n_nodes)
    a, b = pts[:-1, None], pts[1:, None]
    nodes = 0.5 * (b - a) * x + 0.5 * (b + a)
    weights = 0.5 * (b - a) * w
    return nodes.ravel(), weights.ravel()


def segment_points(domain: Sequence[float], *breaks: Iterable[float]) -> np.ndarray:
    """Union of break points restricted to ``domain`` (end points always included)."""
    lo, hi = float(domain[0]), float(domain[1])
    pts = [lo, hi]
    for group in breaks:
        pts.extend(float(p) for p in group if lo < p < hi)
    return np.unique(pts)


@dataclass(frozen=True)
class UniformWeight:
    """The weight ``1/(b - a)`` on ``[a, b]``."""

    domain: tuple[float, float]
    breakpoints: tuple[float, ...] = field(default=())

    def __call__(self, t) -> np.ndarray:
        t = np.asarray(t, dtype=float)
        return np.full(t.shape, 1.0 / (self.domain[1] - self.domain[0]))


WeightFn = Callable[[np.ndarray], np.ndarray]


def weighted_slope_integral(basis: Basis, weight: WeightFn, n_nodes: int = QUAD_NODES) -> np.ndarray:
    """``S_w``: the vector of integrals of ``w(t) g_j'(t)`` over the basis domain.

    ``weight`` is any vectorised callable; if it exposes ``breakpoints`` they are
    added to the quadrature segmentation.
    """
    pts = segment_points(basis.domain, basis.breakpoints, getattr(weight, "breakpoints", ()))
    nodes, wq = quadrature_rule(pts, n_nodes)
    w = np.asarray(weight(nodes), dtype=float)
    if np.any(w < -1e-12):
        raise ValueError("weight function must be non-negative on the domain")
    return basis.derivative(nodes).T @ (w * wq)


def endpoint_slope_vector(basis: Basis, grid: TimeGrid) -> np.ndarray:
    """``G = (g(t_m) - g(t_1)) / (t_m - t_1)``, so that ``G @ beta`` is the average tangent slope."""
    g = basis.values([grid.start, grid.end])
    return (g[1] - g[0]) / grid.span
