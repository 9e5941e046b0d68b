"""Derivative-free Nelder-Mead minimisation.

Used by the mixed-model fitter (variance parameters) and by the weight-function
search.  Convergence is declared when the spread of objective values across the
simplex drops below ``ftol``.  The best objective value after every iteration
is kept in ``history``; it is non-increasing by construction.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np


@dataclass
class SimplexResult:
    x: np.ndarray
    fun: float
    n_iter: int
    n_eval: int
    converged: bool
    history: list[float] = field(default_factory=list)


def initial_simplex(x0: np.ndarray, step) -> np.ndarray:
    x0 = np.asarray(x0, dtype=float)
    n = x0.size
    step = np.broadcast_to(np.asarray(step, dtype=float), (n,))
    sim = np.tile(x0, (n + 1, 1))
    sim[1:] += np.diag(step)
    return sim


def nelder_mead(
    fun: Callable[[np.ndarray], float],
    x0,
    step=0.2,
    ftol: float = 1e-9,
    max_iter: int = 2000,
    adaptive: bool = False,
    simplex: np.ndarray | None = None,
) -> SimplexResult:
    """Minimise ``fun`` starting from ``x0``.

    ``step`` sets the edge lengths of the axis-aligned starting simplex (scalar
    or per coordinate).  Non-finite objective values are treated as ``+inf`` so
    the simplex walks away from them.
    """
    x0 = np.asarray(x0, dtype=float).ravel()
    n = x0.size
    if adaptive and n > 1:
        rho, chi, psi, sigma = 1.0, 1.0 + 2.0 / n, 0.75 - 1.0 / (2 * n), 1.0 - 1.0 / n
    else:
        rho, chi, psi, sigma = 1.0, 2.0, 0.5, 0.5

    n_eval = 0

    def f(x):
        nonlocal n_eval
        n_eval += 1
        val = fun(x)
        return float(val) if np.isfinite(val) else np.inf

    sim = initial_simplex(x0, step) if simplex is None else np.array(simplex, dtype=float)
    fsim = np.array([f(x) for x in sim])
    order = np.argsort(fsim, kind="stable")
    sim, fsim = sim[order], fsim[order]
    history = [fsim[0]]

    converged = False
    it = 0
    while it < max_iter:
        if np.isfinite(fsim[-1]) and fsim[-1] - fsim[0] < ftol:
            converged = True
            break
        it += 1
        centroid = sim[:-1].mean(axis=0)
        xr = centroid + rho * (centroid - sim[-1])
        fr = f(xr)
        shrink = False
        if fr < fsim[0]:
            xe = centroid + rho * chi * (centroid - sim[-1])
            fe = f(xe)
            if fe < fr:
                sim[-1], fsim[-1] = xe, fe
            else:
                sim[-1], fsim[-1] = xr, fr
        elif fr < fsim[-2]:
            sim[-1], fsim[-1] = xr, fr
        elif fr < fsim[-1]:
            xc = centroid + psi * rho * (centroid - sim[-1])
            fc = f(xc)
            if fc <= fr:
                sim[-1], fsim[-1] = xc, fc
            else:
                shrink = True
        else:
            xcc = centroid - psi * (centroid - sim[-1])
            fcc = f(xcc)
            if fcc < fsim[-1]:
                sim[-1], fsim[-1] = xcc, fcc
            else:
                shrink = True
        if shrink:
            sim[1:] = sim[0] + sigma * (sim[1:] - sim[0])
            fsim[1:] = [f(x) for x in sim[1:]]
        order = np.argsort(fsim, kind="stable")
        sim, fsim = sim[order], fsim[order]
        history.append(fsim[0])

    if not converged and np.isfinite(fsim[-1]) and fsim[-1] - fsim[0] < ftol:
        converged = True
    return SimplexResult(sim[0].copy(), float(fsim[0]), it, n_eval, converged, history)
