"""Simulated two-group longitudinal trials.

Quadratic scenarios draw ``y(t) = g(t)'(beta + b) + e`` with ``g = (1, t, t^2)``.
Non-quadratic scenarios use a closed-form mean curve plus the same quadratic
random-effect structure.  All randomness flows from counter-based (Philox)
streams keyed by ``(root seed, *keys)``, so any replicate can be regenerated on
its own.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .basisfn import BasisSpec, TimeGrid
from .data import LongitudinalDataset

RANDOM_EFFECT_COV = np.array([
    [8.0, 3.0, -0.4],
    [3.0, 1.5, -0.16],
    [-0.4, -0.16, 0.03],
])

QUADRATIC_BETAS = {
    1: np.array([20.0, -2.0, 0.2]),
    2: np.array([20.0, 1.2, -0.3]),
    3: np.array([20.0, -4.8, 0.6]),
}
QUADRATIC_BETAS[4] = QUADRATIC_BETAS[1]

SIGMAS = (0.5, 1.0, 1.5, 2.0, 2.5, 3.0)
DEFAULT_GRID = TimeGrid(tuple(float(t) for t in range(8)))


def _nq1(t):
    return 15.0 - 2.0 * np.sin(t - 1.0) * np.log(t + 0.5)


def _nq2(t):
    return 15.0 + 2.0 * np.cos(t) * np.log(t + 0.5)


def _nq3(t):
    return 15.22 - 0.3 * t + 2.0 * np.cos(t) * np.log(t + 0.5)


NONQUADRATIC_MEANS: dict[int, Callable] = {1: _nq1, 2: _nq2, 3: _nq3, 4: _nq1}


def quadratic_mean(group: int) -> Callable:
    beta = QUADRATIC_BETAS[group]
    return lambda t: beta[0] + beta[1] * np.asarray(t, float) + beta[2] * np.asarray(t, float) ** 2


# ---------------------------------------------------------------------------
# Random streams
# ---------------------------------------------------------------------------

def stream(seed, *keys: int) -> np.random.Generator:
    """Independent Philox generator for ``(seed, *keys)``."""
    if isinstance(seed, np.random.SeedSequence):
        ss = np.random.SeedSequence(seed.entropy, spawn_key=tuple(seed.spawn_key) + tuple(keys))
    else:
        ss = np.random.SeedSequence(int(seed), spawn_key=tuple(int(k) for k in keys))
    return np.random.Generator(np.random.Philox(ss))


# stream purposes
EFFECTS, NOISE, MISSING, IMPUTE, WEIGHTS, LATENT = range(6)


# ---------------------------------------------------------------------------
# Scenarios
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class TrajectoryScenario:
    """Two mean curves on the 0..7 grid with shared random-effect covariance.

    ``offsets`` shift each curve by a constant so that both groups start from
    the same baseline mean.
    """

    id: str
    family: str
    groups: tuple[int, int]
    D: np.ndarray = RANDOM_EFFECT_COV
    grid: TimeGrid = DEFAULT_GRID
    offsets: tuple[float, float] = (0.0, 0.0)

    def mean(self, which: int, t) -> np.ndarray:
        """Mean outcome of scenario group ``which`` (1 or 2) at times ``t``."""
        g = self.groups[which - 1]
        f = quadratic_mean(g) if self.family == "quadratic" else NONQUADRATIC_MEANS[g]
        return f(np.asarray(t, dtype=float)) + self.offsets[which - 1]

    def ats(self, which: int) -> float:
        mu = self.mean(which, [self.grid.start, self.grid.end])
        return float((mu[1] - mu[0]) / self.grid.span)

    def beta(self, which: int) -> np.ndarray:
        if self.family != "quadratic":
            raise ValueError("only quadratic scenarios have polynomial coefficients")
        return QUADRATIC_BETAS[self.groups[which - 1]].copy()

    @property
    def default_basis(self) -> BasisSpec:
        dom = (self.grid.start, self.grid.end)
        if self.family == "quadratic":
            return BasisSpec.polynomial(2, dom)
        return BasisSpec.bspline(dom)


def _aligned(family: str, g1: int, g2: int, align: bool) -> tuple[float, float]:
    if not align or family == "quadratic":
        return (0.0, 0.0)
    m1, m2 = NONQUADRATIC_MEANS[g1](0.0), NONQUADRATIC_MEANS[g2](0.0)
    return (0.0, float(m1 - m2))


SCENARIOS = {
    "Q1vQ2": ("quadratic", (1, 2)),
    "Q1vQ3": ("quadratic", (1, 3)),
    "Q1vQ1": ("quadratic", (1, 4)),
    "NQ1vNQ2": ("nonquadratic", (1, 2)),
    "NQ1vNQ3": ("nonquadratic", (1, 3)),
    "NQ1vNQ1": ("nonquadratic", (1, 4)),
}
SCENARIO_IDS = tuple(SCENARIOS)


def make_scenario(scenario_id: str, align_baseline: bool = True) -> TrajectoryScenario:
    """Look up one of ``SCENARIO_IDS`` (case-insensitive).

    With ``align_baseline`` the second non-quadratic curve is shifted by a
    constant so both groups share the baseline mean; shapes and ATS are unchanged.
    """
    canon = {k.lower(): k for k in SCENARIOS}
    key = canon.get(str(scenario_id).lower())
    if key is None:
        raise ValueError(f"unknown scenario id {scenario_id!r}; choose from {SCENARIO_IDS}")
    family, (g1, g2) = SCENARIOS[key]
    return TrajectoryScenario(id=key, family=family, groups=(g1, g2),
                              offsets=_aligned(family, g1, g2, align_baseline))


def scenario_mean(scenario: TrajectoryScenario | str, group: int, t) -> np.ndarray:
    if isinstance(scenario, str):
        scenario = make_scenario(scenario)
    t = np.asarray(t, dtype=float)
    if np.any((t < scenario.grid.start) | (t > scenario.grid.end)):
        raise ValueError(f"time outside [{scenario.grid.start}, {scenario.grid.end}]")
    return scenario.mean(group, t)


def check_psd(D: np.ndarray, tol: float = 1e-10) -> None:
    D = np.asarray(D, dtype=float)
    if not np.allclose(D, D.T) or np.linalg.eigvalsh(D).min() < -tol:
        raise ValueError("random-effect covariance must be symmetric positive semi-definite")


def _effects_factor(D: np.ndarray) -> np.ndarray:
    w, U = np.linalg.eigh(D)
    return U * np.sqrt(np.clip(w, 0.0, None))


def generate(scenario: TrajectoryScenario | str, sigma: float, n_per_group: int, seed,
             *, D: np.ndarray | None = None) -> LongitudinalDataset:
    """Complete two-group dataset; group labels are ``"1"`` and ``"2"``.

    Random effects and noise for group ``k`` are drawn from the streams
    ``(seed, k, EFFECTS)`` and ``(seed, k, NOISE)``; noise is drawn standardised
    and scaled, so datasets differing only in ``sigma`` share their draws.
    """
    if isinstance(scenario, str):
        scenario = make_scenario(scenario)
    if n_per_group < 1:
        raise ValueError("n_per_group must be at least 1")
    if sigma < 0:
        raise ValueError("sigma must be non-negative")
    D = scenario.D if D is None else np.asarray(D, dtype=float)
    check_psd(D)
    factor = _effects_factor(D)
    t = scenario.grid.as_array()
    gq = t[:, None] ** np.arange(3)
    blocks, ids, groups = [], [], []
    for k in (1, 2):
        z = stream(seed, k, EFFECTS).standard_normal((n_per_group, D.shape[0]))
        b = z @ factor.T
        e = stream(seed, k, NOISE).standard_normal((n_per_group, t.size))
        y = scenario.mean(k, t)[None, :] + b @ gq.T + sigma * e
        blocks.append(y)
        ids.extend(f"{k}-{i:04d}" for i in range(n_per_group))
        groups.extend([str(k)] * n_per_group)
    return LongitudinalDataset(scenario.grid, tuple(ids), tuple(groups), np.vstack(blocks), ("1", "2"))


def generate_arms(grid: TimeGrid, means: Sequence[Callable], D: np.ndarray, sigma: float,
                  n_per_group: int, seed, labels: Sequence[str] | None = None) -> LongitudinalDataset:
    """Complete data for arbitrary arms on an arbitrary grid, with quadratic random effects.

    Arm ``k`` (1-based) draws from the streams ``(seed, k, EFFECTS)`` and ``(seed, k, NOISE)``.
    """
    D = np.asarray(D, dtype=float)
    check_psd(D)
    labels = tuple(labels) if labels is not None else tuple(str(k + 1) for k in range(len(means)))
    if len(labels) != len(means):
        raise ValueError("one label per arm")
    factor = _effects_factor(D)
    t = grid.as_array()
    gq = t[:, None] ** np.arange(D.shape[0])
    blocks, ids, groups = [], [], []
    for k, (mu, lab) in enumerate(zip(means, labels), start=1):
        b = stream(seed, k, EFFECTS).standard_normal((n_per_group, D.shape[0])) @ factor.T
        e = stream(seed, k, NOISE).standard_normal((n_per_group, t.size))
        blocks.append(np.asarray(mu(t), dtype=float)[None, :] + b @ gq.T + sigma * e)
        ids.extend(f"{lab}-{i:04d}" for i in range(n_per_group))
        groups.extend([lab] * n_per_group)
    return LongitudinalDataset(grid, tuple(ids), tuple(groups), np.vstack(blocks), labels)


EMBARC_LIKE_GRID = TimeGrid((0.0, 1.0, 2.0, 3.0, 4.0, 6.0, 8.0))
EMBARC_LIKE_D = np.array([
    [9.0, -0.5, 0.0],
    [-0.5, 0.6, -0.04],
    [0.0, -0.04, 0.006],
])


def embarc_like_trial(n_per_arm: int = 100, seed=0, effect: float = 0.3, sigma: float = 2.5
                      ) -> LongitudinalDataset:
    """Synthetic two-arm depression-scale trial on weeks 0, 1, 2, 3, 4, 6, 8 (complete data).

    Arms ``"active"`` and ``"placebo"``; ``effect`` is the extra average weekly
    decline in the active arm.
    """
    def placebo(t):
        return 18.0 - 0.9 * t + 0.05 * t ** 2

    def active(t):
        return placebo(t) - effect * t

    return generate_arms(EMBARC_LIKE_GRID, (active, placebo), EMBARC_LIKE_D, sigma, n_per_arm, seed,
                         ("active", "placebo"))


def true_ats_difference(scenario: TrajectoryScenario | str) -> float:
    if isinstance(scenario, str):
        scenario = make_scenario(scenario)
    return scenario.ats(1) - scenario.ats(2)


def marginal_variance(scenario: TrajectoryScenario, sigma: float) -> np.ndarray:
    """Per-time outcome variance ``g(t)' D g(t) + sigma^2``."""
    t = scenario.grid.as_array()
    gq = t[:, None] ** np.arange(3)
    return np.einsum("ti,ij,tj->t", gq, scenario.D, gq) + sigma ** 2


__all__ = [
    "RANDOM_EFFECT_COV", "QUADRATIC_BETAS", "SIGMAS", "DEFAULT_GRID", "TrajectoryScenario",
    "make_scenario", "scenario_mean", "generate", "stream", "check_psd", "SCENARIO_IDS",
    "marginal_variance", "true_ats_difference", "generate_arms", "embarc_like_trial", "EMBARC_LIKE_GRID",
]
