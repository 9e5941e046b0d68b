"""Missingness mechanisms and multivariate-normal multiple imputation."""
from __future__ import annotations

from dataclasses import dataclass

import numba
import numpy as np
from scipy.stats import norm

from .data import LongitudinalDataset
from .simgen import IMPUTE, LATENT, MISSING, stream

# last-observation law on the 0..7 grid, indexed by t = 1..7
DEFAULT_DROPOUT_LAW = (0.0, 0.0, 0.05, 0.05, 0.1, 0.3, 0.5)
DEFAULT_MCAR_RATE = 0.15
DEFAULT_MNAR = {"latent_sd": 3.0, "cutoff": -1.15}
# same latent scale, cutoff chosen so that a cell is missing with probability 0.15
CALIBRATED_MNAR = {"latent_sd": 3.0, "cutoff": float(3.0 * norm.ppf(0.15))}


class EMConvergenceError(RuntimeError):
    def __init__(self, message: str, n_iter: int, last_change: float):
        super().__init__(message)
        self.n_iter = n_iter
        self.last_change = last_change


@dataclass(frozen=True)
class MissingnessSpec:
    """One of ``none``, ``mcar`` (rate), ``dropout`` (last-time law) or ``mnar`` (latent threshold).

    For ``mnar`` a latent ``z ~ N(0, latent_sd^2)`` is drawn per cell and
    non-baseline cells with ``z < cutoff`` are deleted.  ``perturb`` adds ``z`` to
    the emitted outcome values as well.
    """

    mechanism: str = "none"
    rate: float = 0.0
    law: tuple[float, ...] = ()
    latent_sd: float = 3.0
    cutoff: float = -1.15
    perturb: bool = False

    def __post_init__(self):
        if self.mechanism not in ("none", "mcar", "dropout", "mnar"):
            raise ValueError(f"unknown missingness mechanism {self.mechanism!r}")
        if self.mechanism == "mcar" and not 0.0 <= self.rate <= 1.0:
            raise ValueError("MCAR rate must lie in [0, 1]")
        if self.mechanism == "dropout":
            law = np.asarray(self.law, dtype=float)
            if law.size == 0 or np.any(law < 0) or abs(law.sum() - 1.0) > 1e-9:
                raise ValueError("dropout law must be non-negative and sum to one")
            object.__setattr__(self, "law", tuple(float(p) for p in law))
        if self.mechanism == "mnar" and not self.latent_sd > 0:
            raise ValueError("latent_sd must be positive")

    @classmethod
    def none(cls) -> "MissingnessSpec":
        return cls("none")

    @classmethod
    def mcar(cls, rate: float = DEFAULT_MCAR_RATE) -> "MissingnessSpec":
        return cls("mcar", rate=rate)

    @classmethod
    def dropout(cls, law=DEFAULT_DROPOUT_LAW) -> "MissingnessSpec":
        return cls("dropout", law=tuple(law))

    @classmethod
    def mnar(cls, latent_sd: float = 3.0, cutoff: float = -1.15, perturb: bool = False) -> "MissingnessSpec":
        return cls("mnar", latent_sd=latent_sd, cutoff=cutoff, perturb=perturb)

    @classmethod
    def from_config(cls, cfg: dict | str) -> "MissingnessSpec":
        """Parse e.g. ``{"mechanism": "dropout", "law": [...]}``; bare names use the default settings."""
        if isinstance(cfg, str):
            cfg = {"mechanism": cfg}
        cfg = dict(cfg)
        mech = cfg.pop("mechanism", "none")
        if mech == "none":
            return cls.none()
        if mech == "mcar":
            return cls.mcar(float(cfg.pop("rate", DEFAULT_MCAR_RATE)))
        if mech == "dropout":
            return cls.dropout(cfg.pop("law", DEFAULT_DROPOUT_LAW))
        if mech == "mnar":
            preset = cfg.pop("preset", "default")
            base = {"default": DEFAULT_MNAR, "calibrated": CALIBRATED_MNAR}.get(preset)
            if base is None:
                raise ValueError(f"unknown MNAR preset {preset!r}")
            return cls.mnar(float(cfg.pop("latent_sd", base["latent_sd"])),
                            float(cfg.pop("cutoff", base["cutoff"])), bool(cfg.pop("perturb", False)))
        raise ValueError(f"unknown missingness mechanism {mech!r}")

    def to_config(self) -> dict:
        if self.mechanism == "mcar":
            return {"mechanism": "mcar", "rate": self.rate}
        if self.mechanism == "dropout":
            return {"mechanism": "dropout", "law": list(self.law)}
        if self.mechanism == "mnar":
            return {"mechanism": "mnar", "latent_sd": self.latent_sd, "cutoff": self.cutoff,
                    "perturb": self.perturb}
        return {"mechanism": "none"}

    @property
    def tag(self) -> str:
        return self.mechanism


def apply_missingness(data: LongitudinalDataset, spec: MissingnessSpec, seed, *keys: int
                      ) -> LongitudinalDataset:
    """Delete cells of a complete dataset according to ``spec``; baseline is never deleted.

    Draws come from the stream ``(seed, *keys, MISSING)`` (plus ``LATENT`` for
    the MNAR latent variable).
    """
    if spec.mechanism == "none":
        return data
    Y = np.array(data.values, dtype=float)
    n, m = Y.shape
    rng = stream(seed, *keys, MISSING)
    if spec.mechanism == "mcar":
        drop = rng.random((n, m)) < spec.rate
    elif spec.mechanism == "dropout":
        law = np.asarray(spec.law, dtype=float)
        if law.size != m - 1:
            raise ValueError(f"dropout law has {law.size} entries, grid needs {m - 1}")
        last = 1 + rng.choice(m - 1, size=n, p=law)
        drop = np.arange(m)[None, :] > last[:, None]
    else:
        z = spec.latent_sd * stream(seed, *keys, LATENT).standard_normal((n, m))
        drop = z < spec.cutoff
        if spec.perturb:
            Y = Y + z
    drop[:, 0] = False
    Y[drop] = np.nan
    return data.with_values(Y)


# ---------------------------------------------------------------------------
# Multivariate-normal imputation
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ImputationConfig:
    M: int = 20
    max_em_iter: int = 5000
    em_tol: float = 1e-6

    def __post_init__(self):
        if self.M < 2:
            raise ValueError("need at least two imputations")


def _repair(S: np.ndarray, floor: float = 1e-8) -> np.ndarray:
    S = 0.5 * (S + S.T)
    w, U = np.linalg.eigh(S)
    return (U * np.maximum(w, floor)) @ U.T


def _pattern_blocks(obs: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Row order grouping identical missingness patterns, and the block start offsets."""
    order = np.lexsort(obs.T[::-1])
    sorted_obs = obs[order]
    change = np.any(sorted_obs[1:] != sorted_obs[:-1], axis=1)
    starts = np.concatenate([[0], np.flatnonzero(change) + 1, [obs.shape[0]]])
    return order, starts.astype(np.int64)


@numba.njit(cache=True)
def _pattern_factor(mask, S):
    """Regression of missing on observed coordinates: ``K = S_oo^-1 S_om`` and ``C = S_mm - S_mo K``."""
    o = np.flatnonzero(mask)
    mis = np.flatnonzero(~mask)
    Soo = np.empty((o.size, o.size))
    for a in range(o.size):
        for b in range(o.size):
            Soo[a, b] = S[o[a], o[b]]
    Som = np.empty((o.size, mis.size))
    for a in range(o.size):
        for b in range(mis.size):
            Som[a, b] = S[o[a], mis[b]]
    K = np.linalg.solve(Soo, Som)
    C = np.empty((mis.size, mis.size))
    for a in range(mis.size):
        for b in range(mis.size):
            acc = S[mis[a], mis[b]]
            for c in range(o.size):
                acc -= Som[c, a] * K[c, b]
            C[a, b] = acc
    return o, mis, K, C


@numba.njit(cache=True)
def _fill_row(y, mu, o, mis, K, full):
    for j in range(y.size):
        full[j] = y[j]
    for b in range(mis.size):
        acc = mu[mis[b]]
        for c in range(o.size):
            acc += (y[o[c]] - mu[o[c]]) * K[c, b]
        full[mis[b]] = acc


@numba.njit(cache=True)
def _estep(Y, obs, starts, mu, S):
    """Expected complete-data sums; rows of ``Y`` are grouped by pattern (see ``_pattern_blocks``)."""
    n, m = Y.shape
    sum_y = np.zeros(m)
    sum_yy = np.zeros((m, m))
    full = np.empty(m)
    for k in range(starts.size - 1):
        a0, a1 = starts[k], starts[k + 1]
        complete = obs[a0].all()
        if not complete:
            o, mis, K, C = _pattern_factor(obs[a0], S)
        for i in range(a0, a1):
            if complete:
                for j in range(m):
                    full[j] = Y[i, j]
            else:
                _fill_row(Y[i], mu, o, mis, K, full)
            for a in range(m):
                sum_y[a] += full[a]
                for b in range(m):
                    sum_yy[a, b] += full[a] * full[b]
        if not complete:
            for a in range(mis.size):
                for b in range(mis.size):
                    sum_yy[mis[a], mis[b]] += (a1 - a0) * C[a, b]
    return sum_y, sum_yy


@numba.njit(cache=True)
def _draw_rows(Y, obs, starts, mu, S, Z):
    """Replace missing cells by conditional-normal draws; ``Z`` holds standard normals row by row."""
    out = Y.copy()
    full = np.empty(Y.shape[1])
    for k in range(starts.size - 1):
        a0, a1 = starts[k], starts[k + 1]
        if obs[a0].all():
            continue
        o, mis, K, C = _pattern_factor(obs[a0], S)
        w, U = np.linalg.eigh(0.5 * (C + C.T))
        for b in range(w.size):
            w[b] = np.sqrt(max(w[b], 0.0))
        for i in range(a0, a1):
            _fill_row(Y[i], mu, o, mis, K, full)
            for a in range(mis.size):
                val = full[mis[a]]
                for b in range(mis.size):
                    val += U[a, b] * w[b] * Z[i, b]
                out[i, mis[a]] = val
    return out


def em_mvn(Y: np.ndarray, max_iter: int = 5000, tol: float = 1e-6,
           start: tuple[np.ndarray, np.ndarray] | None = None) -> tuple[np.ndarray, np.ndarray, int]:
    """Mean and covariance of an ``(n, m)`` normal sample with ``NaN`` holes, by EM.

    Stops when the largest parameter change, relative to ``1 + max |parameter|``,
    falls below ``tol``.
    """
    Y = np.asarray(Y, dtype=float)
    n, m = Y.shape
    obs = ~np.isnan(Y)
    if start is None:
        mu = np.nanmean(Y, axis=0)
        mu = np.where(np.isnan(mu), 0.0, mu)
        filled = np.where(obs, Y, mu)
        S = _repair(np.cov(filled.T, bias=True) if n > 1 else np.eye(m))
    else:
        mu, S = start[0].copy(), start[1].copy()
    order, starts = _pattern_blocks(obs)
    Ys, obs_s = np.ascontiguousarray(Y[order]), np.ascontiguousarray(obs[order])
    change = np.inf
    for it in range(1, max_iter + 1):
        sum_y, sum_yy = _estep(Ys, obs_s, starts, mu, S)
        mu_new = sum_y / n
        S_new = _repair(sum_yy / n - np.outer(mu_new, mu_new))
        scale = 1.0 + max(np.abs(mu_new).max(), np.abs(S_new).max())
        change = max(np.abs(mu_new - mu).max(), np.abs(S_new - S).max()) / scale
        mu, S = mu_new, S_new
        if change < tol:
            return mu, S, it
    raise EMConvergenceError(f"EM did not converge in {max_iter} iterations (last change {change:.3g})",
                             max_iter, float(change))


def _draw_conditional(Y: np.ndarray, mu: np.ndarray, S: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    Y = np.asarray(Y, dtype=float)
    Z = rng.standard_normal(Y.shape)
    obs = ~np.isnan(Y)
    order, starts = _pattern_blocks(obs)
    drawn = _draw_rows(np.ascontiguousarray(Y[order]), np.ascontiguousarray(obs[order]), starts, mu, S,
                       np.ascontiguousarray(Z[order]))
    out = np.empty_like(Y)
    out[order] = drawn
    return out


def impute_group(Y: np.ndarray, cfg: ImputationConfig, rng: np.random.Generator) -> list[np.ndarray]:
    """``cfg.M`` completed copies of one group's outcome matrix."""
    Y = np.asarray(Y, dtype=float)
    if not np.isnan(Y).any():
        return [Y.copy() for _ in range(cfg.M)]
    mu, S, _ = em_mvn(Y, cfg.max_em_iter, cfg.em_tol)
    n = Y.shape[0]
    out = []
    for _ in range(cfg.M):
        boot = Y[rng.integers(0, n, size=n)]
        if np.any(np.all(np.isnan(boot), axis=0)):
            boot = Y
        mu_b, S_b, _ = em_mvn(boot, cfg.max_em_iter, cfg.em_tol, start=(mu, S))
        out.append(_draw_conditional(Y, mu_b, S_b, rng))
    return out


def impute_mvn(data: LongitudinalDataset, cfg: ImputationConfig = ImputationConfig(), seed=0,
               *keys: int) -> list[LongitudinalDataset]:
    """Multiple imputation, separately per group, with bootstrap parameter refresh per draw.

    Observed cells are copied unchanged into every completed dataset.
    """
    if data.n_missing == 0:
        return [data for _ in range(cfg.M)]
    completed = [np.array(data.values, dtype=float) for _ in range(cfg.M)]
    for g, label in enumerate(data.labels):
        mask = data.group_mask(label)
        rng = stream(seed, *keys, IMPUTE, g)
        for j, filled in enumerate(impute_group(data.values[mask], cfg, rng)):
            completed[j][mask] = filled
    obs = data.observed
    for Y in completed:
        Y[obs] = data.values[obs]
    return [data.with_values(Y) for Y in completed]


__all__ = [
    "MissingnessSpec", "ImputationConfig", "apply_missingness", "impute_mvn", "impute_group", "em_mvn",
    "EMConvergenceError", "DEFAULT_DROPOUT_LAW", "DEFAULT_MCAR_RATE", "DEFAULT_MNAR", "CALIBRATED_MNAR",
]
