"""Monte-Carlo replication of simulation cells and aggregation into rejection tables.

Replicate ``r`` of every cell draws from the seed ``SeedSequence(seed,
spawn_key=(r,))``.  Cells that differ only in noise level, missingness or
handling therefore reuse the same random effects and standardised noise
(common random numbers), which keeps comparisons across cells sharp.  Results
are keyed by replicate index and merged in sorted order, so the output does not
depend on scheduling.
"""
from __future__ import annotations

import logging
import math
import platform
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ..basisfn import BasisSpec, endpoint_slope_vector, make_basis
from ..data import DatasetError, LongitudinalDataset
from ..inference import DegenerateTestError, ancova_test, rubin_pool, two_sample_t, wald_mc_test
from ..lmm import FitFailure, fit_lmm
from ..missing import EMConvergenceError, ImputationConfig, apply_missingness, impute_mvn
from ..simgen import generate, make_scenario
from ..summaries import ancova, change_score, mean_change, straight_line_slope
from ..wats import default_weight_basis, optimize_weight, weighted_mc_test
from .config import ScenarioSpec, SweepConfig
from .io import write_json, write_power_panels, write_results

log = logging.getLogger(__name__)

FAILURES = (FitFailure, DatasetError, DegenerateTestError, EMConvergenceError, np.linalg.LinAlgError)
FLAG_FAILURE_RATE = 0.02


def replicate_seed(spec: ScenarioSpec, rep: int) -> np.random.SeedSequence:
    return np.random.SeedSequence(spec.seed, spawn_key=(rep,))


def _random_design(basis_spec: BasisSpec) -> dict:
    """Quadratic models carry a full random-effect vector; spline models get random (1, t, t^2)."""
    if basis_spec.kind == "polynomial":
        return {}
    return {"random_basis": make_basis(BasisSpec.polynomial(2, basis_spec.domain))}


def _mc_decision(data: LongitudinalDataset, spec: ScenarioSpec) -> tuple[float, dict]:
    basis = make_basis(spec.basis_spec)
    fits = fit_lmm(data, basis, **_random_design(spec.basis_spec))
    G = endpoint_slope_vector(basis, data.grid)
    f1, f2 = (fits[lab] for lab in data.labels)
    return wald_mc_test(mean_change(f1, G), mean_change(f2, G)).p_two_sided, fits


def _cs_pair(data):
    a, b = (change_score(data, lab) for lab in data.labels)
    return a, b


def _slope_pair(data):
    return tuple(straight_line_slope(data, lab) for lab in data.labels)


def _cra_p(est: str, data: LongitudinalDataset) -> float:
    if est == "CS":
        return two_sample_t(*_cs_pair(data)).p_two_sided
    if est == "SLOPE":
        return two_sample_t(*_slope_pair(data)).p_two_sided
    if est == "ANCOVA":
        return ancova_test(ancova(data)).p_two_sided
    raise ValueError(est)


def _mi_p(est: str, completed: list[LongitudinalDataset]) -> float:
    pairs = []
    for d in completed:
        if est == "CS":
            a, b = _cs_pair(d)
            pairs.append((a.value - b.value, a.variance + b.variance))
        elif est == "SLOPE":
            a, b = _slope_pair(d)
            pairs.append((a.value - b.value, a.variance + b.variance))
        elif est == "ANCOVA":
            fit = ancova(d)
            pairs.append((fit.alpha2, fit.se2))
        else:
            raise ValueError(est)
    return rubin_pool(pairs).test().p_two_sided


def run_replicate(spec: ScenarioSpec, rep: int) -> dict[str, float | None]:
    """Two-sided p-value per estimator for one replicate (``None`` marks a failure)."""
    ss = replicate_seed(spec, rep)
    data = generate(make_scenario(spec.scenario), spec.sigma, spec.n_per_group, ss)
    data = apply_missingness(data, spec.missingness, ss)
    out: dict[str, float | None] = {}
    if "MC" in spec.estimators or "WATS" in spec.estimators:
        try:
            p_mc, fits = _mc_decision(data, spec)
        except FAILURES as exc:
            log.debug("rep %d mixed-model fit failed: %s", rep, exc)
            p_mc, fits = None, None
        if "MC" in spec.estimators:
            out["MC"] = p_mc
        if "WATS" in spec.estimators:
            out["WATS"] = None
            if fits is not None:
                f1, f2 = (fits[lab] for lab in data.labels)
                wb = spec.weight_basis_spec
                ub = make_basis(wb) if wb is not None else default_weight_basis(f1.basis.domain)
                try:
                    w = optimize_weight(f1, f2, ub, seed=ss)
                    out["WATS"] = weighted_mc_test(w, f1, f2).p_two_sided
                except (*FAILURES, RuntimeError) as exc:
                    log.debug("rep %d weight optimisation failed: %s", rep, exc)
    others = [e for e in spec.estimators if e in ("CS", "SLOPE", "ANCOVA")]
    completed = None
    for est in others:
        try:
            if spec.handling == "MI" and data.n_missing > 0:
                if completed is None:
                    completed = impute_mvn(data, ImputationConfig(M=spec.imputations), ss)
                out[est] = _mi_p(est, completed)
            else:
                out[est] = _cra_p(est, data)
        except FAILURES as exc:
            log.debug("rep %d %s failed: %s", rep, est, exc)
            out[est] = None
    return out


def _run_chunk(args) -> dict[int, dict]:
    spec, reps = args
    return {r: run_replicate(spec, r) for r in reps}


@dataclass(frozen=True)
class RejectionRow:
    scenario: str
    sigma: float
    n_per_group: int
    missingness: str
    handling: str
    estimator: str
    alpha: float
    reps: int
    completed: int
    failures: int
    rejections: int

    @property
    def rate(self) -> float:
        return self.rejections / self.completed if self.completed else math.nan

    @property
    def se(self) -> float:
        if not self.completed:
            return math.nan
        r = self.rate
        return math.sqrt(r * (1.0 - r) / self.completed)

    @property
    def flagged(self) -> bool:
        return self.failures > FLAG_FAILURE_RATE * self.reps

    def as_dict(self) -> dict:
        return {
            "scenario": self.scenario, "sigma": self.sigma, "n_per_group": self.n_per_group,
            "missingness": self.missingness, "handling": self.handling, "estimator": self.estimator,
            "alpha": self.alpha, "reps": self.reps, "completed": self.completed,
            "failures": self.failures, "rejections": self.rejections, "rate": self.rate,
            "se": self.se, "flagged": self.flagged,
        }


def aggregate(spec: ScenarioSpec, outcomes: dict[int, dict]) -> list[RejectionRow]:
    rows = []
    for est in spec.estimators:
        done = fails = rej = 0
        for r in sorted(outcomes):
            p = outcomes[r].get(est)
            if p is None:
                fails += 1
            else:
                done += 1
                rej += p < spec.alpha
        rows.append(RejectionRow(spec.scenario, spec.sigma, spec.n_per_group, spec.missingness.tag,
                                 spec.handling, est, spec.alpha, len(outcomes), done, fails, rej))
    return rows


def run_cell(spec: ScenarioSpec, threads: int = 1, return_outcomes: bool = False):
    """Replicate one cell ``spec.reps`` times and summarise rejection rates per estimator."""
    reps = list(range(spec.reps))
    if threads > 1 and spec.reps > 1:
        chunks = [reps[i::threads] for i in range(threads)]
        outcomes: dict[int, dict] = {}
        with ProcessPoolExecutor(max_workers=threads) as pool:
            for part in pool.map(_run_chunk, [(spec, c) for c in chunks if c]):
                outcomes.update(part)
    else:
        outcomes = _run_chunk((spec, reps))
    rows = aggregate(spec, outcomes)
    return (rows, outcomes) if return_outcomes else rows


def _chunks(n: int, size: int) -> list[list[int]]:
    return [list(range(i, min(i + size, n))) for i in range(0, n, size)]


def run_sweep(config: SweepConfig, out_dir: str | Path | None = None, threads: int = 1,
              chunk_size: int = 25) -> list[RejectionRow]:
    """Run every cell of ``config``; optionally write ``results.csv``, ``power_panels.csv``
    and ``manifest.json`` into ``out_dir``."""
    t0 = time.perf_counter()
    cells = config.cells
    work = [(i, c) for i, spec in enumerate(cells) for c in _chunks(spec.reps, chunk_size)]
    outcomes: dict[int, dict[int, dict]] = {i: {} for i in range(len(cells))}
    if threads > 1 and len(work) > 1:
        with ProcessPoolExecutor(max_workers=threads) as pool:
            parts = pool.map(_run_chunk, [(cells[i], c) for i, c in work])
            for (i, _), part in zip(work, parts):
                outcomes[i].update(part)
    else:
        for i, c in work:
            outcomes[i].update(_run_chunk((cells[i], c)))
    rows = [r for i, spec in enumerate(cells) for r in aggregate(spec, outcomes[i])]
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        write_results(rows, out / "results.csv")
        write_power_panels(rows, out / "power_panels.csv")
        write_json(manifest(config.raw, rows, time.perf_counter() - t0, threads), out / "manifest.json")
    return rows


def versions() -> dict:
    import numba
    import scipy

    from .. import __version__
    return {"trajsum": __version__, "python": platform.python_version(), "numpy": np.__version__,
            "scipy": scipy.__version__, "numba": numba.__version__}


def manifest(config: dict, rows: list[RejectionRow], wall_time: float, threads: int) -> dict:
    flagged = sorted({f"{r.scenario}|sigma={r.sigma:g}|{r.missingness}|{r.handling}|{r.estimator}"
                      for r in rows if r.flagged})
    return {
        "config": config,
        "seed": config.get("seed", 0),
        "cells": len({(r.scenario, r.sigma, r.n_per_group, r.missingness, r.handling) for r in rows}),
        "rows": len(rows),
        "failures": sum(r.failures for r in rows),
        "flagged": flagged,
        "failure_flag_threshold": FLAG_FAILURE_RATE,
        "threads": threads,
        "wall_time_s": round(wall_time, 3),
        "versions": versions(),
    }
