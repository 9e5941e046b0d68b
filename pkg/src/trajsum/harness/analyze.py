"""End-to-end two-arm analysis of one dataset."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..basisfn import BasisSpec, endpoint_slope_vector, make_basis
from ..data import DatasetError, LongitudinalDataset
from ..inference import TestResult, ancova_test, lrt_groups, two_sample_t, wald_mc_test
from ..lmm import LmmFit, fit_lmm
from ..summaries import SummaryEstimate, ancova, change_score, mean_change, straight_line_slope
from ..wats import WeightModel, default_weight_basis, individual_wats, optimize_weight, weighted_mc_test


@dataclass(frozen=True)
class AnalyzeOptions:
    """``groups`` orders the arms as (active, control); differences are active minus control."""

    groups: tuple | None = None
    basis: dict | None = None
    random_dim: int | None = None
    lower_is_better: bool = True
    weights: bool = True
    weight_basis: dict | None = None
    seed: int = 0
    lrt: bool = True

    @classmethod
    def from_config(cls, cfg: dict | None) -> "AnalyzeOptions":
        cfg = dict(cfg or {})
        if "groups" in cfg and cfg["groups"] is not None:
            cfg["groups"] = tuple(str(g) for g in cfg["groups"])
        known = set(cls.__dataclass_fields__)
        extra = set(cfg) - known
        if extra:
            raise ValueError(f"unknown analysis options {sorted(extra)}")
        return cls(**cfg)


@dataclass(frozen=True)
class AnalysisReport:
    groups: tuple
    n: dict
    fits: dict[str, LmmFit]
    estimates: dict[str, dict]
    tests: dict[str, TestResult]
    weight: WeightModel | None = None
    subjects: list[dict] = field(default_factory=list)

    def summary(self) -> dict:
        est = {k: {str(g): {"value": e.value, "se": e.se, "n": e.n} for g, e in v.items()}
               for k, v in self.estimates.items()}
        tests = {k: {"statistic": t.statistic, "p_two_sided": t.p_two_sided, "p_one_sided": t.p_one_sided,
                     "df": t.df, "alternative": t.alternative, "method": t.method, "flags": list(t.flags)}
                 for k, t in self.tests.items()}
        fits = {str(g): {"beta": f.beta, "D": f.D, "sigma2": f.sigma2, "loglik": f.loglik,
                         "converged": f.converged, "n_subjects": f.n_subjects, "n_obs": f.n_obs}
                for g, f in self.fits.items()}
        out = {"groups": list(self.groups), "n": {str(k): v for k, v in self.n.items()},
               "estimates": est, "tests": tests, "fits": fits}
        if self.weight is not None:
            out["weight"] = {"v": self.weight.normalized_v, "objective": self.weight.objective,
                             "uniform_objective": self.weight.uniform_objective,
                             "fallback": self.weight.fallback}
        return out


def two_arm(data: LongitudinalDataset, groups=None) -> LongitudinalDataset:
    """Restrict to two arms in the requested order."""
    labels = tuple(groups) if groups is not None else data.labels
    if len(labels) != 2:
        raise DatasetError(f"a two-arm comparison needs exactly two groups, got {list(labels)}")
    missing = [g for g in labels if g not in data.labels]
    if missing:
        raise DatasetError(f"groups {missing} not in the dataset (have {list(data.labels)})")
    keep = np.isin(np.asarray(data.groups, dtype=object), np.asarray(labels, dtype=object))
    rows = np.flatnonzero(keep)
    return LongitudinalDataset(data.grid, tuple(data.ids[i] for i in rows),
                               tuple(data.groups[i] for i in rows), data.values[rows], labels,
                               data.rejected)


def _subject_cs(y: np.ndarray, t: np.ndarray) -> float:
    idx = np.flatnonzero(~np.isnan(y))
    if idx.size < 2:
        return float("nan")
    return float((y[idx[-1]] - y[idx[0]]) / (t[idx[-1]] - t[idx[0]]))


def analyze(data: LongitudinalDataset, options: AnalyzeOptions = AnalyzeOptions()) -> AnalysisReport:
    """Per-arm mixed models, CS / MC / slope / ANCOVA estimates, one- and two-sided tests,
    the group likelihood ratio test and, optionally, an estimated weight with
    per-subject weighted slopes."""
    data = two_arm(data, options.groups)
    a, b = data.labels
    dom = (data.grid.start, data.grid.end)
    spec = BasisSpec.polynomial(2, dom) if options.basis is None else BasisSpec.from_config(options.basis, dom)
    basis = make_basis(spec)
    fit_kw = {"strict": False}
    if spec.kind != "polynomial" and options.random_dim is None:
        fit_kw["random_basis"] = make_basis(BasisSpec.polynomial(2, dom))
    fits = fit_lmm(data, basis, options.random_dim, **fit_kw)
    G = endpoint_slope_vector(basis, data.grid)
    alt = "less" if options.lower_is_better else "greater"
    alt_ancova = "greater" if options.lower_is_better else "less"

    est: dict[str, dict[str, SummaryEstimate]] = {
        "MC": {g: mean_change(fits[g], G) for g in (a, b)},
        "CS": {g: change_score(data, g) for g in (a, b)},
        "SLOPE": {g: straight_line_slope(data, g, strict=False) for g in (a, b)},
    }
    tests = {
        "MC": wald_mc_test(est["MC"][a], est["MC"][b], alt),
        "CS": two_sample_t(est["CS"][a], est["CS"][b], alt),
        "SLOPE": two_sample_t(est["SLOPE"][a], est["SLOPE"][b], alt),
    }
    anc = ancova(data)
    est["ANCOVA"] = {f"{b}-{a}": SummaryEstimate("ANCOVA_EFFECT", anc.alpha2, anc.se2, anc.n)}
    tests["ANCOVA"] = ancova_test(anc, alt_ancova)
    if options.lrt:
        tests["LRT"] = lrt_groups(data, basis, options.random_dim, **fit_kw)

    weight = None
    if options.weights:
        ub = (default_weight_basis(dom) if options.weight_basis is None
              else make_basis(BasisSpec.from_config(options.weight_basis, dom)))
        weight = optimize_weight(fits[a], fits[b], ub, seed=options.seed)
        tests["WATS"] = weighted_mc_test(weight, fits[a], fits[b], alt)

    t = data.times
    subjects = []
    for sid, g, y in zip(data.ids, data.groups, data.values):
        f = fits[g]
        Gr = G[: f.q] if f.random_leading else endpoint_slope_vector(f.random_basis, data.grid)
        row = {"subject_id": sid, "group": g, "n_obs": int((~np.isnan(y)).sum()),
               "cs": _subject_cs(y, t), "mc": float(G @ f.beta + Gr @ f.blups[sid])}
        if weight is not None:
            row["wats"] = individual_wats(weight, f, sid)
        subjects.append(row)
    return AnalysisReport((a, b), data.group_sizes(), fits, est, tests, weight, subjects)
