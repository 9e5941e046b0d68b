"""Sweep configuration: parsing, validation and expansion into simulation cells."""
from __future__ import annotations

import itertools
import json
from dataclasses import dataclass, field, replace
from pathlib import Path

from ..basisfn import BasisSpec, InvalidBasisSpec, make_basis
from ..missing import MissingnessSpec
from ..simgen import SCENARIO_IDS, make_scenario

ESTIMATORS = ("MC", "CS", "SLOPE", "ANCOVA", "WATS")
DEFAULT_ESTIMATORS = ("MC", "CS", "SLOPE", "ANCOVA")
HANDLINGS = ("CRA", "MI")


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class ScenarioSpec:
    """One simulation cell."""

    scenario: str
    sigma: float
    n_per_group: int = 100
    missingness: MissingnessSpec = field(default_factory=MissingnessSpec.none)
    handling: str = "CRA"
    estimators: tuple[str, ...] = DEFAULT_ESTIMATORS
    reps: int = 1000
    alpha: float = 0.05
    seed: int = 0
    basis: dict | None = None
    weight_basis: dict | None = None
    imputations: int = 20

    def __post_init__(self):
        try:
            sc = make_scenario(self.scenario)
        except ValueError as exc:
            raise ConfigError(str(exc)) from None
        object.__setattr__(self, "scenario", sc.id)
        if not self.sigma >= 0:
            raise ConfigError(f"sigma must be non-negative, got {self.sigma}")
        if self.n_per_group < 2:
            raise ConfigError("n_per_group must be at least 2")
        if self.handling not in HANDLINGS:
            raise ConfigError(f"handling must be one of {HANDLINGS}, got {self.handling!r}")
        bad = set(self.estimators) - set(ESTIMATORS)
        if bad or not self.estimators:
            raise ConfigError(f"unknown estimators {sorted(bad)}; choose from {ESTIMATORS}")
        if self.reps < 1:
            raise ConfigError("reps must be at least 1")
        if not 0.0 < self.alpha < 1.0:
            raise ConfigError("alpha must lie in (0, 1)")
        if self.imputations < 2:
            raise ConfigError("need at least two imputations")
        dom = (sc.grid.start, sc.grid.end)
        for key in ("basis", "weight_basis"):
            cfg = getattr(self, key)
            if cfg is not None:
                try:
                    make_basis(BasisSpec.from_config(cfg, dom))
                except (InvalidBasisSpec, TypeError, ValueError) as exc:
                    raise ConfigError(f"{key}: {exc}") from None

    @property
    def basis_spec(self) -> BasisSpec:
        sc = make_scenario(self.scenario)
        if self.basis is None:
            return sc.default_basis
        return BasisSpec.from_config(self.basis, (sc.grid.start, sc.grid.end))

    @property
    def weight_basis_spec(self) -> BasisSpec | None:
        if self.weight_basis is None:
            return None
        sc = make_scenario(self.scenario)
        return BasisSpec.from_config(self.weight_basis, (sc.grid.start, sc.grid.end))

    @property
    def key(self) -> tuple:
        return (self.scenario, self.sigma, self.n_per_group, self.missingness.tag, self.handling)

    def label(self) -> str:
        return f"{self.scenario}|sigma={self.sigma:g}|n={self.n_per_group}|{self.missingness.tag}|{self.handling}"


@dataclass(frozen=True)
class SweepConfig:
    cells: tuple[ScenarioSpec, ...]
    raw: dict = field(default_factory=dict, compare=False)

    @property
    def seed(self) -> int:
        return int(self.raw.get("seed", 0))


def _as_list(value, name):
    if value is None:
        return []
    if isinstance(value, (list, tuple)):
        return list(value)
    if isinstance(value, (str, int, float, dict)):
        return [value]
    raise ConfigError(f"{name} must be a list")


def parse_config(raw: dict, *, seed: int | None = None, reps: int | None = None) -> SweepConfig:
    """Expand ``scenarios x sigmas x missingness x handling`` into validated cells.

    Every cell is validated before anything runs; the first bad entry raises
    :class:`ConfigError`.
    """
    if not isinstance(raw, dict):
        raise ConfigError("config must be a JSON object")
    known = {"scenarios", "sigmas", "missingness", "handling", "n_per_group", "reps", "alpha", "seed",
             "basis", "weight_basis", "estimators", "imputations"}
    extra = set(raw) - known
    if extra:
        raise ConfigError(f"unknown config keys {sorted(extra)}")
    raw = dict(raw)
    if seed is not None:
        raw["seed"] = int(seed)
    if reps is not None:
        raw["reps"] = int(reps)
    scenarios = _as_list(raw.get("scenarios"), "scenarios")
    sigmas = _as_list(raw.get("sigmas", [1.0]), "sigmas")
    miss = _as_list(raw.get("missingness", [{"mechanism": "none"}]), "missingness")
    handling = _as_list(raw.get("handling", "CRA"), "handling")
    estimators = tuple(_as_list(raw.get("estimators", list(DEFAULT_ESTIMATORS)), "estimators"))
    try:
        miss_specs = [MissingnessSpec.from_config(m) for m in miss]
        common = dict(n_per_group=int(raw.get("n_per_group", 100)), reps=int(raw.get("reps", 1000)),
                      alpha=float(raw.get("alpha", 0.05)), seed=int(raw.get("seed", 0)),
                      basis=raw.get("basis"), weight_basis=raw.get("weight_basis"),
                      estimators=estimators, imputations=int(raw.get("imputations", 20)))
        cells = tuple(
            ScenarioSpec(scenario=str(sc), sigma=float(sg), missingness=ms, handling=str(h), **common)
            for sc, sg, ms, h in itertools.product(scenarios, sigmas, miss_specs, handling)
        )
    except ConfigError:
        raise
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from None
    return SweepConfig(cells, raw)


def load_config(path: str | Path, **overrides) -> SweepConfig:
    try:
        raw = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: not valid JSON ({exc})") from None
    return parse_config(raw, **overrides)


def quadratic_design_config(reps: int = 1000, seed: int = 0) -> dict:
    """The 3 x 6 x 4 quadratic design (complete-record handling)."""
    return {
        "scenarios": ["Q1vQ2", "Q1vQ3", "Q1vQ1"],
        "sigmas": [0.5, 1.0, 1.5, 2.0, 2.5, 3.0],
        "missingness": [{"mechanism": "none"}, {"mechanism": "mcar", "rate": 0.15},
                        {"mechanism": "dropout"}, {"mechanism": "mnar"}],
        "handling": "CRA",
        "n_per_group": 100,
        "reps": reps,
        "alpha": 0.05,
        "seed": seed,
    }


__all__ = ["ScenarioSpec", "SweepConfig", "ConfigError", "parse_config", "load_config", "ESTIMATORS",
           "DEFAULT_ESTIMATORS", "HANDLINGS", "quadratic_design_config", "SCENARIO_IDS", "replace"]
