"""Longitudinal data containers.

A dataset is stored densely: one row per subject, one column per design time,
``NaN`` marking a missing observation.  Subjects are always observed at
baseline (the first grid time).
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Hashable, Iterable, Sequence

import numpy as np

from .basisfn import TimeGrid


class DatasetError(ValueError):
    """Raised for malformed longitudinal data."""


@dataclass(frozen=True)
class SubjectRecord:
    id: Hashable
    group: Hashable
    times: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        t = np.asarray(self.times, dtype=float)
        y = np.asarray(self.values, dtype=float)
        if t.shape != y.shape or t.ndim != 1:
            raise DatasetError(f"subject {self.id}: times and values must be 1-d of equal length")
        if not np.all(np.isfinite(y)):
            raise DatasetError(f"subject {self.id}: values must be finite")
        object.__setattr__(self, "times", t)
        object.__setattr__(self, "values", y)

    @property
    def n_obs(self) -> int:
        return self.times.size


@dataclass(frozen=True)
class LongitudinalDataset:
    grid: TimeGrid
    ids: tuple
    groups: tuple
    values: np.ndarray
    labels: tuple = ()
    rejected: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        y = np.array(self.values, dtype=float, copy=True)
        if y.ndim != 2 or y.shape[1] != self.grid.m:
            raise DatasetError(f"values must have shape (n, {self.grid.m}), got {y.shape}")
        ids, groups = tuple(self.ids), tuple(self.groups)
        if len(ids) != y.shape[0] or len(groups) != y.shape[0]:
            raise DatasetError("ids, groups and value rows must have equal length")
        if len(set(ids)) != len(ids):
            raise DatasetError("subject ids must be unique")
        if np.any(np.isinf(y)):
            raise DatasetError("values must be finite or NaN (missing)")
        if y.shape[0] and np.any(np.isnan(y[:, 0])):
            bad = [ids[i] for i in np.flatnonzero(np.isnan(y[:, 0]))[:5]]
            raise DatasetError(f"baseline observation missing for subjects {bad}")
        labels = tuple(self.labels) or tuple(dict.fromkeys(groups))
        unknown = set(groups) - set(labels)
        if unknown:
            raise DatasetError(f"group labels {sorted(map(str, unknown))} not among {labels}")
        y.setflags(write=False)
        object.__setattr__(self, "values", y)
        object.__setattr__(self, "ids", ids)
        object.__setattr__(self, "groups", groups)
        object.__setattr__(self, "labels", labels)

    @classmethod
    def from_records(cls, grid: TimeGrid, records: Iterable[SubjectRecord],
                     labels: Sequence | None = None) -> "LongitudinalDataset":
        records = list(records)
        y = np.full((len(records), grid.m), np.nan)
        for i, rec in enumerate(records):
            for t, v in zip(rec.times, rec.values):
                j = grid.index(t)
                if not np.isnan(y[i, j]):
                    raise DatasetError(f"subject {rec.id}: duplicate observation at time {t}")
                y[i, j] = v
        return cls(grid, tuple(r.id for r in records), tuple(r.group for r in records), y,
                   tuple(labels) if labels is not None else ())

    @property
    def n(self) -> int:
        return self.values.shape[0]

    @property
    def times(self) -> np.ndarray:
        return self.grid.as_array()

    @property
    def observed(self) -> np.ndarray:
        return ~np.isnan(self.values)

    @property
    def n_missing(self) -> int:
        return int(np.isnan(self.values).sum())

    def group_mask(self, label) -> np.ndarray:
        return np.array([g == label for g in self.groups], dtype=bool)

    def group_values(self, label) -> np.ndarray:
        return self.values[self.group_mask(label)]

    def group_sizes(self) -> dict:
        return {lab: int(self.group_mask(lab).sum()) for lab in self.labels}

    def subset(self, label) -> "LongitudinalDataset":
        mask = self.group_mask(label)
        return LongitudinalDataset(self.grid, tuple(i for i, k in zip(self.ids, mask) if k),
                                   (label,) * int(mask.sum()), self.values[mask], (label,))

    def pooled(self, label="pooled") -> "LongitudinalDataset":
        return LongitudinalDataset(self.grid, self.ids, (label,) * self.n, self.values, (label,))

    def with_values(self, values: np.ndarray) -> "LongitudinalDataset":
        return LongitudinalDataset(self.grid, self.ids, self.groups, values, self.labels)

    def record(self, i: int) -> SubjectRecord:
        row = self.values[i]
        obs = ~np.isnan(row)
        return SubjectRecord(self.ids[i], self.groups[i], self.times[obs], row[obs])

    @property
    def subjects(self) -> list[SubjectRecord]:
        return [self.record(i) for i in range(self.n)]

    def __len__(self) -> int:
        return self.n

    def __eq__(self, other) -> bool:
        if not isinstance(other, LongitudinalDataset):
            return NotImplemented
        return (self.grid == other.grid and self.ids == other.ids and self.groups == other.groups
                and self.labels == other.labels
                and np.array_equal(self.values, other.values, equal_nan=True))

    __hash__ = None
