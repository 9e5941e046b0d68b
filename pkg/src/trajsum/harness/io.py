"""CSV ingestion and output writers."""
from __future__ import annotations

import csv
import json
import math
from pathlib import Path
from typing import Iterable

import numpy as np

from ..basisfn import TimeGrid
from ..data import DatasetError, LongitudinalDataset

DATASET_COLUMNS = ("subject_id", "group", "time", "value")
RESULT_COLUMNS = ("scenario", "sigma", "n_per_group", "missingness", "handling", "estimator", "alpha",
                  "reps", "completed", "failures", "rejections", "rate", "se", "flagged")
PANEL_COLUMNS = ("panel", "scenario", "missingness", "handling", "n_per_group", "estimator", "sigma",
                 "rate", "se", "lower", "upper")


class IngestError(DatasetError):
    """A dataset file does not match the schema; ``line`` is 1-based when known."""

    def __init__(self, message: str, line: int | None = None):
        super().__init__(f"line {line}: {message}" if line is not None else message)
        self.line = line


def _number(text: str, what: str, line: int) -> float:
    try:
        x = float(text)
    except (TypeError, ValueError):
        raise IngestError(f"non-numeric {what} {text!r}", line) from None
    if not math.isfinite(x):
        raise IngestError(f"non-finite {what} {text!r}", line)
    return x


def ingest_csv(path: str | Path) -> LongitudinalDataset:
    """Read a long-format ``subject_id,group,time,value`` file.

    Missing observations are absent rows.  The time grid is the sorted union of
    all observed times.  Subjects without an observation at the first grid time
    are left out of the dataset and listed in ``dataset.rejected`` with the
    offending line numbers.
    """
    path = Path(path)
    obs: dict[str, dict[float, tuple[float, int]]] = {}
    group_of: dict[str, tuple[str, int]] = {}
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            raise IngestError("empty file", 1)
        header = [h.strip() for h in header]
        if tuple(header) != DATASET_COLUMNS:
            raise IngestError(f"header must be {','.join(DATASET_COLUMNS)}, got {','.join(header)}", 1)
        for row in reader:
            line = reader.line_num
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != 4:
                raise IngestError(f"expected 4 fields, got {len(row)}", line)
            sid, grp = row[0].strip(), row[1].strip()
            if not sid or not grp:
                raise IngestError("empty subject_id or group", line)
            t = _number(row[2].strip(), "time", line)
            y = _number(row[3].strip(), "value", line)
            prev_group = group_of.setdefault(sid, (grp, line))
            if prev_group[0] != grp:
                raise IngestError(f"subject {sid!r} is in group {grp!r} but was in {prev_group[0]!r} "
                                  f"on line {prev_group[1]}", line)
            cells = obs.setdefault(sid, {})
            if t in cells:
                raise IngestError(f"duplicate observation for subject {sid!r} at time {t:g} "
                                  f"(first seen on line {cells[t][1]})", line)
            cells[t] = (y, line)
    if not obs:
        raise IngestError("no data rows")
    grid = TimeGrid(sorted({t for cells in obs.values() for t in cells}))
    labels = tuple(dict.fromkeys(g for g, _ in group_of.values()))
    ids, groups, rows, rejected = [], [], [], {}
    for sid, cells in obs.items():
        if grid.start not in cells:
            lines = sorted(line for _, line in cells.values())
            rejected[sid] = f"no baseline observation at time {grid.start:g} (lines {', '.join(map(str, lines))})"
            continue
        y = np.full(grid.m, np.nan)
        for t, (v, _) in cells.items():
            y[grid.index(t)] = v
        ids.append(sid)
        groups.append(group_of[sid][0])
        rows.append(y)
    if not rows:
        raise IngestError("every subject lacks a baseline observation")
    kept = tuple(lab for lab in labels if lab in groups)
    return LongitudinalDataset(grid, tuple(ids), tuple(groups), np.vstack(rows), kept, rejected)


def write_dataset_csv(data: LongitudinalDataset, path: str | Path) -> Path:
    path = Path(path)
    t = data.times
    with path.open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(DATASET_COLUMNS)
        for sid, grp, y in zip(data.ids, data.groups, data.values):
            for tj, yj in zip(t, y):
                if not np.isnan(yj):
                    w.writerow([sid, grp, _fmt(tj), _fmt(yj)])
    return path


def _fmt(x) -> str:
    if isinstance(x, (bool, np.bool_)):
        return "true" if x else "false"
    if isinstance(x, (float, np.floating)):
        x = float(x)
        if math.isnan(x):
            return "nan"
        return repr(x)
    return str(x)


def write_table(rows: Iterable[dict], columns: tuple[str, ...], path: str | Path) -> Path:
    path = Path(path)
    with path.open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(columns)
        for r in rows:
            w.writerow([_fmt(r[c]) for c in columns])
    return path


def write_results(rows, path) -> Path:
    return write_table((r.as_dict() for r in rows), RESULT_COLUMNS, path)


def panel_rows(rows) -> list[dict]:
    """One plot-data row per (panel, estimator, sigma): rate with a one-SE band."""
    out = []
    for r in rows:
        d = r.as_dict()
        out.append({
            "panel": f"{r.scenario}|{r.missingness}|{r.handling}|n={r.n_per_group}",
            "scenario": r.scenario, "missingness": r.missingness, "handling": r.handling,
            "n_per_group": r.n_per_group, "estimator": r.estimator, "sigma": r.sigma,
            "rate": d["rate"], "se": d["se"], "lower": d["rate"] - d["se"], "upper": d["rate"] + d["se"],
        })
    out.sort(key=lambda d: (d["panel"], d["estimator"], d["sigma"]))
    return out


def write_power_panels(rows, path) -> Path:
    return write_table(panel_rows(rows), PANEL_COLUMNS, path)


def write_weight_curve(weight, path, n: int = 201) -> Path:
    t, w = weight.curve(n)
    return write_table(({"t": a, "w": b} for a, b in zip(t, w)), ("t", "w"), path)


def _jsonable(x):
    if isinstance(x, dict):
        return {str(k): _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    if isinstance(x, np.ndarray):
        return _jsonable(x.tolist())
    if isinstance(x, (np.floating, float)):
        x = float(x)
        return x if math.isfinite(x) else str(x)
    if isinstance(x, (np.integer,)):
        return int(x)
    if isinstance(x, np.bool_):
        return bool(x)
    return x


def write_json(obj, path) -> Path:
    path = Path(path)
    path.write_text(json.dumps(_jsonable(obj), indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return path
