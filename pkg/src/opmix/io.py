"""Long-format CSV input and output.

Input columns: sample_id, time, y, then any number of fixed_* and random_*
covariates. Rows may come in any order; every sample must share the same
time vector.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .grid import make_grid
from .mixed_model import MixedModelData

REQUIRED = ("sample_id", "time", "y")


class IngestError(ValueError):
    pass


def fmt(x) -> str:
    """17 significant digits; round-trips every double."""
    return format(float(x), ".17g")


@dataclass(frozen=True)
class Table:
    data: MixedModelData
    sample_ids: list
    fixed_names: list
    random_names: list


def infer_interval(times: np.ndarray) -> tuple[float, float]:
    """[a, b] for points placed at the centres of N equal cells."""
    if len(times) < 2:
        raise IngestError("need at least two time points")
    step = (times[-1] - times[0]) / (len(times) - 1)
    return float(times[0] - step / 2), float(times[-1] + step / 2)


def read_table(path, interval=None) -> Table:
    path = Path(path)
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise IngestError("empty file") from None
        rows = [row for row in reader if any(cell.strip() for cell in row)]
    if tuple(header[:3]) != REQUIRED:
        raise IngestError(f"header must start with {', '.join(REQUIRED)}")
    extra = header[3:]
    bad = [h for h in extra if not (h.startswith("fixed_") or h.startswith("random_"))]
    if bad:
        raise IngestError(f"unexpected columns {bad}; covariates must be prefixed fixed_ or random_")
    if len(set(header)) != len(header):
        raise IngestError("duplicate column names")
    if not rows:
        raise IngestError("no observations")

    by_sample: dict[str, dict[float, list[float]]] = {}
    for line, row in enumerate(rows, start=2):
        if len(row) != len(header):
            raise IngestError(f"line {line}: expected {len(header)} cells, got {len(row)}")
        sid = row[0].strip()
        try:
            nums = [float(c) for c in row[1:]]
        except ValueError:
            raise IngestError(f"line {line}: non-numeric cell") from None
        if not all(np.isfinite(nums)):
            raise IngestError(f"line {line}: non-finite value")
        cells = by_sample.setdefault(sid, {})
        if nums[0] in cells:
            raise IngestError(f"line {line}: duplicate (sample, time) pair ({sid}, {nums[0]})")
        cells[nums[0]] = nums[1:]

    sample_ids = list(by_sample)
    times = np.array(sorted(by_sample[sample_ids[0]]))
    for sid in sample_ids[1:]:
        if not np.array_equal(np.array(sorted(by_sample[sid])), times):
            raise IngestError("ragged design: samples have different time vectors")
    a, b = interval if interval is not None else infer_interval(times)
    grid = make_grid(a, b, points=times)

    n, m = len(times), len(sample_ids)
    values = np.array([[by_sample[sid][t] for t in times] for sid in sample_ids])  # (M, N, 1 + c)
    y = values[:, :, 0].T
    cov = values[:, :, 1:].reshape(m * n, -1)
    fixed_idx = [i for i, h in enumerate(extra) if h.startswith("fixed_")]
    random_idx = [i for i, h in enumerate(extra) if h.startswith("random_")]
    data = MixedModelData(grid, y, cov[:, fixed_idx], cov[:, random_idx])
    return Table(data, sample_ids, [extra[i] for i in fixed_idx], [extra[i] for i in random_idx])


def ingest_csv(path, interval=None) -> MixedModelData:
    return read_table(path, interval).data


def write_table(path, data: MixedModelData, fixed_names, random_names, sample_ids=None):
    n, m = data.n, data.m
    sample_ids = sample_ids or [f"s{j + 1}" for j in range(m)]
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(list(REQUIRED) + list(fixed_names) + list(random_names))
        for j in range(m):
            for i in range(n):
                row = j * n + i
                w.writerow([sample_ids[j], fmt(data.grid.points[i]), fmt(data.y[i, j])]
                           + [fmt(v) for v in data.Gamma[row]] + [fmt(v) for v in data.Z[row]])
