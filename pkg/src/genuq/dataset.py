"""Paired (x, y) sample data: CSV ingestion, scaling, splitting, synthetic data."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np


class DataError(ValueError):
    """Raised for malformed or unusable input data."""


def _frozen(a, ncols_name: str) -> np.ndarray:
    arr = np.array(a, dtype=np.float64)
    if arr.ndim == 1:
        arr = arr[:, None]
    if arr.ndim != 2:
        raise DataError(f"{ncols_name} must be a 2-d array, got shape {arr.shape}")
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class Dataset:
    """J paired samples of parameters ``x`` (J x d) and observations ``y`` (J x q)."""

    x: np.ndarray
    y: np.ndarray
    x_names: tuple[str, ...] = ()
    y_names: tuple[str, ...] = ()

    def __post_init__(self):
        x = _frozen(self.x, "x")
        y = _frozen(self.y, "y")
        if x.shape[0] != y.shape[0]:
            raise DataError(f"x has {x.shape[0]} rows but y has {y.shape[0]}")
        if x.shape[0] < 2:
            raise DataError("a dataset needs at least 2 rows")
        if x.shape[1] < 1 or y.shape[1] < 1:
            raise DataError("x and y need at least one column each")
        if not (np.isfinite(x).all() and np.isfinite(y).all()):
            raise DataError("dataset contains non-finite values")
        x_names = tuple(self.x_names) or tuple(f"x{i}" for i in range(x.shape[1]))
        y_names = tuple(self.y_names) or tuple(f"y{i}" for i in range(y.shape[1]))
        if len(x_names) != x.shape[1] or len(y_names) != y.shape[1]:
            raise DataError("column names do not match array widths")
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "x_names", x_names)
        object.__setattr__(self, "y_names", y_names)

    @property
    def n(self) -> int:
        return self.x.shape[0]

    @property
    def d(self) -> int:
        return self.x.shape[1]

    @property
    def q(self) -> int:
        return self.y.shape[1]

    def take(self, idx) -> "Dataset":
        idx = np.asarray(idx)
        return Dataset(self.x[idx], self.y[idx], self.x_names, self.y_names)


@dataclass(frozen=True)
class Scaler:
    """Per-column mean / population std for x and y."""

    x_mean: np.ndarray
    x_std: np.ndarray
    y_mean: np.ndarray
    y_std: np.ndarray

    def apply_x(self, x):
        return (np.asarray(x, dtype=np.float64) - self.x_mean) / self.x_std

    def apply_y(self, y):
        return (np.asarray(y, dtype=np.float64) - self.y_mean) / self.y_std

    def invert_x(self, x):
        return np.asarray(x, dtype=np.float64) * self.x_std + self.x_mean

    def invert_y(self, y):
        return np.asarray(y, dtype=np.float64) * self.y_std + self.y_mean

    def apply(self, ds: Dataset) -> Dataset:
        return Dataset(self.apply_x(ds.x), self.apply_y(ds.y), ds.x_names, ds.y_names)

    def invert(self, ds: Dataset) -> Dataset:
        return Dataset(self.invert_x(ds.x), self.invert_y(ds.y), ds.x_names, ds.y_names)

    def to_dict(self) -> dict[str, np.ndarray]:
        return {"x_mean": self.x_mean, "x_std": self.x_std,
                "y_mean": self.y_mean, "y_std": self.y_std}


def _col_stats(a: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    mean = a.mean(axis=0)
    std = a.std(axis=0)  # population (ddof=0)
    # constant columns (up to rounding of the mean) pass through unscaled
    std = np.where(std > 1e-12 * np.abs(a).max(axis=0), std, 1.0)
    return mean, std


def fit_scaler(ds: Dataset) -> Scaler:
    xm, xs = _col_stats(ds.x)
    ym, ys = _col_stats(ds.y)
    return Scaler(xm, xs, ym, ys)


def split_indices(n: int, test_fraction: float, seed: int) -> tuple[np.ndarray, np.ndarray]:
    """Seeded disjoint (train, test) index partition, each sorted ascending."""
    if not 0.0 < test_fraction < 1.0:
        raise DataError(f"test_fraction must lie in (0, 1), got {test_fraction}")
    n_test = int(round(n * test_fraction))
    if n_test < 1 or n - n_test < 2:
        raise DataError(
            f"cannot split {n} rows with test_fraction={test_fraction}: "
            "need >= 1 test row and >= 2 training rows")
    perm = np.random.default_rng(seed).permutation(n)
    return np.sort(perm[n_test:]), np.sort(perm[:n_test])


def split(ds: Dataset, test_fraction: float, seed: int) -> tuple[Dataset, Dataset]:
    train_idx, test_idx = split_indices(ds.n, test_fraction, seed)
    return ds.take(train_idx), ds.take(test_idx)


def make_bimodal(n: int, sigma: float, seed: int) -> Dataset:
    """x ~ U[-2, 2], y = x**2 + N(0, sigma**2)."""
    if n < 2:
        raise DataError("n must be >= 2")
    if sigma < 0:
        raise DataError("sigma must be >= 0")
    rng = np.random.default_rng(seed)
    x = rng.uniform(-2.0, 2.0, size=(n, 1))
    y = x**2 + sigma * rng.standard_normal((n, 1))
    return Dataset(x, y, ("x0",), ("y0",))


def load_csv(path, x_cols: Sequence[str], y_cols: Sequence[str]) -> Dataset:
    path = Path(path)
    if not path.is_file():
        raise DataError(f"data file not found: {path}")
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise DataError(f"{path}: empty file, header row required") from None
        cols = list(x_cols) + list(y_cols)
        missing = [c for c in cols if c not in header]
        if missing:
            raise DataError(f"{path}: missing column(s) {', '.join(missing)}")
        pos = [header.index(c) for c in cols]
        rows = []
        for lineno, rec in enumerate(reader, start=2):
            if not rec or all(not c.strip() for c in rec):
                continue
            vals = []
            for c, p in zip(cols, pos):
                cell = rec[p].strip() if p < len(rec) else ""
                try:
                    v = float(cell)
                except ValueError:
                    raise DataError(
                        f"{path}: non-numeric value {cell!r} at row {lineno}, column {c!r}"
                    ) from None
                if not math.isfinite(v):
                    raise DataError(
                        f"{path}: non-finite value {cell!r} at row {lineno}, column {c!r}")
                vals.append(v)
            rows.append(vals)
    if not rows:
        raise DataError(f"{path}: no data rows")
    arr = np.array(rows, dtype=np.float64)
    nx = len(x_cols)
    return Dataset(arr[:, :nx], arr[:, nx:], tuple(x_cols), tuple(y_cols))


def write_matrix_csv(path, header: Sequence[str], data: np.ndarray) -> None:
    data = np.atleast_2d(np.asarray(data, dtype=np.float64))
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for row in data:
            w.writerow([f"{v:.17g}" for v in row])


def read_matrix_csv(path) -> tuple[list[str], np.ndarray]:
    """Read an all-numeric CSV with a header row."""
    path = Path(path)
    if not path.is_file():
        raise DataError(f"file not found: {path}")
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise DataError(f"{path}: empty file, header row required") from None
    ds_cols = header
    try:
        data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2, dtype=np.float64)
    except ValueError as exc:
        raise DataError(f"{path}: {exc}") from None
    if data.size == 0:
        data = np.empty((0, len(ds_cols)))
    if not np.isfinite(data).all():
        raise DataError(f"{path}: non-finite values")
    return ds_cols, data


def write_csv(path, ds: Dataset) -> None:
    write_matrix_csv(path, list(ds.x_names) + list(ds.y_names), np.hstack([ds.x, ds.y]))
