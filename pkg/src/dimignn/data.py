"""Series ingestion, chronological splitting, z-scoring, windowing and a
synthetic coupled-series generator.

Grids are laid out ``[time, variable, attribute]``; attribute 0 is the
forecast target.
"""

from __future__ import annotations

import csv
import json
import math
import warnings
from dataclasses import dataclass, field
from datetime import datetime
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

__all__ = [
    "SeriesTensor",
    "CsvSchema",
    "NormStats",
    "WindowedDataset",
    "DataError",
    "load_csv",
    "write_csv",
    "split_chronological",
    "fit_norm_stats",
    "normalize",
    "denormalize",
    "make_windows",
    "synth_coupled",
    "default_coupling",
]


class DataError(ValueError):
    pass


@dataclass
class SeriesTensor:
    values: np.ndarray
    variable_names: list[str] = field(default_factory=list)
    attribute_names: list[str] = field(default_factory=list)
    step: str = ""

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.ndim != 3:
            raise DataError(f"series must be [T, N, C], got shape {self.values.shape}")
        T, N, C = self.values.shape
        if T < 1 or N < 2 or C < 1:
            raise DataError(f"series needs T>=1, N>=2, C>=1; got T={T}, N={N}, C={C}")
        if not np.isfinite(self.values).all():
            raise DataError("series contains missing or non-finite values")
        if not self.variable_names:
            self.variable_names = [f"v{i}" for i in range(N)]
        if not self.attribute_names:
            self.attribute_names = [f"attr_{c}" for c in range(C)]
        if len(self.variable_names) != N or len(self.attribute_names) != C:
            raise DataError("name lists do not match the grid extents")

    @property
    def shape(self) -> tuple[int, int, int]:
        return self.values.shape

    def __len__(self) -> int:
        return self.values.shape[0]

    def with_values(self, values: np.ndarray) -> SeriesTensor:
        return SeriesTensor(values, list(self.variable_names), list(self.attribute_names), self.step)

    def slice_time(self, start: int, stop: int) -> SeriesTensor:
        return self.with_values(self.values[start:stop])


@dataclass
class CsvSchema:
    """Column roles in a long-format CSV.

    ``attribute_cols=None`` means every column other than the time and
    variable columns, in header order; the first one is the target.
    """

    time_col: str = "timestamp"
    variable_col: str = "variable_id"
    attribute_cols: Sequence[str] | None = None


def _time_key(stamps: Sequence[str]):
    try:
        for s in stamps:
            float(s)
        return float
    except ValueError:
        pass
    try:
        for s in stamps:
            datetime.fromisoformat(s)
        return datetime.fromisoformat
    except ValueError:
        return lambda s: s


def load_csv(path, schema: CsvSchema | None = None) -> SeriesTensor:
    """Read a long-format CSV into a dense ``[T, N, C]`` grid.

    Variables are ordered lexicographically by id; rows are ordered by
    timestamp. Every variable must cover the same set of timestamps.
    """
    schema = schema or CsvSchema()
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(path)
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise DataError(f"{path}: empty file") from None
        for col in (schema.time_col, schema.variable_col):
            if col not in header:
                raise DataError(f"{path}: missing column {col!r}")
        if schema.attribute_cols is None:
            attrs = [h for h in header if h not in (schema.time_col, schema.variable_col)]
        else:
            attrs = list(schema.attribute_cols)
            absent = [a for a in attrs if a not in header]
            if absent:
                raise DataError(f"{path}: missing attribute columns {absent}")
        if not attrs:
            raise DataError(f"{path}: no attribute columns")
        ti = header.index(schema.time_col)
        vi = header.index(schema.variable_col)
        ai = [header.index(a) for a in attrs]

        cells: dict[tuple[str, str], list[float]] = {}
        for rownum, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != len(header):
                raise DataError(f"{path}: row {rownum} has {len(row)} fields, expected {len(header)}")
            key = (row[vi].strip(), row[ti].strip())
            if key in cells:
                raise DataError(f"{path}: row {rownum} duplicates variable {key[0]!r} at {key[1]!r}")
            vals = []
            for j in ai:
                try:
                    x = float(row[j])
                except ValueError:
                    raise DataError(
                        f"{path}: unparseable value {row[j]!r} at row {rownum}, column {header[j]!r}"
                    ) from None
                if not math.isfinite(x):
                    raise DataError(f"{path}: non-finite value at row {rownum}, column {header[j]!r}")
                vals.append(x)
            cells[key] = vals

    by_var: dict[str, set[str]] = {}
    for var, ts in cells:
        by_var.setdefault(var, set()).add(ts)
    if not by_var:
        raise DataError(f"{path}: no data rows")
    variables = sorted(by_var)
    all_stamps = set().union(*by_var.values())
    ragged = [v for v in variables if by_var[v] != all_stamps]
    if ragged:
        raise DataError(f"{path}: ragged series, variables missing timestamps: {ragged}")
    stamps = sorted(all_stamps, key=_time_key(list(all_stamps)))

    grid = np.empty((len(stamps), len(variables), len(attrs)))
    for n, var in enumerate(variables):
        for t, ts in enumerate(stamps):
            grid[t, n] = cells[(var, ts)]
    return SeriesTensor(grid, variables, attrs)


def write_csv(series: SeriesTensor, path, timestamps: Sequence | None = None) -> None:
    """Write a series in the long format read by :func:`load_csv`."""
    T, N, C = series.shape
    stamps = list(timestamps) if timestamps is not None else list(range(T))
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["timestamp", "variable_id", *series.attribute_names])
        for t in range(T):
            for n in range(N):
                w.writerow([stamps[t], series.variable_names[n], *(repr(float(x)) for x in series.values[t, n])])


def split_chronological(
    series: SeriesTensor,
    ratios: Sequence[float] = (0.7, 0.1, 0.2),
    min_length: int = 1,
) -> tuple[SeriesTensor, SeriesTensor, SeriesTensor]:
    """Contiguous train/val/test partitions in time order.

    ``min_length`` is the shortest admissible split, normally ``T_in + tau``.
    """
    if len(ratios) != 3:
        raise DataError("ratios must have three entries")
    if any(r <= 0 for r in ratios):
        raise DataError(f"every split ratio must be positive, got {tuple(ratios)}")
    if abs(sum(ratios) - 1.0) > 1e-9:
        raise DataError(f"ratios must sum to 1, got {sum(ratios)}")
    T = len(series)
    n_train = int(round(T * ratios[0]))
    n_val = int(round(T * ratios[1]))
    n_test = T - n_train - n_val
    for name, n in (("train", n_train), ("val", n_val), ("test", n_test)):
        if n < min_length:
            raise DataError(f"{name} split has {n} steps, needs at least {min_length}")
    return (
        series.slice_time(0, n_train),
        series.slice_time(n_train, n_train + n_val),
        series.slice_time(n_train + n_val, T),
    )


@dataclass
class NormStats:
    mean: np.ndarray
    std: np.ndarray

    def to_json(self) -> dict:
        return {"mean": self.mean.tolist(), "std": self.std.tolist()}

    @classmethod
    def from_json(cls, doc: Mapping) -> NormStats:
        return cls(np.asarray(doc["mean"], dtype=np.float64), np.asarray(doc["std"], dtype=np.float64))

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_json()))

    @classmethod
    def load(cls, path) -> NormStats:
        return cls.from_json(json.loads(Path(path).read_text()))


def fit_norm_stats(train: SeriesTensor) -> NormStats:
    mean = train.values.mean(axis=0)
    std = train.values.std(axis=0)
    flat = std <= 1e-12
    if flat.any():
        idx = [(train.variable_names[n], train.attribute_names[c]) for n, c in zip(*np.nonzero(flat))]
        warnings.warn(f"constant channels get std=1: {idx}", RuntimeWarning, stacklevel=2)
        std = np.where(flat, 1.0, std)
    return NormStats(mean, std)


def normalize(series: SeriesTensor, stats: NormStats) -> SeriesTensor:
    return series.with_values((series.values - stats.mean) / stats.std)


def denormalize(values: np.ndarray, stats: NormStats, attribute: int | None = None) -> np.ndarray:
    """Undo :func:`normalize`.

    ``attribute`` selects one attribute's statistics, for arrays shaped
    ``[..., N]`` or ``[..., N, 1]`` such as forecasts of the target.
    """
    values = np.asarray(values, dtype=np.float64)
    if attribute is None:
        return values * stats.std + stats.mean
    mu, sd = stats.mean[:, attribute], stats.std[:, attribute]
    if values.shape[-1] == 1 and values.ndim >= 2 and values.shape[-2] == mu.shape[0]:
        mu, sd = mu[:, None], sd[:, None]
    return values * sd + mu


@dataclass
class WindowedDataset:
    """Aligned (input, target) windows.

    ``inputs`` is ``[S, T_in, N, C]``; ``targets`` is ``[S, tau, N, 1]``, the
    target attribute of the ``tau`` steps after each input window.
    """

    inputs: np.ndarray
    targets: np.ndarray
    starts: np.ndarray
    T_in: int
    tau: int

    def __len__(self) -> int:
        return self.inputs.shape[0]

    def __getitem__(self, i):
        return self.inputs[i], self.targets[i]

    @property
    def samples(self) -> list[tuple[np.ndarray, np.ndarray]]:
        return [(self.inputs[i], self.targets[i]) for i in range(len(self))]


def make_windows(series: SeriesTensor, T_in: int, tau: int, stride: int = 1) -> WindowedDataset:
    if T_in < 1 or tau < 1 or stride < 1:
        raise DataError("T_in, tau and stride must be positive")
    x = series.values
    T = x.shape[0]
    if T < T_in + tau:
        raise DataError(f"series has {T} steps, needs at least T_in + tau = {T_in + tau}")
    starts = np.arange(0, T - T_in - tau + 1, stride)
    inputs = np.stack([x[s : s + T_in] for s in starts])
    targets = np.stack([x[s + T_in : s + T_in + tau, :, 0:1] for s in starts])
    return WindowedDataset(inputs, targets, starts, T_in, tau)


def default_coupling(N: int, lag: int = 3, weight: float = 0.6) -> list[tuple[int, int, int, float]]:
    """A chain of lagged influences ``i -> i+1`` over the first half of the
    variables plus cross links into the second half."""
    edges = []
    for i in range(N - 1):
        edges.append((i, i + 1, lag + (i % 3), weight))
    for i in range(0, N // 2):
        edges.append((i, N - 1 - i, lag, 0.5 * weight))
    return edges


def synth_coupled(
    N: int,
    C: int,
    T: int,
    seed: int = 0,
    coupling_graph: Sequence[tuple[int, int, int, float]] | None = None,
    noise: float = 0.2,
) -> SeriesTensor:
    """Seasonal signals with lagged parent-to-child influence.

    ``coupling_graph`` lists directed edges ``(parent, child, lag, weight)``
    with ``lag >= 1``; ``None`` or an empty list gives independent variables.
    Attribute 0 of each variable is a sinusoid with its own period and
    phase, plus AR(1) noise, a lagged contribution from its covariates
    (attributes 1..C-1) and from its parents' target attribute.
    """
    if N < 2 or C < 1 or T < 1:
        raise DataError("synth_coupled needs N>=2, C>=1, T>=1")
    rng = np.random.default_rng(seed)
    edges = list(coupling_graph or [])
    for p, ch, lag, _ in edges:
        if not (0 <= p < N and 0 <= ch < N) or p == ch or lag < 1:
            raise DataError(f"invalid coupling edge {(p, ch, lag)}")

    t = np.arange(T, dtype=np.float64)
    periods = rng.permutation(np.linspace(18.0, 36.0, N))
    phases = rng.uniform(0.0, 2.0 * np.pi, size=N)
    amps = rng.uniform(0.8, 1.2, size=N)

    def ar1(phi: float, size: tuple[int, ...]) -> np.ndarray:
        eps = rng.standard_normal(size)
        out = np.empty(size)
        out[0] = eps[0] / np.sqrt(1.0 - phi * phi)
        for s in range(1, size[0]):
            out[s] = phi * out[s - 1] + eps[s]
        return out * np.sqrt(1.0 - phi * phi)

    values = np.empty((T, N, C))
    cov = ar1(0.6, (T, N, max(C - 1, 1)))[:, :, : C - 1]
    values[:, :, 1:] = cov
    base = amps * np.sin(2.0 * np.pi * t[:, None] / periods + phases)
    drive = base + noise * ar1(0.5, (T, N))
    if C > 1:
        cov_w = rng.uniform(0.2, 0.4, size=(N, C - 1))
        lagged = np.zeros_like(cov)
        lagged[1:] = cov[:-1]
        drive = drive + (lagged * cov_w).sum(axis=2)

    target = drive.copy()
    if edges:
        parents: dict[int, list[tuple[int, int, float]]] = {}
        for p, ch, lag, w in edges:
            parents.setdefault(ch, []).append((p, lag, w))
        for s in range(T):
            for ch, plist in parents.items():
                acc = 0.0
                for p, lag, w in plist:
                    if s - lag >= 0:
                        acc += w * target[s - lag, p]
                target[s, ch] = drive[s, ch] + acc
    values[:, :, 0] = target
    names = [f"v{i}" for i in range(N)]
    attrs = ["target"] + [f"cov_{c}" for c in range(1, C)]
    return SeriesTensor(values, names, attrs, step="synthetic")
