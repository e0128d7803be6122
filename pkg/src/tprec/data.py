"""Series datasets: synthetic generators, CSV ingestion, splits, normalization.

A ``SeriesDataset`` couples a ``(T, l)`` value matrix with chronological
split bounds and per-channel normalization statistics.  The statistics are
always computed from the training rows alone, so validation/test information
never leaks into preprocessing.
"""

import csv
import math
import os
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .errors import ArgumentError, DomainError, ParseError

DEFAULT_FRACTIONS = (0.6, 0.2)
GENZ_FAMILIES = (
    "oscillatory",
    "product-peak",
    "corner-peak",
    "gaussian",
    "continuous",
    "discontinuous",
)


@dataclass
class SeriesDataset:
    """A time series with split bounds and train-only normalization stats.

    values:       (T, l) float64 matrix (read-only view).
    split_bounds: (train_end, val_end); rows [0, train_end) are training,
                  [train_end, val_end) validation, [val_end, T) test.
    norm_stats:   (mean, std) per channel, computed on the training rows.
    provenance:   how the data came to be (synthetic spec or file path).
    normalized:   whether ``values`` already had the z-score applied.
    """

    values: np.ndarray
    split_bounds: tuple
    norm_stats: tuple
    provenance: dict = field(default_factory=dict)
    normalized: bool = False

    def __post_init__(self):
        vals = np.ascontiguousarray(np.asarray(self.values, dtype=np.float64))
        if vals.ndim == 1:
            vals = vals[:, None]
        if vals.ndim != 2:
            raise ArgumentError(f"values must be (T, l), got shape {vals.shape}")
        vals.setflags(write=False)
        self.values = vals
        T = vals.shape[0]
        train_end, val_end = (int(b) for b in self.split_bounds)
        if not (0 < train_end < val_end < T):
            raise ArgumentError(
                f"split bounds ({train_end}, {val_end}) invalid for length {T}"
            )
        self.split_bounds = (train_end, val_end)
        mean = np.asarray(self.norm_stats[0], dtype=np.float64).reshape(-1)
        std = np.asarray(self.norm_stats[1], dtype=np.float64).reshape(-1)
        if mean.shape != (vals.shape[1],) or std.shape != (vals.shape[1],):
            raise ArgumentError("norm_stats must have one (mean, std) per channel")
        if not (np.all(np.isfinite(mean)) and np.all(np.isfinite(std))):
            raise DomainError("normalization statistics must be finite")
        if np.any(std <= 0):
            raise DomainError("constant training channel: std must be positive")
        self.norm_stats = (mean, std)

    @property
    def length(self) -> int:
        return self.values.shape[0]

    @property
    def channels(self) -> int:
        return self.values.shape[1]

    @property
    def train(self) -> np.ndarray:
        return self.values[: self.split_bounds[0]]

    @property
    def val(self) -> np.ndarray:
        return self.values[self.split_bounds[0] : self.split_bounds[1]]

    @property
    def test(self) -> np.ndarray:
        return self.values[self.split_bounds[1] :]

    def normalize(self, arr: np.ndarray) -> np.ndarray:
        mean, std = self.norm_stats
        return (np.asarray(arr, dtype=np.float64) - mean) / std

    def denormalize(self, arr: np.ndarray) -> np.ndarray:
        mean, std = self.norm_stats
        return np.asarray(arr, dtype=np.float64) * std + mean

    def normalized_values(self) -> np.ndarray:
        """Full value matrix in z-scored units (identity if already applied)."""
        if self.normalized:
            return self.values
        return self.normalize(self.values)

    def meta_dict(self) -> dict:
        mean, std = self.norm_stats
        return {
            "length": self.length,
            "channels": self.channels,
            "split_bounds": list(self.split_bounds),
            "norm_mean": mean.tolist(),
            "norm_std": std.tolist(),
            "normalized": self.normalized,
            "provenance": self.provenance,
        }


def _train_stats(values: np.ndarray, train_end: int):
    train = values[:train_end]
    mean = train.mean(axis=0)
    std = train.std(axis=0)
    return mean, std


def _bounds_from_fractions(T: int, fractions) -> tuple:
    f_train, f_val = (float(f) for f in fractions)
    if f_train <= 0 or f_val <= 0 or f_train + f_val >= 1:
        raise ArgumentError(
            f"fractions {fractions} must be positive and leave a nonempty test split"
        )
    train_end = int(round(f_train * T))
    val_end = int(round((f_train + f_val) * T))
    return train_end, val_end


def split_and_normalize(values, fractions=DEFAULT_FRACTIONS, method="zscore",
                        provenance=None) -> SeriesDataset:
    """Split chronologically and z-score every split with train-only stats.

    ``method`` is "zscore" or "none"; with "none" the values pass through and
    the stored stats are the identity transform.
    """
    vals = np.asarray(values, dtype=np.float64)
    if vals.ndim == 1:
        vals = vals[:, None]
    train_end, val_end = _bounds_from_fractions(vals.shape[0], fractions)
    if method == "zscore":
        mean, std = _train_stats(vals, train_end)
        if np.any(std <= 0):
            raise DomainError("constant training channel: std must be positive")
        out = (vals - mean) / std
    elif method == "none":
        mean = np.zeros(vals.shape[1])
        std = np.ones(vals.shape[1])
        out = vals.copy()
    else:
        raise ArgumentError(f"unknown normalization method {method!r}")
    return SeriesDataset(
        out, (train_end, val_end), (mean, std),
        provenance=dict(provenance or {}), normalized=(method == "zscore"),
    )


def _raw_dataset(values: np.ndarray, provenance: dict,
                 fractions=DEFAULT_FRACTIONS) -> SeriesDataset:
    """Package raw values with default bounds and train-only stats."""
    train_end, val_end = _bounds_from_fractions(values.shape[0], fractions)
    mean, std = _train_stats(values, train_end)
    if np.any(std <= 0):
        raise DomainError("constant training channel: std must be positive")
    return SeriesDataset(values, (train_end, val_end), (mean, std),
                         provenance=provenance, normalized=False)


# ---------------------------------------------------------------------------
# ARFIMA(0, d, 0)


@dataclass
class ArfimaSpec:
    d: float
    T: int
    sigma: float = 1.0
    truncation: int = 1000
    seed: int = 0

    def __post_init__(self):
        self.d = float(self.d)
        self.T = int(self.T)
        self.sigma = float(self.sigma)
        self.truncation = int(self.truncation)
        self.seed = int(self.seed)
        if not abs(self.d) < 0.5:
            raise DomainError(f"d={self.d} outside (-0.5, 0.5)")
        if self.T < 2:
            raise ArgumentError("T must be at least 2")
        if self.sigma <= 0:
            raise DomainError("sigma must be positive")
        if self.truncation < 0:
            raise ArgumentError("truncation must be nonnegative")

    def to_dict(self) -> dict:
        return {"kind": "arfima", "d": self.d, "T": self.T, "sigma": self.sigma,
                "truncation": self.truncation, "seed": self.seed}

    @classmethod
    def from_dict(cls, d: dict) -> "ArfimaSpec":
        return cls(d=d["d"], T=d["T"], sigma=d.get("sigma", 1.0),
                   truncation=d.get("truncation", 1000), seed=d.get("seed", 0))


def arfima_ma_coefficients(d: float, count: int) -> np.ndarray:
    """MA(inf) weights psi_0..psi_{count-1}: psi_0 = 1, psi_j = psi_{j-1}(j-1+d)/j."""
    psi = np.empty(count)
    psi[0] = 1.0
    for j in range(1, count):
        psi[j] = psi[j - 1] * (j - 1 + d) / j
    return psi


def gen_arfima(spec: ArfimaSpec) -> SeriesDataset:
    """Fractional noise x_t = sum_{j<=truncation} psi_j eps_{t-j}, Gaussian eps."""
    rng = np.random.default_rng(spec.seed)
    psi = arfima_ma_coefficients(spec.d, spec.truncation + 1)
    eps = spec.sigma * rng.standard_normal(spec.T + spec.truncation)
    x = np.convolve(eps, psi, mode="full")[spec.truncation : spec.truncation + spec.T]
    return _raw_dataset(x[:, None], provenance=spec.to_dict())


# ---------------------------------------------------------------------------
# Genz families


@dataclass
class GenzSpec:
    family: str
    w: Sequence[float]
    c: Sequence[float]
    T: int
    grid: Optional[Sequence[float]] = None

    def __post_init__(self):
        if self.family not in GENZ_FAMILIES:
            raise ArgumentError(
                f"unknown Genz family {self.family!r}; expected one of {GENZ_FAMILIES}"
            )
        self.w = np.atleast_1d(np.asarray(self.w, dtype=np.float64))
        self.c = np.atleast_1d(np.asarray(self.c, dtype=np.float64))
        if self.w.shape != self.c.shape or self.w.size < 1:
            raise ArgumentError("w and c must be nonempty vectors of equal length")
        if not (np.all(np.isfinite(self.w)) and np.all(np.isfinite(self.c))):
            raise DomainError("Genz shape parameters must be finite")
        self.T = int(self.T)
        if self.T < 2:
            raise ArgumentError("T must be at least 2")
        if self.grid is None:
            self.grid = np.linspace(0.0, 1.0, self.T)
        else:
            self.grid = np.asarray(self.grid, dtype=np.float64)
            if self.grid.ndim != 1 or self.grid.size != self.T:
                raise ArgumentError("grid must be a 1-D array of length T")
            if np.any(np.diff(self.grid) <= 0):
                raise ArgumentError("grid must be strictly increasing")

    def to_dict(self) -> dict:
        return {"kind": "genz", "family": self.family, "w": self.w.tolist(),
                "c": self.c.tolist(), "T": self.T, "grid": self.grid.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "GenzSpec":
        return cls(family=d["family"], w=d["w"], c=d["c"], T=d["T"],
                   grid=d.get("grid"))


def genz_evaluate(family: str, w: np.ndarray, c: np.ndarray,
                  x: np.ndarray) -> np.ndarray:
    """Evaluate a one-dimensional Genz family pointwise on ``x``."""
    w0, c0 = float(w[0]), float(c[0])
    if family == "oscillatory":
        return np.cos(2.0 * math.pi * w0 + c0 * x)
    if family == "product-peak":
        return 1.0 / (c0 ** (-2.0) + (x - w0) ** 2)
    if family == "corner-peak":
        return (1.0 + c0 * x) ** (-2.0)
    if family == "gaussian":
        return np.exp(-(c0**2) * (x - w0) ** 2)
    if family == "continuous":
        return np.exp(-c0 * np.abs(x - w0))
    if family == "discontinuous":
        return np.where(x > w0, 0.0, np.exp(c0 * x))
    raise ArgumentError(f"unknown Genz family {family!r}")


def gen_genz(spec: GenzSpec) -> SeriesDataset:
    vals = genz_evaluate(spec.family, spec.w, spec.c, spec.grid)
    if not np.all(np.isfinite(vals)):
        raise DomainError("Genz evaluation produced non-finite values")
    return _raw_dataset(vals[:, None], provenance=spec.to_dict())


# ---------------------------------------------------------------------------
# CSV ingestion / emission


def _column_indices(header, selection, what):
    """Resolve names or integer indices against the header row."""
    out = []
    for col in selection:
        if isinstance(col, int) or (isinstance(col, str) and col.lstrip("-").isdigit()):
            idx = int(col)
            if not 0 <= idx < len(header):
                raise ParseError(
                    f"{what} index {idx} out of range; file has {len(header)} columns"
                )
            out.append(idx)
        elif col in header:
            out.append(header.index(col))
        else:
            raise ParseError(
                f"{what} {col!r} not found; available columns: {header}"
            )
    return out


def load_csv(path, value_cols=None, timestamp_col=None,
             fractions=DEFAULT_FRACTIONS) -> SeriesDataset:
    """Load a header-first CSV into a dataset.

    ``value_cols`` selects columns by name or index (default: every column
    except ``timestamp_col``).  Unparseable cells raise a ParseError naming
    the 1-based line and the column.
    """
    if not os.path.exists(path):
        raise ParseError(f"no such file: {path}")
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ParseError(f"{path}: empty file (header row required)") from None
        header = [h.strip() for h in header]
        skip = set()
        if timestamp_col is not None:
            skip = set(_column_indices(header, [timestamp_col], "timestamp column"))
        if value_cols is None:
            indices = [i for i in range(len(header)) if i not in skip]
        else:
            if isinstance(value_cols, (str, int)):
                value_cols = [value_cols]
            indices = _column_indices(header, value_cols, "value column")
        if not indices:
            raise ParseError(f"{path}: no value columns selected")
        rows = []
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not cell.strip() for cell in row):
                continue
            if len(row) < len(header):
                raise ParseError(
                    f"{path}:{lineno}: expected {len(header)} columns, got {len(row)}"
                )
            vals = []
            for idx in indices:
                cell = row[idx].strip()
                try:
                    vals.append(float(cell))
                except ValueError:
                    raise ParseError(
                        f"{path}:{lineno}: column {header[idx]!r}: "
                        f"cannot parse {cell!r} as a number"
                    ) from None
            rows.append(vals)
    if not rows:
        raise ParseError(f"{path}: no data rows")
    values = np.asarray(rows, dtype=np.float64)
    return _raw_dataset(values, provenance={"kind": "csv", "path": str(path)},
                        fractions=fractions)


def write_csv(values, path, header=None) -> None:
    """Write a (T, l) matrix as CSV with shortest round-trip float text."""
    vals = np.asarray(values, dtype=np.float64)
    if vals.ndim == 1:
        vals = vals[:, None]
    if header is None:
        header = [f"value_{i}" for i in range(vals.shape[1])] \
            if vals.shape[1] > 1 else ["value"]
    if len(header) != vals.shape[1]:
        raise ArgumentError("header length must match the number of channels")
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for row in vals:
            writer.writerow([repr(float(v)) for v in row])


def dataset_from_spec(spec: dict) -> SeriesDataset:
    """Dispatch a JSON experiment spec to the matching generator/loader."""
    if not isinstance(spec, dict) or "kind" not in spec:
        raise ArgumentError("dataset spec must be a dict with a 'kind' key")
    kind = spec["kind"]
    if kind == "arfima":
        return gen_arfima(ArfimaSpec.from_dict(spec))
    if kind == "genz":
        return gen_genz(GenzSpec.from_dict(spec))
    if kind == "csv":
        return load_csv(
            spec["path"],
            value_cols=spec.get("value_cols"),
            timestamp_col=spec.get("timestamp_col"),
            fractions=tuple(spec.get("fractions", DEFAULT_FRACTIONS)),
        )
    raise ArgumentError(f"unknown dataset kind {kind!r}")
