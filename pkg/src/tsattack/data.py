"""Series ingestion, normalization, sliding windows and chronological splits."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
import pandas as pd

from .errors import ConfigError, DataError
from .io import SCHEMA_VERSION, read_json, write_json

log = logging.getLogger(__name__)

__all__ = [
    "RawSeries",
    "CsvSchema",
    "NormalizationMeta",
    "WindowedDataset",
    "HOUSEHOLD_POWER_SCHEMA",
    "GOOGLE_STOCK_SCHEMA",
    "load_csv",
    "resample_mean",
    "normalize",
    "denormalize",
    "make_windows",
    "chrono_split",
    "prepare_windows",
    "synth_series",
    "save_dataset",
    "load_dataset",
]


@dataclass
class RawSeries:
    timestamps: np.ndarray  # datetime64[ns], strictly increasing
    values: np.ndarray  # (T, F)
    feature_names: list[str]
    target_index: int = 0
    dropped_rows: int = 0

    def __post_init__(self):
        self.timestamps = np.asarray(self.timestamps, dtype="datetime64[ns]")
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.ndim == 1:
            self.values = self.values[:, None]
        if self.values.ndim != 2 or len(self.timestamps) != len(self.values):
            raise DataError(
                f"timestamps ({len(self.timestamps)}) and values {self.values.shape} disagree"
            )
        if len(self.feature_names) != self.values.shape[1]:
            raise DataError(
                f"{len(self.feature_names)} feature names for {self.values.shape[1]} columns"
            )
        if not 0 <= self.target_index < self.values.shape[1]:
            raise DataError(f"target index {self.target_index} out of range")
        if len(self.timestamps) > 1 and not (np.diff(self.timestamps) > np.timedelta64(0)).all():
            raise DataError("timestamps must be strictly increasing")
        if not np.isfinite(self.values).all():
            raise DataError("series contains non-finite values")

    def __len__(self) -> int:
        return len(self.values)

    @property
    def num_features(self) -> int:
        return self.values.shape[1]

    @property
    def target(self) -> np.ndarray:
        return self.values[:, self.target_index]

    def rows(self, sl: slice) -> "RawSeries":
        return RawSeries(self.timestamps[sl], self.values[sl], list(self.feature_names),
                         self.target_index, self.dropped_rows)


@dataclass
class CsvSchema:
    """Column layout of an input CSV.

    Multiple ``timestamp_columns`` are joined with a space before parsing,
    which covers files that split date and time.
    """

    feature_columns: list[str]
    target_column: str
    timestamp_columns: list[str] = field(default_factory=lambda: ["timestamp"])
    timestamp_format: str | None = None
    separator: str = ","
    na_values: list[str] = field(default_factory=lambda: ["", "?", "NA", "NaN", "nan"])

    def __post_init__(self):
        if self.target_column not in self.feature_columns:
            raise ConfigError(f"target column {self.target_column!r} is not a feature column")


HOUSEHOLD_POWER_SCHEMA = CsvSchema(
    feature_columns=[
        "Global_active_power", "Global_reactive_power", "Voltage", "Global_intensity",
        "Sub_metering_1", "Sub_metering_2", "Sub_metering_3",
    ],
    target_column="Global_active_power",
    timestamp_columns=["Date", "Time"],
    timestamp_format="%d/%m/%Y %H:%M:%S",
    separator=";",
)

GOOGLE_STOCK_SCHEMA = CsvSchema(
    feature_columns=["Open", "High", "Low", "Close", "Volume"],
    target_column="Open",
    timestamp_columns=["Date"],
    timestamp_format="%Y-%m-%d",
)


def load_csv(path: str | Path, schema: CsvSchema) -> RawSeries:
    """Read a CSV into a :class:`RawSeries`, dropping unparseable rows.

    The number of dropped rows is stored on the result and logged.
    """
    path = Path(path)
    if not path.is_file():
        raise DataError(f"no such file: {path}")
    try:
        df = pd.read_csv(path, sep=schema.separator, dtype=str, keep_default_na=False,
                         low_memory=False)
    except pd.errors.EmptyDataError:
        raise DataError(f"{path} is empty") from None
    df.columns = [c.strip() for c in df.columns]
    required = list(schema.timestamp_columns) + list(schema.feature_columns)
    missing = [c for c in required if c not in df.columns]
    if missing:
        raise DataError(f"{path}: missing required column(s): {', '.join(missing)}")

    stamp_text = df[schema.timestamp_columns[0]].str.strip()
    for col in schema.timestamp_columns[1:]:
        stamp_text = stamp_text + " " + df[col].str.strip()
    stamps = pd.to_datetime(stamp_text, format=schema.timestamp_format, errors="coerce")

    na = set(schema.na_values)
    cols = {}
    for col in schema.feature_columns:
        text = df[col].str.strip()
        text = text.where(~text.isin(na))
        cols[col] = pd.to_numeric(text, errors="coerce")
    values = pd.DataFrame(cols)
    ok = stamps.notna() & values.notna().all(axis=1) & np.isfinite(values).all(axis=1)
    dropped = int((~ok).sum())
    if dropped:
        log.info("%s: dropped %d row(s) with missing or unparseable values", path, dropped)
    if not ok.any():
        raise DataError(f"{path}: no usable rows")

    stamps = stamps[ok].to_numpy(dtype="datetime64[ns]")
    arr = values[ok].to_numpy(dtype=np.float64)
    order = np.argsort(stamps, kind="stable")
    stamps, arr = stamps[order], arr[order]
    if len(stamps) > 1 and (np.diff(stamps) == np.timedelta64(0)).any():
        raise DataError(f"{path}: duplicate timestamps")
    return RawSeries(stamps, arr, list(schema.feature_columns),
                     schema.feature_columns.index(schema.target_column), dropped)


def resample_mean(series: RawSeries, bucket: str | pd.Timedelta) -> RawSeries:
    """Average rows into epoch-aligned buckets of width ``bucket``; empty buckets vanish."""
    width = pd.Timedelta(bucket)
    if len(series) > 1:
        native = pd.Timedelta(np.diff(series.timestamps).min())
        if width < native:
            raise ConfigError(f"bucket {width} is finer than the sampling interval {native}")
    df = pd.DataFrame(series.values, index=pd.DatetimeIndex(series.timestamps))
    out = df.resample(width, origin="epoch").mean().dropna(how="any")
    return RawSeries(out.index.to_numpy(dtype="datetime64[ns]"), out.to_numpy(),
                     list(series.feature_names), series.target_index, series.dropped_rows)


@dataclass
class NormalizationMeta:
    mins: np.ndarray
    maxs: np.ndarray
    feature_names: list[str] = field(default_factory=list)

    def __post_init__(self):
        self.mins = np.asarray(self.mins, dtype=np.float64)
        self.maxs = np.asarray(self.maxs, dtype=np.float64)
        if (self.maxs < self.mins).any():
            raise DataError("normalization max below min")

    @property
    def scale(self) -> np.ndarray:
        span = self.maxs - self.mins
        return np.where(span > 0, span, 1.0)

    def to_dict(self) -> dict:
        return {"mins": self.mins.tolist(), "maxs": self.maxs.tolist(),
                "feature_names": list(self.feature_names)}

    @classmethod
    def from_dict(cls, d: dict) -> "NormalizationMeta":
        return cls(d["mins"], d["maxs"], list(d.get("feature_names", [])))


def normalize(series: RawSeries, meta: NormalizationMeta | None = None
              ) -> tuple[RawSeries, NormalizationMeta]:
    """Min-max scale to [0, 1].

    Without ``meta`` the statistics come from ``series`` itself.  Constant
    features map to 0; values outside the fitted range are clamped.
    """
    if meta is None:
        meta = NormalizationMeta(series.values.min(axis=0), series.values.max(axis=0),
                                 list(series.feature_names))
    scaled = (series.values - meta.mins) / meta.scale
    scaled = np.where(meta.maxs > meta.mins, scaled, 0.0)
    scaled = np.clip(scaled, 0.0, 1.0)
    return (RawSeries(series.timestamps, scaled, list(series.feature_names),
                      series.target_index, series.dropped_rows), meta)


def denormalize(values: np.ndarray, meta: NormalizationMeta, feature: int | None = None
                ) -> np.ndarray:
    """Invert :func:`normalize`; ``feature`` selects a single column's scale."""
    values = np.asarray(values, dtype=np.float64)
    if feature is None:
        return values * meta.scale + meta.mins
    return values * meta.scale[feature] + meta.mins[feature]


@dataclass
class WindowedDataset:
    """Samples ``(X[i], y[i])``: ``X[i]`` holds rows ``origin[i]-w .. origin[i]-1``
    and ``y[i]`` is the target feature at row ``origin[i]``."""

    X: np.ndarray  # (N, w, F)
    y: np.ndarray  # (N,)
    origin: np.ndarray  # (N,) int, strictly increasing
    window: int
    feature_names: list[str]
    target_index: int = 0
    normalization: NormalizationMeta | None = None

    def __post_init__(self):
        self.X = np.asarray(self.X, dtype=np.float64)
        self.y = np.asarray(self.y, dtype=np.float64)
        self.origin = np.asarray(self.origin, dtype=np.int64)
        n = len(self.y)
        if self.X.ndim != 3 or self.X.shape[0] != n or self.X.shape[1] != self.window:
            raise DataError(f"window array {self.X.shape} inconsistent with {n} targets, w={self.window}")
        if len(self.origin) != n or (n > 1 and (np.diff(self.origin) <= 0).any()):
            raise DataError("origin indices must be strictly increasing, one per sample")
        if self.normalization is not None and n:
            lo = min(self.X.min(), self.y.min())
            hi = max(self.X.max(), self.y.max())
            if lo < 0.0 or hi > 1.0:
                raise DataError(f"normalized dataset has values outside [0, 1]: [{lo}, {hi}]")

    def __len__(self) -> int:
        return len(self.y)

    @property
    def num_features(self) -> int:
        return self.X.shape[2]

    def subset(self, sl: slice | np.ndarray) -> "WindowedDataset":
        return WindowedDataset(self.X[sl], self.y[sl], self.origin[sl], self.window,
                               list(self.feature_names), self.target_index, self.normalization)

    def to_dict(self) -> dict:
        return {
            "schema_version": SCHEMA_VERSION,
            "kind": "tsattack.windowed_dataset",
            "window": self.window,
            "feature_names": list(self.feature_names),
            "target_index": self.target_index,
            "normalization": self.normalization.to_dict() if self.normalization else None,
            "shape": list(self.X.shape),
            "X": self.X.ravel().tolist(),
            "y": self.y.tolist(),
            "origin": self.origin.tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "WindowedDataset":
        if d.get("kind") != "tsattack.windowed_dataset":
            raise DataError("not a windowed dataset file")
        if d.get("schema_version") != SCHEMA_VERSION:
            raise DataError(f"unsupported dataset schema_version {d.get('schema_version')}")
        norm = d.get("normalization")
        X = np.asarray(d["X"], dtype=np.float64).reshape(d["shape"])
        return cls(X, d["y"], d["origin"], d["window"], d["feature_names"], d["target_index"],
                   NormalizationMeta.from_dict(norm) if norm else None)


def make_windows(series: RawSeries, window: int,
                 normalization: NormalizationMeta | None = None) -> WindowedDataset:
    """Stride-1 windows: sample i = rows i..i+w-1, target = row i+w."""
    T = len(series)
    if window < 1:
        raise ConfigError(f"window size must be >= 1, got {window}")
    if T <= window:
        raise DataError(f"series of length {T} too short for window {window}")
    view = np.lib.stride_tricks.sliding_window_view(series.values, window, axis=0)
    X = np.ascontiguousarray(view[: T - window].transpose(0, 2, 1))
    y = series.target[window:].copy()
    return WindowedDataset(X, y, np.arange(window, T), window, list(series.feature_names),
                           series.target_index, normalization)


def chrono_split(dataset: WindowedDataset, train_fraction: float
                 ) -> tuple[WindowedDataset, WindowedDataset]:
    """First ``floor(fraction * N)`` samples train, the rest test; no shuffling."""
    if not 0.0 < train_fraction < 1.0:
        raise ConfigError(f"train fraction must lie in (0, 1), got {train_fraction}")
    n = len(dataset)
    k = math.floor(train_fraction * n)
    if k == 0 or k == n:
        raise DataError(f"split of {n} samples at {train_fraction} leaves one side empty")
    return dataset.subset(slice(0, k)), dataset.subset(slice(k, n))


def prepare_windows(series: RawSeries, window: int, train_fraction: float
                    ) -> tuple[WindowedDataset, WindowedDataset, NormalizationMeta]:
    """Normalize with training-portion statistics, window, and split chronologically.

    The fitted rows are exactly those any training sample touches (its inputs
    and its target), so no test target informs the scaling.
    """
    n_samples = len(series) - window
    if n_samples < 2:
        raise DataError(f"series of length {len(series)} too short for window {window}")
    k = math.floor(train_fraction * n_samples)
    if k < 1:
        raise DataError(f"split of {n_samples} samples at {train_fraction} leaves train empty")
    _, meta = normalize(series.rows(slice(0, k + window)))
    scaled, _ = normalize(series, meta)
    ds = make_windows(scaled, window, meta)
    train, test = chrono_split(ds, train_fraction)
    return train, test, meta


SYNTH_KINDS = ("sine_trend", "ar1", "mixture")


def synth_series(kind: str, length: int, noise: float = 0.1, seed: int = 0,
                 *, phi: float = 0.8, period: float = 24.0, trend: float = 0.5,
                 amplitude: float = 1.0) -> RawSeries:
    """Deterministic synthetic series on an hourly grid starting 2020-01-01.

    ``sine_trend``  x_t = A sin(2 pi t / P) + trend * t / T + noise * e_t
    ``ar1``         x_0 = 1 if noise == 0 else noise * e_0 / sqrt(1 - phi^2),
                    x_t = phi * x_{t-1} + noise * e_t
    ``mixture``     three features: u_t = AR(1) as above, c_t = cos(2 pi t / P),
                    and the target x_t = A sin(2 pi t / P) + u_t + noise * e'_t

    with e, e' independent standard normals drawn from ``default_rng(seed)``.
    """
    if length <= 0:
        raise ConfigError(f"length must be positive, got {length}")
    if kind not in SYNTH_KINDS:
        raise ConfigError(f"unknown synthetic kind {kind!r}; expected one of {SYNTH_KINDS}")
    rng = np.random.default_rng(seed)
    t = np.arange(length, dtype=np.float64)
    stamps = np.datetime64("2020-01-01T00:00", "ns") + t.astype(np.int64) * np.timedelta64(1, "h")

    def ar1(eps: np.ndarray) -> np.ndarray:
        x = np.empty(length)
        x[0] = 1.0 if noise == 0 else noise * eps[0] / math.sqrt(1.0 - phi * phi)
        for i in range(1, length):
            x[i] = phi * x[i - 1] + noise * eps[i]
        return x

    if kind == "sine_trend":
        e = rng.standard_normal(length)
        x = amplitude * np.sin(2 * np.pi * t / period) + trend * t / length + noise * e
        return RawSeries(stamps, x[:, None], ["value"], 0)
    if kind == "ar1":
        return RawSeries(stamps, ar1(rng.standard_normal(length))[:, None], ["value"], 0)
    u = ar1(rng.standard_normal(length))
    e2 = rng.standard_normal(length)
    target = amplitude * np.sin(2 * np.pi * t / period) + u + noise * e2
    values = np.column_stack([target, u, np.cos(2 * np.pi * t / period)])
    return RawSeries(stamps, values, ["target", "driver", "phase"], 0)


def save_dataset(path, dataset: WindowedDataset) -> Path:
    return write_json(path, dataset.to_dict())


def load_dataset(path) -> WindowedDataset:
    path = Path(path)
    if not path.is_file():
        raise DataError(f"no such dataset file: {path}")
    return WindowedDataset.from_dict(read_json(path))


def lag1_autocorr(x: Sequence[float]) -> float:
    x = np.asarray(x, dtype=np.float64) - np.mean(x)
    return float((x[1:] * x[:-1]).sum() / (x * x).sum())
