"""Tetouan power-consumption ingestion: parse, resample, featurize, split, scale, window.

Feature column order (fixed)::

    temperature, humidity, wind_speed, general_diffuse_flows, diffuse_flows,
    sin_hour, cos_hour, sin_dow, cos_dow, lag1_power, lag24_power

The target is Zone 1 consumption, kept in physical units on the frame and
scaled separately by :class:`ScalerState`.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np
import pandas as pd

# canonical name -> header in the Tetouan CSV
CSV_COLUMNS = {
    "timestamp": "DateTime",
    "temperature": "Temperature",
    "humidity": "Humidity",
    "wind_speed": "Wind Speed",
    "general_diffuse_flows": "general diffuse flows",
    "diffuse_flows": "diffuse flows",
    "zone1_power": "Zone 1 Power Consumption",
    "zone2_power": "Zone 2 Power Consumption",
    "zone3_power": "Zone 3 Power Consumption",
}
NUMERIC_FIELDS = [k for k in CSV_COLUMNS if k != "timestamp"]
WEATHER_FIELDS = ["temperature", "humidity", "wind_speed",
                  "general_diffuse_flows", "diffuse_flows"]
FEATURE_NAMES = WEATHER_FIELDS + ["sin_hour", "cos_hour", "sin_dow", "cos_dow",
                                  "lag1_power", "lag24_power"]
N_FEATURES = len(FEATURE_NAMES)
TARGET_NAME = "zone1_power"
MAX_LAG = 24


class IngestError(ValueError):
    """Base class for data preparation failures."""


class SchemaError(IngestError):
    def __init__(self, column):
        super().__init__(f"missing required column {column!r}")
        self.column = column


class ParseError(IngestError):
    def __init__(self, row, column, value):
        super().__init__(f"row {row}: cannot parse {column!r} value {value!r}")
        self.row = row
        self.column = column


def _norm(name):
    return " ".join(str(name).split())


def parse_raw_csv(path):
    """Read the Tetouan CSV into a frame of raw 10-minute records.

    Header matching ignores surrounding and repeated whitespace but is case
    sensitive. Returns a DataFrame with a ``timestamp`` column followed by the
    numeric fields in :data:`NUMERIC_FIELDS`, in file order. ``ParseError.row``
    is the 0-based data row index.
    """
    raw = pd.read_csv(path, dtype=str, keep_default_na=False)
    by_norm = {_norm(c): c for c in raw.columns}
    out = {}
    for key, header in CSV_COLUMNS.items():
        src = by_norm.get(_norm(header))
        if src is None:
            raise SchemaError(header)
        out[key] = raw[src]

    ts = pd.to_datetime(out["timestamp"].str.strip(), format="%m/%d/%Y %H:%M",
                        errors="coerce")
    bad = np.flatnonzero(ts.isna().to_numpy())
    if bad.size:
        i = int(bad[0])
        raise ParseError(i, CSV_COLUMNS["timestamp"], out["timestamp"].iloc[i])
    records = pd.DataFrame({"timestamp": ts})
    for key in NUMERIC_FIELDS:
        col = pd.to_numeric(out[key].str.strip(), errors="coerce")
        bad = np.flatnonzero(~np.isfinite(col.to_numpy(dtype=float)))
        if bad.size:
            i = int(bad[0])
            raise ParseError(i, CSV_COLUMNS[key], out[key].iloc[i])
        records[key] = col.astype(float)
    if not records["timestamp"].is_monotonic_increasing or \
            records["timestamp"].duplicated().any():
        raise IngestError("timestamps are not strictly increasing")
    return records


def resample_hourly(records):
    """Average the 10-minute records of each clock hour.

    Every hour between the first and last record must contain at least one
    source record; gaps are an error rather than being imputed.
    """
    if len(records) == 0:
        raise IngestError("no records to resample")
    hours = records["timestamp"].dt.floor("h")
    grouped = records.drop(columns="timestamp").groupby(hours.to_numpy())
    hourly = grouped.mean()
    full = pd.date_range(hours.iloc[0], hours.iloc[-1], freq="h")
    missing = full.difference(hourly.index)
    if len(missing):
        raise IngestError(f"hour {missing[0]} has no source records")
    hourly.index.name = "timestamp"
    return hourly.reset_index()


@dataclass(frozen=True)
class FeatureFrame:
    """Hourly features with the physical-unit target.

    ``split`` tags where the frame came from ("full", "train", "val", "test");
    ``scaled`` records whether :func:`apply_minmax` has been applied.
    """

    timestamps: np.ndarray
    features: np.ndarray
    target: np.ndarray
    split: str = "full"
    scaled: bool = False
    feature_names: tuple = field(default=tuple(FEATURE_NAMES))

    def __post_init__(self):
        n = len(self.timestamps)
        if self.features.shape != (n, len(self.feature_names)):
            raise IngestError(
                f"features shape {self.features.shape} != ({n}, {len(self.feature_names)})"
            )
        if self.target.shape != (n,):
            raise IngestError(f"target shape {self.target.shape} != ({n},)")

    def __len__(self):
        return len(self.timestamps)

    def rows(self, start, stop, split=None):
        return replace(self, timestamps=self.timestamps[start:stop],
                       features=self.features[start:stop],
                       target=self.target[start:stop],
                       split=split or self.split)


def engineer_features(hourly):
    """Build the 11-column feature frame; drops the first 24 hours (undefined lags)."""
    n = len(hourly)
    if n < MAX_LAG + 1:
        raise IngestError(f"need at least {MAX_LAG + 1} hourly rows, got {n}")
    ts = pd.DatetimeIndex(hourly["timestamp"])
    hour = ts.hour.to_numpy(dtype=float)
    dow = ts.dayofweek.to_numpy(dtype=float)
    power = hourly[TARGET_NAME].to_numpy(dtype=float)

    cols = [hourly[c].to_numpy(dtype=float) for c in WEATHER_FIELDS]
    cols += [np.sin(2 * np.pi * hour / 24), np.cos(2 * np.pi * hour / 24),
             np.sin(2 * np.pi * dow / 7), np.cos(2 * np.pi * dow / 7)]
    lag1 = np.full(n, np.nan)
    lag1[1:] = power[:-1]
    lag24 = np.full(n, np.nan)
    lag24[MAX_LAG:] = power[:-MAX_LAG]
    cols += [lag1, lag24]
    features = np.column_stack(cols)[MAX_LAG:]
    return FeatureFrame(timestamps=ts.to_numpy()[MAX_LAG:],
                        features=np.ascontiguousarray(features),
                        target=power[MAX_LAG:].copy())


def split_bounds(n, ratios=(0.70, 0.10, 0.20)):
    """Boundary indices ``(floor(r0*n), floor((r0+r1)*n))``."""
    if len(ratios) != 3 or any(r < 0 for r in ratios) or \
            not math.isclose(sum(ratios), 1.0, abs_tol=1e-9):
        raise IngestError(f"ratios must be three non-negative values summing to 1, got {ratios}")
    # the epsilon absorbs binary representation error, e.g. 0.7 * 10
    a = math.floor(ratios[0] * n + 1e-9)
    b = math.floor((ratios[0] + ratios[1]) * n + 1e-9)
    return a, b


def chronological_split(frame, ratios=(0.70, 0.10, 0.20)):
    """Contiguous train/val/test partition without shuffling."""
    n = len(frame)
    a, b = split_bounds(n, ratios)
    parts = (frame.rows(0, a, "train"), frame.rows(a, b, "val"),
             frame.rows(b, n, "test"))
    for part in parts:
        if len(part) == 0:
            raise IngestError(f"{part.split} split is empty for n={n}")
    return parts


@dataclass(frozen=True)
class ScalerState:
    feature_min: np.ndarray
    feature_max: np.ndarray
    target_min: float
    target_max: float

    def to_dict(self):
        return {"feature_min": self.feature_min.tolist(),
                "feature_max": self.feature_max.tolist(),
                "target_min": self.target_min, "target_max": self.target_max}

    @classmethod
    def from_dict(cls, d):
        return cls(np.asarray(d["feature_min"], dtype=float),
                   np.asarray(d["feature_max"], dtype=float),
                   float(d["target_min"]), float(d["target_max"]))


def fit_minmax(train):
    """Fit per-column min/max on a training frame only."""
    if train.split != "train":
        raise IngestError(f"scaler must be fit on the train split, got {train.split!r}")
    if train.scaled:
        raise IngestError("scaler must be fit on unscaled data")
    fmin = train.features.min(axis=0)
    fmax = train.features.max(axis=0)
    for name, lo, hi in zip(train.feature_names, fmin, fmax):
        if not hi > lo:
            raise IngestError(f"column {name!r} is constant on the train split")
    tmin, tmax = float(train.target.min()), float(train.target.max())
    if not tmax > tmin:
        raise IngestError(f"column {TARGET_NAME!r} is constant on the train split")
    return ScalerState(fmin, fmax, tmin, tmax)


def apply_minmax(frame, scaler):
    """Scale features into train-range units; values outside [0, 1] are kept."""
    if frame.scaled:
        raise IngestError("frame is already scaled")
    feats = (frame.features - scaler.feature_min) / (scaler.feature_max - scaler.feature_min)
    return replace(frame, features=feats, scaled=True)


def scale_target(y, scaler):
    return (np.asarray(y, dtype=float) - scaler.target_min) / (scaler.target_max - scaler.target_min)


def invert_target(y_scaled, scaler):
    return np.asarray(y_scaled, dtype=float) * (scaler.target_max - scaler.target_min) + scaler.target_min


@dataclass(frozen=True)
class WindowSample:
    inputs: np.ndarray
    target_scaled: float
    target_raw: float
    target_timestamp: np.datetime64


@dataclass(frozen=True)
class WindowSet:
    """Stacked sliding windows from a single split.

    ``inputs`` has shape (n_windows, T, 11); ``input_timestamps`` (n_windows, T).
    """

    inputs: np.ndarray
    target_scaled: np.ndarray
    target_raw: np.ndarray
    target_timestamps: np.ndarray
    input_timestamps: np.ndarray
    split: str = "full"

    def __len__(self):
        return self.inputs.shape[0]

    def __getitem__(self, i):
        return WindowSample(self.inputs[i], float(self.target_scaled[i]),
                            float(self.target_raw[i]), self.target_timestamps[i])

    def subset(self, start, stop):
        return WindowSet(self.inputs[start:stop], self.target_scaled[start:stop],
                         self.target_raw[start:stop], self.target_timestamps[start:stop],
                         self.input_timestamps[start:stop], self.split)


def make_windows(frame, scaler, T=24):
    """Stride-1 windows over rows ``[i, i+T)`` predicting row ``i+T``."""
    if not frame.scaled:
        raise IngestError("make_windows expects a scaled frame")
    n = len(frame)
    if n <= T:
        raise IngestError(f"need more than T={T} rows, got {n}")
    count = n - T
    view = np.lib.stride_tricks.sliding_window_view(frame.features, T, axis=0)
    inputs = np.ascontiguousarray(view[:count].transpose(0, 2, 1))
    tview = np.lib.stride_tricks.sliding_window_view(frame.timestamps, T)
    raw = frame.target[T:].copy()
    return WindowSet(inputs=inputs, target_scaled=scale_target(raw, scaler),
                     target_raw=raw, target_timestamps=frame.timestamps[T:].copy(),
                     input_timestamps=np.ascontiguousarray(tview[:count]),
                     split=frame.split)


@dataclass(frozen=True)
class PreparedData:
    frame: FeatureFrame
    n_hourly: int
    scaler: ScalerState
    train: WindowSet
    val: WindowSet
    test: WindowSet
    frames: tuple


def prepare(path, ratios=(0.70, 0.10, 0.20), T=24):
    """Run the full ingestion chain on a CSV path."""
    hourly = resample_hourly(parse_raw_csv(path))
    frame = engineer_features(hourly)
    train, val, test = chronological_split(frame, ratios)
    scaler = fit_minmax(train)
    scaled = tuple(apply_minmax(f, scaler) for f in (train, val, test))
    wins = [make_windows(f, scaler, T) for f in scaled]
    return PreparedData(frame, len(hourly), scaler, *wins, frames=scaled)
