"""Synthetic stand-in for the Tetouan CSV.

The real dataset (UCI id 849) is not redistributed with this package. This
generator writes a file with the same header, timestamp format and 10-minute
cadence, with daily/weekly load cycles driven by a smooth weather process.
It exists for tests and smoke runs; numbers obtained on it say nothing about
the real data.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np
import pandas as pd

from .ingest import CSV_COLUMNS


def synthetic_tetouan(days=364, seed=0, start="2017-01-01"):
    rng = np.random.default_rng(seed)
    n = days * 144
    ts = pd.date_range(start, periods=n, freq="10min")
    t_hours = np.arange(n) / 6.0
    hour = ts.hour.to_numpy() + ts.minute.to_numpy() / 60.0
    dow = ts.dayofweek.to_numpy()
    season = np.sin(2 * np.pi * (t_hours / 24 - 100) / 365)

    def ar1(scale, rho=0.995):
        e = rng.normal(0.0, scale, n)
        out = np.empty(n)
        acc = 0.0
        for i in range(n):
            acc = rho * acc + e[i]
            out[i] = acc
        return out

    temperature = 18 + 7 * season + 4 * np.sin(2 * np.pi * (hour - 9) / 24) + ar1(0.15)
    humidity = np.clip(70 - 1.5 * (temperature - 18) + ar1(0.4), 10, 100)
    wind = np.clip(1.5 + ar1(0.05) + rng.exponential(0.3, n), 0.05, None)
    sun = np.clip(np.sin(np.pi * (hour - 6) / 13), 0, None)
    general = np.clip(sun * (600 + 150 * season) + rng.normal(0, 20, n), 0.01, None)
    diffuse = np.clip(sun * (120 + 30 * season) + rng.normal(0, 8, n), 0.01, None)

    daily = (0.95 + 0.18 * np.sin(2 * np.pi * (hour - 14) / 24)
             + 0.25 * np.exp(-0.5 * ((hour - 20.5) / 1.8) ** 2)
             - 0.12 * np.exp(-0.5 * ((hour - 5) / 2.0) ** 2))
    weekly = np.where(dow >= 5, 0.92, 1.0)
    base = 30000 * daily * weekly * (1 + 0.012 * (temperature - 18)) + 2500 * season
    zone1 = base + ar1(60.0, rho=0.99) + rng.normal(0, 300, n)
    zone2 = 0.65 * zone1 + rng.normal(0, 400, n)
    zone3 = 0.55 * zone1 + rng.normal(0, 400, n)

    stamps = [f"{t.month}/{t.day}/{t.year} {t.hour}:{t.minute:02d}" for t in ts]
    cols = [temperature, humidity, wind, general, diffuse, zone1, zone2, zone3]
    frame = pd.DataFrame({CSV_COLUMNS["timestamp"]: stamps})
    for key, values in zip(list(CSV_COLUMNS)[1:], cols):
        frame[CSV_COLUMNS[key]] = np.round(values, 5)
    return frame


def write_synthetic_csv(path, days=364, seed=0):
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    synthetic_tetouan(days=days, seed=seed).to_csv(path, index=False)
    return path
