"""End-to-end stages behind the command line: prepare, search, run, report.

Every stage reads and writes plain files under ``RunConfig.output_dir``::

    prepared/{train,val,test}.frame.qrc   scaled hourly frames
    prepared/{train,val,test}.windows.qrc stacked windows (T*11 inputs + targets)
    prepared/scaler.json, prepared/summary.json
    search_report.jsonl, reservoir.json
    results.csv, degradation.csv, trace.csv, refine_check.csv, results.json
    models/                              FP32 and quantized readout files
    manifest.json                        sha256 of every other file
"""

from __future__ import annotations

import csv
import hashlib
import io
import json
import logging
import math
import os
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__, gasearch, ingest, quantize, readout, reservoir
from .colfile import read_columns, write_columns

logger = logging.getLogger(__name__)

SPLITS = ("train", "val", "test")
THRESHOLDS = (5.0, 15.0)
RESULT_COLUMNS = ["bit_width", "shots", "rmse_mean", "rmse_std", "mae_mean", "mae_std",
                  "degradation_pct", "memory_saved_pct"]


class StageError(RuntimeError):
    """A stage cannot run because its inputs are missing or inconsistent."""


def file_sha256(path):
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def shots_label(shots):
    return "none" if shots is None else str(shots)


def _fmt(x, digits=6):
    if x is None or (isinstance(x, float) and not math.isfinite(x)):
        return ""
    return f"{x:.{digits}f}"


def _write_text(path, text):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(text, encoding="utf-8")
    os.replace(tmp, path)


def _csv_text(header, rows):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    return buf.getvalue()


# ---------------------------------------------------------------- manifest

def update_manifest(cfg, stage, timings=None, failures=None, data_hash=None):
    out = Path(cfg.output_dir)
    path = out / "manifest.json"
    manifest = json.loads(path.read_text()) if path.exists() else {}
    manifest["tool_version"] = __version__
    manifest["config_hash"] = cfg.config_hash()
    if data_hash:
        manifest["data_hash"] = data_hash
    manifest.setdefault("timings", {}).update(timings or {})
    if failures is not None:
        manifest.setdefault("failures", {})[stage] = failures
    files = {}
    for p in sorted(out.rglob("*")):
        if p.is_file() and p != path and not p.name.endswith(".tmp"):
            files[p.relative_to(out).as_posix()] = file_sha256(p)
    manifest["files"] = files
    _write_text(path, json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return manifest


# ---------------------------------------------------------------- prepare

def _frame_to_file(path, frame):
    secs = frame.timestamps.astype("datetime64[s]").astype(np.int64).astype(float)
    data = np.column_stack([secs, frame.features, frame.target])
    cols = ["timestamp"] + list(frame.feature_names) + [ingest.TARGET_NAME]
    write_columns(path, cols, data, {"split": frame.split, "scaled": int(frame.scaled)})


def _windows_to_file(path, wins):
    n, T, f = wins.inputs.shape
    tsec = wins.target_timestamps.astype("datetime64[s]").astype(np.int64).astype(float)
    data = np.column_stack([wins.inputs.reshape(n, T * f), wins.target_scaled,
                            wins.target_raw, tsec])
    cols = [f"x{t}_{j}" for t in range(T) for j in range(f)]
    cols += ["target_scaled", "target_raw", "target_timestamp"]
    write_columns(path, cols, data, {"split": wins.split, "window": T, "n_features": f})


def _windows_from_file(path):
    cols, data, meta = read_columns(path)
    T, f = int(meta["window"]), int(meta["n_features"])
    n = data.shape[0]
    inputs = data[:, :T * f].reshape(n, T, f)
    tts = data[:, T * f + 2].astype(np.int64).astype("datetime64[s]").astype("datetime64[ns]")
    step = np.timedelta64(1, "h")
    its = tts[:, None] - step * np.arange(T, 0, -1)[None, :]
    return ingest.WindowSet(inputs, data[:, T * f], data[:, T * f + 1], tts, its, meta["split"])


def data_hash_of(path):
    try:
        return file_sha256(path)[:16]
    except OSError as exc:
        raise StageError(f"cannot read data file {path}: {exc}") from exc


def cmd_prepare(cfg, echo=print):
    t0 = time.perf_counter()
    if not os.path.isfile(cfg.data_path):
        raise StageError(f"data file not found: {cfg.data_path}")
    dhash = data_hash_of(cfg.data_path)
    prep_dir = Path(cfg.output_dir) / "prepared"
    summary_path = prep_dir / "summary.json"
    key = {"data_hash": dhash, "window": cfg.window, "split_ratios": list(cfg.split_ratios),
           "version": __version__}
    if summary_path.exists():
        summary = json.loads(summary_path.read_text())
        expected = [prep_dir / f"{s}.windows.qrc" for s in SPLITS]
        if summary.get("key") == key and all(p.exists() for p in expected):
            echo("cache hit: prepared data is up to date")
            _echo_summary(summary, echo)
            return summary

    data = ingest.prepare(cfg.data_path, tuple(cfg.split_ratios), cfg.window)
    for frame, wins in zip(data.frames, (data.train, data.val, data.test)):
        _frame_to_file(prep_dir / f"{frame.split}.frame.qrc", frame)
        _windows_to_file(prep_dir / f"{wins.split}.windows.qrc", wins)
    _write_text(prep_dir / "scaler.json", json.dumps(data.scaler.to_dict(), indent=2) + "\n")
    summary = {
        "key": key, "n_hourly": data.n_hourly, "n_rows": len(data.frame),
        "split_rows": {f.split: len(f) for f in data.frames},
        "split_windows": {w.split: len(w) for w in (data.train, data.val, data.test)},
        "features": list(ingest.FEATURE_NAMES), "target": ingest.TARGET_NAME,
    }
    _write_text(summary_path, json.dumps(summary, indent=2, sort_keys=True) + "\n")
    _echo_summary(summary, echo)
    update_manifest(cfg, "prepare", {"prepare": time.perf_counter() - t0}, data_hash=dhash)
    return summary


def _echo_summary(summary, echo):
    echo(f"hourly samples: {summary['n_hourly']}")
    echo(f"rows after lag trimming: {summary['n_rows']}")
    rows, wins = summary["split_rows"], summary["split_windows"]
    echo("split rows: " + ", ".join(f"{s}={rows[s]}" for s in SPLITS))
    echo("split windows: " + ", ".join(f"{s}={wins[s]}" for s in SPLITS))
    echo("features: " + ", ".join(summary["features"]))


@dataclass
class Prepared:
    scaler: ingest.ScalerState
    windows: dict = field(default_factory=dict)


def load_prepared(cfg):
    prep_dir = Path(cfg.output_dir) / "prepared"
    if not (prep_dir / "summary.json").exists():
        raise StageError(f"no prepared data in {prep_dir}; run `prepare` first")
    scaler = ingest.ScalerState.from_dict(json.loads((prep_dir / "scaler.json").read_text()))
    wins = {s: _windows_from_file(prep_dir / f"{s}.windows.qrc") for s in SPLITS}
    return Prepared(scaler, wins)


# ---------------------------------------------------------------- search

def cmd_search(cfg, skip_search=False, echo=print, evaluate=None):
    t0 = time.perf_counter()
    out = Path(cfg.output_dir)
    if skip_search:
        res = cfg.explicit_reservoir()
        _write_text(out / "reservoir.json", json.dumps(
            {"source": "explicit", "config": res.to_dict()}, indent=2, sort_keys=True) + "\n")
        echo(f"search skipped; using n_qubits={res.n_qubits}, n_layers={res.n_layers}")
        update_manifest(cfg, "search", {"search": time.perf_counter() - t0})
        return None
    prep = load_prepared(cfg)
    if evaluate is None:
        evaluate = gasearch.FitnessEvaluator(
            prep.windows["train"], prep.windows["val"], seed=cfg.ga_seed,
            alphas=cfg.alpha_grid, kernel_decays=cfg.kernel_decays,
            subset_fraction=cfg.ga_subset_fraction, cache_dir=cfg.resolved_cache_dir())
    buf = io.StringIO()
    result = gasearch.run_search(
        evaluate, generations=cfg.ga_generations, population=cfg.ga_population,
        elitism=cfg.ga_elitism, seed=cfg.ga_seed, tournament_size=cfg.ga_tournament_size,
        mutation_rate=cfg.ga_mutation_rate, sigma_frac=cfg.ga_sigma_frac, report=buf)
    _write_text(out / "search_report.jsonl", buf.getvalue())
    if not math.isfinite(result.best.fitness):
        raise StageError("every search candidate failed; see search_report.jsonl")
    best = result.best.genome.to_config(0, cfg.kernel_decays)
    _write_text(out / "reservoir.json", json.dumps(
        {"source": "search", "fitness": result.best.fitness, "config": best.to_dict(),
         "evaluations": result.n_evaluations}, indent=2, sort_keys=True) + "\n")
    echo(f"evaluations: {result.n_evaluations}")
    echo("best genome: " + json.dumps(best.to_dict(), sort_keys=True))
    echo(f"best validation RMSE (scaled): {result.best.fitness:.6f}")
    update_manifest(cfg, "search", {"search": time.perf_counter() - t0})
    return result


def resolve_reservoir(cfg):
    if cfg.reservoir == "explicit":
        return cfg.explicit_reservoir()
    path = Path(cfg.output_dir) / "reservoir.json"
    if not path.exists():
        raise StageError("reservoir = from-search but no reservoir.json; run `search` "
                         "(or `search --skip-search`) first")
    d = json.loads(path.read_text())["config"]
    d["kernel_decays"] = tuple(d["kernel_decays"])
    return reservoir.ReservoirConfig.from_dict(d)


# ---------------------------------------------------------------- run

@dataclass
class CellResult:
    seed: int
    shots: object
    alpha: float
    rmse: dict
    mae: dict
    refine_mse: dict
    naive_mse: dict
    fp32_test_pred: np.ndarray


def run_cell(prep, base_config, seed, shots, cfg, model_dir=None):
    """Extract features, fit the FP32 readout and evaluate every bit width."""
    config = base_config.with_seed(seed)
    params = reservoir.generate_params(config)
    cache = cfg.resolved_cache_dir()
    feats = {}
    for i, split in enumerate(SPLITS):
        feats[split] = reservoir.extract_dataset(
            prep.windows[split].inputs, params, config, shots=shots,
            base_seed=10 * seed + i, cache_dir=cache, n_jobs=cfg.n_jobs)
    tr, va, te = (prep.windows[s] for s in SPLITS)
    model = readout.select_alpha(feats["train"], tr.target_scaled, feats["val"],
                                 va.target_scaled, config.l1_ratio, cfg.alpha_grid)
    bits = sorted(set(cfg.bit_widths) | {quantize.FULL_PRECISION}, reverse=True)
    rm, ma, ref, nai = {}, {}, {}, {}
    fp32_pred = None
    for k in bits:
        q = quantize.FixedPointReadout.from_fitted(model, feats["train"], tr.target_scaled,
                                                   bits=k, rounds=cfg.refine_rounds)
        pred = ingest.invert_target(q.predict(feats["test"]), prep.scaler)
        m = readout.metrics(pred, te.target_raw)
        rm[k], ma[k] = m.rmse, m.mae
        ref[k] = q.quantized_.history[-1]
        if k < quantize.FULL_PRECISION:
            naive = quantize.naive_quantize(model.coef_, model.intercept_, k)
            d = tr.target_scaled - naive.predict(feats["train"])
            nai[k] = float(np.mean(d * d))
        else:
            fp32_pred = pred
        if model_dir is not None:
            name = f"readout-seed{seed}-shots{shots_label(shots)}-{k}bit.txt"
            _write_text(Path(model_dir) / name, q.to_text(config.config_hash()))
    return CellResult(seed, shots, model.alpha, rm, ma, ref, nai, fp32_pred)


def aggregate_results(cells, bit_widths, shot_settings):
    """Rows of results.csv: mean/std over seeds per (bit width, shots)."""
    rows = []
    for shots in shot_settings:
        group = [c for c in cells if c.shots == shots]
        if len(group) == 0:
            continue
        agg = lambda vals: readout.aggregate_over_seeds(vals) if len(vals) > 1 \
            else (float(vals[0]), float("nan"))
        base_mean, _ = agg([c.rmse[quantize.FULL_PRECISION] for c in group])
        for k in bit_widths:
            rmean, rstd = agg([c.rmse[k] for c in group])
            mmean, mstd = agg([c.mae[k] for c in group])
            rows.append({"bit_width": k, "shots": shots_label(shots),
                         "rmse_mean": rmean, "rmse_std": rstd,
                         "mae_mean": mmean, "mae_std": mstd,
                         "degradation_pct": 0.0 if k == quantize.FULL_PRECISION
                         else quantize.degradation(rmean, base_mean),
                         "memory_saved_pct": quantize.memory_saved(k)})
    return rows


def _result_rows_text(rows):
    body = [[r["bit_width"], r["shots"], _fmt(r["rmse_mean"]), _fmt(r["rmse_std"]),
             _fmt(r["mae_mean"]), _fmt(r["mae_std"]), _fmt(r["degradation_pct"], 4),
             f"{r['memory_saved_pct']:.1f}"] for r in rows]
    return _csv_text(RESULT_COLUMNS, body)


def _degradation_text(rows):
    body = []
    for r in rows:
        d = r["degradation_pct"]
        body.append([r["bit_width"], r["shots"], _fmt(d, 4), _fmt(THRESHOLDS[0], 1),
                     _fmt(THRESHOLDS[1], 1), int(d > THRESHOLDS[0]), int(d > THRESHOLDS[1])])
    return _csv_text(["bit_width", "shots", "degradation_pct", "threshold_5",
                      "threshold_15", "exceeds_5", "exceeds_15"], body)


def cmd_run(cfg, echo=print):
    """Full grid over seeds x shot settings x bit widths. Returns (rows, cells, failures)."""
    t0 = time.perf_counter()
    out = Path(cfg.output_dir)
    prep = load_prepared(cfg)
    base = resolve_reservoir(cfg)
    cells, failures = [], []
    timings = {}
    for seed in cfg.seeds:
        for shots in cfg.shot_settings:
            tc = time.perf_counter()
            try:
                cells.append(run_cell(prep, base, seed, shots, cfg, out / "models"))
            except Exception as exc:  # noqa: BLE001 - failures are recorded per cell
                logger.exception("cell seed=%s shots=%s failed", seed, shots)
                failures.append({"seed": seed, "shots": shots_label(shots),
                                 "error": f"{type(exc).__name__}: {exc}"})
            timings[f"run/seed{seed}/shots{shots_label(shots)}"] = time.perf_counter() - tc
            echo(f"cell seed={seed} shots={shots_label(shots)} done")

    rows = aggregate_results(cells, cfg.bit_widths, cfg.shot_settings)
    _write_text(out / "results.csv", _result_rows_text(rows))
    _write_text(out / "degradation.csv", _degradation_text(rows))

    check = []
    for c in cells:
        for k in sorted(c.naive_mse, reverse=True):
            check.append([c.seed, shots_label(c.shots), k, repr(c.refine_mse[k]),
                          repr(c.naive_mse[k]), int(c.refine_mse[k] <= c.naive_mse[k])])
    _write_text(out / "refine_check.csv", _csv_text(
        ["seed", "shots", "bit_width", "refined_train_mse", "naive_train_mse", "ok"], check))

    te = prep.windows["test"]
    n = min(cfg.trace_length, len(te))
    first_seed = [c for c in cells if c.seed == cfg.seeds[0]]
    header = ["timestamp", "actual"] + [f"fp32_shots_{shots_label(c.shots)}" for c in first_seed]
    trace = []
    stamps = np.datetime_as_string(te.target_timestamps[:n], unit="s")
    for i in range(n):
        trace.append([stamps[i], _fmt(te.target_raw[i])] +
                     [_fmt(c.fp32_test_pred[i]) for c in first_seed])
    _write_text(out / "trace.csv", _csv_text(header, trace))

    summary = {"reservoir": base.to_dict(), "rows": rows, "failures": failures,
               "alphas": [{"seed": c.seed, "shots": shots_label(c.shots), "alpha": c.alpha}
                          for c in cells]}
    _write_text(out / "results.json", json.dumps(summary, indent=2, sort_keys=True,
                                                 default=str) + "\n")
    timings["run"] = time.perf_counter() - t0
    update_manifest(cfg, "run", timings, failures=failures)
    return rows, cells, failures


# ---------------------------------------------------------------- report

def threshold_flag(degradation_pct):
    if degradation_pct > THRESHOLDS[1]:
        return ">15%"
    if degradation_pct > THRESHOLDS[0]:
        return ">5%"
    return ""


def read_results(output_dir):
    path = Path(output_dir) / "results.csv"
    if not path.exists():
        raise StageError(f"no results.csv in {output_dir}; run `run` first")
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    if not rows:
        raise StageError(f"{path} has no result rows")
    return rows


def cmd_report(output_dir, echo=print):
    rows = read_results(output_dir)
    header = f"{'bits':>4}  {'shots':>5}  {'rmse':>22}  {'degr.%':>8}  {'mem.saved%':>10}  flag"
    echo(header)
    echo("-" * len(header))
    for r in rows:
        d = float(r["degradation_pct"])
        std = f" +- {float(r['rmse_std']):.1f}" if r["rmse_std"] else ""
        rm = f"{float(r['rmse_mean']):.1f}{std}"
        echo(f"{r['bit_width']:>4}  {r['shots']:>5}  {rm:>22}  {d:>8.2f}  "
             f"{float(r['memory_saved_pct']):>10.1f}  {threshold_flag(d)}")
    finite = [r for r in rows if r["shots"] != "none"]
    if finite:
        b = min(finite, key=lambda r: float(r["rmse_mean"]))
        echo(f"best finite-shot configuration: {b['bit_width']}-bit, shots={b['shots']}, "
             f"RMSE {float(b['rmse_mean']):.1f}")
    return rows
