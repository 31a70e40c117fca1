"""Acceptance suite: one test per criterion, summarized at the end of the run."""

import csv
import math
import os
import shutil
from pathlib import Path

import numpy as np
import pytest
from conftest import real_dataset_path
from test_qsim import bell, dense_circuit, dense_observable

from qrcload import gasearch, ingest, pipeline, qsim, quantize, readout
from qrcload.config import load_config

EXPECTED_MEMORY = {8: 75.0, 6: 81.2, 4: 87.5, 3: 90.6, 2: 93.8}


def quiet(*_):
    pass


def read_csv(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


# ------------------------------------------------------------------ 1

def test_c1_memory_savings_table(criterion, synthetic_year_run):
    criterion("1 memory savings", "8/6/4/3/2-bit column equals 75.0/81.2/87.5/90.6/93.8")
    assert {k: quantize.memory_saved(k) for k in EXPECTED_MEMORY} == EXPECTED_MEMORY
    cfg = synthetic_year_run[0]
    for row in read_csv(Path(cfg.output_dir) / "results.csv"):
        k = int(row["bit_width"])
        if k in EXPECTED_MEMORY:
            assert row["memory_saved_pct"] == f"{EXPECTED_MEMORY[k]:.1f}"


# ------------------------------------------------------------------ 2, 3

@pytest.fixture(scope="module")
def real_run(tmp_path_factory):
    path = real_dataset_path()
    if not path.is_file():
        return None
    out = tmp_path_factory.mktemp("real")
    cfg = load_config(data_path=str(path), output_dir=str(out), reservoir="explicit",
                      n_qubits=7, n_layers=4, seeds=(0, 1), shot_settings=(None, 512),
                      n_jobs=os.cpu_count() or 1)
    pipeline.cmd_prepare(cfg, echo=quiet)
    rows, _, failures = pipeline.cmd_run(cfg, echo=quiet)
    assert not failures, failures
    return {(r["bit_width"], r["shots"]): r for r in rows}


def _need_real(run):
    if run is None:
        pytest.fail(f"Tetouan CSV not found at {real_dataset_path()} "
                    "(set QRC_TETOUAN_CSV); criterion cannot be evaluated")


def test_c2_relative_quantization_claim(criterion, real_run):
    criterion("2 relative quantization", "8/6-bit degradation <= 5%, 2-bit > 6-bit (real data)")
    _need_real(real_run)
    for shots in ("none", "512"):
        d = {k: real_run[(k, shots)]["degradation_pct"] for k in (8, 6, 2)}
        assert d[8] <= 5.0 and d[6] <= 5.0, (shots, d)
        assert d[2] > d[6], (shots, d)


def test_c3_fp32_sanity_band(criterion, real_run):
    criterion("3 FP32 sanity band", "test RMSE in [2500, 4500] for both shot settings (real data)")
    _need_real(real_run)
    for shots in ("none", "512"):
        assert 2500.0 <= real_run[(32, shots)]["rmse_mean"] <= 4500.0


# ------------------------------------------------------------------ 4

def test_c4_simulator_oracles(criterion):
    criterion("4 simulator oracles", "100 dense configs <= 1e-9, norms <= 1e-10, Bell exact")
    rng = np.random.default_rng(99)
    worst = 0.0
    for _ in range(100):
        n, L = int(rng.integers(1, 4)), int(rng.integers(1, 5))
        stride, g = int(rng.choice([1, 3])), float(rng.uniform(0.1, 1.5))
        params = qsim.haar_params(n, L, int(rng.integers(1 << 30)))
        x = rng.random(11)
        psi = qsim.run_reservoir_circuit(x, params, n, L, stride, g)
        ref = dense_circuit(x, params, n, L, stride, g)
        for obs in qsim.observable_set(n):
            exact = np.real(np.vdot(ref, dense_observable(obs, n) @ ref))
            worst = max(worst, abs(qsim.expectation(psi, obs) - exact))
    assert worst <= 1e-9

    # replay one circuit gate by gate
    n, L, g = 3, 4, 0.5
    params = qsim.haar_params(n, L, 5)
    x = rng.random(11)
    psi = qsim.zero_state(n)
    for l in range(1, L + 1):
        for q in range(n):
            psi = qsim.apply_ry(psi, q, qsim.chebyshev_angle(x[(q + l) % 11], l,
                                                             params.layer_shifts[l - 1]))
            assert abs(np.linalg.norm(psi) - 1) <= 1e-10
        for q in range(n):
            psi = qsim.apply_unitary_zyz(psi, q, *params.fixed_rotations[l - 1, q])
            assert abs(np.linalg.norm(psi) - 1) <= 1e-10
        for parity in ("even", "odd"):
            psi = qsim.apply_brickwork_layer(psi, parity, g)
            assert abs(np.linalg.norm(psi) - 1) <= 1e-10
    assert np.allclose(psi, qsim.run_reservoir_circuit(x, params, n, L, 1, g), atol=1e-12)

    b = bell()
    assert abs(qsim.expectation(b, qsim.PauliObservable("ZZ", 0)) - 1) <= 1e-12
    assert abs(qsim.expectation(b, qsim.PauliObservable("XX", 0)) - 1) <= 1e-12


# ------------------------------------------------------------------ 5

def test_c5_shot_noise_statistics(criterion):
    criterion("5 shot noise", "512 shots, 1e5 trials: mean within 3 SE, std within 5%")
    shots, trials = 512, 100_000
    rng = np.random.default_rng(2025)
    for p in (0.0, 0.5, -0.5):
        est = qsim.sample_from_expectations(np.full(trials, p), shots, rng)
        sigma = math.sqrt((1 - p * p) / shots)
        assert abs(est.mean() - p) <= 3 * sigma / math.sqrt(trials)
        assert abs(est.std(ddof=1) / sigma - 1) <= 0.05


# ------------------------------------------------------------------ 6

def test_c6_elastic_net_oracles(criterion):
    criterion("6 elastic-net oracles", "OLS and ridge within 1e-6, monotone objective, KKT <= 1e-5")
    rng = np.random.default_rng(6)
    X = rng.normal(size=(50, 5)) * [1, 2, 0.5, 3, 1.5] + [0, 1, -2, 0.5, 3]
    y = X @ rng.normal(size=5) + 1.2 + 0.1 * rng.normal(size=50)

    ols = readout.ElasticNetReadout(alpha=0.0, tol=1e-12, max_iter=100_000).fit(X, y)
    A = np.column_stack([X, np.ones(50)])
    beta = np.linalg.solve(A.T @ A, A.T @ y)
    assert np.max(np.abs(ols.coef_ - beta[:5])) <= 1e-6
    assert abs(ols.intercept_ - beta[5]) <= 1e-6

    alpha = 0.2
    ridge = readout.ElasticNetReadout(alpha=alpha, l1_ratio=0.0, tol=1e-12).fit(X, y)
    Z = (X - X.mean(0)) / X.std(0)
    w = np.linalg.solve(Z.T @ Z / 50 + alpha * np.eye(5), Z.T @ (y - y.mean()) / 50)
    assert np.max(np.abs(ridge.coef_std_ - w)) <= 1e-6

    R = rng.normal(size=(400, 40))
    t = R[:, :5] @ rng.normal(size=5) + 0.3 * rng.normal(size=400)
    for a, l1 in ((1e-3, 0.5), (1e-2, 0.9), (1e-1, 0.1)):
        m = readout.ElasticNetReadout(alpha=a, l1_ratio=l1).fit(R, t)
        h = m.objective_history_
        assert np.all(h[1:] <= h[:-1] + 1e-10 * np.abs(h[:-1]))
        assert np.max(m.kkt_residuals()) <= 1e-5


# ------------------------------------------------------------------ 7

def test_c7_quantizer_oracles(criterion, synthetic_year_run):
    criterion("7 quantizer oracles", "nearest level on 1e4 vectors, exhaustive clip grid, "
              "refine <= naive in every pipeline cell")
    rng = np.random.default_rng(7)
    for i in range(10_000):
        k = (2, 3, 4, 6, 8)[i % 5]
        w = rng.normal(size=24) * rng.exponential()
        clip = rng.uniform(0.1, 1.2) * np.max(np.abs(w))
        codes, scale = quantize.quantize_with_clip(w, k, clip)
        levels = np.arange(-quantize.qmax(k), quantize.qmax(k) + 1) * scale
        best = np.min(np.abs(w[:, None] - levels[None, :]), axis=1)
        assert np.all(np.abs(w - codes * scale) <= best + 1e-12)

    for i in range(300):
        k = (2, 3, 4, 6, 8)[i % 5]
        w = rng.standard_t(3, size=99)
        top = np.max(np.abs(w))
        errs = []
        for p in range(20, 101):
            c = p / 100 * top
            m = 2 ** (k - 1) - 1
            s = c / m
            q = np.clip(np.sign(w) * np.floor(np.abs(w) / s + 0.5), -m, m)
            errs.append(np.mean((w - q * s) ** 2))
        low = min(errs)
        ref = max(p for p, e in zip(range(20, 101), errs) if e == low) / 100 * top
        assert quantize.optimal_clip_search(w, k) == ref

    cfg, _, cells, failures = synthetic_year_run
    assert not failures
    checks = read_csv(Path(cfg.output_dir) / "refine_check.csv")
    assert len(checks) == len(cells) * 5 == 20
    for c in cells:
        for k, naive in c.naive_mse.items():
            assert c.refine_mse[k] <= naive


# ------------------------------------------------------------------ 8

def test_c8_ga_properties(criterion, synthetic_short_csv, tmp_path):
    criterion("8 GA properties", "18 evaluations, non-increasing best, bit-reproducible trajectory")
    data = ingest.prepare(synthetic_short_csv)

    def search():
        evaluator = gasearch.FitnessEvaluator(data.train, data.val, seed=0)
        res = gasearch.run_search(evaluator, generations=3, population=6, seed=0)
        return res, evaluator

    a, ev_a = search()
    b, _ = search()
    assert a.n_evaluations == 18 and ev_a.calls == 18 and len(a.records) == 18
    bpg = a.best_per_generation
    assert all(later <= earlier for earlier, later in zip(bpg, bpg[1:]))
    strip = lambda recs: [(r["generation"], r["genome"], r["fitness"], r["cached"]) for r in recs]
    assert strip(a.records) == strip(b.records)
    assert a.best == b.best


# ------------------------------------------------------------------ 9

def test_c9_pipeline_reproducibility(criterion, synthetic_short_csv, tmp_path):
    criterion("9 reproducibility", "two cmd_run invocations give byte-identical results.csv")
    cfg = load_config(data_path=str(synthetic_short_csv), output_dir=str(tmp_path / "out"),
                      reservoir="explicit", cache_dir=str(tmp_path / "cache"))
    pipeline.cmd_prepare(cfg, echo=quiet)
    pipeline.cmd_run(cfg, echo=quiet)
    first = (tmp_path / "out" / "results.csv").read_bytes()
    shutil.rmtree(tmp_path / "cache")
    pipeline.cmd_run(cfg, echo=quiet)
    second = (tmp_path / "out" / "results.csv").read_bytes()
    assert first == second
