import os
from pathlib import Path

import numpy as np
import pytest

from qrcload import pipeline
from qrcload.config import load_config
from qrcload.datasets import write_synthetic_csv

ACCEPTANCE = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(ACCEPTANCE, key=lambda k: int(k.split()[0])):
        ok, detail = ACCEPTANCE[key]
        terminalreporter.write_line(f"[{'PASS' if ok else 'FAIL'}] {key}: {detail}")


@pytest.fixture
def criterion(request):
    """Record one acceptance line; the test outcome decides PASS/FAIL."""
    state = {"name": None, "detail": ""}

    def record(name, detail=""):
        state["name"], state["detail"] = name, detail

    yield record
    if state["name"]:
        rep = getattr(request.node, "rep_call", None)
        ok = rep is not None and rep.passed
        ACCEPTANCE[state["name"]] = (ok, state["detail"])


@pytest.hookimpl(tryfirst=True, hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    if rep.when == "call":
        item.rep_call = rep


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def synthetic_year_csv(tmp_path_factory):
    return write_synthetic_csv(tmp_path_factory.mktemp("data") / "tetouan_synthetic.csv")


@pytest.fixture(scope="session")
def synthetic_short_csv(tmp_path_factory):
    return write_synthetic_csv(tmp_path_factory.mktemp("data") / "short.csv", days=60, seed=3)


@pytest.fixture(scope="session")
def synthetic_year_run(tmp_path_factory, synthetic_year_csv):
    """Default grid on the synthetic year with the N=7, L=4 architecture."""
    out = tmp_path_factory.mktemp("run")
    cfg = load_config(data_path=str(synthetic_year_csv), output_dir=str(out),
                      reservoir="explicit", cache_dir=str(out / "cache"))
    pipeline.cmd_prepare(cfg, echo=lambda *_: None)
    rows, cells, failures = pipeline.cmd_run(cfg, echo=lambda *_: None)
    return cfg, rows, cells, failures


def real_dataset_path():
    env = os.environ.get("QRC_TETOUAN_CSV")
    if env:
        return Path(env)
    root = Path(__file__).resolve().parents[1]
    return root / "data" / "Tetouan City power consumption.csv"
