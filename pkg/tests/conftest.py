from __future__ import annotations

import re
from pathlib import Path

import numpy as np
import pytest

from hiervlp.data import load_manifest
from hiervlp.trainer import load_train_config, run_pretraining

DATA = Path(__file__).parent / "data"
ROOT = Path(__file__).parent.parent


def unit_rows(rng: np.random.Generator, *shape: int) -> np.ndarray:
    x = rng.normal(size=shape)
    return x / np.linalg.norm(x, axis=-1, keepdims=True)


def central_difference(f, arrays, which: int, h: float = 1e-4) -> np.ndarray:
    """Numerical gradient of scalar ``f(*arrays)`` w.r.t. ``arrays[which]``."""
    base = [np.array(a, dtype=np.float64) for a in arrays]
    grad = np.zeros_like(base[which])
    for idx in np.ndindex(grad.shape):
        plus = [a.copy() for a in base]
        minus = [a.copy() for a in base]
        plus[which][idx] += h
        minus[which][idx] -= h
        grad[idx] = (f(*plus) - f(*minus)) / (2 * h)
    return grad


def max_relative_error(analytic: np.ndarray, numeric: np.ndarray, floor: float = 1e-8) -> float:
    # the floor only matters where both gradients are exactly zero (e.g. B = 1)
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor)
    return float(np.max(np.abs(analytic - numeric) / denom))


@pytest.fixture(scope="session")
def fixture_path() -> Path:
    return DATA / "fixture_manifest.jsonl"


@pytest.fixture(scope="session")
def fixture_dataset(fixture_path):
    return load_manifest(fixture_path)


@pytest.fixture(scope="session")
def desk_config():
    return load_train_config(ROOT / "configs" / "desk.yaml")


@pytest.fixture(scope="session")
def desk_run(fixture_dataset, desk_config, tmp_path_factory):
    """One full desk-scale pretraining run on the fixture, shared across test modules."""
    import time

    out = tmp_path_factory.mktemp("desk_run")
    t0 = time.perf_counter()
    result = run_pretraining(fixture_dataset, desk_config, out)
    result.seconds = time.perf_counter() - t0
    result.out_dir = out
    return result


# one summary line per acceptance criterion -----------------------------------

_ACCEPTANCE: dict[int, list[str]] = {}


def pytest_runtest_logreport(report):
    if report.when != "call" and not (report.when == "setup" and report.outcome != "passed"):
        return
    m = re.search(r"test_acceptance\.py::test_criterion_(\d+)", report.nodeid)
    if m:
        _ACCEPTANCE.setdefault(int(m.group(1)), []).append(report.outcome)


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_ACCEPTANCE):
        status = "PASS" if all(o == "passed" for o in _ACCEPTANCE[n]) else "FAIL"
        terminalreporter.write_line(f"criterion {n:2d}: {status}")
