from __future__ import annotations

import time
from pathlib import Path

import numpy as np
import pytest

from macaw import experiments as ex
from macaw.config import load_config

ROOT = Path(__file__).resolve().parents[1]
CONFIGS = ROOT / "configs"

_ACCEPTANCE = pytest.StashKey[dict]()


def pytest_configure(config):
    config.stash[_ACCEPTANCE] = {}


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    rows = config.stash.get(_ACCEPTANCE, {})
    if not rows:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(rows, key=lambda k: (int(k.split(".")[0]), k)):
        ok, detail = rows[key]
        terminalreporter.write_line(f"criterion {key}: {'PASS' if ok else 'FAIL'}  {detail}")


@pytest.fixture
def acceptance(request):
    """Record one criterion outcome; the summary is printed at the end of the run."""
    store = request.config.stash[_ACCEPTANCE]

    def record(key: str, ok: bool, detail: str) -> bool:
        store[key] = (bool(ok), detail)
        print(f"criterion {key}: {'PASS' if ok else 'FAIL'}  {detail}")
        return bool(ok)

    return record


@pytest.fixture(scope="session")
def scm_config():
    return load_config(CONFIGS / "scm.toml")


@pytest.fixture(scope="session")
def scm_run(scm_config):
    """The tabular benchmark model trained once per session."""
    t0 = time.perf_counter()
    data = ex.scm_data(scm_config)
    model, report = ex.fit_tabular(scm_config, data.train)
    return {"data": data, "model": model, "report": report, "seconds": time.perf_counter() - t0}


@pytest.fixture(scope="session")
def image_config():
    return load_config(CONFIGS / "images.toml")


@pytest.fixture(scope="session")
def image_run(image_config):
    """Codec, two latent groups and the full evaluation on the synthetic images."""
    t0 = time.perf_counter()
    data = ex.image_data(image_config)
    gmodel, reports = ex.fit_image_groups(image_config, data)
    results = ex.image_eval(image_config, gmodel, data, seed=0)
    return {"data": data, "gmodel": gmodel, "reports": reports, "results": results,
            "seconds": time.perf_counter() - t0}


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
