from __future__ import annotations

import pytest

from robust_envelopes.lintopf import assemble, feasible_region
from robust_envelopes.netmodel import load_bundled_network, random_radial_network


ENV_VARS = [
    "ENVELOPE_SOLVER_TOL",
    "ENVELOPE_SOLVER_FEAS_TOL",
    "ENVELOPE_SOLVER_MAX_ITER",
    "ENVELOPE_SOLVER_BACKEND",
    "ENVELOPE_MAX_WORKERS",
    "ENVELOPE_LIN_SLACK",
    "ENVELOPE_REPORTS_DIR",
    "ENVELOPE_ENCODING_CONFIDENCE",
    "LOG_LEVEL",
]


@pytest.fixture(autouse=True)
def isolated_env(monkeypatch, tmp_path):
    for var in ENV_VARS:
        monkeypatch.delenv(var, raising=False)
    monkeypatch.setenv("ENVELOPE_REPORTS_DIR", str(tmp_path / "reports"))
    monkeypatch.chdir(tmp_path)


@pytest.fixture(scope="session")
def twobus():
    return load_bundled_network()


@pytest.fixture(scope="session")
def twobus_ls(twobus):
    return assemble(twobus)


@pytest.fixture(scope="session")
def twobus_fr(twobus_ls):
    return feasible_region(twobus_ls)


@pytest.fixture(scope="session")
def feeder10():
    return random_radial_network(10, seed=3)
