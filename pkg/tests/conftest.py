import time

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from sqglab.solver import SimConfig, run
from sqglab.spectral import Grid, random_field

settings.register_profile(
    "sqglab", deadline=None, max_examples=25,
    suppress_health_check=[HealthCheck.too_slow, HealthCheck.function_scoped_fixture],
)
settings.load_profile("sqglab")


@pytest.fixture(scope="session")
def small_run():
    """Nonlinear critical run at N=64 shared by the cheaper tests."""
    g = Grid(64)
    cfg = SimConfig(g, kappa=0.1, alpha=0.5, dt=2e-3, t_end=1.0, snapshot_stride=10)
    theta0 = random_field(g, kmax=6, seed=0)
    return cfg, theta0, run(cfg, theta0)


@pytest.fixture(scope="session")
def critical_run():
    """The N=128 reference run used by the acceptance criteria."""
    g = Grid(128)
    cfg = SimConfig(g, kappa=0.1, alpha=0.5, dt=1e-3, t_end=2.0, snapshot_stride=10)
    theta0 = random_field(g, kmax=6, seed=0)
    start = time.perf_counter()
    traj = run(cfg, theta0)
    RUN_SECONDS["critical"] = time.perf_counter() - start
    return cfg, theta0, traj


# wall time of shared simulations, charged to the acceptance runtime budgets
RUN_SECONDS = {}


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


# verdicts of tests/test_acceptance.py, printed once at the end of the session
ACCEPTANCE = pytest.StashKey[dict]()


def pytest_configure(config):
    config.stash[ACCEPTANCE] = {}


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    verdicts = config.stash.get(ACCEPTANCE, {})
    if not verdicts:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(verdicts):
        ok, detail = verdicts[n]
        terminalreporter.write_line(f"criterion {n:2d}: {'PASS' if ok else 'FAIL'}  {detail}")
