import sys

import numpy as np
import pytest

from perpetuity import LogGamma, LogNormal, SignedMixture, TWO_POINT_FIXTURE, solve_alpha


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


@pytest.fixture(scope="session")
def lognormal():
    return LogNormal(mu=-1.0, sigma=1.0)


@pytest.fixture(scope="session")
def lognormal_sol(lognormal):
    return solve_alpha(lognormal)


@pytest.fixture(scope="session")
def two_point():
    return TWO_POINT_FIXTURE


@pytest.fixture(scope="session")
def two_point_sol(two_point):
    return solve_alpha(two_point)


@pytest.fixture(scope="session")
def loggamma():
    return LogGamma(gamma=4.0, beta=1.0, mu=5.0)


@pytest.fixture(scope="session")
def loggamma_sol(loggamma):
    return solve_alpha(loggamma)


@pytest.fixture(scope="session")
def light_signed():
    """Signed factor whose block weights X~^alpha have finite variance (alpha = 1)."""
    return SignedMixture(LogNormal(mu=-0.125, sigma=0.5), q=0.5)


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance") or sys.modules.get("tests.test_acceptance")
    if mod is None or not getattr(mod, "RESULTS", None):
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(mod.RESULTS):
        terminalreporter.write_line(mod.RESULTS[n])
