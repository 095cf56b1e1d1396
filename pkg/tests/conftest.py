import sys

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from stopou.domain import make_ball_domain
from stopou.estimators import TestFunction
from stopou.matrixcalc import OUModel

settings.register_profile("stopou", deadline=None, max_examples=40,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("stopou")


@pytest.fixture
def kol():
    return OUModel.kolmogorov()


@pytest.fixture
def ball2():
    return make_ball_domain(1.0, 2)


@pytest.fixture
def bump2():
    return TestFunction("gauss_bump", center=[0.0, 0.0], width=0.5)


@pytest.fixture
def gen():
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    rows = getattr(mod, "REPORT", [])
    if rows:
        terminalreporter.section("acceptance criteria")
        for line in rows:
            terminalreporter.write_line(line)
