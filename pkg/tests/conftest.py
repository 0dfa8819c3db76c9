import numpy as np
import pytest

from souproc.model import InitialMeasure, Mode, SimConfig, validate_config


def make_cfg(**kw):
    base = dict(d=1, gamma=1.0, beta=0.5, N=50, h=0.01, t_max=1.0, mode=Mode.COUPLED,
                initial=InitialMeasure(1.0, "gaussian", (0.0,), 1.0))
    base.update(kw)
    return validate_config(SimConfig(**base))


@pytest.fixture
def gen():
    return np.random.default_rng(12345)


ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
