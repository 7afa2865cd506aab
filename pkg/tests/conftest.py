import math

import numpy as np
import pytest

from killedsde.htransform import make_double_barrier_h, make_parabolic_h, make_single_barrier_h, make_transient_h

SIGMA = 0.2
L_SINGLE = math.log(0.8)
L_DOUBLE, R_DOUBLE = math.log(0.85), math.log(1.25)


@pytest.fixture
def rng():
    return np.random.default_rng(20240917)


def all_transforms():
    return {
        "quartic": make_double_barrier_h(SIGMA, L_DOUBLE, R_DOUBLE),
        "parabolic": make_parabolic_h(0.85, 1.25),
        "exp": make_single_barrier_h(L_SINGLE),
        "linear": make_transient_h(L_SINGLE),
    }


def interior_points(tr, n, rng, span=3.0):
    l, r = tr.domain.lower, tr.domain.upper
    hi = r if math.isfinite(r) else l + span
    u = rng.uniform(0.0, 1.0, n)
    return l + (hi - l) * (1e-6 + (1 - 2e-6) * u)


ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
