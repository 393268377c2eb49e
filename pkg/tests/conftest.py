import math
import warnings

import numpy as np
import pytest

from bfeda.dynamics import BfedParams, ForcingSpec
from bfeda.spectral import Grid


def make_params(**kw):
    base = dict(nu=1.0, a=1.0, b=-0.5, alpha=1.5, beta=0.5)
    base.update(kw)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        return BfedParams(**base)


def canonical_params(amplitude=0.5):
    return make_params(forcing=ForcingSpec("band_limited_random", amplitude=amplitude,
                                           kmax=2, seed=1))


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def grid8():
    return Grid(8)


@pytest.fixture
def grid16():
    return Grid(16)


def random_real_coeffs(grid, rng, nyquist=False):
    c = grid.forward(rng.standard_normal(grid.shape))
    if not nyquist:
        c[~grid.nyquist_free] = 0.0
    return c


def random_velocity(grid, kmax=2, norm=1.0, seed=0):
    from bfeda.spectral import solenoidal_random_coeffs
    c = solenoidal_random_coeffs(grid, kmax, np.random.default_rng(seed))
    return c * (norm / math.sqrt(grid.norm_sq(c)))


def rel(a, b):
    return abs(a - b) / max(abs(b), 1e-300)


TAU = 2 * math.pi


# one line per acceptance criterion, echoed in the terminal summary
ACCEPTANCE_LINES: list = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
