import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from decompsens.dataset import from_arrays

settings.register_profile(
    "repo", deadline=None, max_examples=60, suppress_health_check=[HealthCheck.too_slow]
)
settings.load_profile("repo")


def random_dataset(rng, n=200, p_allowable=1, p_nonallowable=1, binary_y=False):
    """Small confounded dataset with every (g, z) cell well populated."""
    while True:
        g = (rng.random(n) < 0.5).astype(float)
        xa = rng.standard_normal((n, p_allowable))
        xn = rng.standard_normal((n, p_nonallowable))
        lin = 0.4 * xa.sum(axis=1) - 0.3 * xn.sum(axis=1) + 0.5 * g - 0.2
        z = (rng.random(n) < 1 / (1 + np.exp(-lin))).astype(float)
        mean = 0.3 + 0.8 * z + 0.5 * xa.sum(axis=1) + 0.2 * xn.sum(axis=1) + 0.3 * g
        y = (rng.random(n) < 1 / (1 + np.exp(-mean))).astype(float) if binary_y else mean + rng.standard_normal(n)
        counts = [np.sum((g == a) & (z == b)) for a in (0, 1) for b in (0, 1)]
        if min(counts) >= 2 + 1 + p_allowable + p_nonallowable:
            return from_arrays(g, z, y, xa, xn)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def small_ds(rng):
    return random_dataset(rng, n=300, p_allowable=2, p_nonallowable=1)


# one line per acceptance criterion, filled in by tests/test_acceptance.py
ACCEPTANCE_RESULTS: dict = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(ACCEPTANCE_RESULTS, key=lambda k: tuple(int(p) if p.isdigit() else p for p in k.split("."))):
        terminalreporter.write_line(ACCEPTANCE_RESULTS[key])
