import numpy as np
import pytest

from panomatch import synth_benchmark


@pytest.fixture(scope="session")
def bench():
    """The pinned 200 x 8, d=64 synthetic benchmark (seed 0, noise 1.1)."""
    return synth_benchmark(num_locations=200, views_per_location=8, d=64,
                           scene_noise=1.1, view_overlap=0.5, seed=0)


@pytest.fixture(scope="session")
def small_bench():
    return synth_benchmark(num_locations=30, views_per_location=6, d=32,
                           scene_noise=1.0, seed=3)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def random_spd(rng, n, cond_shift=0.1):
    A = rng.standard_normal((n, n + 3))
    return A @ A.T + cond_shift * np.eye(n)


def pytest_terminal_summary(terminalreporter):
    import sys

    module = sys.modules.get("test_acceptance")
    lines = getattr(module, "RESULTS", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines, key=lambda s: int(s.split()[2])):
            terminalreporter.write_line(line)
