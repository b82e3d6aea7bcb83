import numpy as np
import pytest

from biad.experiments import TrialConfig
from biad.ratings import RatingMatrix


@pytest.fixture
def small_matrix():
    return RatingMatrix([[2.0, 7.0, 7.0, 9.0], [5.4, 5.5, 9.0, 0.0], [10.0, 0.0, 3.3, 8.0]])


@pytest.fixture
def tiny_config():
    """A fast configuration: few items, users and rounds."""
    return TrialConfig(
        synthetic={"m": 300, "n_users": 80, "target_effective_mean": 40.0, "seed": 3},
        n_players=30, q_max=10, A=4, gamma=0.6, num_trials=10,
    )


def random_row(rng, m):
    return rng.uniform(0.0, 10.0, size=m)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter):
    import sys

    module = sys.modules.get("test_acceptance") or sys.modules.get("tests.test_acceptance")
    lines = getattr(module, "ACCEPTANCE_REPORT", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines, key=lambda s: int(s.split("criterion ")[1].split(":")[0])):
            terminalreporter.write_line(line)
