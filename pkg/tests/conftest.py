import numpy as np
import pytest
from hypothesis import settings

from ivrand.core import validate_dataset

settings.register_profile("default", deadline=None, max_examples=100)
settings.load_profile("default")

# filled by the acceptance suite, echoed in the terminal summary
ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


@pytest.fixture
def toy():
    """Four-unit dataset used across the hand-computed examples."""
    return validate_dataset([3, 1, 1, 1], [1, 0, 0, 0], [1, 1, 0, 0])


def random_dataset(rng, n=30, pi=0.6, tau=1.0):
    z = np.zeros(n)
    z[rng.choice(n, n // 2, replace=False)] = 1
    d = z * (rng.random(n) < pi)
    y = 1.0 + tau * d + rng.normal(size=n)
    return validate_dataset(y, d, z)
