import numpy as np
import pytest

from volterra_mor import BilinearSystem

#: Lines collected by the acceptance suite, printed in the terminal summary.
ACCEPTANCE_LINES = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(ACCEPTANCE_LINES):
        terminalreporter.write_line(ACCEPTANCE_LINES[key])


def random_stable(n, seed, margin=0.5, n_scale=0.1):
    """Seeded system whose ``A`` has spectral abscissa ``-margin``."""
    rng = np.random.default_rng(seed)
    A = rng.standard_normal((n, n)) / np.sqrt(n)
    A -= (np.max(np.linalg.eigvals(A).real) + margin) * np.eye(n)
    N = n_scale * rng.standard_normal((n, n)) / np.sqrt(n)
    return BilinearSystem(A, N, rng.standard_normal(n), rng.standard_normal(n))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
