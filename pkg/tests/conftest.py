import numpy as np
import pytest

from afcmem.config import Config

ACCEPTANCE_LINES = {}


@pytest.fixture(scope="session")
def cfg():
    return Config.load()


def random_spin_system(rng, label="ground", spin=2.5):
    from afcmem.spectra import SpinSystem

    a = rng.normal(0, 8.0, (3, 3))
    m = 0.5 * (a + a.T) + np.diag(rng.normal(0, 6.0, 3))
    q = rng.normal(0, 10.0, (3, 3))
    q = 0.5 * (q + q.T)
    q -= np.trace(q) / 3 * np.eye(3)
    return SpinSystem(spin, m, q, label)


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(ACCEPTANCE_LINES):
        terminalreporter.write_line(ACCEPTANCE_LINES[k])
