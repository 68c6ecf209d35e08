import numpy as np
import pytest

from jpais.config import SystemConfig
from jpais.sigmodel import make_scenario


def crandn(rng, *shape):
    """Circular complex Gaussian samples of unit variance."""
    return (rng.standard_normal(shape) + 1j * rng.standard_normal(shape)) / np.sqrt(2)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def small_cfg():
    return SystemConfig.from_snr(12.0, K=3, N=8, L=2, n_r=1, P_packet=300, N_tr=100)


@pytest.fixture
def small_scn(small_cfg):
    return make_scenario(small_cfg, np.random.default_rng(7))


_ACCEPTANCE = {}


@pytest.fixture
def report():
    """Record one acceptance line: ``report(n, passed, detail)``."""

    def record(n, passed, detail):
        line = f"criterion {n:>2}: {'PASS' if passed else 'FAIL'}  {detail}"
        _ACCEPTANCE[n] = line
        print(line)
        return passed

    return record


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for n in sorted(_ACCEPTANCE):
            terminalreporter.write_line(_ACCEPTANCE[n])
