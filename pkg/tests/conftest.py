import numpy as np
import pytest

from holoq.holonomy import GATES, synthesize_sequence
from holoq.lattice import LatticeModel, coupling, solve_bands
from holoq.multiorbital import eliminate_leakage


@pytest.fixture(scope="session")
def model():
    return LatticeModel()


@pytest.fixture(scope="session")
def bands(model):
    return solve_bands(model)


@pytest.fixture(scope="session")
def cmap(model, bands):
    return coupling(model, bands)


@pytest.fixture(scope="session")
def x_sequence(bands, cmap):
    return synthesize_sequence(GATES["x"], bands.gap, cmap, name="x")


@pytest.fixture(scope="session")
def x_eliminated(bands, x_sequence):
    return eliminate_leakage(x_sequence, bands, GATES["x"])


def random_unitary(rng):
    z = rng.normal(size=(2, 2)) + 1j * rng.normal(size=(2, 2))
    q, r = np.linalg.qr(z)
    return q * (np.diag(r) / np.abs(np.diag(r)))


_ACCEPTANCE = {}


@pytest.fixture
def acceptance():
    """Record one PASS/FAIL line per acceptance criterion."""

    def record(number, passed, detail):
        _ACCEPTANCE[number] = (bool(passed), detail)
        return passed

    return record


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_ACCEPTANCE):
        passed, detail = _ACCEPTANCE[number]
        terminalreporter.write_line(f"criterion {number:>2}: {'PASS' if passed else 'FAIL'}  {detail}")
