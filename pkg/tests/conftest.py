import numpy as np
import pytest

from freqmarch.phantom import PhantomSpec, blob_phantom, build_truth_model
from freqmarch.sphgrid import build_grids


@pytest.fixture(scope="session")
def grids10():
    return build_grids(10.0)


@pytest.fixture(scope="session")
def grids30():
    return build_grids(30.0)


@pytest.fixture(scope="session")
def blobs():
    # well inside the unit ball and wide enough to be resolved by kmax = 30
    return blob_phantom(8, seed=1, radius=0.45, sigma_range=(0.09, 0.11), D=70.0)


@pytest.fixture(scope="session")
def truth30(blobs, grids30):
    return build_truth_model(blobs, *grids30)


@pytest.fixture(scope="session")
def truth10(blobs, grids10):
    return build_truth_model(blobs, *grids10)


def random_coeffs(rng, p):
    n = (p + 1) ** 2
    return rng.standard_normal(n) + 1j * rng.standard_normal(n)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


ACCEPTANCE = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
