import numpy as np
import pytest

from volchain.generator import GeneratorMatrix
from volchain.grid import GridSpec, StateGrid, build_grid
from volchain.models import Model
from volchain.moments import Corridor, moments

CEV = Model("cev", 100.0, 0.02, 0.2, beta=0.3)
VG = Model("vg", 100.0, 0.02, 0.2, theta=-0.04, mu=1.0, nu=0.05)
SUBCEV = Model("subordinated_cev", 100.0, 0.02, 0.2, beta=0.7, mu=1.0, nu=0.05)


@pytest.fixture(scope="session")
def grid50():
    return build_grid(GridSpec(1, 100, 700, 70, 50, 50))


@pytest.fixture(scope="session")
def grid30():
    return build_grid(GridSpec(1, 100, 700, 70, 30, 30))


@pytest.fixture(scope="session")
def cev_gen(grid50):
    return CEV.generator(grid50)


@pytest.fixture(scope="session")
def vg_gen(grid30):
    return VG.generator(grid30)


@pytest.fixture(scope="session")
def subcev_gen(grid30):
    return SUBCEV.generator(grid30)


@pytest.fixture(scope="session")
def cev_moments(cev_gen):
    return moments(cev_gen, Corridor(), 3)


@pytest.fixture(scope="session")
def vg_moments(vg_gen):
    return moments(vg_gen, Corridor(), 3)


def toy_generator(states, rates) -> GeneratorMatrix:
    """Generator on arbitrary states from an off-diagonal rate matrix."""
    x = np.asarray(states, float)
    off = np.array(rates, float)
    np.fill_diagonal(off, 0.0)
    L = off - np.diag(off.sum(axis=1))
    return GeneratorMatrix(L, StateGrid(x, len(x) // 2))


def random_generator(rng, n, scale=2.0) -> GeneratorMatrix:
    states = np.sort(rng.uniform(50, 150, n))
    return toy_generator(states, rng.uniform(0, scale, (n, n)))


# ---------------------------------------------------------------- acceptance reporting

_ACCEPTANCE: dict[int, str] = {}


@pytest.fixture
def acceptance():
    """Record one pass/fail line per acceptance criterion; printed at the end of the run."""

    def record(number: int, passed: bool, detail: str) -> None:
        line = f"criterion {number:2d}: {'PASS' if passed else 'FAIL'}  {detail}"
        _ACCEPTANCE[number] = line
        print(line)

    return record


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for n in sorted(_ACCEPTANCE):
            terminalreporter.write_line(_ACCEPTANCE[n])
