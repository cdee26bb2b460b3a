import numpy as np
import pytest

from rydtrap import optics, potentials
from rydtrap.constants import TWEEZER_DEPTH, TWEEZER_WAIST

ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[2].rstrip(":"))):
            terminalreporter.write_line(line)


@pytest.fixture(scope="session")
def design():
    return optics.default_bob_design(256)


@pytest.fixture(scope="session")
def bob_optimum(design):
    return optics.optimize_bob_ratio(design)


@pytest.fixture(scope="session")
def bob_pot(design, bob_optimum):
    """Ponderomotive potential of the optimized bottle beam at 19.9 mW."""
    vol = optics.bob_volume(design, bob_optimum.ratio, 19.9e-3)
    return potentials.ponderomotive_potential(vol)


@pytest.fixture(scope="session")
def tweezer():
    return potentials.GaussianTweezer(TWEEZER_DEPTH, TWEEZER_WAIST)


@pytest.fixture
def rng():
    return np.random.default_rng(20240607)


@pytest.fixture(scope="session")
def surrogate_pot():
    """Exactly harmonic 15.8 kHz stand-in for the bottle beam, 66 uK deep."""
    from rydtrap.constants import K_B
    window = optics.FocalWindow(half_width=3e-6, step=0.1e-6, half_length=20e-6, axial_step=0.5e-6)
    return potentials.harmonic_surrogate((15.8e3, 15.8e3, 6.5e3), 66e-6 * K_B, window)
