import math

import pytest

from ionanneal.ion_chain import IonChainSpec, phonon_spectrum
from ionanneal.protocol import AnnealSchedule

TWO_PI = 2 * math.pi
OMEGA_RAD = TWO_PI * 2655e3
OMEGA_REC = TWO_PI * 15e3
OMEGA_AX = 5504071.941812793


def chain(n, omega_ax=OMEGA_AX):
    return IonChainSpec(n, OMEGA_RAD, omega_ax, OMEGA_REC)


@pytest.fixture(scope="session")
def spectrum4():
    return phonon_spectrum(chain(4))


@pytest.fixture(scope="session")
def spectrum2():
    return phonon_spectrum(chain(2))


@pytest.fixture
def far_schedule(spectrum4):
    """Far-detuned anneal below the lowest mode."""
    return AnnealSchedule(omega_L=spectrum4.frequencies[0] - 2900e3, rabi=3000e3, tau=0.35e-3)
