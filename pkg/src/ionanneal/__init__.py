"""Quantum annealing of spin-phonon dynamics in a trapped-ion chain."""

__version__ = "0.1.0"

from .ion_chain import IonChainSpec, PhononSpectrum, dominant_mode, phonon_spectrum  # noqa: E402
from .protocol import AnnealSchedule, RunResult, fidelity  # noqa: E402

__all__ = [
    "AnnealSchedule",
    "IonChainSpec",
    "PhononSpectrum",
    "RunResult",
    "dominant_mode",
    "fidelity",
    "phonon_spectrum",
]
