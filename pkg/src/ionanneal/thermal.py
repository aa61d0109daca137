"""Thermal coherent-state sampling of the phonon modes and ensemble statistics."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Iterable, List, Optional

import numpy as np

from .constants import HBAR, K_B
from .errors import IonAnnealError
from .ion_chain import PhononSpectrum

DEFAULT_SAMPLES = 1000
#: operational Lamb-Dicke limit on the largest final mode population
MAX_VALID_POPULATION = 1.0


def mean_occupation(temperature, omega):
    """Bose-Einstein occupation ``1 / (exp(hbar omega / k_B T) - 1)``; 0 at ``T = 0``."""
    temperature = np.asarray(temperature, dtype=float)
    omega = np.asarray(omega, dtype=float)
    if np.any(temperature < 0):
        raise ValueError("temperature must be non-negative")
    if np.any(omega <= 0):
        raise ValueError("omega must be positive")
    with np.errstate(divide="ignore", over="ignore"):
        x = HBAR * omega / (K_B * temperature)
        n = 1.0 / np.expm1(x)
    n = np.where(temperature == 0, 0.0, n)
    return float(n) if n.ndim == 0 else n


@dataclass(frozen=True)
class ThermalConfig:
    temperature: float
    n_samples: int = DEFAULT_SAMPLES
    rng_seed: int = 0
    spectrum: Optional[PhononSpectrum] = None

    def __post_init__(self):
        if not self.temperature >= 0:
            raise ValueError(f"temperature must be non-negative, got {self.temperature}")
        if int(self.n_samples) != self.n_samples or self.n_samples < 1:
            raise ValueError(f"n_samples must be a positive integer, got {self.n_samples}")
        if not 0 <= int(self.rng_seed) < 2**64:
            raise ValueError("rng_seed must be an unsigned 64-bit integer")

    def occupations(self) -> np.ndarray:
        if self.spectrum is None:
            raise ValueError("thermal config has no spectrum attached")
        return np.atleast_1d(mean_occupation(self.temperature, self.spectrum.frequencies))


def run_generator(master_seed: int, run_index: int) -> np.random.Generator:
    """PCG64 stream for one ensemble member, keyed by ``(master_seed, run_index)``.

    The same run index draws the same normal variates at every temperature,
    so temperature scans use common random numbers.
    """
    seq = np.random.SeedSequence(int(master_seed), spawn_key=(int(run_index),))
    return np.random.Generator(np.random.PCG64(seq))


def sample_alphas(occupations, rng: np.random.Generator) -> np.ndarray:
    """Coherent amplitudes with ``Re`` and ``Im`` independent ``N(0, <n_k>/2)``.

    ``occupations`` may also be a :class:`ThermalConfig` with a spectrum.
    Modes with ``<n_k> = 0`` get exactly ``alpha_k = 0``.  Exactly ``2 M``
    normals are drawn per call, real parts first.
    """
    if isinstance(occupations, ThermalConfig):
        occupations = occupations.occupations()
    n = np.atleast_1d(np.asarray(occupations, dtype=float))
    if np.any(n < 0) or not np.all(np.isfinite(n)):
        raise ValueError("occupations must be finite and non-negative")
    z = rng.standard_normal(2 * len(n))
    sigma = np.sqrt(n / 2.0)
    return sigma * z[: len(n)] + 1j * (sigma * z[len(n):])


@dataclass(frozen=True)
class LambDickeCheck:
    margin: float
    valid: bool


def lamb_dicke_check(eta_scale: float, max_population: float) -> LambDickeCheck:
    """Lamb-Dicke margin ``eta sqrt(2 n + 1)``; invalid once a population exceeds 1."""
    if eta_scale < 0 or max_population < 0:
        raise ValueError("inputs must be non-negative")
    margin = eta_scale * math.sqrt(2.0 * max_population + 1.0)
    return LambDickeCheck(margin, bool(max_population <= MAX_VALID_POPULATION))


@dataclass
class RunRecord:
    run_index: int
    fidelity: float
    final_populations: Optional[np.ndarray]
    error: Optional[str] = None

    @property
    def ok(self) -> bool:
        return self.error is None

    @property
    def max_final_population(self) -> float:
        return float(np.max(self.final_populations)) if self.ok else float("nan")


@dataclass
class EnsembleStats:
    temperature: float
    n_samples: int
    mean_fidelity: float
    fidelity_err: float
    mean_population: np.ndarray
    population_err: np.ndarray
    success_fraction: float
    failures: int
    seed: int
    records: List[RunRecord] = field(default_factory=list)


def two_sigma(values) -> float:
    """Twice the standard error of the mean (0 for fewer than two values)."""
    values = np.asarray(values, dtype=float)
    if len(values) < 2:
        return 0.0
    return float(2.0 * np.std(values, ddof=1) / math.sqrt(len(values)))


def aggregate(records: Iterable[RunRecord], temperature: float, seed: int, n_modes: int) -> EnsembleStats:
    """Moments over the successful runs; failed runs are only counted."""
    records = list(records)
    good = [r for r in records if r.ok]
    if good:
        f = np.array([r.fidelity for r in good])
        pops = np.array([r.final_populations for r in good])
        mean_f = float(np.mean(f))
        err_f = two_sigma(f)
        mean_p = pops.mean(axis=0)
        err_p = np.array([two_sigma(pops[:, k]) for k in range(pops.shape[1])])
        success = float(np.mean(f > 0))
    else:
        mean_f, err_f, success = float("nan"), float("nan"), float("nan")
        mean_p = np.full(n_modes, np.nan)
        err_p = np.full(n_modes, np.nan)
    return EnsembleStats(temperature, len(records), mean_f, err_f, mean_p, err_p, success,
                         len(records) - len(good), seed, records)


def run_ensemble(schedule, spectrum: PhononSpectrum, config: ThermalConfig,
                 run_one: Optional[Callable] = None, mapper=map, **engine_options) -> EnsembleStats:
    """Semiclassical thermal ensemble at one temperature.

    Each member ``r`` starts from alphas drawn with :func:`run_generator`
    ``(config.rng_seed, r)`` and is evolved independently.  Integration
    failures are recorded per run and excluded from the moments.

    ``mapper`` may be an ordered parallel map (``Pool.imap``); results do not
    depend on it.  ``engine_options`` go to :func:`ionanneal.experiments.run_semiclassical`.
    """
    from .experiments import ThermalTask, thermal_task

    if run_one is None:
        run_one = thermal_task
    occ = np.atleast_1d(mean_occupation(config.temperature, spectrum.frequencies))
    tasks = [ThermalTask(schedule, spectrum, occ, config.rng_seed, r, engine_options)
             for r in range(config.n_samples)]
    records = list(mapper(run_one, tasks))
    return aggregate(records, config.temperature, config.rng_seed, spectrum.n_modes)


def record_from_exception(run_index: int, exc: IonAnnealError) -> RunRecord:
    return RunRecord(run_index, float("nan"), None, f"{type(exc).__name__}: {exc}")
