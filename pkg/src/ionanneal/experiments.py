"""Single-run pipelines shared by the CLI, the ensemble runner and the tests.

Each pipeline evolves one anneal with a chosen engine, reads out the final
``<sigma_x>`` pattern at ``t_final`` and packages a :class:`RunResult`.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from . import quantum, semiclassical
from .errors import IonAnnealError
from .ion_chain import PhononSpectrum, dominant_mode
from .protocol import (
    SEPARATION_THRESHOLD,
    WAITING_THRESHOLD,
    WAITING_WINDOW,
    AnnealSchedule,
    RunResult,
    detect_separation_time,
    detect_waiting_time,
    fidelity,
    oriented_mode,
    target_convention,
)

DEFAULT_SPIN_Z = -1.0


@dataclass(frozen=True)
class Detection:
    separation_threshold: float = SEPARATION_THRESHOLD
    waiting_threshold: float = WAITING_THRESHOLD
    waiting_window: float = WAITING_WINDOW
    exclude_biased: bool = True


def target_pattern(spectrum: PhononSpectrum, schedule: AnnealSchedule,
                   spin_z: float = DEFAULT_SPIN_Z):
    """``(mode index, oriented mode vector)`` that a successful anneal reproduces."""
    side, bias_sign = target_convention(spin_z)
    k = dominant_mode(spectrum, schedule.omega_L, side=side)
    return k, oriented_mode(spectrum.mode_vectors[k], schedule.bias_index, bias_sign)


def _events(t, sigma_x, schedule: AnnealSchedule, detection: Detection):
    exclude = (schedule.bias_index,) if detection.exclude_biased and sigma_x.shape[1] > 1 else ()
    t_sep = detect_separation_time(t, sigma_x, detection.separation_threshold, exclude=exclude)
    t_wait = None
    if t[-1] - t[0] >= detection.waiting_window:
        t_wait = detect_waiting_time(t, sigma_x, detection.waiting_window, detection.waiting_threshold)
    return t_sep, t_wait


def run_semiclassical(spectrum: PhononSpectrum, schedule: AnnealSchedule,
                      alphas: Optional[Sequence[complex]] = None, spin_z: float = DEFAULT_SPIN_Z,
                      tol: float = semiclassical.DEFAULT_TOL,
                      n_out: int = semiclassical.DEFAULT_OUTPUT_POINTS,
                      detection: Detection = Detection(), events: bool = True):
    """Mean-field anneal from ``t = 0`` to ``schedule.t_final``.

    Returns ``(RunResult, Trajectory)``.  With ``events=False`` the
    separation and waiting times are skipped (both ``None``).
    """
    k, xi = target_pattern(spectrum, schedule, spin_z)
    params = semiclassical.DriveParams.from_spectrum(spectrum, schedule)
    state0 = semiclassical.initial_state(spectrum, alphas, spin_z=spin_z)
    start = time.perf_counter()
    traj = semiclassical.integrate(state0, params, 0.0, schedule.t_final, tol=tol, n_out=n_out)
    elapsed = time.perf_counter() - start
    final_sx = traj.sigma_x[-1]
    t_sep, t_wait = _events(traj.t, traj.sigma_x, schedule, detection) if events else (None, None)
    result = RunResult(
        engine="semiclassical", omega_L=schedule.omega_L, tau=schedule.tau,
        epsilon=schedule.epsilon, final_sigma_x=final_sx.tolist(),
        fidelity=fidelity(final_sx, xi), separation_time=t_sep, waiting_time=t_wait,
        final_mode_populations=traj.populations[-1].tolist(),
        extra={"dominant_mode": k, "runtime_s": elapsed, "n_rhs": traj.stats.n_rhs},
    )
    return result, traj


def run_exact(spectrum: PhononSpectrum, schedule: AnnealSchedule, n_max: int = 2,
              dt: float = quantum.DEFAULT_DT, krylov_tol: float = quantum.DEFAULT_KRYLOV_TOL,
              m_max: int = quantum.DEFAULT_M_MAX, n_out: int = semiclassical.DEFAULT_OUTPUT_POINTS,
              detection: Detection = Detection(), spin_z: float = DEFAULT_SPIN_Z):
    """Exact Krylov anneal from the phonon vacuum with every spin along ``spin_z``.

    Returns ``(RunResult, QuantumTrajectory)``.
    """
    quantum.check_capacity(spectrum.n_ions, n_max)
    k, xi = target_pattern(spectrum, schedule, spin_z)
    basis = quantum.TruncatedBasis(spectrum.n_ions, spectrum.n_modes, n_max)
    terms = quantum.build_hamiltonian(basis, spectrum, schedule)
    up = 1 if spin_z > 0 else 0
    psi0 = basis.product_state(np.full(spectrum.n_ions, up), np.zeros(spectrum.n_modes, dtype=int))
    start = time.perf_counter()
    traj = quantum.evolve(psi0, terms, schedule.t_final, dt=dt, n_out=n_out, m_max=m_max, tol=krylov_tol)
    elapsed = time.perf_counter() - start
    final_sx = traj.sigma_x[-1]
    t_sep, t_wait = _events(traj.t, traj.sigma_x, schedule, detection)
    result = RunResult(
        engine="exact", omega_L=schedule.omega_L, tau=schedule.tau, epsilon=schedule.epsilon,
        final_sigma_x=final_sx.tolist(), fidelity=fidelity(final_sx, xi),
        separation_time=t_sep, waiting_time=t_wait, final_mode_populations=traj.n[-1].tolist(),
        extra={"dominant_mode": k, "runtime_s": elapsed, "n_steps": traj.n_steps,
               "max_norm_defect": traj.max_norm_defect, "max_krylov_dim": traj.max_krylov_dim},
    )
    return result, traj


@dataclass(frozen=True)
class ThermalTask:
    schedule: AnnealSchedule
    spectrum: PhononSpectrum
    occupations: np.ndarray
    seed: int
    run_index: int
    options: dict = field(default_factory=dict)


def thermal_task(task: ThermalTask):
    """One ensemble member; integration failures become an error record.

    The output grid is left at the engine default, so step landing (and hence
    the result at ``T = 0``) is bit-identical to a deterministic run.
    """
    from .thermal import RunRecord, record_from_exception, run_generator, sample_alphas

    alphas = sample_alphas(task.occupations, run_generator(task.seed, task.run_index))
    try:
        options = {**task.options, "events": False}
        result, _ = run_semiclassical(task.spectrum, task.schedule, alphas, **options)
    except (IonAnnealError, FloatingPointError) as exc:
        return record_from_exception(task.run_index, exc)
    return RunRecord(task.run_index, result.fidelity, np.asarray(result.final_mode_populations))


@dataclass(frozen=True)
class CellTask:
    """One grid cell: an engine, a chain and a schedule."""

    index: int
    engine: str
    spectrum: PhononSpectrum
    schedule: AnnealSchedule
    options: dict = field(default_factory=dict)
    keep_decoupling: bool = False


@dataclass
class CellOutcome:
    index: int
    result: Optional[RunResult]
    reason: str = ""
    runtime_s: float = 0.0
    decoupling: Optional[tuple] = None  # (t, error (T, M, N)) for exact runs

    @property
    def fidelity(self) -> float:
        """Fidelity, or the -1 sentinel for a failed cell."""
        return self.result.fidelity if self.result is not None else -1.0


def run_cell(task: CellTask) -> CellOutcome:
    """Evaluate one cell; physics and solver errors become a failure reason, never an exception."""
    start = time.perf_counter()
    try:
        if task.engine == "exact":
            result, traj = run_exact(task.spectrum, task.schedule, **task.options)
            extra = (traj.t, traj.decoupling_error()) if task.keep_decoupling else None
        else:
            result, _ = run_semiclassical(task.spectrum, task.schedule, **task.options)
            extra = None
    except (IonAnnealError, FloatingPointError) as exc:
        return CellOutcome(task.index, None, f"{type(exc).__name__}: {exc}",
                           time.perf_counter() - start)
    return CellOutcome(task.index, result, "", time.perf_counter() - start, extra)
