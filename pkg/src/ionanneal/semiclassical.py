"""Factorized (mean-field) spin-phonon dynamics.

Spin-phonon correlators are replaced by products of expectation values, which
closes the Heisenberg equations on the phonon quadratures ``<Re a_k>``,
``<Im a_k>`` and the spin vectors ``<sigma^(i)>``:

    d<Re a_k>/dt = omega_k <Im a_k>
    d<Im a_k>/dt = -omega_k <Re a_k> - S_k(t)
    d<sigma^(i)>/dt = -2 K^(i)(t) <sigma^(i)>

with ``S_k = sin(omega_L t) Omega sum_j eta[k, j] <sigma_x^(j)>``,
``J_i = 2 sin(omega_L t) Omega sum_l eta[l, i] <Re a_l> + eps delta_{p,i}`` and
``K = [[0, B, 0], [-B, 0, J_i], [0, -J_i, 0]]``.

State vectors are laid out as ``[Re a (M), Im a (M), sx_1, sy_1, sz_1, ...]``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
from numba import njit

from . import gbs
from .ion_chain import PhononSpectrum
from .protocol import AnnealSchedule

DEFAULT_TOL = 1e-10
DEFAULT_OUTPUT_POINTS = 2000
#: initial <sigma_z>: ground state of the transverse field B sum sz with B > 0
DEFAULT_SPIN_Z = -1.0


@dataclass
class SemiclassicalState:
    re_a: np.ndarray
    im_a: np.ndarray
    spins: np.ndarray  # (N, 3): <sigma_x>, <sigma_y>, <sigma_z>

    @property
    def n_modes(self) -> int:
        return len(self.re_a)

    @property
    def n_ions(self) -> int:
        return len(self.spins)

    def to_vector(self) -> np.ndarray:
        return np.concatenate([self.re_a, self.im_a, np.asarray(self.spins).ravel()])

    @classmethod
    def from_vector(cls, y, n_modes: int) -> "SemiclassicalState":
        y = np.asarray(y, dtype=float)
        return cls(y[:n_modes].copy(), y[n_modes:2 * n_modes].copy(),
                   y[2 * n_modes:].reshape(-1, 3).copy())

    def spin_norms(self) -> np.ndarray:
        return np.linalg.norm(self.spins, axis=1)


@dataclass(frozen=True)
class DriveParams:
    omega_k: np.ndarray
    eta: np.ndarray  # (M, N)
    rabi: float
    omega_L: float
    schedule: AnnealSchedule

    def __post_init__(self):
        if self.eta.shape[0] != len(self.omega_k):
            raise ValueError("eta must have one row per mode")
        if self.rabi < 0:
            raise ValueError("rabi must be non-negative")
        if not 1 <= self.schedule.bias_site <= self.eta.shape[1]:
            raise ValueError(f"bias_site {self.schedule.bias_site} outside 1..{self.eta.shape[1]}")

    @classmethod
    def from_spectrum(cls, spectrum: PhononSpectrum, schedule: AnnealSchedule) -> "DriveParams":
        return cls(np.asarray(spectrum.frequencies, dtype=float),
                   np.asarray(spectrum.lamb_dicke, dtype=float),
                   schedule.rabi, schedule.omega_L, schedule)

    def numba_args(self):
        s = self.schedule
        return (np.ascontiguousarray(self.omega_k), np.ascontiguousarray(self.eta),
                float(self.rabi), float(self.omega_L), float(s.b0), float(s.tau),
                float(s.epsilon), int(s.bias_index))


@njit(cache=True)
def _rhs(t, y, args, out):
    omega_k, eta, rabi, omega_L, b0, tau, eps, p = args
    m = omega_k.shape[0]
    n = eta.shape[1]
    s = np.sin(omega_L * t)
    b = b0 * np.exp(-t / tau)
    so = s * rabi
    base = 2 * m
    for k in range(m):
        acc = 0.0
        for j in range(n):
            acc += eta[k, j] * y[base + 3 * j]
        out[k] = omega_k[k] * y[m + k]
        out[m + k] = -omega_k[k] * y[k] - so * acc
    for i in range(n):
        acc = 0.0
        for l in range(m):
            acc += eta[l, i] * y[l]
        jf = 2.0 * so * acc
        if i == p:
            jf += eps
        sx = y[base + 3 * i]
        sy = y[base + 3 * i + 1]
        sz = y[base + 3 * i + 2]
        out[base + 3 * i] = -2.0 * b * sy
        out[base + 3 * i + 1] = 2.0 * b * sx - 2.0 * jf * sz
        out[base + 3 * i + 2] = 2.0 * jf * sy


def rhs(state: SemiclassicalState, t: float, params: DriveParams) -> SemiclassicalState:
    """Time derivative of ``state`` at time ``t``, returned in the same layout."""
    y = state.to_vector()
    if state.n_modes != len(params.omega_k) or state.n_ions != params.eta.shape[1]:
        raise ValueError("state shape does not match drive parameters")
    out = np.empty_like(y)
    _rhs(float(t), y, params.numba_args(), out)
    return SemiclassicalState.from_vector(out, state.n_modes)


def initial_state(spectrum: PhononSpectrum, alphas: Optional[Sequence[complex]] = None,
                  spin_z: float = DEFAULT_SPIN_Z) -> SemiclassicalState:
    """Paramagnetic start: every spin along ``spin_z`` (``+-1``), phonons at ``alphas`` or 0."""
    m = spectrum.n_modes
    if alphas is None:
        alphas = np.zeros(m, dtype=complex)
    alphas = np.asarray(alphas, dtype=complex)
    if alphas.shape != (m,):
        raise ValueError(f"expected {m} coherent amplitudes, got shape {alphas.shape}")
    spins = np.zeros((spectrum.n_ions, 3))
    spins[:, 2] = spin_z
    return SemiclassicalState(alphas.real.copy(), alphas.imag.copy(), spins)


@dataclass
class Trajectory:
    t: np.ndarray
    re_a: np.ndarray  # (T, M)
    im_a: np.ndarray  # (T, M)
    spins: np.ndarray  # (T, N, 3)
    stats: Optional[gbs.GBSStats] = None

    @property
    def sigma_x(self) -> np.ndarray:
        return self.spins[:, :, 0]

    @property
    def populations(self) -> np.ndarray:
        """Coherent-state estimate ``|alpha_k|**2`` of the mode occupations."""
        return self.re_a**2 + self.im_a**2

    def state_at(self, index: int) -> SemiclassicalState:
        return SemiclassicalState(self.re_a[index].copy(), self.im_a[index].copy(),
                                  self.spins[index].copy())

    @property
    def final(self) -> SemiclassicalState:
        return self.state_at(-1)


def integrate(state0: SemiclassicalState, params: DriveParams, t0: float, t1: float,
              tol: float = DEFAULT_TOL, n_out: int = DEFAULT_OUTPUT_POINTS,
              t_out: Optional[Sequence[float]] = None) -> Trajectory:
    """Integrate the mean-field equations from ``t0`` to ``t1``.

    Output is sampled on ``n_out`` uniformly spaced times including both end
    points, or on ``t_out`` if given.  ``t1 < t0`` integrates backwards in time.

    Raises
    ------
    StepSizeUnderflowError
        If the adaptive step collapses; carries the time reached.
    """
    if t1 == t0:
        raise ValueError("empty integration interval")
    if t_out is None:
        t_out = np.linspace(t0, t1, max(int(n_out), 2))
    t_out = np.asarray(t_out, dtype=float)
    m = state0.n_modes
    y0 = state0.to_vector()
    # resolve the fastest drive component from the first step
    fastest = max(float(np.max(params.omega_k)), params.omega_L) * 2.0
    h0 = 0.1 / fastest
    ys, stats = gbs.integrate(_rhs, params.numba_args(), y0, t0, t_out, tol=tol, h0=h0)
    if not np.all(np.isfinite(ys)):
        raise FloatingPointError("non-finite state encountered during integration")
    return Trajectory(t_out, ys[:, :m].copy(), ys[:, m:2 * m].copy(),
                      ys[:, 2 * m:].reshape(len(t_out), -1, 3).copy(), stats)
