"""Linear ion chain: equilibrium positions, transverse modes, Lamb-Dicke couplings.

Positions are dimensionless, in units of the length scale ``l`` with
``l**3 = q**2 / (4 pi eps0 m omega_ax**2)``.  Frequencies are angular (rad/s).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .constants import E_CHARGE, EPSILON_0, YB171_MASS
from .errors import (
    ChainUnstableError,
    DegenerateSpectrumError,
    NoDominantModeError,
    OnResonanceError,
    SolverFailure,
)

NEWTON_MAX_ITER = 200
FORCE_TOL = 1e-12
DEGENERACY_RTOL = 1e-9
RESONANCE_RTOL = 1e-9


@dataclass(frozen=True)
class IonChainSpec:
    n_ions: int
    omega_rad: float
    omega_ax: float
    omega_rec: float
    mass: float = YB171_MASS
    charge: float = E_CHARGE

    def __post_init__(self):
        if int(self.n_ions) != self.n_ions or self.n_ions < 1:
            raise ValueError(f"n_ions must be a positive integer, got {self.n_ions!r}")
        for name in ("omega_rad", "omega_ax", "omega_rec", "mass", "charge"):
            value = getattr(self, name)
            if not (math.isfinite(value) and value > 0):
                raise ValueError(f"{name} must be positive and finite, got {value!r}")
        if self.omega_ax >= self.omega_rad:
            raise ValueError("omega_ax must be smaller than omega_rad for a linear chain")

    @property
    def length_scale(self) -> float:
        """Physical length unit of the dimensionless positions, in metres."""
        return (self.charge**2 / (4 * math.pi * EPSILON_0 * self.mass * self.omega_ax**2)) ** (1 / 3)


@dataclass(frozen=True)
class EquilibriumPositions:
    positions: np.ndarray
    residual: float = 0.0
    iterations: int = 0


@dataclass(frozen=True)
class PhononSpectrum:
    """Transverse phonon modes, ascending in frequency.

    ``mode_vectors[k]`` is the normalized mode ``xi_k`` (length N) and
    ``lamb_dicke[k, i] = sqrt(omega_rec / omega_k) * xi_k[i]``.
    """

    frequencies: np.ndarray
    mode_vectors: np.ndarray
    lamb_dicke: np.ndarray
    omega_rec: float = field(default=float("nan"))

    @property
    def n_modes(self) -> int:
        return len(self.frequencies)

    @property
    def n_ions(self) -> int:
        return self.mode_vectors.shape[1]


def coulomb_forces(u: np.ndarray) -> np.ndarray:
    """Net dimensionless axial force (trap + Coulomb) on each ion."""
    diff = u[:, None] - u[None, :]
    np.fill_diagonal(diff, np.inf)
    return -u + np.sum(np.sign(diff) / diff**2, axis=1)


def _force_jacobian(u: np.ndarray) -> np.ndarray:
    diff = u[:, None] - u[None, :]
    np.fill_diagonal(diff, np.inf)
    inv3 = 2.0 / np.abs(diff) ** 3
    jac = inv3.copy()
    np.fill_diagonal(jac, -1.0 - inv3.sum(axis=1))
    return jac


def chain_energy(u: np.ndarray) -> float:
    """Dimensionless potential energy (harmonic trap + Coulomb); convex for ordered chains."""
    diff = np.abs(u[:, None] - u[None, :])
    iu = np.triu_indices(len(u), 1)
    return 0.5 * float(u @ u) + float(np.sum(1.0 / diff[iu]))


def compute_equilibrium_positions(spec: IonChainSpec) -> EquilibriumPositions:
    """Solve the axial force balance by damped Newton iteration.

    The step is damped by backtracking on the chain energy, which keeps the
    iterate ordered; close to the minimum the force norm takes over as merit.

    Raises
    ------
    SolverFailure
        If the residual force does not drop below ``FORCE_TOL`` within
        ``NEWTON_MAX_ITER`` iterations.
    """
    n = spec.n_ions
    if n == 1:
        return EquilibriumPositions(np.zeros(1))
    # uniform guess with roughly the right overall length
    half_length = 1.2 * (n - 1) ** 0.6
    u = np.linspace(-half_length, half_length, n)
    f = coulomb_forces(u)
    energy = chain_energy(u)
    norm = np.max(np.abs(f))
    for it in range(1, NEWTON_MAX_ITER + 1):
        step = np.linalg.solve(_force_jacobian(u), -f)
        lam = 1.0
        while True:
            trial = u + lam * step
            if np.all(np.diff(trial) > 0):
                e_trial = chain_energy(trial)
                if e_trial <= energy + 1e-4 * lam * float(step @ -f):
                    break
                # energy differences drown in round-off near the minimum
                if np.max(np.abs(coulomb_forces(trial))) < norm:
                    break
            lam *= 0.5
            if lam < 1e-12:
                raise SolverFailure("equilibrium line search failed to decrease the energy")
        u, energy = trial, e_trial
        f = coulomb_forces(u)
        norm = np.max(np.abs(f))
        if norm < FORCE_TOL:
            # symmetrize away round-off; the exact solution is reflection symmetric
            u = 0.5 * (u - u[::-1])
            return EquilibriumPositions(u, float(np.max(np.abs(coulomb_forces(u)))), it)
    raise SolverFailure(
        f"equilibrium positions did not converge in {NEWTON_MAX_ITER} iterations "
        f"(residual {norm:.3e})"
    )


def transverse_hessian(positions: np.ndarray, omega_rad: float, omega_ax: float) -> np.ndarray:
    """Transverse stiffness matrix in units of ``omega_ax**2``."""
    u = np.asarray(positions, dtype=float)
    diff = u[:, None] - u[None, :]
    np.fill_diagonal(diff, np.inf)
    inv3 = 1.0 / np.abs(diff) ** 3
    hess = inv3.copy()
    np.fill_diagonal(hess, (omega_rad / omega_ax) ** 2 - inv3.sum(axis=1))
    return hess


def compute_transverse_modes(pos: EquilibriumPositions, spec: IonChainSpec) -> PhononSpectrum:
    hess = transverse_hessian(pos.positions, spec.omega_rad, spec.omega_ax)
    eigvals, eigvecs = np.linalg.eigh(hess)
    if np.any(eigvals <= 0):
        raise ChainUnstableError(
            f"transverse mode with omega^2 <= 0 (min eigenvalue {eigvals.min():.3e}); "
            "chain is past the zigzag transition"
        )
    freqs = spec.omega_ax * np.sqrt(eigvals)
    if len(freqs) > 1 and np.any(np.diff(freqs) <= DEGENERACY_RTOL * freqs[1:]):
        raise DegenerateSpectrumError("degenerate transverse mode frequencies")
    vecs = eigvecs.T.copy()
    # deterministic sign: first component above round-off is positive
    for vec in vecs:
        lead = np.flatnonzero(np.abs(vec) > 1e-8)[0]
        if vec[lead] < 0:
            vec *= -1.0
    eta = np.sqrt(spec.omega_rec / freqs)[:, None] * vecs
    return PhononSpectrum(freqs, vecs, eta, spec.omega_rec)


def phonon_spectrum(spec: IonChainSpec) -> PhononSpectrum:
    """Equilibrium positions followed by the transverse mode decomposition."""
    return compute_transverse_modes(compute_equilibrium_positions(spec), spec)


def dominant_mode(spectrum: PhononSpectrum, omega_L: float, side: str = "below") -> int:
    """Index of the mode adjacent to the beatnote ``omega_L``.

    ``side="below"`` returns the highest mode strictly below ``omega_L``;
    ``side="above"`` the lowest mode strictly above it.

    Raises
    ------
    OnResonanceError
        If ``omega_L`` equals a mode frequency within ``RESONANCE_RTOL``.
    NoDominantModeError
        If no mode lies on the requested side.
    """
    if side not in ("below", "above"):
        raise ValueError(f"side must be 'below' or 'above', got {side!r}")
    freqs = np.asarray(spectrum.frequencies)
    close = np.abs(freqs - omega_L) <= RESONANCE_RTOL * np.abs(freqs)
    if np.any(close):
        k = int(np.flatnonzero(close)[0])
        raise OnResonanceError(f"omega_L = {omega_L:.9e} rad/s is on resonance with mode {k}")
    if side == "below":
        below = np.flatnonzero(freqs < omega_L)
        if below.size == 0:
            raise NoDominantModeError(
                f"omega_L = {omega_L:.6e} rad/s lies below the lowest mode {freqs.min():.6e} rad/s"
            )
        return int(below[-1])
    above = np.flatnonzero(freqs > omega_L)
    if above.size == 0:
        raise NoDominantModeError(
            f"omega_L = {omega_L:.6e} rad/s lies above the highest mode {freqs.max():.6e} rad/s"
        )
    return int(above[0])
