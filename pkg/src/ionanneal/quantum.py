"""Exact spin-phonon evolution in a truncated Fock x spin basis.

The Hamiltonian (in units of hbar, rad/s)

    H(t) = sum_k omega_k n_k + sin(omega_L t) sum_{i,k} Omega eta[k, i] (a_k + a_k^+) sx_i
           + B(t) sum_i sz_i + eps sx_p

is real symmetric in the product basis.  Each step freezes ``H`` at the step
midpoint and applies ``exp(-i H dt)`` with a Lanczos Krylov approximation.

Basis layout: ``index = spin_index * P + phonon_index`` where
``P = (n_max + 1)**M``.  Bit ``i`` of ``spin_index`` is 1 when ion ``i`` points
up (``sz = +1``); the phonon index is mixed radix with mode 0 most significant.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
from numba import njit

from .errors import EngineCapacityError, KrylovAccuracyError
from .ion_chain import PhononSpectrum
from .protocol import AnnealSchedule

MAX_EXACT_IONS = 6
MAX_DT = 10e-9
DEFAULT_DT = 1e-9
DEFAULT_KRYLOV_TOL = 1e-10
DEFAULT_M_MAX = 30
MIN_KRYLOV_DIM = 4
DECOUPLING_GUARD = 1e-12

_OK = 0
_NOT_CONVERGED = 1


class TruncatedBasis:
    """Index codec for ``N`` spins and ``M`` modes with at most ``n_max`` phonons each."""

    def __init__(self, n_ions: int, n_modes: int, n_max: int = 2):
        if n_ions < 1 or n_modes < 0 or n_max < 0:
            raise ValueError("need n_ions >= 1, n_modes >= 0, n_max >= 0")
        self.n_ions = int(n_ions)
        self.n_modes = int(n_modes)
        self.n_max = int(n_max)
        self.n_phonon_states = (self.n_max + 1) ** self.n_modes
        self.dim = 2**self.n_ions * self.n_phonon_states
        # stride of each mode inside the phonon index
        self.strides = np.array([(self.n_max + 1) ** (self.n_modes - 1 - k)
                                 for k in range(self.n_modes)], dtype=np.int64)
        idx = np.arange(self.dim, dtype=np.int64)
        spin_index, phonon_index = np.divmod(idx, self.n_phonon_states)
        self.spin_bits = ((spin_index[:, None] >> np.arange(self.n_ions)) & 1).astype(np.int8)
        self.occupations = ((phonon_index[:, None] // self.strides) % (self.n_max + 1)).astype(np.int64)

    def encode(self, spins_up: Sequence[int], occupations: Sequence[int]) -> int:
        spins_up = np.asarray(spins_up, dtype=np.int64)
        occupations = np.asarray(occupations, dtype=np.int64)
        if spins_up.shape != (self.n_ions,) or occupations.shape != (self.n_modes,):
            raise ValueError("wrong number of spins or modes")
        if np.any((spins_up != 0) & (spins_up != 1)):
            raise ValueError("spin entries must be 0 (down) or 1 (up)")
        if np.any(occupations < 0) or np.any(occupations > self.n_max):
            raise ValueError(f"occupations must lie in 0..{self.n_max}")
        spin_index = int(np.sum(spins_up << np.arange(self.n_ions)))
        return spin_index * self.n_phonon_states + int(np.dot(occupations, self.strides))

    def decode(self, index: int):
        """``(spins_up, occupations)`` of the basis state at ``index``."""
        if not 0 <= index < self.dim:
            raise IndexError(f"index {index} outside basis of dimension {self.dim}")
        return self.spin_bits[index].astype(np.int64), self.occupations[index].copy()

    def product_state(self, spins_up: Sequence[int], occupations: Sequence[int]) -> np.ndarray:
        psi = np.zeros(self.dim, dtype=complex)
        psi[self.encode(spins_up, occupations)] = 1.0
        return psi

    def ground_state(self) -> np.ndarray:
        """Phonon vacuum with every spin down (``sz = -1``)."""
        return self.product_state(np.zeros(self.n_ions, dtype=int), np.zeros(self.n_modes, dtype=int))


@dataclass(frozen=True)
class HamiltonianTerms:
    """Time-independent pieces of ``H``; time factors are applied at evaluation.

    ``diag_phonon`` and ``diag_z`` hold the diagonals of ``sum omega_k n_k`` and
    ``sum sz_i``.  The off-diagonal part is stored once in CSR form with two
    data arrays on a shared pattern: ``coupling`` (multiplied by
    ``sin(omega_L t)``) and ``bias`` (``eps sx_p``, already scaled).
    """

    basis: TruncatedBasis
    diag_phonon: np.ndarray
    diag_z: np.ndarray
    indptr: np.ndarray
    indices: np.ndarray
    coupling: np.ndarray
    bias: np.ndarray
    omega_L: float
    b0: float
    tau: float

    def coefficients(self, t: float):
        """``(sin(omega_L t), B(t))``."""
        return float(np.sin(self.omega_L * t)), float(self.b0 * np.exp(-t / self.tau))

    def sparse_matrix(self, t: float):
        """Full ``H(t)`` as a scipy CSR matrix (for tests and small oracles)."""
        from scipy import sparse

        s, b = self.coefficients(t)
        off = sparse.csr_matrix((s * self.coupling + self.bias, self.indices, self.indptr),
                                shape=(self.basis.dim, self.basis.dim))
        return off + sparse.diags(self.diag_phonon + b * self.diag_z)

    def numba_args(self):
        return (self.diag_phonon, self.diag_z, self.indptr, self.indices, self.coupling,
                self.bias, self.omega_L, self.b0, self.tau)


def build_hamiltonian(basis: TruncatedBasis, spectrum: PhononSpectrum,
                      schedule: AnnealSchedule) -> HamiltonianTerms:
    """Assemble the term structures for ``basis`` from the chain and drive parameters."""
    if spectrum.n_ions != basis.n_ions or spectrum.n_modes != basis.n_modes:
        raise ValueError("basis does not match the phonon spectrum")
    if basis.n_ions > MAX_EXACT_IONS:
        raise EngineCapacityError(
            f"exact engine supports at most {MAX_EXACT_IONS} ions, got {basis.n_ions}")
    if not 1 <= schedule.bias_site <= basis.n_ions:
        raise ValueError(f"bias_site {schedule.bias_site} outside 1..{basis.n_ions}")
    dim = basis.dim
    n_phonon = basis.n_phonon_states
    idx = np.arange(dim, dtype=np.int64)
    spin_index, phonon_index = np.divmod(idx, n_phonon)
    occ = basis.occupations
    diag_phonon = occ @ np.asarray(spectrum.frequencies, dtype=float) if basis.n_modes else np.zeros(dim)
    diag_z = (2.0 * basis.spin_bits - 1.0).sum(axis=1)

    rows, cols, c_data = [], [], []
    eta = np.asarray(spectrum.lamb_dicke, dtype=float)
    for i in range(basis.n_ions):
        flip = (spin_index ^ (1 << i)) * n_phonon + phonon_index
        for k in range(basis.n_modes):
            g = schedule.rabi * eta[k, i]
            can_raise = occ[:, k] < basis.n_max
            src = idx[can_raise]
            dst = flip[can_raise] + basis.strides[k]
            amp = g * np.sqrt(occ[can_raise, k] + 1.0)
            # <dst| a_k^+ sx_i |src> and its transpose
            rows += [dst, src]
            cols += [src, dst]
            c_data += [amp, amp]
    p = schedule.bias_index
    rows.append(idx)
    cols.append((spin_index ^ (1 << p)) * n_phonon + phonon_index)
    n_bias = dim
    rows = np.concatenate(rows) if rows else np.zeros(0, dtype=np.int64)
    cols = np.concatenate(cols) if cols else np.zeros(0, dtype=np.int64)
    n_cpl = len(rows) - n_bias
    coupling = np.concatenate(c_data + [np.zeros(n_bias)]) if c_data else np.zeros(n_bias)
    bias = np.concatenate([np.zeros(n_cpl), np.full(n_bias, float(schedule.epsilon))])
    # the two patterns are disjoint: coupling always changes a phonon number
    order = np.lexsort((cols, rows))
    rows, cols = rows[order], cols[order]
    indptr = np.zeros(dim + 1, dtype=np.int64)
    np.cumsum(np.bincount(rows, minlength=dim), out=indptr[1:])
    return HamiltonianTerms(basis, np.ascontiguousarray(diag_phonon, dtype=float),
                            np.ascontiguousarray(diag_z, dtype=float), indptr,
                            np.ascontiguousarray(cols), coupling[order].copy(), bias[order].copy(),
                            float(schedule.omega_L), float(schedule.b0), float(schedule.tau))


@njit(cache=True)
def _matvec(diag, indptr, indices, data, x, out):
    n = x.shape[0]
    for r in range(n):
        acc = diag[r] * x[r]
        for q in range(indptr[r], indptr[r + 1]):
            acc += data[q] * x[indices[q]]
        out[r] = acc


@njit(cache=True)
def _assemble(args, t, diag, data):
    diag_ph, diag_z, indptr, indices, coupling, bias, omega_L, b0, tau = args
    s = np.sin(omega_L * t)
    b = b0 * np.exp(-t / tau)
    for r in range(diag.shape[0]):
        diag[r] = diag_ph[r] + b * diag_z[r]
    for q in range(data.shape[0]):
        data[q] = s * coupling[q] + bias[q]


@njit(cache=True)
def _small_exp(alpha, beta, m, dt):
    """First column of ``exp(-i T dt)`` for the ``m x m`` Lanczos tridiagonal ``T``."""
    tri = np.zeros((m, m))
    for j in range(m):
        tri[j, j] = alpha[j]
        if j + 1 < m:
            tri[j, j + 1] = beta[j]
            tri[j + 1, j] = beta[j]
    lam, q = np.linalg.eigh(tri)
    u = np.zeros(m, dtype=np.complex128)
    for l in range(m):
        ph = np.exp(-1j * lam[l] * dt) * q[0, l]
        for j in range(m):
            u[j] += q[j, l] * ph
    return u


@njit(cache=True)
def _lanczos_step(psi, dt, diag, indptr, indices, data, m_max, tol, basis_v, out, m_hint):
    """Apply ``exp(-i H dt)`` to ``psi``; returns (status, krylov_dim, residual).

    The small exponential is only evaluated
    from ``m_hint - 1`` vectors on, which saves eigensolves when the required
    dimension changes slowly from step to step.
    """
    n = psi.shape[0]
    nrm = np.sqrt(np.real(np.vdot(psi, psi)))
    if nrm == 0.0 or dt == 0.0:
        out[:] = psi
        return _OK, 0, 0.0
    alpha = np.zeros(m_max)
    beta = np.zeros(m_max)
    for r in range(n):
        basis_v[0, r] = psi[r] / nrm
    w = np.empty(n, dtype=np.complex128)
    m = 0
    err = np.inf
    u = np.zeros(1, dtype=np.complex128)
    scale = 0.0
    for j in range(m_max):
        _matvec(diag, indptr, indices, data, basis_v[j], w)
        a = np.real(np.vdot(basis_v[j], w))
        alpha[j] = a
        for r in range(n):
            w[r] -= a * basis_v[j, r]
        if j > 0:
            bprev = beta[j - 1]
            for r in range(n):
                w[r] -= bprev * basis_v[j - 1, r]
        # full reorthogonalization
        for l in range(j + 1):
            c = np.vdot(basis_v[l], w)
            for r in range(n):
                w[r] -= c * basis_v[l, r]
        b = np.sqrt(np.real(np.vdot(w, w)))
        beta[j] = b
        m = j + 1
        scale = max(scale, abs(a) + b)
        breakdown = b <= 1e-14 * max(scale, 1.0)
        if m >= max(MIN_KRYLOV_DIM, m_hint - 1) or breakdown or m == m_max:
            u = _small_exp(alpha, beta, m, dt)
            err = 0.0 if breakdown else b * abs(u[m - 1])
            if err < tol:
                break
        if j + 1 < m_max:
            for r in range(n):
                basis_v[j + 1, r] = w[r] / b
    for r in range(n):
        out[r] = 0.0
    for l in range(m):
        c = u[l] * nrm
        for r in range(n):
            out[r] += c * basis_v[l, r]
    if err >= tol:
        return _NOT_CONVERGED, m, err
    return _OK, m, err


@njit(cache=True)
def _propagate(psi, tm, dt, args, diag, data, m_max, tol, basis_v, out, m_hint):
    """One Krylov step with ``H`` frozen at ``tm``.

    The diagonal is shifted by the state's mean diagonal energy, which
    shortens the Krylov space; the shift is restored as a global phase.
    """
    _assemble(args, tm, diag, data)
    shift = 0.0
    weight = 0.0
    for r in range(diag.shape[0]):
        p = psi[r].real ** 2 + psi[r].imag ** 2
        shift += p * diag[r]
        weight += p
    if weight > 0.0:
        shift /= weight
    for r in range(diag.shape[0]):
        diag[r] -= shift
    status, m, err = _lanczos_step(psi, dt, diag, args[2], args[3], data, m_max, tol,
                                   basis_v, out, m_hint)
    ph = np.exp(-1j * shift * dt)
    for r in range(out.shape[0]):
        out[r] *= ph
    return status, m, err


@njit(cache=True)
def _evolve_steps(psi, t, dt, n_steps, args, m_max, tol):
    """Run ``n_steps`` midpoint-frozen Krylov steps; renormalize after each one."""
    n = psi.shape[0]
    diag = np.empty(n)
    data = np.empty(args[4].shape[0])
    basis_v = np.empty((m_max, n), dtype=np.complex128)
    out = np.empty(n, dtype=np.complex128)
    cur = psi.copy()
    max_defect = 0.0
    total_defect = 0.0
    max_m = 0
    m_hint = 0
    for step in range(n_steps):
        tm = t + (step + 0.5) * dt
        status, m, err = _propagate(cur, tm, dt, args, diag, data, m_max, tol, basis_v, out, m_hint)
        if status != _OK:
            return cur, step, max_defect, total_defect, max_m, err
        m_hint = m
        nrm = np.sqrt(np.real(np.vdot(out, out)))
        defect = abs(nrm - 1.0)
        max_defect = max(max_defect, defect)
        total_defect += defect
        max_m = max(max_m, m)
        for r in range(n):
            cur[r] = out[r] / nrm
    return cur, n_steps, max_defect, total_defect, max_m, 0.0


def apply_hamiltonian(psi: np.ndarray, t: float, terms: HamiltonianTerms) -> np.ndarray:
    """``H(t) psi`` in rad/s (not normalized)."""
    psi = np.ascontiguousarray(psi, dtype=complex)
    if psi.shape != (terms.basis.dim,):
        raise ValueError(f"state has shape {psi.shape}, basis dimension is {terms.basis.dim}")
    args = terms.numba_args()
    diag = np.empty(terms.basis.dim)
    data = np.empty(len(terms.coupling))
    _assemble(args, float(t), diag, data)
    out = np.empty_like(psi)
    _matvec(diag, terms.indptr, terms.indices, data, psi, out)
    return out


def _check_dt(dt):
    if not 0 <= dt <= MAX_DT * (1 + 1e-12):
        raise ValueError(f"dt must lie in [0, {MAX_DT:g}] s for the midpoint rule, got {dt!r}")


def krylov_step(psi: np.ndarray, t: float, dt: float, terms: HamiltonianTerms,
                m_max: int = DEFAULT_M_MAX, tol: float = DEFAULT_KRYLOV_TOL,
                renormalize: bool = True):
    """Propagate ``psi`` from ``t`` to ``t + dt`` with ``H`` frozen at ``t + dt/2``.

    Returns
    -------
    psi : ndarray
        The propagated state, renormalized unless ``renormalize`` is False.
    norm_defect : float
        ``| ||psi|| - 1 |`` before renormalization.

    Raises
    ------
    KrylovAccuracyError
        If ``m_max`` Lanczos vectors do not bring the residual below ``tol``.
    """
    _check_dt(dt)
    if m_max < MIN_KRYLOV_DIM:
        raise ValueError(f"m_max must be at least {MIN_KRYLOV_DIM}")
    psi = np.ascontiguousarray(psi, dtype=complex)
    if psi.shape != (terms.basis.dim,):
        raise ValueError(f"state has shape {psi.shape}, basis dimension is {terms.basis.dim}")
    args = terms.numba_args()
    diag = np.empty(terms.basis.dim)
    data = np.empty(len(terms.coupling))
    basis_v = np.empty((m_max, terms.basis.dim), dtype=complex)
    out = np.empty_like(psi)
    status, m, err = _propagate(psi, float(t) + 0.5 * dt, float(dt), args, diag, data,
                                int(m_max), float(tol), basis_v, out, 0)
    if status != _OK:
        raise KrylovAccuracyError(
            f"Krylov residual {err:.2e} above tol {tol:.1e} with {m} vectors at t = {t:.6e} s")
    nrm = float(np.linalg.norm(out))
    defect = abs(nrm - 1.0)
    if renormalize and nrm > 0:
        out /= nrm
    return out, defect


def observables(psi: np.ndarray, basis: TruncatedBasis) -> dict:
    """Spin, phonon and spin-phonon expectation values of a normalized state.

    Keys: ``sigma_x``, ``sigma_y``, ``sigma_z`` (N), ``n`` (M), ``n_sigma_x``
    (M, N), ``re_a`` and ``im_a`` (M).
    """
    psi = np.asarray(psi, dtype=complex)
    if psi.shape != (basis.dim,):
        raise ValueError("state does not match basis")
    prob = np.abs(psi) ** 2
    idx = np.arange(basis.dim)
    bits = basis.spin_bits.astype(float)
    occ = basis.occupations.astype(float)
    spin_index, phonon_index = np.divmod(idx, basis.n_phonon_states)
    sx = np.empty(basis.n_ions)
    sy = np.empty(basis.n_ions)
    nsx = np.empty((basis.n_modes, basis.n_ions))
    for i in range(basis.n_ions):
        flipped = psi[(spin_index ^ (1 << i)) * basis.n_phonon_states + phonon_index]
        overlap = np.conj(psi) * flipped
        sx[i] = np.sum(overlap).real
        # sy|up> = i|down>, sy|down> = -i|up>
        sy[i] = np.sum(overlap * 1j * (1.0 - 2.0 * bits[:, i])).real
        nsx[:, i] = (occ.T @ overlap).real
    sz = (2.0 * bits - 1.0).T @ prob
    n = occ.T @ prob
    a = np.zeros(basis.n_modes, dtype=complex)
    for k in range(basis.n_modes):
        src = basis.occupations[:, k] < basis.n_max
        lo = idx[src]
        a[k] = np.sum(np.conj(psi[lo]) * np.sqrt(occ[src, k] + 1.0) * psi[lo + basis.strides[k]])
    return {"sigma_x": sx, "sigma_y": sy, "sigma_z": sz, "n": n, "n_sigma_x": nsx,
            "re_a": a.real.copy(), "im_a": a.imag.copy()}


def decoupling_error(n, sigma_x, n_sigma_x, guard: float = DECOUPLING_GUARD) -> np.ndarray:
    """Relative factorization error ``(<n_k sx_i> - <n_k><sx_i>) / <n_k sx_i>``.

    Inputs are time series of shape ``(T, M)``, ``(T, N)`` and ``(T, M, N)``;
    the result has shape ``(T, M, N)`` with NaN where the denominator is
    below ``guard`` in magnitude.
    """
    n = np.asarray(n, dtype=float)
    sx = np.asarray(sigma_x, dtype=float)
    nsx = np.asarray(n_sigma_x, dtype=float)
    product = n[:, :, None] * sx[:, None, :]
    out = np.full(nsx.shape, np.nan)
    ok = np.abs(nsx) >= guard
    out[ok] = (nsx[ok] - product[ok]) / nsx[ok]
    return out


@dataclass
class QuantumTrajectory:
    t: np.ndarray
    sigma_x: np.ndarray  # (T, N)
    sigma_y: np.ndarray
    sigma_z: np.ndarray
    n: np.ndarray  # (T, M)
    n_sigma_x: np.ndarray  # (T, M, N)
    re_a: np.ndarray
    im_a: np.ndarray
    final_state: np.ndarray
    n_steps: int = 0
    max_norm_defect: float = 0.0
    total_norm_defect: float = 0.0
    max_krylov_dim: int = 0

    @property
    def populations(self) -> np.ndarray:
        return self.n

    def decoupling_error(self) -> np.ndarray:
        return decoupling_error(self.n, self.sigma_x, self.n_sigma_x)


def evolve(psi0: np.ndarray, terms: HamiltonianTerms, t1: float, dt: float = DEFAULT_DT,
           n_out: int = 2000, t0: float = 0.0, m_max: int = DEFAULT_M_MAX,
           tol: float = DEFAULT_KRYLOV_TOL, max_steps: int = 100_000_000) -> QuantumTrajectory:
    """Chain Krylov steps from ``t0`` to ``t1`` and sample observables.

    Samples are taken at ``n_out`` (at most) evenly spaced step boundaries,
    always including both end points.  The final step is shortened so that
    the run ends exactly at ``t1``.
    """
    _check_dt(dt)
    if not dt > 0:
        raise ValueError("dt must be positive")
    if not t1 > t0:
        raise ValueError("t1 must exceed t0")
    n_steps = int(np.ceil((t1 - t0) / dt * (1 - 1e-12)))
    if n_steps > max_steps:
        raise ValueError(f"{n_steps} steps exceed the budget of {max_steps}")
    basis = terms.basis
    psi = np.ascontiguousarray(psi0, dtype=complex)
    psi = psi / np.linalg.norm(psi)
    marks = np.unique(np.linspace(0, n_steps, max(int(n_out), 2)).round().astype(np.int64))
    args = terms.numba_args()
    records = []
    times = []
    done = 0
    max_def = 0.0
    tot_def = 0.0
    max_m = 0
    for mark in marks:
        todo = int(mark) - done
        if todo > 0:
            # the last step may be short
            full = todo if mark < n_steps else todo - 1
            t_here = t0 + done * dt
            psi, made, mdef, tdef, mm, err = _evolve_steps(psi, t_here, float(dt), full, args,
                                                           int(m_max), float(tol))
            if made < full:
                raise KrylovAccuracyError(
                    f"Krylov residual {err:.2e} above tol {tol:.1e} at t = {t_here + made * dt:.6e} s")
            if full < todo:
                last_t = t0 + (done + full) * dt
                psi, mdef2, tdef2, mm2 = _tail_step(psi, last_t, t1 - last_t, args, m_max, tol)
                mdef, tdef, mm = max(mdef, mdef2), tdef + tdef2, max(mm, mm2)
            max_def = max(max_def, mdef)
            tot_def += tdef
            max_m = max(max_m, mm)
            done = int(mark)
        times.append(t1 if done == n_steps else t0 + done * dt)
        records.append(observables(psi, basis))

    def stack(key):
        return np.array([r[key] for r in records])

    return QuantumTrajectory(np.array(times), stack("sigma_x"), stack("sigma_y"), stack("sigma_z"),
                             stack("n"), stack("n_sigma_x"), stack("re_a"), stack("im_a"), psi,
                             n_steps, max_def, tot_def, max_m)


def _tail_step(psi, t, dt, args, m_max, tol):
    psi, made, mdef, tdef, mm, err = _evolve_steps(psi, t, float(dt), 1, args, int(m_max), float(tol))
    if made < 1:
        raise KrylovAccuracyError(f"Krylov residual {err:.2e} above tol {tol:.1e} at t = {t:.6e} s")
    return psi, mdef, tdef, mm


def check_capacity(n_ions: int, n_max: int = 2, max_dim: Optional[int] = None) -> int:
    """Basis dimension for ``n_ions`` ions and modes; refuses systems beyond the exact-engine limit."""
    if n_ions > MAX_EXACT_IONS:
        raise EngineCapacityError(
            f"exact engine supports at most {MAX_EXACT_IONS} ions (dimension 2^N (n_max+1)^N), got {n_ions}")
    dim = 2**n_ions * (n_max + 1) ** n_ions
    if max_dim is not None and dim > max_dim:
        raise EngineCapacityError(f"basis dimension {dim} exceeds the limit {max_dim}")
    return dim
