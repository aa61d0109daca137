"""Annealing schedule, fidelity metric and event detection on spin trajectories."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from typing import Optional, Sequence

import numpy as np

from .constants import TWO_PI
from .errors import DegenerateModeError

SEPARATION_THRESHOLD = 0.05
WAITING_THRESHOLD = 0.02
WAITING_WINDOW = 0.5e-3
MODE_ZERO_TOL = 1e-12


@dataclass(frozen=True)
class AnnealSchedule:
    """Exponential transverse-field ramp ``B(t) = b0 exp(-t / tau)`` and drive settings.

    All frequencies are angular (rad/s), times in seconds.  ``bias_site`` is
    1-based.  ``t_final`` defaults to ``20 * tau``.
    """

    omega_L: float
    rabi: float
    tau: float
    b0: float = TWO_PI * 10e3
    epsilon: float = TWO_PI * 2e3
    bias_site: int = 1
    t_final: Optional[float] = None

    def __post_init__(self):
        if not self.b0 > 0:
            raise ValueError(f"b0 must be positive, got {self.b0}")
        if not self.tau > 0:
            raise ValueError(f"tau must be positive, got {self.tau}")
        if not self.epsilon >= 0:
            raise ValueError(f"epsilon must be non-negative, got {self.epsilon}")
        if not self.rabi >= 0:
            raise ValueError(f"rabi must be non-negative, got {self.rabi}")
        if not self.omega_L > 0:
            raise ValueError(f"omega_L must be positive, got {self.omega_L}")
        if int(self.bias_site) != self.bias_site or self.bias_site < 1:
            raise ValueError(f"bias_site must be a 1-based ion index, got {self.bias_site}")
        if self.t_final is None:
            if not math.isfinite(self.tau):
                raise ValueError("t_final is required when tau is infinite")
            object.__setattr__(self, "t_final", 20.0 * self.tau)
        if not self.t_final > 0:
            raise ValueError(f"t_final must be positive, got {self.t_final}")

    @property
    def bias_index(self) -> int:
        return self.bias_site - 1

    def replace(self, **changes) -> "AnnealSchedule":
        values = asdict(self)
        if "tau" in changes and "t_final" not in changes:
            values["t_final"] = None
        values.update(changes)
        return AnnealSchedule(**values)


def field_at(schedule: AnnealSchedule, t):
    """Transverse field ``B(t)`` in rad/s."""
    return schedule.b0 * np.exp(-np.asarray(t) / schedule.tau)


@dataclass
class RunResult:
    engine: str
    omega_L: float
    tau: float
    epsilon: float
    final_sigma_x: list
    fidelity: float
    separation_time: Optional[float]
    waiting_time: Optional[float]
    final_mode_populations: list
    temperature: float = 0.0
    seed: Optional[int] = None
    extra: dict = field(default_factory=dict)

    def to_json_dict(self) -> dict:
        return {
            "engine": self.engine,
            "omega_L": self.omega_L,
            "tau": self.tau,
            "epsilon": self.epsilon,
            "T": self.temperature,
            "seed": self.seed,
            "fidelity": self.fidelity,
            "t_sep": self.separation_time,
            "t_wait": self.waiting_time,
            "final_sigma_x": [float(v) for v in self.final_sigma_x],
            "final_populations": [float(v) for v in self.final_mode_populations],
            **self.extra,
        }


def target_convention(spin_z: float):
    """Target-mode side and biased-site sign implied by the initial ``<sigma_z>``.

    Starting from ``sigma_z = -1`` the anneal follows the ground state of the
    effective Ising model.  Its sign pattern is that of the nearest mode
    above ``omega_L``, and the ``+eps sx_p`` bias pins the biased spin to
    ``-x``.  Starting from ``+1`` the highest state is followed instead,
    which mirrors both choices.

    Returns
    -------
    side : {"above", "below"}
        Argument for :func:`ionanneal.ion_chain.dominant_mode`.
    bias_sign : int
        Sign of the biased-site component in the oriented target pattern.
    """
    if spin_z not in (-1, 1, -1.0, 1.0):
        raise ValueError(f"initial sigma_z must be +1 or -1, got {spin_z!r}")
    return ("above", -1) if spin_z < 0 else ("below", 1)


def oriented_mode(mode_vector: Sequence[float], bias_index: int, bias_sign: int = 1) -> np.ndarray:
    """Mode vector flipped so that its component at the biased ion has sign ``bias_sign``."""
    xi = np.asarray(mode_vector, dtype=float)
    if np.any(np.abs(xi) < MODE_ZERO_TOL):
        raise DegenerateModeError("dominant mode has a vanishing component; its sign is undefined")
    return -xi if xi[bias_index] * bias_sign < 0 else xi


def fidelity(final_sigma_x: Sequence[float], dominant_mode_vector: Sequence[float],
             bias_index: Optional[int] = None, bias_sign: int = 1) -> float:
    """Annealing fidelity: ``min_i |<sigma_x^i>|`` if every sign matches the mode, else 0.

    With ``bias_index`` given, the mode vector is first oriented so that its
    component at the biased ion has sign ``bias_sign``, which fixes the global
    Z2 branch.  Without it the comparison is made against the vector as
    passed.  A spin component that is exactly zero counts as a mismatch.
    """
    sx = np.asarray(final_sigma_x, dtype=float)
    xi = np.asarray(dominant_mode_vector, dtype=float)
    if sx.shape != xi.shape:
        raise ValueError(f"shape mismatch: {sx.shape} vs {xi.shape}")
    if np.any(np.abs(xi) < MODE_ZERO_TOL):
        raise DegenerateModeError("dominant mode has a vanishing component; its sign is undefined")
    if bias_index is not None:
        xi = oriented_mode(xi, bias_index, bias_sign)
    if np.all(np.sign(sx) == np.sign(xi)):
        return float(np.min(np.abs(sx)))
    return 0.0


def detect_separation_time(t, sigma_x, threshold: float = SEPARATION_THRESHOLD,
                           exclude: Sequence[int] = ()) -> Optional[float]:
    """First sample time at which some ``|<sigma_x^i>|`` exceeds ``threshold``.

    ``sigma_x`` has shape ``(n_samples, n_ions)``.  Ions listed in ``exclude``
    are ignored; the biased ion is tilted by the bias field from the start,
    so the run pipelines leave it out.
    """
    t = np.asarray(t, dtype=float)
    sx = np.asarray(sigma_x, dtype=float)
    if len(t) < 2:
        raise ValueError("need at least two samples")
    if len(exclude):
        keep = np.setdiff1d(np.arange(sx.shape[1]), np.asarray(exclude, dtype=int))
        if keep.size == 0:
            return None
        sx = sx[:, keep]
    hit = np.flatnonzero(np.max(np.abs(sx), axis=1) > threshold)
    return float(t[hit[0]]) if hit.size else None


def detect_waiting_time(t, sigma_x, window: float = WAITING_WINDOW,
                        threshold: float = WAITING_THRESHOLD) -> Optional[float]:
    """Time from which every ``<sigma_x^i>`` has stopped varying.

    A window ``[s, s + window]`` is settled when each spin's peak-to-peak
    variation inside it is below ``threshold``.  The waiting time is the
    earliest sample ``t`` such that every window starting at or after ``t``
    is settled; ``None`` if the last complete window is still moving.
    """
    t = np.asarray(t, dtype=float)
    sx = np.asarray(sigma_x, dtype=float)
    slack = 1e-9 * window
    if len(t) < 2 or t[-1] - t[0] < window - slack:
        raise ValueError("trajectory shorter than one waiting window")
    n_starts = int(np.searchsorted(t, t[-1] - window + slack, side="right"))
    ends = np.searchsorted(t, t[:n_starts] + window + slack, side="right")
    settled = np.empty(n_starts, dtype=bool)
    for start in range(n_starts):
        block = sx[start:ends[start]]
        settled[start] = np.all(block.max(axis=0) - block.min(axis=0) < threshold)
    if not settled[-1]:
        return None
    moving = np.flatnonzero(~settled)
    first = moving[-1] + 1 if moving.size else 0
    return float(t[first])
