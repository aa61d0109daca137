"""Gragg-Bulirsch-Stoer extrapolation integrator with order and step-size control.

The control logic follows the classic ODEX scheme (Hairer, Norsett & Wanner,
*Solving Ordinary Differential Equations I*, section II.9): modified midpoint
rule on the step-number sequence 2, 4, 6, ..., Aitken-Neville extrapolation in
``h**2``, convergence monitoring in the columns ``k-1``, ``k``, ``k+1`` and
work-per-unit-step order selection.

Requested output times are hit exactly by shortening the step that would
cross them ("step landing"); no interpolation is involved.

The right-hand side must be a numba-compiled function with signature
``rhs(t, y, args, out)`` that writes ``dy/dt`` into ``out``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from numba import njit

from .errors import StepSizeUnderflowError

KMAX = 9
FAC1 = 0.02
FAC2 = 4.0
FAC3 = 0.8
FAC4 = 0.9
SAFE1 = 0.65
SAFE2 = 0.94
SAFE3 = 0.5
UROUND = 2.3e-16

STATUS_OK = 0
STATUS_UNDERFLOW = 1
STATUS_MAX_STEPS = 2


@dataclass
class GBSStats:
    n_steps: int
    n_accepted: int
    n_rejected: int
    n_rhs: int


@njit(cache=True)
def _step_sequence(kmax):
    nj = np.empty(kmax + 1, dtype=np.int64)
    for j in range(kmax + 1):
        nj[j] = 2 * (j + 1)
    return nj


@njit(cache=True)
def _midex(rhs, args, j, t, y, h, f0, nj, table, scal, z0, z1, ftmp, tol):
    """Column ``j`` (0-based): midpoint result plus extrapolation into ``table``.

    Returns the scaled error estimate ``||T[0] - T[1]||`` (0.0 for j == 0).
    """
    n = y.shape[0]
    m = nj[j]
    hs = h / m
    for i in range(n):
        z0[i] = y[i]
        z1[i] = y[i] + hs * f0[i]
    for step in range(1, m):
        rhs(t + step * hs, z1, args, ftmp)
        for i in range(n):
            znew = z0[i] + 2.0 * hs * ftmp[i]
            z0[i] = z1[i]
            z1[i] = znew
    for i in range(n):
        table[j, i] = z1[i]
    for l in range(j, 0, -1):
        fac = (nj[j] / nj[l - 1]) ** 2 - 1.0
        for i in range(n):
            table[l - 1, i] = table[l, i] + (table[l, i] - table[l - 1, i]) / fac
    if j == 0:
        return 0.0
    err = 0.0
    for i in range(n):
        sc = tol + tol * max(abs(y[i]), abs(table[0, i]))
        scal[i] = sc
        d = (table[0, i] - table[1, i]) / sc
        err += d * d
    err = math.sqrt(err / n)
    return err


@njit(cache=True)
def _column_step(err, j, h, hmax):
    # j is 0-based, the column order is 2*(j+1)
    expo = 1.0 / (2 * (j + 1) - 1)
    facmin = FAC1**expo
    if err == 0.0:
        fac = facmin
    else:
        fac = min(FAC2 / facmin, max(facmin, (err / SAFE1) ** expo / SAFE2))
    return min(abs(h) / fac, hmax)


@njit(cache=True)
def _gbs_integrate(rhs, args, y0, t0, t_out, tol, h0, hmax, max_steps):
    n = y0.shape[0]
    n_out = t_out.shape[0]
    out = np.empty((n_out, n))
    km = KMAX
    nj = _step_sequence(km)
    a_work = np.empty(km + 1)
    a_work[0] = nj[0] + 1.0
    for j in range(1, km + 1):
        a_work[j] = a_work[j - 1] + nj[j]
    table = np.zeros((km + 1, n))
    scal = np.empty(n)
    z0 = np.empty(n)
    z1 = np.empty(n)
    ftmp = np.empty(n)
    f0 = np.empty(n)
    hh = np.zeros(km + 1)
    w = np.zeros(km + 1)

    y = y0.copy()
    t = t0
    posneg = 1.0
    if n_out > 0 and t_out[n_out - 1] < t0:
        posneg = -1.0
    k = max(1, min(km - 2, int(-math.log10(tol + UROUND) * 0.6 + 1.5) - 1))
    h = posneg * min(abs(h0), hmax)
    reject = False
    n_steps = 0
    n_acc = 0
    n_rej = 0
    n_rhs = 0
    stats = np.zeros(4, dtype=np.int64)

    for iout in range(n_out):
        t_end = t_out[iout]
        while (t_end - t) * posneg > 0.0:
            if n_steps >= max_steps:
                stats[0] = n_steps
                stats[1] = n_acc
                stats[2] = n_rej
                stats[3] = n_rhs
                return out[:iout], t, STATUS_MAX_STEPS, stats, h, k
            tscale = max(abs(t), abs(t_end))
            if abs(t_end - t) <= 64.0 * UROUND * tscale:
                t = t_end
                break
            if abs(h) <= 64.0 * UROUND * tscale:
                stats[0] = n_steps
                stats[1] = n_acc
                stats[2] = n_rej
                stats[3] = n_rhs
                return out[:iout], t, STATUS_UNDERFLOW, stats, h, k
            h_free = h
            k_free = k
            landing = False
            if (t + h - t_end) * posneg >= 0.0 or abs(t_end - t - h) < 1e-12 * abs(h):
                h = t_end - t
                landing = True
            rhs(t, y, args, f0)
            n_rhs += 1
            n_steps += 1
            accepted = False
            kc = 0
            err = 0.0
            errold = 1e300
            rejected_now = False
            # columns 0 .. k-1
            for j in range(k):
                err = _midex(rhs, args, j, t, y, h, f0, nj, table, scal, z0, z1, ftmp, tol)
                n_rhs += nj[j] - 1
                if j > 0:
                    hh[j] = _column_step(err, j, h, hmax)
                    w[j] = a_work[j] / hh[j]
                    if j > 1 and err >= errold:
                        rejected_now = True
                        break
                    errold = max(4.0 * err, 1.0)
            if not rejected_now:
                kc = k - 1
                if k > 1 and not reject:
                    # convergence in line k-1
                    if err <= 1.0:
                        accepted = True
                    elif err > ((nj[k + 1] * nj[k]) / (nj[0] * nj[0])) ** 2:
                        rejected_now = True
                if not accepted and not rejected_now:
                    err = _midex(rhs, args, k, t, y, h, f0, nj, table, scal, z0, z1, ftmp, tol)
                    n_rhs += nj[k] - 1
                    hh[k] = _column_step(err, k, h, hmax)
                    w[k] = a_work[k] / hh[k]
                    kc = k
                    if err <= 1.0:
                        accepted = True
                    elif err > (nj[k + 1] / nj[0]) ** 2:
                        rejected_now = True
                    else:
                        err = _midex(rhs, args, k + 1, t, y, h, f0, nj, table, scal, z0, z1, ftmp, tol)
                        n_rhs += nj[k + 1] - 1
                        hh[k + 1] = _column_step(err, k + 1, h, hmax)
                        w[k + 1] = a_work[k + 1] / hh[k + 1]
                        kc = k + 1
                        if err <= 1.0:
                            accepted = True
                        else:
                            rejected_now = True
            if accepted:
                n_acc += 1
                t = t_end if landing else t + h
                for i in range(n):
                    y[i] = table[0, i]
                # order selection (kc, k are 0-based column indices, kc >= 1)
                if kc == 1:
                    kopt = min(2, km - 2)
                    if reject:
                        kopt = 1
                elif kc <= k:
                    kopt = kc
                    if w[kc - 1] < w[kc] * FAC3:
                        kopt = kc - 1
                    if w[kc] < w[kc - 1] * FAC4:
                        kopt = min(kc + 1, km - 2)
                else:
                    kopt = kc - 1
                    if kc > 2 and w[kc - 2] < w[kc - 1] * FAC3:
                        kopt = kc - 2
                    if w[kc] < w[kopt] * FAC4:
                        kopt = min(kc, km - 2)
                if kopt < 1:
                    kopt = 1
                if reject:
                    k = min(kopt, kc)
                    hnew = min(abs(h), hh[k])
                    reject = False
                else:
                    if kopt <= kc:
                        hnew = hh[kopt]
                    else:
                        if kc < k and w[kc] < w[kc - 1] * FAC4:
                            hnew = hh[kc] * a_work[kopt + 1] / a_work[kc]
                        else:
                            hnew = hh[kc] * a_work[kopt] / a_work[kc]
                    k = kopt
                if landing and abs(h) < abs(h_free):
                    # a shortened landing step says nothing about the free step or order
                    k = k_free
                    hnew = abs(h_free)
                h = posneg * min(hnew, hmax)
            else:
                n_rej += 1
                if rejected_now and kc == 0:
                    # error grew between columns: midpoint sequence unstable
                    h = h * SAFE3
                else:
                    k = min(k, kc, km - 2)
                    if k > 1 and w[k - 1] < w[k] * FAC3:
                        k = k - 1
                    if k < 1:
                        k = 1
                    h = posneg * hh[k]
                reject = True
        for i in range(n):
            out[iout, i] = y[i]
    stats[0] = n_steps
    stats[1] = n_acc
    stats[2] = n_rej
    stats[3] = n_rhs
    return out, t, STATUS_OK, stats, h, k


def initial_step(rhs, args, y0, t0, t1, tol):
    """Starting step from the local scale of ``y`` and ``dy/dt`` (Hairer's heuristic, first stage)."""
    f0 = np.empty_like(y0)
    rhs(t0, y0, args, f0)
    sc = tol + tol * np.abs(y0)
    d0 = np.sqrt(np.mean((y0 / sc) ** 2))
    d1 = np.sqrt(np.mean((f0 / sc) ** 2))
    if d0 < 1e-5 or d1 < 1e-5:
        h = 1e-6 * abs(t1 - t0)
    else:
        h = 0.01 * d0 / d1
    return min(h, abs(t1 - t0))


def integrate(rhs, args, y0, t0, t_out, tol=1e-10, h0=None, hmax=None, max_steps=50_000_000):
    """Integrate ``dy/dt = rhs(t, y)`` from ``t0`` and return ``y`` at every ``t_out``.

    ``t_out`` must be monotone in the integration direction; integration runs
    backwards in time when ``t_out`` lies before ``t0``.  The mixed error test
    uses ``atol = rtol = tol`` on every component.

    Returns
    -------
    ys : ndarray, shape (len(t_out), len(y0))
    stats : GBSStats

    Raises
    ------
    StepSizeUnderflowError
        When the step size collapses (stiffness or a singular right-hand side);
        the exception carries the time reached.
    """
    y0 = np.ascontiguousarray(y0, dtype=float)
    t_out = np.ascontiguousarray(np.atleast_1d(t_out), dtype=float)
    if not 1e-14 <= tol <= 1e-3:
        raise ValueError(f"tol must lie in [1e-14, 1e-3], got {tol}")
    if t_out.size and np.any(np.diff(t_out) * np.sign(t_out[-1] - t0) < 0):
        raise ValueError("output times must be monotone in the integration direction")
    span = abs(t_out[-1] - t0) if t_out.size else 0.0
    if hmax is None:
        hmax = span if span > 0 else 1.0
    if h0 is None:
        h0 = initial_step(rhs, args, y0, t0, t_out[-1], tol) if span > 0 else 1.0
    ys, t_reached, status, stats, _, _ = _gbs_integrate(
        rhs, args, y0, float(t0), t_out, float(tol), float(h0), float(hmax), int(max_steps)
    )
    info = GBSStats(int(stats[0]), int(stats[1]), int(stats[2]), int(stats[3]))
    if status == STATUS_UNDERFLOW:
        raise StepSizeUnderflowError(t_reached)
    if status == STATUS_MAX_STEPS:
        raise StepSizeUnderflowError(
            t_reached, f"step budget of {max_steps} exhausted at t = {t_reached:.6e} s"
        )
    return ys, info
