import numpy as np
import pytest

from ionanneal.experiments import CellTask, run_cell, run_exact, run_semiclassical, target_pattern
from ionanneal.protocol import AnnealSchedule


def test_target_follows_initial_spin(spectrum4, far_schedule):
    k, xi = target_pattern(spectrum4, far_schedule)
    assert k == 0 and xi[0] < 0
    k, xi = target_pattern(spectrum4, far_schedule.replace(omega_L=spectrum4.frequencies[0] + 1e5),
                           spin_z=1)
    assert k == 0 and xi[0] > 0


def test_fast_ramp_fails(spectrum4, far_schedule):
    result, _ = run_semiclassical(spectrum4, far_schedule.replace(tau=1e-6))
    # the spins barely leave the z axis; any surviving sign match is negligible
    assert result.fidelity < 1e-3
    assert np.max(np.abs(result.final_sigma_x[1:])) < 1e-3


def test_no_coupling_fails(spectrum4, far_schedule):
    result, traj = run_semiclassical(spectrum4, far_schedule.replace(rabi=0.0, tau=5e-5))
    assert result.fidelity == 0.0
    # only the biased spin is pushed away from zero
    assert np.max(np.abs(traj.sigma_x[:, 1:])) == 0.0


def test_far_detuned_anneal(spectrum4, far_schedule):
    result, traj = run_semiclassical(spectrum4, far_schedule)
    assert result.fidelity > 0.9
    assert result.extra["dominant_mode"] == 0
    assert result.separation_time is not None and result.waiting_time is not None
    assert result.waiting_time >= result.separation_time
    assert traj.t[-1] == pytest.approx(far_schedule.t_final)


def test_exact_short_run(spectrum2):
    sched = AnnealSchedule(omega_L=spectrum2.frequencies[0] - 2.9e6, rabi=3e6, tau=1e-6)
    result, traj = run_exact(spectrum2, sched, n_max=2, dt=10e-9, n_out=11)
    assert result.engine == "exact"
    assert traj.max_norm_defect < 1e-8
    assert result.fidelity < 1e-3
    assert len(result.final_mode_populations) == 2


def test_failed_cell_is_a_sentinel(spectrum4, far_schedule):
    on_resonance = far_schedule.replace(omega_L=float(spectrum4.frequencies[1]))
    outcome = run_cell(CellTask(0, "semiclassical", spectrum4, on_resonance))
    assert outcome.result is None
    assert outcome.fidelity == -1.0
    assert outcome.reason.startswith("OnResonanceError")


def test_cell_matches_single_run(spectrum4, far_schedule):
    sched = far_schedule.replace(tau=5e-5)
    outcome = run_cell(CellTask(3, "semiclassical", spectrum4, sched))
    single, _ = run_semiclassical(spectrum4, sched)
    assert outcome.fidelity == single.fidelity
