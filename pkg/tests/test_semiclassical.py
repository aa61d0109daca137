import numpy as np
import pytest
from scipy.integrate import solve_ivp

from oracles import mean_field_rhs
from ionanneal.ion_chain import PhononSpectrum
from ionanneal.protocol import AnnealSchedule
from ionanneal.semiclassical import (
    DriveParams,
    SemiclassicalState,
    initial_state,
    integrate,
    rhs,
)


def one_mode(omega=1e6):
    return PhononSpectrum(np.array([omega]), np.array([[1.0]]), np.array([[0.07]]))


def params_for(spectrum, rabi=0.0, omega_L=2e6, b0=1e4, tau=1e-3, eps=0.0, tau_inf=False):
    sched = AnnealSchedule(omega_L=omega_L, rabi=rabi, tau=np.inf if tau_inf else tau,
                           b0=b0, epsilon=eps, t_final=1e-3 if tau_inf else None)
    return DriveParams.from_spectrum(spectrum, sched)


def oracle_args(p):
    s = p.schedule
    return (p.omega_k, p.eta, p.rabi, p.omega_L, s.b0, s.tau, s.epsilon, s.bias_index)


def test_fixed_point(spectrum4):
    p = params_for(spectrum4, rabi=3e6, eps=0.0)
    d = rhs(initial_state(spectrum4), 0.37e-3, p)
    assert np.all(d.to_vector() == 0.0)


def test_free_rotation():
    p = params_for(one_mode(), rabi=0.0)
    state = SemiclassicalState(np.array([1.0]), np.array([0.0]), np.array([[0.0, 0.0, -1.0]]))
    d = rhs(state, 0.0, p)
    np.testing.assert_allclose([d.re_a[0], d.im_a[0]], [0.0, -1e6])


def test_bias_only_drives_sigma_y(spectrum4):
    eps = 2 * np.pi * 2e3
    sched = AnnealSchedule(omega_L=1.3e7, rabi=3e6, tau=1e-3, epsilon=eps, bias_site=2)
    d = rhs(initial_state(spectrum4), 1e-5, DriveParams.from_spectrum(spectrum4, sched)).to_vector()
    expected = np.zeros_like(d)
    expected[8 + 3 * 1 + 1] = 2 * eps
    np.testing.assert_allclose(d, expected, atol=1e-9)


def test_rhs_matches_literal_equations(spectrum4):
    rng = np.random.default_rng(3)
    p = params_for(spectrum4, rabi=3e6, omega_L=1.2e7, b0=6e4, tau=3e-4, eps=1.3e4)
    y = rng.normal(size=20)
    for t in (0.0, 1.7e-7, 2.3e-4):
        got = rhs(SemiclassicalState.from_vector(y, 4), t, p).to_vector()
        np.testing.assert_allclose(got, mean_field_rhs(t, y, *oracle_args(p)), rtol=1e-13, atol=1e-6)


def test_trajectory_matches_reference_solver(spectrum4):
    p = params_for(spectrum4, rabi=3e6, omega_L=spectrum4.frequencies[1] - 500e3,
                   b0=2 * np.pi * 1e4, tau=2e-5, eps=2 * np.pi * 2e3)
    s0 = initial_state(spectrum4, [0.3, -0.2j, 0.1 + 0.1j, 0.0])
    t1 = 4e-5
    traj = integrate(s0, p, 0.0, t1, tol=1e-12, n_out=5)
    ref = solve_ivp(mean_field_rhs, (0, t1), s0.to_vector(), method="DOP853", rtol=1e-12,
                    atol=1e-13, t_eval=traj.t, args=oracle_args(p))
    got = np.concatenate([traj.re_a, traj.im_a, traj.spins.reshape(5, -1)], axis=1)
    np.testing.assert_allclose(got, ref.y.T, atol=2e-7)


def test_harmonic_period():
    p = params_for(one_mode(), rabi=0.0)
    s0 = SemiclassicalState(np.array([1.0]), np.array([0.0]), np.array([[0.0, 0.0, -1.0]]))
    traj = integrate(s0, p, 0.0, 2 * np.pi / 1e6)
    assert abs(traj.re_a[-1, 0] - 1.0) < 1e-8
    assert abs(traj.im_a[-1, 0]) < 1e-8


def test_precession():
    b = 2 * np.pi * 5e3
    p = params_for(one_mode(), rabi=0.0, b0=b, tau_inf=True)
    s0 = SemiclassicalState(np.zeros(1), np.zeros(1), np.array([[1.0, 0.0, 0.0]]))
    traj = integrate(s0, p, 0.0, 3e-4, n_out=50)
    np.testing.assert_allclose(traj.spins[:, 0, 0], np.cos(2 * b * traj.t), atol=1e-8)
    np.testing.assert_allclose(traj.spins[:, 0, 1], np.sin(2 * b * traj.t), atol=1e-8)


def test_spin_norm_and_phonon_energy(spectrum4):
    p = params_for(spectrum4, rabi=0.0, b0=2 * np.pi * 1e4, eps=2 * np.pi * 2e3)
    s0 = initial_state(spectrum4, [1.0, 0.5j, -0.3, 0.2])
    traj = integrate(s0, p, 0.0, 1e-3, n_out=20)
    norms = np.linalg.norm(traj.spins, axis=2)
    assert np.max(np.abs(norms - 1.0)) < 1e-8
    # without coupling every mode keeps its amplitude (about 2500 periods here)
    np.testing.assert_allclose(traj.populations, traj.populations[0][None, :].repeat(20, 0), rtol=2e-5)


def test_phonon_parity(spectrum4):
    """Flipping every eta together with the phonon amplitudes maps alpha to -alpha."""
    sched = AnnealSchedule(omega_L=spectrum4.frequencies[0] - 2.9e6, rabi=3e6, tau=2e-5,
                           epsilon=2 * np.pi * 2e3, t_final=1e-4)
    alphas = np.array([0.2, -0.1j, 0.05, 0.0])
    a = integrate(initial_state(spectrum4, alphas), DriveParams.from_spectrum(spectrum4, sched),
                  0.0, sched.t_final, n_out=3)
    p_neg = DriveParams(spectrum4.frequencies, -spectrum4.lamb_dicke, 3e6, sched.omega_L, sched)
    c = integrate(initial_state(spectrum4, -alphas), p_neg, 0.0, sched.t_final, n_out=3)
    np.testing.assert_allclose(c.re_a, -a.re_a, atol=1e-9)
    np.testing.assert_allclose(c.im_a, -a.im_a, atol=1e-9)
    np.testing.assert_allclose(c.spins, a.spins, atol=1e-9)


def test_initial_state_contract(spectrum4):
    s = initial_state(spectrum4)
    assert np.all(s.re_a == 0) and np.all(s.im_a == 0)
    np.testing.assert_array_equal(s.spins, [[0, 0, -1]] * 4)
    s = initial_state(spectrum4, np.ones(4))
    np.testing.assert_array_equal(s.re_a, 1.0)
    np.testing.assert_array_equal(s.im_a, 0.0)
    with pytest.raises(ValueError):
        initial_state(spectrum4, np.ones(3))
