import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ionanneal.errors import DegenerateModeError
from ionanneal.protocol import (
    AnnealSchedule,
    detect_separation_time,
    detect_waiting_time,
    field_at,
    fidelity,
    oriented_mode,
    target_convention,
)

SIGNS = np.array([0.5, -0.5, 0.5, -0.5])
finite = st.floats(-1.0, 1.0, allow_nan=False)


def test_field_examples():
    s = AnnealSchedule(omega_L=1e7, rabi=1e6, tau=0.35e-3)
    assert field_at(s, 0.0) == s.b0
    assert field_at(s, s.tau) == pytest.approx(s.b0 / math.e, rel=1e-15)
    assert field_at(s, 20 * s.tau) == pytest.approx(2.06e-9 * s.b0, rel=1e-3)
    assert s.t_final == pytest.approx(20 * s.tau)
    assert s.replace(tau=1e-3).t_final == pytest.approx(20e-3)
    assert s.bias_index == 0


@pytest.mark.parametrize("kwargs", [
    {"tau": 0.0}, {"tau": -1.0}, {"b0": 0.0}, {"epsilon": -1.0}, {"rabi": -1.0},
    {"bias_site": 0}, {"omega_L": 0.0}, {"tau": math.inf},
])
def test_schedule_validation(kwargs):
    base = {"omega_L": 1e7, "rabi": 1e6, "tau": 1e-3}
    with pytest.raises(ValueError):
        AnnealSchedule(**{**base, **kwargs})


def test_fidelity_examples():
    assert fidelity([0.8, -0.6, 0.7, -0.9], SIGNS) == pytest.approx(0.6)
    assert fidelity([0.8, 0.6, 0.7, -0.9], SIGNS) == 0.0
    assert fidelity([0.8, -0.6, 0.0, -0.9], SIGNS) == 0.0


def test_fidelity_orientation():
    sx = [-0.8, 0.6, -0.7, 0.9]
    assert fidelity(sx, SIGNS) == 0.0
    assert fidelity(sx, SIGNS, bias_index=0, bias_sign=-1) == pytest.approx(0.6)
    assert fidelity(sx, SIGNS, bias_index=1, bias_sign=1) == pytest.approx(0.6)
    with pytest.raises(ValueError):
        fidelity([0.1, 0.2], SIGNS)
    with pytest.raises(DegenerateModeError):
        fidelity([0.1, 0.2, 0.3], [0.5, 0.0, -0.5])


def test_target_convention():
    assert target_convention(-1) == ("above", -1)
    assert target_convention(1.0) == ("below", 1)
    with pytest.raises(ValueError):
        target_convention(0.5)
    np.testing.assert_array_equal(oriented_mode(SIGNS, 1, 1), -SIGNS)
    np.testing.assert_array_equal(oriented_mode(SIGNS, 0, 1), SIGNS)


@given(st.lists(finite, min_size=4, max_size=4), st.integers(0, 3), st.sampled_from([-1, 1]))
def test_fidelity_properties(sx, bias, sign):
    f = fidelity(sx, SIGNS, bias_index=bias, bias_sign=sign)
    assert 0.0 <= f <= 1.0
    assert f == 0.0 or f == pytest.approx(min(abs(v) for v in sx))
    # the oriented target is unaffected by a global flip of the mode vector
    assert f == fidelity(sx, -SIGNS, bias_index=bias, bias_sign=sign)


def test_separation_examples():
    t = np.linspace(0, 3e-3, 31)
    assert detect_separation_time(t, np.zeros((31, 4))) is None
    sx = np.zeros((31, 2))
    sx[t >= 1.2e-3 - 1e-12, 1] = 0.3
    assert detect_separation_time(t, sx) == pytest.approx(1.2e-3)
    # the excluded ion does not count
    sx[:, 0] = 0.4
    assert detect_separation_time(t, sx, exclude=(0,)) == pytest.approx(1.2e-3)
    assert detect_separation_time(t, sx, exclude=(0, 1)) is None


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 10_000), st.floats(0.01, 0.5), st.floats(0.01, 0.5))
def test_separation_monotone_in_threshold(seed, a, b):
    rng = np.random.default_rng(seed)
    t = np.linspace(0, 1, 40)
    sx = rng.uniform(-1, 1, size=(40, 3)) * t[:, None]
    lo, hi = sorted((a, b))
    t_lo = detect_separation_time(t, sx, lo)
    t_hi = detect_separation_time(t, sx, hi)
    if t_hi is not None:
        assert t_lo is not None and t_lo <= t_hi


def test_waiting_examples():
    t = np.linspace(0, 5e-3, 101)
    assert detect_waiting_time(t, np.full((101, 3), 0.4)) == 0.0
    osc = 0.1 * np.sin(2 * np.pi * 5e3 * t)[:, None] * np.ones(3)
    assert detect_waiting_time(t, osc) is None
    with pytest.raises(ValueError):
        detect_waiting_time(t[:5], np.zeros((5, 3)))


@settings(max_examples=50, deadline=None)
@given(st.floats(0.5e-3, 3e-3), st.floats(0.3, 1.0))
def test_waiting_after_separation(t_ramp, level):
    """Ramp-then-flat data: the curves settle no earlier than they separate.

    The ramp is steep enough to move more than the waiting threshold within
    one window, so it counts as genuine motion.
    """
    t = np.linspace(0, 5e-3, 501)
    ramp = level * np.clip(t / t_ramp, 0, 1)
    sx = np.stack([ramp, -ramp, 0.5 * ramp], axis=1)
    t_sep = detect_separation_time(t, sx)
    t_wait = detect_waiting_time(t, sx)
    assert t_sep is not None and t_wait is not None
    assert t_wait >= t_sep
    assert t_wait <= t_ramp + 1e-5
