import math

import numpy as np
import pytest

from ionanneal.constants import HBAR, K_B
from ionanneal.experiments import run_semiclassical
from ionanneal.thermal import (
    RunRecord,
    ThermalConfig,
    aggregate,
    lamb_dicke_check,
    mean_occupation,
    run_ensemble,
    run_generator,
    sample_alphas,
    two_sigma,
)

OMEGA = 2 * math.pi * 2655e3


def test_occupation_limits():
    assert mean_occupation(0.0, OMEGA) == 0.0
    t_ln2 = HBAR * OMEGA / (K_B * math.log(2))
    assert mean_occupation(t_ln2, OMEGA) == pytest.approx(1.0, rel=1e-12)
    t_hot = 100 * HBAR * OMEGA / K_B
    assert mean_occupation(t_hot, OMEGA) == pytest.approx(100.0, rel=0.01)
    n = mean_occupation(np.array([0.0, 1e-6, 1e-3]), OMEGA)
    assert n.shape == (3,) and n[0] == 0 and 0 < n[1] < n[2]
    with pytest.raises(ValueError):
        mean_occupation(-1.0, OMEGA)


def test_zero_temperature_samples():
    alphas = sample_alphas(np.zeros(4), run_generator(5, 0))
    np.testing.assert_array_equal(alphas, 0)


def test_sampler_deterministic():
    occ = np.array([0.5, 1.0, 2.0])
    a = sample_alphas(occ, run_generator(11, 3))
    b = sample_alphas(occ, run_generator(11, 3))
    c = sample_alphas(occ, run_generator(11, 4))
    np.testing.assert_array_equal(a, b)
    assert not np.array_equal(a, c)


def test_common_random_numbers():
    """The same run index draws proportional amplitudes at every temperature."""
    a = sample_alphas(np.array([1.0, 4.0]), run_generator(2, 7))
    b = sample_alphas(np.array([4.0, 16.0]), run_generator(2, 7))
    np.testing.assert_allclose(b, 2 * a)


def test_thermal_config_occupations(spectrum4):
    cfg = ThermalConfig(1e-4, n_samples=3, spectrum=spectrum4)
    np.testing.assert_allclose(cfg.occupations(), mean_occupation(1e-4, spectrum4.frequencies))
    with pytest.raises(ValueError):
        ThermalConfig(-1.0)
    with pytest.raises(ValueError):
        ThermalConfig(0.0, n_samples=0)
    with pytest.raises(ValueError):
        ThermalConfig(0.0).occupations()


def test_lamb_dicke_examples():
    check = lamb_dicke_check(0.075, 1.0)
    assert check.margin == pytest.approx(0.075 * math.sqrt(3))
    assert check.valid
    assert lamb_dicke_check(0.075, 0.0).margin == pytest.approx(0.075)
    assert not lamb_dicke_check(0.01, 1.5).valid


def test_aggregate_with_failures():
    records = [RunRecord(0, 0.5, np.array([0.1, 0.2])), RunRecord(1, 0.0, np.array([0.3, 0.2])),
               RunRecord(2, float("nan"), None, "StepSizeUnderflowError: boom")]
    stats = aggregate(records, 1e-3, 9, 2)
    assert stats.failures == 1 and stats.n_samples == 3
    assert stats.mean_fidelity == pytest.approx(0.25)
    assert stats.fidelity_err == pytest.approx(two_sigma([0.5, 0.0]))
    assert stats.success_fraction == pytest.approx(0.5)
    np.testing.assert_allclose(stats.mean_population, [0.2, 0.2])
    empty = aggregate(records[2:], 1e-3, 9, 2)
    assert math.isnan(empty.mean_fidelity) and empty.failures == 1


def test_zero_temperature_ensemble_matches_deterministic(spectrum4, far_schedule):
    sched = far_schedule.replace(tau=2e-5)
    stats = run_ensemble(sched, spectrum4, ThermalConfig(0.0, n_samples=5, rng_seed=3))
    fids = [r.fidelity for r in stats.records]
    assert len(set(fids)) == 1
    assert stats.fidelity_err == 0.0
    single, _ = run_semiclassical(spectrum4, sched)
    assert fids[0] == single.fidelity
