import numpy as np
import pytest

from conftest import OMEGA_RAD, OMEGA_REC, chain
from oracles import equilibrium, transverse_modes
from ionanneal.errors import (
    ChainUnstableError,
    DegenerateSpectrumError,
    NoDominantModeError,
    OnResonanceError,
)
from ionanneal.ion_chain import (
    PhononSpectrum,
    compute_equilibrium_positions,
    dominant_mode,
    phonon_spectrum,
    transverse_hessian,
)


def test_single_ion_at_centre():
    pos = compute_equilibrium_positions(chain(1))
    np.testing.assert_array_equal(pos.positions, [0.0])


def test_two_ions_analytic():
    u = compute_equilibrium_positions(chain(2)).positions
    np.testing.assert_allclose(u, [-(0.5 ** (2 / 3)), 0.5 ** (2 / 3)], atol=1e-12)


def test_three_ions():
    u = compute_equilibrium_positions(chain(3)).positions
    np.testing.assert_allclose(u, [-1.0772, 0.0, 1.0772], atol=5e-5)
    assert abs(u[1]) < 1e-12


@pytest.mark.parametrize("n", [3, 4, 5, 6, 8])
def test_equilibrium_matches_energy_minimum(n):
    u = compute_equilibrium_positions(chain(n)).positions
    np.testing.assert_allclose(u, equilibrium(n), atol=1e-6)
    # mirror symmetry
    np.testing.assert_allclose(u, -u[::-1], atol=1e-12)


@pytest.mark.parametrize("n", [2, 3, 4, 6])
def test_hessian_matches_finite_differences(n):
    spec = chain(n)
    u = compute_equilibrium_positions(spec).positions
    ratio = spec.omega_rad / spec.omega_ax
    w_ref, _ = transverse_modes(u, ratio)
    w = np.linalg.eigvalsh(transverse_hessian(u, spec.omega_rad, spec.omega_ax))
    np.testing.assert_allclose(w, w_ref, rtol=1e-6)


def test_single_ion_mode():
    sp = phonon_spectrum(chain(1))
    np.testing.assert_allclose(sp.frequencies, [OMEGA_RAD], rtol=1e-14)
    np.testing.assert_allclose(np.abs(sp.mode_vectors), [[1.0]])


@pytest.mark.parametrize("n", [2, 3, 4, 6, 8])
def test_centre_of_mass_mode(n):
    # long chains need a softer axial trap to stay linear
    sp = phonon_spectrum(chain(n, omega_ax=0.2 * OMEGA_RAD))
    assert abs(sp.frequencies[-1] / OMEGA_RAD - 1) < 1e-10
    np.testing.assert_allclose(sp.mode_vectors[-1], np.full(n, 1 / np.sqrt(n)), atol=1e-10)
    assert np.all(np.diff(sp.frequencies) > 0)


def test_orthonormal_and_lamb_dicke(spectrum4):
    xi = spectrum4.mode_vectors
    np.testing.assert_allclose(xi @ xi.T, np.eye(4), atol=1e-10)
    eta = np.sqrt(OMEGA_REC / spectrum4.frequencies)[:, None] * xi
    np.testing.assert_allclose(spectrum4.lamb_dicke, eta, rtol=1e-14)
    assert abs(np.sqrt(OMEGA_REC / OMEGA_RAD) - 0.0752) < 5e-4


def test_zigzag_rejected():
    # weak radial confinement relative to the axial one buckles the chain
    with pytest.raises(ChainUnstableError):
        phonon_spectrum(chain(8, omega_ax=0.6 * OMEGA_RAD))


def test_invalid_spec():
    with pytest.raises(ValueError):
        chain(0)
    with pytest.raises(ValueError):
        chain(3, omega_ax=2 * OMEGA_RAD)


def _toy(freqs):
    freqs = np.asarray(freqs, dtype=float)
    return PhononSpectrum(freqs, np.eye(len(freqs)), np.eye(len(freqs)))


def test_dominant_mode_examples():
    sp = _toy([10, 12, 14])
    assert dominant_mode(sp, 13) == 1
    assert dominant_mode(sp, 14.5) == 2
    assert dominant_mode(sp, 13, side="above") == 2
    with pytest.raises(NoDominantModeError):
        dominant_mode(sp, 9)
    with pytest.raises(NoDominantModeError):
        dominant_mode(sp, 15, side="above")
    with pytest.raises(OnResonanceError):
        dominant_mode(sp, 12.0)
    with pytest.raises(ValueError):
        dominant_mode(sp, 13, side="left")


def test_degenerate_spectrum_error_type():
    assert issubclass(DegenerateSpectrumError, Exception)
