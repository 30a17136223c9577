"""Tests for the weak-drive cavity-atom steady state, eigenvalues and forces."""

import math

import numpy as np
import pytest

from physics.cqed import (CavityAtomParams, SingularSystemError, dipole_force,
                          effective_potential_curve, eigenvalues, input_amplitude,
                          linear_response, scalar_response, steady_state, transmission_spectrum)
from physics.mode import ModeField
from physics.surface import SurfaceModel

MHZ = 2.0 * math.pi * 1e6


def _params(config, **changes):
    return CavityAtomParams.from_config(config).with_updates(**changes)


def test_empty_cavity_transmission_below_ten_percent(config):
    """Test that the default cavity is close to critical coupling on resonance."""
    params = _params(config, g=0.0)
    T, R = transmission_spectrum(params, np.array([0.0]))
    assert T[0] < 0.1
    assert T[0] == pytest.approx((1 - 2 * 10 * 18 / (18 ** 2 + 13 ** 2)) ** 2, rel=1e-9)


def test_critical_coupling_condition(config):
    """Test T = 0 at zero detuning when kappa_ex^2 = kappa_i^2 + h^2."""
    kappa_i, h = 8 * MHZ, 13 * MHZ
    params = _params(config, g=0.0, kappa_i=kappa_i, h=h, kappa_ex=math.hypot(kappa_i, h))
    T, _ = transmission_spectrum(params, np.array([0.0]))
    assert T[0] == pytest.approx(0.0, abs=1e-12)


def test_empty_cavity_spectrum_symmetric(config):
    """Test that the empty-cavity spectrum is even in detuning."""
    params = _params(config, g=0.0)
    detunings = np.linspace(-60, 60, 41) * MHZ
    T, R = transmission_spectrum(params, detunings)
    np.testing.assert_allclose(T, T[::-1], rtol=1e-9, atol=1e-12)
    np.testing.assert_allclose(R, R[::-1], rtol=1e-9, atol=1e-12)


def test_lossless_system_conserves_flux(config):
    """Test T + R = 1 without intrinsic or atomic loss."""
    params = _params(config, g=30 * MHZ, theta=0.4, kappa_i=0.0, gamma=0.0, delta_a=-5 * MHZ)
    T, R = transmission_spectrum(params, np.linspace(-80, 80, 33) * MHZ + 0.37 * MHZ)
    np.testing.assert_allclose(T + R, 1.0, atol=1e-9)


def test_lossy_system_never_gains_flux(config):
    """Test T + R <= 1 with losses."""
    params = _params(config, g=70 * MHZ, theta=1.1)
    T, R = transmission_spectrum(params, np.linspace(-150, 150, 61) * MHZ)
    assert np.all(T + R <= 1.0 + 1e-12)


def test_scalar_response_matches_linear_solve(config):
    """Test the eliminated-atom solution against the full 3x3 solve."""
    kappa_i, kappa_ex, h, gamma = 8 * MHZ, 10 * MHZ, 13 * MHZ, 2.6 * MHZ
    for g, theta, Delta_pa, delta_a in [(50 * MHZ, 0.3, 5 * MHZ, -2 * MHZ),
                                        (10 * MHZ, 2.0, -40 * MHZ, 0.0)]:
        a, b, sigma, _, _ = linear_response(g, theta, Delta_pa, delta_a, gamma, 0.0,
                                            kappa_i, kappa_ex, h)
        a2, b2, s2 = scalar_response(g, theta, -Delta_pa, delta_a - Delta_pa,
                                     kappa_i + kappa_ex, kappa_ex, h, gamma)
        assert complex(a) == pytest.approx(a2, rel=1e-9)
        assert complex(b) == pytest.approx(b2, rel=1e-9)
        assert complex(sigma) == pytest.approx(s2, rel=1e-9)


def test_linear_response_broadcasts(config):
    """Test vectorized evaluation over positions."""
    g = np.linspace(0, 100, 7) * MHZ
    a, b, sigma, t, r = linear_response(g, 0.0, 0.0, 0.0, 2.6 * MHZ, 0.0, 8 * MHZ, 10 * MHZ,
                                        13 * MHZ)
    assert a.shape == b.shape == sigma.shape == t.shape == r.shape == (7,)


def test_amplitudes_scale_with_input(config):
    """Test that the steady state is linear in the drive."""
    low = steady_state(_params(config, g=40 * MHZ, alpha_in=1.0))
    high = steady_state(_params(config, g=40 * MHZ, alpha_in=3.0))
    assert high.a == pytest.approx(3.0 * low.a)
    assert high.transmission == pytest.approx(low.transmission)


def test_singular_system(config):
    """Test that an undamped uncoupled atom on resonance is rejected."""
    params = _params(config, g=0.0, gamma=0.0, delta_a=0.0, Delta_pa=0.0)
    with pytest.raises(SingularSystemError):
        steady_state(params)


def test_negative_rate_rejected(config):
    """Test parameter validation."""
    with pytest.raises(ValueError, match="kappa_i"):
        _params(config, kappa_i=-1.0)
    with pytest.raises(ValueError):
        input_amplitude(-1e-12, 1e15)


def test_vacuum_rabi_splitting(config):
    """Test the splitting sqrt(Delta^2 + 4 g^2) without loss or backscattering."""
    g = 40 * MHZ
    for Delta in (0.0, 30 * MHZ, -60 * MHZ):
        params = _params(config, g=g, h=0.0, kappa_i=0.0, kappa_ex=0.0, gamma=0.0,
                         Delta_ca=Delta, delta_a=0.0)
        values = eigenvalues(params)
        assert values.splitting == pytest.approx(math.sqrt(Delta ** 2 + 4 * g ** 2), rel=1e-9)
        assert values.zero.imag == pytest.approx(Delta, abs=1e-3)


def test_eigenvalue_damping(config):
    """Test that eigenvalues have non-negative damping."""
    values = eigenvalues(_params(config, g=60 * MHZ, theta=0.7))
    for value in (values.plus, values.minus, values.zero):
        assert value.real >= -1e-6


@pytest.mark.parametrize('g_MHz', [40.0, 60.0, 80.0])
@pytest.mark.parametrize('Delta_MHz', [-10.0, 0.0, 10.0])
def test_splitting_law_with_apparatus_rates(config, g_MHz, Delta_MHz):
    """Test that the lossy splitting stays within 5% of sqrt(Delta^2 + 4 g^2) near resonance."""
    g, Delta = g_MHz * MHZ, Delta_MHz * MHZ
    params = _params(config, g=g, theta=0.0, Delta_ca=Delta, delta_a=0.0)
    law = math.sqrt(Delta ** 2 + 4 * g ** 2)
    assert eigenvalues(params).splitting == pytest.approx(law, rel=0.05)


@pytest.mark.parametrize('theta, sign', [(0.0, -1.0), (0.5 * math.pi, 1.0)])
def test_third_eigenvalue_is_uncoupled(config, theta, sign):
    """Test that lambda_0 is the bare standing-wave mode the atom does not see."""
    for g_MHz in (20.0, 40.0, 80.0):
        params = _params(config, g=g_MHz * MHZ, theta=theta, delta_a=0.0)
        expected = complex(params.kappa, params.Delta_ca + sign * params.h)
        zero = eigenvalues(params).zero
        assert zero.real == pytest.approx(expected.real, rel=1e-9)
        assert zero.imag == pytest.approx(expected.imag, rel=1e-9)


def test_dipole_force_red_detuning_attracts(config):
    """Test that a red-detuned probe pulls the atom toward the rim."""
    field = ModeField.from_config(config)
    d, z = 100e-9, 0.0
    g = float(field.profile(d, z))
    gradient = [float(v) for v in field.profile_gradient(d, z)]
    red = _params(config, g=g, Delta_pa=-200 * MHZ, Delta_ca=-200 * MHZ)
    blue = _params(config, g=g, Delta_pa=200 * MHZ, Delta_ca=200 * MHZ)
    assert dipole_force(red, gradient)[0] < 0
    assert dipole_force(blue, gradient)[0] > 0


def test_azimuthal_force_needs_phase_gradient(config):
    """Test that radiation pressure is absent without a phase gradient."""
    params = _params(config, g=50 * MHZ, theta=0.2)
    assert dipole_force(params, [1.0, 0.0])[1] == 0.0
    state = steady_state(params, gradient=np.array([1.0, 0.0]), phase_gradient=1e7)
    assert state.force is not None
    assert state.force[1] != 0.0


def test_potential_curve_consistent_with_force(config):
    """Test U_d(d_max) = 0 and -dU_d/dd = F_d."""
    field = ModeField.from_config(config)
    surface = SurfaceModel.from_config(config)
    params = _params(config, Delta_pa=-40 * MHZ, Delta_ca=-40 * MHZ, alpha_in=2e3)
    d = np.linspace(20e-9, 600e-9, 2000)
    curve = effective_potential_curve(params, field, surface, d)
    assert curve.U_d[-1] == 0.0
    np.testing.assert_allclose(-np.gradient(curve.U_d, d)[5:-5], curve.F_d[5:-5],
                               rtol=1e-3, atol=1e-6 * np.max(np.abs(curve.F_d)))
    assert np.all(curve.U_s < 0)


def test_potential_curve_requires_increasing_grid(config):
    """Test the grid check."""
    params = _params(config)
    with pytest.raises(ValueError, match="strictly increasing"):
        effective_potential_curve(params, ModeField.from_config(config),
                                  SurfaceModel.from_config(config), np.array([2e-7, 1e-7]))
