"""Tests for the truncated master equation and transmitted-field correlations."""

import math

import numpy as np
import pytest

from physics.cqed import CavityAtomParams
from physics.quantum import (LiouvillianError, TruncatedSpace, ensemble_g2, evolve_density,
                             g2_table, g2_transmitted, liouvillian, liouvillian_steady_state)

MHZ = 2.0 * math.pi * 1e6


@pytest.fixture(scope='module')
def space():
    return TruncatedSpace.build()


@pytest.fixture
def params(config):
    return CavityAtomParams.from_config(config, g=50 * MHZ, theta=0.3)


def test_truncated_basis(space):
    """Test the nine states with at most two excitations, vacuum first."""
    assert space.dim == 9
    assert space.basis[0] == (0, 0, 0)
    assert all(sum(state) <= 2 for state in space.basis)
    assert list(space.excitation) == sorted(space.excitation)


def test_operators_lower_excitation(space):
    """Test that a, b and sigma_- remove one excitation."""
    one = space.index(1, 0, 1)
    for op, target in ((space.a, (0, 0, 1)), (space.sm, (1, 0, 0))):
        assert op[space.index(*target), one] == pytest.approx(1.0)
    assert space.b[space.index(0, 1, 0), space.index(0, 2, 0)] == pytest.approx(math.sqrt(2.0))


def test_liouvillian_preserves_trace(params, space):
    """Test that the generator leaves the trace unchanged."""
    L = liouvillian(params, space)
    trace_row = space.identity.ravel()
    np.testing.assert_allclose(trace_row @ L, 0.0, atol=1e-6 * np.abs(L).max())


def test_steady_state_is_a_density_matrix(params, space):
    """Test trace, hermiticity and positivity of the stationary state."""
    steady = liouvillian_steady_state(params, space)
    rho = steady.rho
    assert np.trace(rho).real == pytest.approx(1.0)
    np.testing.assert_allclose(rho, rho.conj().T, atol=1e-12)
    assert np.min(np.linalg.eigvalsh(rho)) > -1e-9
    assert steady.residual < 1e-8
    assert steady.manifold_populations.sum() == pytest.approx(1.0)


def test_undriven_steady_state_is_vacuum(config, space):
    """Test the zero-drive shortcut."""
    params = CavityAtomParams.from_config(config, g=50 * MHZ, P_in=0.0)
    steady = liouvillian_steady_state(params, space)
    assert steady.rho[0, 0] == 1.0
    assert steady.photon_number == 0.0


def test_non_unique_steady_state(config, space):
    """Test that a decoupled lossless atom gives a degenerate null space."""
    params = CavityAtomParams.from_config(config, g=0.0, gamma=0.0)
    with pytest.raises(LiouvillianError, match="null space"):
        liouvillian_steady_state(params, space)


def test_empty_cavity_output_is_coherent(config, space):
    """Test g2(tau) = 1 without an atom."""
    params = CavityAtomParams.from_config(config, g=0.0, Delta_pa=5 * MHZ)
    curve = g2_transmitted(params, space, np.linspace(0, 50e-9, 11), weak_drive_factor=1e-6)
    np.testing.assert_allclose(curve.values, 1.0, atol=1e-4)


def test_g2_symmetric_and_decays_to_one(params, space):
    """Test g2(-tau) = g2(tau) and g2 -> 1 at long delay."""
    taus = np.array([-20e-9, 0.0, 20e-9, 1e-6])
    curve = g2_transmitted(params, space, taus, weak_drive_factor=1e-6)
    assert curve.values[0] == pytest.approx(curve.values[2])
    assert curve.values[-1] == pytest.approx(1.0, abs=1e-3)
    assert curve.flux > 0


def test_evolution_preserves_trace(params, space):
    """Test trace preservation under evolve_density."""
    states = evolve_density(space.vacuum(), params, space, [0.0, 5e-9, 50e-9])
    for rho in states:
        assert np.trace(rho).real == pytest.approx(1.0, abs=1e-9)


def test_evolution_requires_sorted_times(params, space):
    """Test the delay grid check."""
    with pytest.raises(ValueError, match="sorted"):
        evolve_density(space.vacuum(), params, space, [1e-9, 0.0])


def test_ensemble_of_one_coupling(params, space):
    """Test that a single-point distribution reproduces the fixed-coupling curve."""
    taus = np.linspace(-10e-9, 10e-9, 5)
    single = g2_transmitted(params, space, taus, weak_drive_factor=1e-6)
    for weighting in ('flux', 'uniform'):
        curve = ensemble_g2([params.g], [1.0], params, space, taus, weighting=weighting,
                            weak_drive_factor=1e-6)
        np.testing.assert_allclose(curve.values, single.values, rtol=1e-9)


def test_ensemble_target_scaling(params, space):
    """Test rescaling so the curve meets the target at ±scale_at."""
    taus = np.linspace(-60e-9, 60e-9, 13)
    curve = ensemble_g2([20 * MHZ, 60 * MHZ], [0.3, 0.7], params, space, taus, target=1.2,
                        scale_at=40e-9, weak_drive_factor=1e-6)
    at = np.interp([-40e-9, 40e-9], taus, curve.values)
    assert np.mean(at) == pytest.approx(1.2)
    assert curve.scale > 0


def test_ensemble_rejects_bad_input(params, space):
    """Test empty distributions and unknown weightings."""
    with pytest.raises(ValueError, match="empty"):
        ensemble_g2([], [], params, space, [0.0])
    with pytest.raises(ValueError, match="weighting"):
        ensemble_g2([params.g], [1.0], params, space, [0.0], weighting='median')


def test_g2_table_shape(params, space):
    """Test the (coupling, delay) table layout."""
    table = g2_table(params, space, [0.0, 30 * MHZ, 60 * MHZ], [0.0, 10e-9])
    assert table.shape == (3, 2)
