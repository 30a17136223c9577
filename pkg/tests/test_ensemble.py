"""Tests for ensemble reductions: traces, fits, spectra, histograms and correlations."""

import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from config import default_config
from physics.detection import PhotonRecord
from physics.ensemble import (CLASSES, CorrelationAccumulator, EnsembleError, TraceAccumulator,
                              average_trace, assemble_spectra, correlations, exp_gauss,
                              fit_exp_gauss, fort_statistics, histogram_edges, histograms,
                              inferred_coupling, p_fall_distribution, p_fall_spectra,
                              spectrum_peaks, trajectory_class, transit_ensemble)
from physics.mode import CylPoint
from physics.trajectory import AtomKinematics, TrajectoryRecord

NS = 1e-9
US = 1e-6
MHZ = 2.0 * math.pi * 1e6


def _photons(times, channels, trigger=0.0, resolution=NS):
    ticks = np.round(np.asarray(times, dtype=float) / resolution).astype(np.int64)
    channels = np.asarray(channels)
    epochs = (np.asarray(times) >= trigger).astype(int)
    return PhotonRecord(channels, ticks, epochs, resolution, trigger_time=trigger)


def _poisson_photons(rng, rate, duration, trigger=1 * US):
    times, channels = [], []
    for channel in (0, 1):
        n = rng.poisson(rate * duration)
        times.append(trigger + rng.uniform(0.0, duration, size=n))
        channels.append(np.full(n, channel))
    return _photons(np.concatenate(times), np.concatenate(channels), trigger=trigger)


def _trajectory(config, fate='exited', trigger=10 * US, d=200e-9, g=30 * MHZ, delta_a=-1 * MHZ,
                residence=5 * US, phi_rate=0.0, photons=None):
    R = config.toroid.ring_radius
    switch = trigger + config.probe.switch_latency
    fate_time = switch + residence
    t = np.arange(trigger - US, fate_time, 25 * NS)
    n = t.size
    initial = AtomKinematics(position=CylPoint.from_distance(d, 0.0, 0.0, R),
                             velocity=np.zeros(3))
    return TrajectoryRecord(
        index=0, variant='full', initial=initial, t=t, rho=np.full(n, R + d), z=np.zeros(n),
        phi=np.mod(phi_rate * (t - t[0]), 2 * math.pi), velocity=np.zeros((n, 3)),
        g=np.full(n, g), delta_a=np.full(n, delta_a), gamma=np.full(n, config.atom.gamma_0),
        transmission=np.zeros(n), reflection=np.zeros(n), epoch=(t > switch).astype(np.int8),
        fate=fate, fate_time=fate_time, ring_radius=R, trigger_time=trigger, switch_time=switch,
        photons=photons)


def test_trace_of_constant_rate():
    """Test normalization of a flat post-trigger count rate."""
    trigger = 2 * US
    times = trigger + np.arange(0, 8 * US, 100 * NS) + 10 * NS
    records = [_photons(times, np.zeros(times.size, dtype=int), trigger) for _ in range(5)]
    trace = average_trace(records, 100 * NS, 8 * US, unit_rate=1e7)
    np.testing.assert_allclose(trace.T, 1.0)
    np.testing.assert_allclose(trace.T_B, 0.0, atol=1e-12)
    assert trace.B == pytest.approx(1.0)
    assert trace.triggers == 5
    assert trace.t[0] == pytest.approx(50 * NS)


def test_trace_ignores_reflected_and_untriggered():
    """Test that only triggered forward counts enter the trace."""
    reflected = _photons([1.5 * US], [2], trigger=1 * US)
    untriggered = PhotonRecord(np.array([0]), np.array([1000]), np.array([0]), NS)
    trace = average_trace([reflected, untriggered], 100 * NS, 2 * US, unit_rate=1e7)
    assert trace.triggers == 1
    assert np.all(trace.T == 0.0)
    with pytest.raises(EnsembleError):
        average_trace([untriggered], 100 * NS, 2 * US, unit_rate=1e7)


def test_trace_bin_must_match_resolution():
    """Test that bins are whole numbers of timestamp ticks."""
    record = _photons([1.5 * US], [0], trigger=1 * US, resolution=2 * NS)
    with pytest.raises(ValueError, match="multiple"):
        average_trace([record], 101 * NS, 2 * US, unit_rate=1e7)


def test_trace_accumulator_merge(rng):
    """Test that partial sums combine to the single-pass result."""
    records = [_poisson_photons(rng, 2e7, 4 * US) for _ in range(20)]
    whole = TraceAccumulator(100 * NS, 40)
    left, right = TraceAccumulator(100 * NS, 40), TraceAccumulator(100 * NS, 40)
    for k, record in enumerate(records):
        whole.add(record)
        (left if k % 2 else right).add(record)
    merged = left.merge(right)
    np.testing.assert_array_equal(merged.counts, whole.counts)
    np.testing.assert_array_equal(merged.squares, whole.squares)
    assert merged.triggers == 20
    with pytest.raises(ValueError, match="binning"):
        left.merge(TraceAccumulator(200 * NS, 20))


def test_trace_error_falls_as_inverse_root_n(rng):
    """Test the 1/sqrt(N) convergence of the trace estimator on known flat data."""
    sizes = np.array([100, 1000, 10000])
    stderr, error = [], []
    for n in sizes:
        records = [_poisson_photons(rng, 1e7, 2 * US) for _ in range(n)]
        trace = average_trace(records, 100 * NS, 2 * US, unit_rate=2e7)
        stderr.append(np.mean(trace.stderr))
        error.append(np.sqrt(np.mean((trace.T - 1.0) ** 2)))
    slope = np.polyfit(np.log(sizes), np.log(stderr), 1)[0]
    assert slope == pytest.approx(-0.5, abs=0.1)
    assert error[-1] < 3.0 * stderr[-1]


def test_fit_recovers_two_timescales():
    """Test recovery of tau_I = 0.78 us and tau_II = 3.75 us from a clean trace."""
    t = (np.arange(80) + 0.5) * 100 * NS
    y = exp_gauss(t, 0.3, 0.78 * US, 0.2, 3.75 * US, 0.0)
    fit = fit_exp_gauss(t, y)
    assert fit.params['tau_I'] == pytest.approx(0.78 * US, rel=1e-3)
    assert fit.params['tau_II'] == pytest.approx(3.75 * US, rel=1e-3)
    assert fit.params['A'] == pytest.approx(0.3, rel=1e-3)
    assert fit.params['C'] == pytest.approx(0.2, rel=1e-3)
    assert fit.converged >= 1
    assert fit.starts == 12


def test_fit_of_pure_exponential_has_no_gaussian():
    """Test that a single exponential gives a negligible Gaussian amplitude."""
    t = (np.arange(80) + 0.5) * 100 * NS
    y = 0.5 * np.exp(-t / US)
    fit = fit_exp_gauss(t, y)
    assert abs(fit.params['C']) < 0.05
    assert fit.params['tau_I'] == pytest.approx(US, rel=0.05)


def test_fit_is_deterministic():
    """Test that identical input gives an identical fit."""
    t = (np.arange(60) + 0.5) * 100 * NS
    y = exp_gauss(t, 0.4, 0.5 * US, 0.1, 2 * US, 0.01) \
        + 0.01 * np.sin(np.arange(60))
    first, second = fit_exp_gauss(t, y), fit_exp_gauss(t, y)
    assert first.params == second.params
    low, high = first.interval('tau_I')
    assert low <= first.params['tau_I'] <= high


def test_fit_needs_enough_bins():
    """Test the minimum bin count."""
    t = np.linspace(0, 1 * US, 10)
    with pytest.raises(EnsembleError, match="at least 20"):
        fit_exp_gauss(t, np.exp(-t / US))


def test_spectrum_peaks_two_lorentzians():
    """Test peak positions and splitting of a doublet."""
    x = np.arange(-100.0, 101.0)
    y = 1 / (1 + ((x - 30) / 5) ** 2) + 0.8 / (1 + ((x + 30) / 5) ** 2)
    peaks, splitting = spectrum_peaks(x, y)
    np.testing.assert_allclose(peaks, [-30.0, 30.0])
    assert splitting == pytest.approx(60.0)
    dips, dip_split = spectrum_peaks(x, 1.0 - y, dips=True)
    np.testing.assert_allclose(dips, [-30.0, 30.0])
    assert dip_split == pytest.approx(60.0)


def test_spectrum_single_peak_has_no_splitting():
    """Test that one peak leaves the splitting undefined."""
    x = np.arange(-50.0, 51.0)
    peaks, splitting = spectrum_peaks(x, 1 / (1 + (x / 5) ** 2))
    assert peaks.size == 1
    assert math.isnan(splitting)


def test_inferred_coupling():
    """Test g from splitting = sqrt(Delta^2 + 4 g^2)."""
    assert inferred_coupling(60.0, 0.0) == pytest.approx(30.0)
    assert inferred_coupling(math.sqrt(30 ** 2 + 4 * 40 ** 2), 30.0) == pytest.approx(40.0)
    assert math.isnan(inferred_coupling(20.0, 30.0))
    assert math.isnan(inferred_coupling(math.nan, 0.0))


def _window_record(forward, reflected, trigger=1 * US):
    times = [trigger + 100 * NS + k * NS for k in range(forward + reflected)]
    channels = [0] * forward + [2] * reflected
    return _photons(times, channels, trigger)


def test_assemble_spectra():
    """Test normalization, differences and the reflection splitting."""
    detunings = np.arange(-60.0, 61.0, 10.0)
    reflected = {d: int(round(10 * (math.exp(-((d - 30) / 8) ** 2)
                                     + math.exp(-((d + 30) / 8) ** 2))))
                 for d in detunings}
    atom = {d: [_window_record(5, reflected[d])] * 3 for d in detunings}
    reference = {d: [_window_record(1, 0)] for d in detunings}
    normalization = [_window_record(10, 0)] * 4
    result = assemble_spectra(atom, reference, normalization, (0.0, 500 * NS), smoothing=0)
    np.testing.assert_allclose(result.T_A, 0.5)
    np.testing.assert_allclose(result.dT, 0.4)
    np.testing.assert_allclose(result.R_A, [reflected[d] / 10 for d in detunings])
    assert result.splitting == pytest.approx(60.0)
    assert result.g_bar == pytest.approx(30.0)
    assert list(result.triggers) == [3] * detunings.size


def test_assemble_spectra_requires_reference_and_normalization():
    """Test the missing-input errors."""
    atom = {0.0: [_window_record(5, 1)]}
    with pytest.raises(EnsembleError, match="reference"):
        assemble_spectra(atom, {}, [_window_record(10, 0)], (0.0, 500 * NS))
    with pytest.raises(EnsembleError, match="Normalization"):
        assemble_spectra(atom, {0.0: [_window_record(1, 0)]}, [], (0.0, 500 * NS))
    with pytest.raises(ValueError, match="peak source"):
        assemble_spectra(atom, {0.0: [_window_record(1, 0)]}, [_window_record(10, 0)],
                         (0.0, 500 * NS), peak_source='X')


def test_histograms_split_by_class(config):
    """Test class assignment and unit mass of each histogram."""
    records = [_trajectory(config, 'crashed', d=50e-9, g=60 * MHZ),
               _trajectory(config, 'crashed', d=80e-9, g=50 * MHZ),
               _trajectory(config, 'exited', d=400e-9, g=5 * MHZ),
               _trajectory(config, 'trapped', d=300e-9, g=10 * MHZ)]
    assert [trajectory_class(r) for r in records] == ['I', 'I', 'II', 'II']
    result = histograms(records, (0.0, 500 * NS), histogram_edges(config))
    for cls in CLASSES:
        assert result[cls]['d'].count == 2
        for quantity in ('d', 'g', 'delta_a'):
            assert result[cls][quantity].mass == pytest.approx(1.0)
    assert result['I']['d'].mode < result['II']['d'].mode


def test_histograms_with_empty_class(config):
    """Test that a class without members has zero density."""
    records = [_trajectory(config, 'crashed') for _ in range(3)]
    result = histograms(records, (0.0, 500 * NS), histogram_edges(config))
    assert result['II']['g'].count == 0
    assert result['II']['g'].mass == 0.0
    assert math.isnan(result['II']['g'].mode)


def test_histogram_edges_cover_ranges(config):
    """Test the fixed histogram ranges."""
    edges = histogram_edges(config, bins=10)
    assert edges['g'][-1] == pytest.approx(config.mode.g_max)
    assert edges['d'][-1] == pytest.approx(config.cloud.transverse_extent)
    assert edges['delta_a'][0] < 0 and edges['delta_a'][-1] == 0.0
    assert all(e.size == 11 for e in edges.values())


class TestHistogramProperties:
    """Property-based tests for class histograms."""

    CONFIG = default_config()

    @settings(max_examples=30, deadline=None)
    @given(st.lists(st.tuples(st.booleans(), st.floats(min_value=1e-9, max_value=2e-6),
                              st.floats(min_value=0.0, max_value=150.0)),
                    min_size=1, max_size=8))
    def test_property_1_nonempty_class_has_unit_mass(self, members):
        """
        Property 1: Non-empty class has unit mass
        For any set of triggered trajectories, every class with members has
        histograms of unit mass, and empty classes have zero mass.
        """
        records = [_trajectory(self.CONFIG, 'crashed' if crashed else 'exited', d=d,
                               g=g * MHZ)
                   for crashed, d, g in members]
        result = histograms(records, (0.0, 500 * NS), histogram_edges(self.CONFIG))
        counts = {cls: sum(1 for r in records if trajectory_class(r) == cls) for cls in CLASSES}
        for cls in CLASSES:
            for quantity in ('d', 'g', 'delta_a'):
                assert result[cls][quantity].count == counts[cls]
                expected = 1.0 if counts[cls] else 0.0
                assert result[cls][quantity].mass == pytest.approx(expected)


def test_independent_detectors_are_uncorrelated(rng):
    """Test C12 = C12_bar for independent Poisson counts of equal rate."""
    records = [_poisson_photons(rng, 5e7, 2 * US) for _ in range(400)]
    result = correlations(records, 10 * NS, 100 * NS, 2 * US)
    assert result.tau.size == 21
    assert result.tau[10] == 0.0
    np.testing.assert_allclose(result.C12, result.C12_bar, rtol=0.05)


def test_rate_mixture_is_positively_correlated(rng):
    """Test C12 > C12_bar when the count rate varies between triggers."""
    records = [_poisson_photons(rng, 1e8 if k % 2 else 1e6, 2 * US) for k in range(200)]
    result = correlations(records, 10 * NS, 100 * NS, 2 * US)
    assert np.all(result.C12 > result.C12_bar)
    assert np.all(result.significance > 3)


def test_correlation_accumulator_merge(rng):
    """Test merging correlation sums from two workers."""
    records = [_poisson_photons(rng, 3e7, 1 * US) for _ in range(30)]
    whole = CorrelationAccumulator(10, 100, 5)
    left, right = CorrelationAccumulator(10, 100, 5), CorrelationAccumulator(10, 100, 5)
    for k, record in enumerate(records):
        whole.add(record)
        (left if k < 10 else right).add(record)
    merged = left.merge(right)
    np.testing.assert_allclose(merged.sum_12, whole.sum_12)
    np.testing.assert_allclose(merged.product_of_means(), whole.product_of_means())
    with pytest.raises(ValueError, match="binning"):
        left.merge(CorrelationAccumulator(10, 100, 6))


def test_correlations_need_triggers():
    """Test the empty-input error."""
    with pytest.raises(EnsembleError):
        correlations([], 10 * NS, 100 * NS, 2 * US)


def test_fort_statistics_capture_fraction(config):
    """Test capture counting, residence histogram and azimuthal rate."""
    records = [_trajectory(config, 'crashed', residence=1 * US),
               _trajectory(config, 'trapped', residence=100 * US, phi_rate=2e4),
               _trajectory(config, 'exited', residence=60 * US, phi_rate=1e4)]
    stats = fort_statistics(records, capture_time=50 * US, horizon=100 * US, bins=10)
    assert stats.triggers == 3
    assert stats.captured == 2
    assert stats.capture_fraction == pytest.approx(2 / 3)
    assert stats.mean_phi_rate == pytest.approx(1.5e4, rel=1e-3)
    assert np.sum(stats.residence_density * np.diff(stats.residence_edges)) == pytest.approx(1.0)


def test_fort_statistics_without_trap(config):
    """Test that record-length residences never count as captured."""
    records = [_trajectory(config, 'trapped', residence=7.9 * US) for _ in range(4)]
    stats = fort_statistics(records, capture_time=50 * US, horizon=8 * US)
    assert stats.capture_fraction == 0.0
    assert stats.mean_phi_rate == 0.0


def test_p_fall_distribution_from_records(config):
    """Test the trigger-window coupling samples."""
    records = [_trajectory(config, g=g) for g in (20 * MHZ, 40 * MHZ, 60 * MHZ)]
    distribution = p_fall_distribution(config, records=records, bins=10)
    assert distribution.triggers == 3
    np.testing.assert_allclose(np.sort(distribution.g), [20 * MHZ, 40 * MHZ, 60 * MHZ])
    assert np.sum(distribution.density * np.diff(distribution.edges)) == pytest.approx(1.0)


def test_p_fall_spectra_vacuum_rabi_splitting(config):
    """Test that a fixed-coupling ensemble shows peaks at about ±g."""
    config = config.replace(['cavity.h_MHz=0'])
    records = [_trajectory(config, g=60 * MHZ) for _ in range(3)]
    distribution = p_fall_distribution(config, records=records)
    detunings = np.arange(-150.0, 151.0, 1.0) * MHZ
    spectra = p_fall_spectra(distribution, config, detunings)
    assert spectra.splitting == pytest.approx(120 * MHZ, rel=0.1)
    empty = p_fall_distribution(config, records=[])
    assert empty.triggers == 0
    with pytest.raises(EnsembleError):
        p_fall_spectra(empty, config, detunings)


def test_transit_ensemble_counts_fates(config):
    """Test trace, histograms and fate tallies of a small synthetic run."""
    trigger = 10 * US
    times = trigger + np.arange(0, 8 * US, 50 * NS) + 5 * NS
    photons = _photons(times, np.zeros(times.size, dtype=int), trigger,
                       resolution=config.detection.timestamp_resolution)
    records = [_trajectory(config, 'crashed', photons=photons),
               _trajectory(config, 'exited', photons=photons)]
    result = transit_ensemble(records, config, unit_rate=2e7)
    assert result.trials == 2
    assert result.fates == {'crashed': 1, 'exited': 1}
    np.testing.assert_allclose(result.trace.T, 1.0)
    assert result.histograms['I']['g'].count == 1
