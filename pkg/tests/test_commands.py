"""End-to-end tests for the simulation subcommands and their result files."""

import numpy as np
import pytest

import app
from commands.output import read_table, write_table
from commands.runs import REPRODUCE_STEPS


def _metadata(path):
    """Header ``key: value`` pairs of a result file."""
    values = {}
    for line in path.read_text().splitlines():
        if not line.startswith('#'):
            break
        key, sep, value = line[1:].strip().partition(': ')
        if sep:
            values[key] = value
    return values


def test_transits_writes_trace_fit_and_histograms(output_dir, fast_args):
    """Test the post-trigger trace pipeline end to end."""
    code = app.main(['transits', *fast_args, '--trajectories', '24', '--out', str(output_dir)])
    assert code == 0
    for name in ('trace.txt', 'fit.txt', 'hist_I.txt', 'hist_II.txt', 'photons.txt'):
        assert (output_dir / name).is_file()
    trace = read_table(output_dir / 'trace.txt')
    header = _metadata(output_dir / 'trace.txt')
    assert np.all(np.diff(trace['t_us']) > 0)
    np.testing.assert_allclose(trace['T_B'], trace['T'] - float(header['B']), atol=1e-8)
    assert header['command'] == 'transits'
    assert header['variant'] == 'full'
    assert int(header['triggers']) > 0
    fit = read_table(output_dir / 'fit.txt')
    assert set(fit) == {'A', 'tau_I_us', 'C', 'tau_II_us', 'offset'}


def test_transits_without_forces(output_dir, fast_args):
    """Test that the variant flag reaches the transit files."""
    code = app.main(['transits', *fast_args, '--variant', 'no-forces', '--trajectories', '24',
                     '--set', 'cavity.Delta_ca_MHz=-40', '--set', 'probe.Delta_pa_before_MHz=-40',
                     '--set', 'probe.Delta_pa_after_MHz=-40', '--out', str(output_dir)])
    assert code == 0
    assert _metadata(output_dir / 'trace.txt')['variant'] == 'no-forces'


def test_spectra_p_fall_writes_distribution(output_dir, fast_args):
    """Test the simple-model spectra and the coupling distribution of falling atoms."""
    code = app.main(['spectra', *fast_args, '--variant', 'p-fall', '--trajectories', '24',
                     '--detunings=-40,0,40', '--out', str(output_dir)])
    assert code == 0
    spectra = read_table(output_dir / 'spectra_p-fall.txt')
    np.testing.assert_allclose(spectra['Delta_pa_MHz'], [-40.0, 0.0, 40.0])
    np.testing.assert_allclose(spectra['dT'], spectra['T_A'] - spectra['T_NA'])
    assert np.all(np.isfinite(spectra['T_NA']))
    p_fall = read_table(output_dir / 'p_fall.txt')
    assert np.all(p_fall['p_g'] >= 0)
    if int(_metadata(output_dir / 'p_fall.txt')['triggers']):
        assert (output_dir / 'spectra_p_fall_model.txt').is_file()


def test_spectra_single_detuning(output_dir, fast_args):
    """Test that one detuning gives a single one-row spectrum file."""
    code = app.main(['spectra', *fast_args, '--trajectories', '12', '--detunings=0',
                     '--out', str(output_dir)])
    assert code == 0
    assert sorted(p.name for p in output_dir.iterdir()) == ['spectra_full.txt']
    spectra = read_table(output_dir / 'spectra_full.txt')
    assert spectra['Delta_pa_MHz'].tolist() == [0.0]


def test_correlations_classical(output_dir, fast_args):
    """Test C12 from classically drawn photon events."""
    code = app.main(['correlations', *fast_args, '--classical', '--bin-ns', '4',
                     '--trajectories', '24', '--out', str(output_dir)])
    assert code == 0
    table = read_table(output_dir / 'correlations.txt')
    np.testing.assert_allclose(table['tau_ns'], -table['tau_ns'][::-1], atol=1e-9)
    assert np.all(table['C12'] >= 0)
    header = _metadata(output_dir / 'correlations.txt')
    assert header['conditioning'] == 'classical'
    assert float(header['bin_ns']) == pytest.approx(4.0)


def test_g2model_from_histogram_file(output_dir, fast_args):
    """Test the ensemble G2 model over a coupling table read from disk."""
    histogram = write_table(output_dir / 'p_g.txt',
                            {'g_MHz': [20.0, 40.0, 60.0], 'p_g': [1.0, 2.0, 1.0]}, {})
    code = app.main(['g2model', *fast_args, '--histogram', str(histogram),
                     '--out', str(output_dir)])
    assert code == 0
    table = read_table(output_dir / 'g2_model.txt')
    assert table['tau_ns'][0] == pytest.approx(-20.0)
    assert table['tau_ns'][-1] == pytest.approx(20.0)
    assert np.all(np.isfinite(table['g2']))
    np.testing.assert_allclose(table['g2'], table['g2'][::-1], rtol=1e-6)
    header = _metadata(output_dir / 'g2_model.txt')
    assert header['source'] == str(histogram)
    assert int(header['points']) == 3


def test_g2model_rejects_bad_histogram(output_dir, fast_args):
    """Test that a histogram without coupling columns is a user error."""
    histogram = write_table(output_dir / 'bad.txt', {'x': [1.0]}, {})
    code = app.main(['g2model', *fast_args, '--histogram', str(histogram),
                     '--out', str(output_dir)])
    assert code == 1


def test_fort_writes_capture_summary(output_dir, fast_args):
    """Test the trap run with a short horizon."""
    code = app.main(['fort', *fast_args, '--set', 'fort.horizon_us=20',
                     '--set', 'fort.capture_time_us=10', '--out', str(output_dir)])
    assert code == 0
    header = _metadata(output_dir / 'fort.txt')
    assert float(header['trap_minimum_nm']) == pytest.approx(180.0, rel=0.02)
    assert float(header['trap_depth_mK']) == pytest.approx(-1.5, rel=0.02)
    assert 0.0 <= float(header['capture_fraction']) <= 1.0
    profile = read_table(output_dir / 'fort_profile.txt')
    assert profile['U_t_mK'].min() == pytest.approx(-1.5, rel=0.02)


def test_reproduce_steps_cover_every_figure():
    """Test the chained steps, their variants and their overrides."""
    steps = {step.name: step for step in REPRODUCE_STEPS}
    assert steps['eigen-anticrossing'].overrides == ['cavity.h_MHz=10']
    assert steps['eigen-anticrossing'].options == {'g_MHz': 40.0}
    for name in ('transits-red-no-forces', 'transits-blue-no-forces'):
        assert steps[name].command == 'transits'
        assert steps[name].variant == 'no-forces'
    assert 'cavity.Delta_ca_MHz=-40.0' in steps['transits-red-no-forces'].overrides
    assert 'cavity.Delta_ca_MHz=40.0' in steps['transits-blue-no-forces'].overrides
    assert steps['spectra-p-fall'].variant == 'p-fall'
    assert all(step.variant is None for step in REPRODUCE_STEPS
               if step.name in ('transits-resonant', 'spectra', 'fort'))


@pytest.mark.slow
def test_reproduce_all_chains_every_step(output_dir, fast_args):
    """Test reproduce-all with small runs in per-step directories."""
    code = app.main(['reproduce-all', *fast_args, '--trajectories', '10',
                     '--set', 'fort.horizon_us=20', '--set', 'fort.capture_time_us=10',
                     '--out', str(output_dir)])
    assert code == 0
    for step in REPRODUCE_STEPS:
        assert (output_dir / step.name).is_dir()
    anticrossing = _metadata(output_dir / 'eigen-anticrossing' / 'eigen.txt')
    assert float(anticrossing['g_MHz']) == pytest.approx(40.0)
    assert _metadata(output_dir / 'eigen' / 'eigen.txt')['config_hash'] != \
        anticrossing['config_hash']
    for name in ('transits-red-no-forces', 'transits-blue-no-forces'):
        assert _metadata(output_dir / name / 'trace.txt')['variant'] == 'no-forces'
    assert _metadata(output_dir / 'transits-red' / 'trace.txt')['variant'] == 'full'
    assert (output_dir / 'spectra-p-fall' / 'spectra_p-fall.txt').is_file()
    assert (output_dir / 'spectra-p-fall' / 'p_fall.txt').is_file()
    assert (output_dir / 'fort' / 'fort.txt').is_file()


@pytest.mark.slow
def test_ensemble_g2_antibunching(output_dir):
    """Test the resonant ensemble G2 dip depth and recovery time."""
    overrides = ['numerics.trajectories=300', 'numerics.max_time_us=120',
                 'quantum.tau_max_ns=40', 'quantum.tau_step_ns=0.5']
    args = [arg for item in overrides for arg in ('--set', item)]
    assert app.main(['g2model', *args, '--out', str(output_dir)]) == 0
    table = read_table(output_dir / 'g2_model.txt')
    tau, g2 = table['tau_ns'], table['g2']
    positive = tau >= 0
    tau, g2 = tau[positive], g2[positive]
    minimum = g2[0]
    peak = g2.max()
    assert minimum / peak == pytest.approx(0.55, abs=0.15)
    halfway = 0.5 * (minimum + peak)
    half_width = tau[np.argmax(g2 >= halfway)]
    assert half_width == pytest.approx(6.0, abs=3.0)
