"""Tests for the run executor and run manifests."""

import pytest
from pathlib import Path

from commands.executor import (EXIT_INTERNAL_ERROR, EXIT_OK, EXIT_USER_ERROR, RunError,
                               RunExecutor, RunManifest)
from config import ConfigurationError


def _square(x, offset=0):
    return x * x + offset


def _manifest(output_dir, **changes):
    return RunManifest(subcommand='eigen', output_dir=str(output_dir), **changes)


def test_manifest_folds_seed_and_count():
    """Test that seed and trajectory count become configuration overrides."""
    manifest = RunManifest('transits', 'out', overrides=['probe.P_in_before_pW=4'], seed=7,
                           trajectories=50)
    assert manifest.config_overrides() == ['probe.P_in_before_pW=4', 'numerics.seed=7',
                                           'numerics.trajectories=50']
    assert manifest.overrides == ['probe.P_in_before_pW=4']


def test_manifest_prepare_creates_directory(tmp_path):
    """Test that prepare creates nested output directories."""
    target = tmp_path / 'a' / 'b'
    path = _manifest(target).prepare()
    assert path == target
    assert target.is_dir()


def test_manifest_prepare_rejects_bad_workers(tmp_path):
    """Test the worker count check."""
    with pytest.raises(RunError, match="Worker count"):
        _manifest(tmp_path, workers=0).prepare()
    with pytest.raises(RunError, match="Worker count"):
        _manifest(tmp_path, workers=-3).prepare()


def test_manifest_prepare_rejects_file_path(tmp_path):
    """Test that an existing file cannot be used as the output directory."""
    blocker = tmp_path / 'blocker'
    blocker.write_text('x')
    with pytest.raises(RunError, match="Cannot create"):
        _manifest(blocker / 'sub').prepare()


def test_manifest_child_inherits():
    """Test that chained steps keep the parent's settings."""
    parent = RunManifest('reproduce-all', 'out', overrides=['a.b=1'], seed=3, workers=2,
                         variant='p-fall', trajectories=10, options={'bin_ns': 5.0})
    child = parent.child('fort', 'out/fort', ['c.d=2'], classical=True)
    assert child.subcommand == 'fort'
    assert child.output_dir == 'out/fort'
    assert child.overrides == ['a.b=1', 'c.d=2']
    assert (child.seed, child.workers, child.variant, child.trajectories) == (3, 2, 'p-fall', 10)
    assert child.options == {'bin_ns': 5.0, 'classical': True}
    assert parent.options == {'bin_ns': 5.0}


def test_manifest_child_replaces_variant():
    """Test that a chained step can run its own model variant."""
    parent = RunManifest('reproduce-all', 'out', variant='full')
    assert parent.child('transits', 'out/a', variant='no-forces').variant == 'no-forces'
    assert parent.child('transits', 'out/b').variant == 'full'
    child = parent.child('eigen', 'out/c', ['cavity.h_MHz=10'], None, g_MHz=40.0)
    assert child.options == {'g_MHz': 40.0}
    assert child.overrides == ['cavity.h_MHz=10']


def test_executor_rejects_bad_workers():
    """Test executor initialization with an invalid worker count."""
    with pytest.raises(RunError):
        RunExecutor(workers=0)


def test_chunks_keep_order():
    """Test that chunks partition the items in their original order."""
    executor = RunExecutor(workers=2, chunks_per_worker=2)
    items = list(range(10))
    chunks = executor.chunk(items)
    assert len(chunks) <= 4
    assert [x for chunk in chunks for x in chunk] == items
    assert executor.chunk([]) == []


def test_chunks_never_exceed_items():
    """Test that there are never more chunks than items."""
    chunks = RunExecutor(workers=4).chunk([1, 2, 3])
    assert chunks == [[1], [2], [3]]


def test_map_sequential():
    """Test in-process mapping with extra arguments."""
    assert RunExecutor(workers=1).map(_square, [1, 2, 3], offset=1) == [2, 5, 10]


def test_map_parallel_keeps_order():
    """Test that the worker pool returns results in item order."""
    assert RunExecutor(workers=2).map(_square, range(8)) == [x * x for x in range(8)]


def test_execute_success(tmp_path):
    """Test a successful run and its collected outputs."""
    def run(manifest, executor):
        path = Path(manifest.output_dir) / 'table.txt'
        path.write_text('1\n')
        return [path]

    executor = RunExecutor()
    result = executor.execute('eigen', run, _manifest(tmp_path / 'out'))
    assert result.success
    assert result.exit_code == EXIT_OK
    assert result.outputs == [tmp_path / 'out' / 'table.txt']
    assert result.error is None
    assert result.duration >= 0
    assert not executor.is_running('eigen')


@pytest.mark.parametrize('error', [ConfigurationError('bad key'), RunError('bad run'),
                                   ValueError('bad value'), OSError('disk full')])
def test_execute_user_errors(tmp_path, error):
    """Test that configuration and validation failures give exit code 1."""
    def run(manifest, executor):
        raise error

    result = RunExecutor().execute('eigen', run, _manifest(tmp_path))
    assert result.exit_code == EXIT_USER_ERROR
    assert not result.success
    assert result.error == str(error)


def test_execute_internal_error(tmp_path):
    """Test that unexpected exceptions give exit code 2."""
    def run(manifest, executor):
        raise ZeroDivisionError('boom')

    result = RunExecutor().execute('eigen', run, _manifest(tmp_path))
    assert result.exit_code == EXIT_INTERNAL_ERROR
    assert result.error == 'boom'


def test_execute_rejects_concurrent_run(tmp_path):
    """Test that a subcommand cannot start while it is already running."""
    seen = {}

    def run(manifest, executor):
        seen['running'] = executor.get_running_commands()
        executor.execute('eigen', run, manifest)
        return []

    executor = RunExecutor()
    result = executor.execute('eigen', run, _manifest(tmp_path))
    assert seen['running'] == ['eigen']
    assert result.exit_code == EXIT_USER_ERROR
    assert 'already running' in result.error
    assert executor.get_running_commands() == []


def test_not_running_initially():
    """Test that no commands are running initially."""
    executor = RunExecutor()
    assert not executor.is_running('transits')
    assert executor.get_running_commands() == []
