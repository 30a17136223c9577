"""Pytest configuration and fixtures for toroid-cqed-sim tests."""

import os

import numpy as np
import pytest

from config import default_config

ENVIRONMENT_KEYS = ('TOROID_CONFIG', 'TOROID_WORKERS', 'TOROID_LOG_LEVEL', 'TOROID_OUTPUT_DIR')

# Small runs that finish in seconds.
FAST_OVERRIDES = [
    'numerics.trajectories=12',
    'numerics.max_time_us=120',
    'quantum.g_grid_points=5',
    'quantum.tau_max_ns=20',
    'quantum.tau_step_ns=1',
]


@pytest.fixture(autouse=True)
def clean_environment():
    """Remove TOROID_* variables so tests see the built-in defaults."""
    saved = {key: os.environ.pop(key) for key in ENVIRONMENT_KEYS if key in os.environ}
    yield
    for key in ENVIRONMENT_KEYS:
        os.environ.pop(key, None)
    os.environ.update(saved)


@pytest.fixture
def config():
    """The documented apparatus parameters."""
    return default_config()


@pytest.fixture
def fast_config():
    """Default apparatus with small trajectory counts and coarse quantum grids."""
    return default_config(FAST_OVERRIDES)


@pytest.fixture
def rng():
    """Seeded generator so statistical tests are reproducible."""
    return np.random.default_rng(12345)


@pytest.fixture
def output_dir(tmp_path):
    """Temporary directory for result files."""
    path = tmp_path / 'results'
    path.mkdir()
    return path


@pytest.fixture
def fast_args():
    """Command-line flags applying the small-run overrides, with an easy trigger."""
    overrides = FAST_OVERRIDES + ['detection.threshold=2']
    return [arg for item in overrides for arg in ('--set', item)] + ['--seed', '3']
