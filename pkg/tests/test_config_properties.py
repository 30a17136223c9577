"""
Property-based tests for configuration validation.
"""
import math

import pytest
from hypothesis import given, settings, strategies as st

from config import UNIT_FACTORS, ConfigurationError, default_config, to_human, to_si


class TestConfigurationProperties:
    """Property-based tests for configuration validation."""

    @settings(max_examples=100)
    @given(st.sampled_from(sorted(UNIT_FACTORS)),
           st.floats(min_value=-1e6, max_value=1e6).filter(lambda v: v == 0 or abs(v) > 1e-200))
    def test_property_1_unit_conversion_inverts(self, unit, value):
        """
        Property 1: Unit conversion inverts
        For any unit tag and value, converting to SI and back recovers the value.
        """
        assert to_human(to_si(value, unit), unit) == pytest.approx(value, rel=1e-12, abs=1e-300)

    @settings(max_examples=50, deadline=None)
    @given(st.floats(min_value=0.0, max_value=1.0))
    def test_property_2_valid_efficiencies_accepted(self, efficiency):
        """
        Property 2: Valid efficiencies accepted
        For any efficiency in [0, 1], the configuration loads with that value.
        """
        config = default_config([f'detection.efficiency={efficiency!r}'])
        assert config.detection.efficiency == efficiency

    @settings(max_examples=50, deadline=None)
    @given(st.one_of(st.floats(max_value=-1e-9, allow_nan=False, allow_infinity=False),
                     st.floats(min_value=1.0 + 1e-9, max_value=1e9)))
    def test_property_3_invalid_efficiencies_rejected(self, efficiency):
        """
        Property 3: Invalid efficiencies rejected
        For any efficiency outside [0, 1], loading fails with the key path.
        """
        with pytest.raises(ConfigurationError, match="detection.efficiency"):
            default_config([f'detection.efficiency={efficiency!r}'])

    @settings(max_examples=50, deadline=None)
    @given(st.integers(min_value=-1000, max_value=0))
    def test_property_4_non_positive_counts_rejected(self, count):
        """
        Property 4: Non-positive counts rejected
        For any trajectory count below one, loading fails.
        """
        with pytest.raises(ConfigurationError, match="at least 1"):
            default_config([f'numerics.trajectories={count}'])

    @settings(max_examples=50, deadline=None)
    @given(st.floats(min_value=0.0, max_value=500.0))
    def test_property_5_rates_stored_as_angular_frequency(self, mhz):
        """
        Property 5: Rates stored as angular frequency
        For any non-negative linewidth in MHz, the loaded value is 2π·1e6 times larger.
        """
        config = default_config([f'cavity.h_MHz={mhz!r}'])
        assert config.cavity.h == pytest.approx(2.0 * math.pi * 1e6 * mhz)

    @settings(max_examples=30, deadline=None)
    @given(st.integers(min_value=0, max_value=2 ** 31))
    def test_property_6_hash_tracks_seed(self, seed):
        """
        Property 6: Hash tracks seed
        For any seed, the configuration hash differs from a run with the next seed.
        """
        first = default_config([f'numerics.seed={seed}'])
        second = default_config([f'numerics.seed={seed + 1}'])
        assert first.config_hash() != second.config_hash()
