"""
Configuration module for the toroid cQED simulator.
Loads, validates and converts every physical and numerical parameter.

Documents are JSON with human units (MHz for rate/2π, nm, μs, μK, pW); the
loaded PhysicsConfig is strict SI with angular frequencies in rad/s.
"""
import copy
import hashlib
import json
import logging
import math
import os
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Dict, Iterable, Optional

import scipy.constants as const

logger = logging.getLogger(__name__)


class ConfigurationError(Exception):
    """Raised when configuration validation fails."""
    pass


class UnitError(ConfigurationError):
    """Raised for an unknown unit tag."""
    pass


# Unit tag -> multiplicative factor to SI.
UNIT_FACTORS = {
    'MHz': 2.0 * math.pi * 1e6,   # rate/2π in MHz -> rad/s
    'Hz': 1.0,
    'cps': 1.0,
    'nm': 1e-9,
    'um': 1e-6,
    'm': 1.0,
    'ns': 1e-9,
    'us': 1e-6,
    's': 1.0,
    'uK': 1e-6,
    'mK': 1e-3,
    'K': 1.0,
    'pW': 1e-12,
    'uW': 1e-6,
    'W': 1.0,
    'amu': const.atomic_mass,
    'm_s': 1.0,
    'Jm3': 1.0,
    'K_per_W': const.k,           # trap depth per watt in K/W -> J/W
}

FEM_G_MAX_MHZ = 140.0
CALIBRATED_G_MAX_MHZ = 100.0
PRESET_G_MAX_MHZ = {'calibrated': CALIBRATED_G_MAX_MHZ, 'fem': FEM_G_MAX_MHZ}

REQUIRED = object()


def to_si(value: float, unit: str) -> float:
    """Convert a human-unit value to SI.

    Args:
        value: Value in the unit named by ``unit``
        unit: Unit tag from UNIT_FACTORS

    Returns:
        Value in SI (angular frequency for rates)

    Raises:
        UnitError: If the unit tag is not recognized
    """
    try:
        return value * UNIT_FACTORS[unit]
    except KeyError:
        raise UnitError(f"Unknown unit tag: {unit}") from None


def to_human(value: float, unit: str) -> float:
    """Convert an SI value back to the human unit named by ``unit``."""
    try:
        return value / UNIT_FACTORS[unit]
    except KeyError:
        raise UnitError(f"Unknown unit tag: {unit}") from None


@dataclass(frozen=True)
class ParameterSpec:
    """One entry of the document schema."""
    section: str
    key: str
    unit: Optional[str]
    default: Any
    check: str = 'any'
    choices: tuple = ()

    @property
    def path(self) -> str:
        return f"{self.section}.{self.key}"

    @property
    def attribute(self) -> str:
        if self.unit and self.key.endswith('_' + self.unit):
            return self.key[:-len(self.unit) - 1]
        return self.key


def _spec(section, key, unit, default, check='any', choices=()):
    return ParameterSpec(section, key, unit, default, check, choices)


SCHEMA = (
    _spec('toroid', 'D_p_um', 'um', REQUIRED, 'positive'),
    _spec('toroid', 'D_m_um', 'um', REQUIRED, 'positive'),

    _spec('mode', 'preset', None, 'calibrated', 'choice', ('calibrated', 'fem')),
    _spec('mode', 'g_max_MHz', 'MHz', REQUIRED, 'rate'),
    _spec('mode', 'lambda_bar_nm', 'nm', REQUIRED, 'positive'),
    _spec('mode', 'w0_nm', 'nm', REQUIRED, 'positive'),
    _spec('mode', 'n_eff', None, 1.40, 'positive'),
    _spec('mode', 'polarization', None, 'TE', 'choice', ('TE', 'TM')),
    _spec('mode', 'table_file', None, None, 'path'),

    _spec('cavity', 'kappa_i_MHz', 'MHz', REQUIRED, 'rate'),
    _spec('cavity', 'kappa_ex_MHz', 'MHz', REQUIRED, 'rate'),
    _spec('cavity', 'h_MHz', 'MHz', REQUIRED, 'rate'),
    _spec('cavity', 'Delta_ca_MHz', 'MHz', 0.0, 'finite'),

    _spec('atom', 'gamma_0_MHz', 'MHz', REQUIRED, 'rate'),
    _spec('atom', 'mass_amu', 'amu', 132.905451933, 'positive'),
    _spec('atom', 'wavelength_nm', 'nm', 852.347, 'positive'),

    _spec('surface', 'C3_g_Jm3', 'Jm3', 7.0e-49, 'positive'),
    _spec('surface', 'C3_e_Jm3', 'Jm3', 2.9e-48, 'positive'),
    _spec('surface', 'lambda_ret_nm', 'nm', None, 'positive_or_none'),
    _spec('surface', 'd_min_nm', 'nm', 1.0, 'positive'),
    _spec('surface', 'decay_model', None, 'analytic-halfspace', 'choice',
          ('analytic-halfspace', 'tabulated')),
    _spec('surface', 'refractive_index', None, 1.45, 'positive'),
    _spec('surface', 'potential_file', None, None, 'path'),
    _spec('surface', 'decay_file', None, None, 'path'),

    _spec('probe', 'P_in_before_pW', 'pW', 4.0, 'nonneg'),
    _spec('probe', 'P_in_after_pW', 'pW', 2.0, 'nonneg'),
    _spec('probe', 'Delta_pa_before_MHz', 'MHz', None, 'finite_or_none'),
    _spec('probe', 'Delta_pa_after_MHz', 'MHz', None, 'finite_or_none'),
    _spec('probe', 'switch_latency_ns', 'ns', 100.0, 'nonneg'),

    _spec('detection', 'efficiency', None, 0.3, 'efficiency'),
    _spec('detection', 'background_rate_cps', 'cps', 200.0, 'nonneg'),
    _spec('detection', 'window_ns', 'ns', 750.0, 'positive'),
    _spec('detection', 'threshold', None, 5, 'count'),
    _spec('detection', 'clock_period_ns', 'ns', 25.0, 'positive'),
    _spec('detection', 'timestamp_resolution_ns', 'ns', 2.0, 'positive'),
    _spec('detection', 'record_duration_us', 'us', 8.0, 'positive'),
    _spec('detection', 'drop_window_us', 'us', 100.0, 'positive'),
    _spec('detection', 'quantum_conditioning', None, False, 'bool'),

    _spec('cloud', 'temperature_uK', 'uK', 10.0, 'nonneg'),
    _spec('cloud', 'release_height_um', 'um', 800.0, 'positive'),
    _spec('cloud', 'mean_speed_m_s', 'm_s', 0.17, 'positive'),
    _spec('cloud', 'transverse_extent_nm', 'nm', 1000.0, 'positive'),

    _spec('fort', 'enabled', None, False, 'bool'),
    _spec('fort', 'radiation_pressure', None, True, 'bool'),
    _spec('fort', 'red_wavelength_nm', 'nm', 898.0, 'positive'),
    _spec('fort', 'blue_wavelength_nm', 'nm', 848.0, 'positive'),
    _spec('fort', 'red_power_uW', 'uW', 50.0, 'nonneg'),
    _spec('fort', 'blue_power_uW', 'uW', 50.0, 'nonneg'),
    _spec('fort', 'red_depth_K_per_W', 'K_per_W', 199.7, 'nonneg'),
    _spec('fort', 'blue_depth_K_per_W', 'K_per_W', 383.6, 'nonneg'),
    _spec('fort', 'red_mode_decay_factor', None, 2.0, 'positive'),
    _spec('fort', 'horizon_us', 'us', 100.0, 'positive'),
    _spec('fort', 'capture_time_us', 'us', 50.0, 'positive'),

    _spec('numerics', 'rtol', None, 1e-8, 'positive'),
    _spec('numerics', 'atol_position_nm', 'nm', 1e-4, 'positive'),
    _spec('numerics', 'atol_velocity_m_s', 'm_s', 1e-10, 'positive'),
    _spec('numerics', 'max_step_us', 'us', 1.0, 'positive'),
    _spec('numerics', 'max_time_us', 'us', 500.0, 'positive'),
    _spec('numerics', 'trajectories', None, 2000, 'count'),
    _spec('numerics', 'seed', None, 20100614, 'nonneg_int'),
    _spec('numerics', 'window_start_ns', 'ns', 200.0, 'nonneg'),
    _spec('numerics', 'window_stop_ns', 'ns', 700.0, 'positive'),
    _spec('numerics', 'sample_period_ns', 'ns', 25.0, 'positive'),
    _spec('numerics', 'trace_bin_ns', 'ns', 100.0, 'positive'),
    _spec('numerics', 'histogram_window_ns', 'ns', 500.0, 'positive'),
    _spec('numerics', 'recoil_heating', None, False, 'bool'),
    _spec('numerics', 'dump_count', None, 0, 'nonneg_int'),

    _spec('quantum', 'tau_max_ns', 'ns', 100.0, 'positive'),
    _spec('quantum', 'tau_step_ns', 'ns', 0.5, 'positive'),
    _spec('quantum', 'weak_drive_factor', None, 1e-6, 'positive'),
    _spec('quantum', 'weighting', None, 'flux', 'choice', ('flux', 'uniform')),
    _spec('quantum', 'scale_at_ns', 'ns', 40.0, 'positive'),
    _spec('quantum', 'g_grid_points', None, 41, 'count'),
)

SCHEMA_BY_PATH = {spec.path: spec for spec in SCHEMA}
SECTIONS = tuple(dict.fromkeys(spec.section for spec in SCHEMA))

# The apparatus the simulator reproduces by default.
DEFAULT_DOCUMENT = {
    'toroid': {'D_p_um': 24.0, 'D_m_um': 3.0},
    'mode': {'preset': 'calibrated', 'g_max_MHz': CALIBRATED_G_MAX_MHZ,
             'lambda_bar_nm': 136.0, 'w0_nm': 590.0},
    'cavity': {'kappa_i_MHz': 8.0, 'kappa_ex_MHz': 10.0, 'h_MHz': 13.0,
               'Delta_ca_MHz': 0.0},
    'atom': {'gamma_0_MHz': 2.6},
}


@dataclass(frozen=True)
class ToroidParams:
    D_p: float
    D_m: float

    @property
    def ring_radius(self) -> float:
        return 0.5 * self.D_p


@dataclass(frozen=True)
class ModeParams:
    preset: str
    g_max: float
    lambda_bar: float
    w0: float
    n_eff: float
    polarization: str
    table_file: Optional[str]


@dataclass(frozen=True)
class CavityParams:
    kappa_i: float
    kappa_ex: float
    h: float
    Delta_ca: float

    @property
    def kappa(self) -> float:
        return self.kappa_i + self.kappa_ex


@dataclass(frozen=True)
class AtomParams:
    gamma_0: float
    mass: float
    wavelength: float

    @property
    def omega(self) -> float:
        return 2.0 * math.pi * const.c / self.wavelength


@dataclass(frozen=True)
class SurfaceParams:
    C3_g: float
    C3_e: float
    lambda_ret: float
    d_min: float
    decay_model: str
    refractive_index: float
    potential_file: Optional[str]
    decay_file: Optional[str]


@dataclass(frozen=True)
class ProbeParams:
    P_in_before: float
    P_in_after: float
    Delta_pa_before: float
    Delta_pa_after: float
    switch_latency: float


@dataclass(frozen=True)
class DetectionParams:
    efficiency: float
    background_rate: float
    window: float
    threshold: int
    clock_period: float
    timestamp_resolution: float
    record_duration: float
    drop_window: float
    quantum_conditioning: bool


@dataclass(frozen=True)
class CloudParams:
    temperature: float
    release_height: float
    mean_speed: float
    transverse_extent: float


@dataclass(frozen=True)
class FortParams:
    enabled: bool
    radiation_pressure: bool
    red_wavelength: float
    blue_wavelength: float
    red_power: float
    blue_power: float
    red_depth: float
    blue_depth: float
    red_mode_decay_factor: float
    horizon: float
    capture_time: float


@dataclass(frozen=True)
class NumericsParams:
    rtol: float
    atol_position: float
    atol_velocity: float
    max_step: float
    max_time: float
    trajectories: int
    seed: int
    window_start: float
    window_stop: float
    sample_period: float
    trace_bin: float
    histogram_window: float
    recoil_heating: bool
    dump_count: int


@dataclass(frozen=True)
class QuantumParams:
    tau_max: float
    tau_step: float
    weak_drive_factor: float
    weighting: str
    scale_at: float
    g_grid_points: int


SECTION_TYPES = {
    'toroid': ToroidParams,
    'mode': ModeParams,
    'cavity': CavityParams,
    'atom': AtomParams,
    'surface': SurfaceParams,
    'probe': ProbeParams,
    'detection': DetectionParams,
    'cloud': CloudParams,
    'fort': FortParams,
    'numerics': NumericsParams,
    'quantum': QuantumParams,
}


@dataclass(frozen=True)
class PhysicsConfig:
    """Validated parameter set in SI units. Immutable after load."""
    toroid: ToroidParams
    mode: ModeParams
    cavity: CavityParams
    atom: AtomParams
    surface: SurfaceParams
    probe: ProbeParams
    detection: DetectionParams
    cloud: CloudParams
    fort: FortParams
    numerics: NumericsParams
    quantum: QuantumParams

    @property
    def mode_number(self) -> int:
        """Azimuthal mode number m = round(2π n_eff (D_p/2) / λ_a)."""
        return int(round(2.0 * math.pi * self.mode.n_eff * self.toroid.ring_radius
                         / self.atom.wavelength))

    @property
    def k_phi(self) -> float:
        """Azimuthal wavenumber, quantized so the traveling phase is single valued."""
        return self.mode_number / self.toroid.ring_radius

    def get_summary(self) -> Dict[str, Any]:
        """Get headline parameters in human units for logging and file headers."""
        two_pi_mhz = UNIT_FACTORS['MHz']
        return {
            'g_max_MHz': self.mode.g_max / two_pi_mhz,
            'kappa_i_MHz': self.cavity.kappa_i / two_pi_mhz,
            'kappa_ex_MHz': self.cavity.kappa_ex / two_pi_mhz,
            'h_MHz': self.cavity.h / two_pi_mhz,
            'Delta_ca_MHz': self.cavity.Delta_ca / two_pi_mhz,
            'Delta_pa_after_MHz': self.probe.Delta_pa_after / two_pi_mhz,
            'gamma_0_MHz': self.atom.gamma_0 / two_pi_mhz,
            'trajectories': self.numerics.trajectories,
            'seed': self.numerics.seed,
            'fort': self.fort.enabled,
            'config_hash': self.config_hash()[:12],
        }

    def to_document(self) -> Dict[str, Dict[str, Any]]:
        """Serialize back to a human-unit document."""
        document: Dict[str, Dict[str, Any]] = {}
        for spec in SCHEMA:
            value = getattr(getattr(self, spec.section), spec.attribute)
            if spec.unit is not None and value is not None:
                value = to_human(value, spec.unit)
            document.setdefault(spec.section, {})[spec.key] = value
        return document

    def config_hash(self) -> str:
        canonical = json.dumps(self.to_document(), sort_keys=True, separators=(',', ':'))
        return hashlib.sha256(canonical.encode('utf-8')).hexdigest()

    def replace(self, overrides: Iterable[str]) -> 'PhysicsConfig':
        """Return a new validated config with ``section.key=value`` overrides applied."""
        return build_config(resolve_preset(self.to_document(), overrides))


def apply_overrides(document: Dict[str, Any], overrides: Iterable[str]) -> Dict[str, Any]:
    """Apply ``section.key=value`` overrides to a document copy.

    Values are parsed as JSON when possible (numbers, booleans, null) and kept
    as strings otherwise.
    """
    result = copy.deepcopy(document)
    for item in overrides or ():
        if '=' not in item:
            raise ConfigurationError(f"Override must look like section.key=value: {item}")
        path, raw = item.split('=', 1)
        path = path.strip()
        if '.' not in path:
            raise ConfigurationError(f"Override key needs a section: {path}")
        section, key = path.split('.', 1)
        try:
            value = json.loads(raw)
        except json.JSONDecodeError:
            value = raw.strip()
        result.setdefault(section, {})[key] = value
    return result


def _check_value(spec: ParameterSpec, value: Any) -> None:
    path = spec.path
    check = spec.check
    if check == 'bool':
        if not isinstance(value, bool):
            raise ConfigurationError(f"{path}: expected true/false, got {value!r}")
        return
    if check == 'choice':
        if value not in spec.choices:
            raise ConfigurationError(f"{path}: must be one of {list(spec.choices)}, got {value!r}")
        return
    if check == 'path':
        if value is not None and not isinstance(value, str):
            raise ConfigurationError(f"{path}: expected a file path, got {value!r}")
        return
    if value is None:
        if check.endswith('_or_none'):
            return
        raise ConfigurationError(f"{path}: value must not be null")
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ConfigurationError(f"{path}: expected a number, got {value!r}")
    if not math.isfinite(value):
        raise ConfigurationError(f"{path}: value must be finite")
    if check in ('rate', 'nonneg') and value < 0:
        label = 'rate' if check == 'rate' else 'value'
        raise ConfigurationError(f"{path}: {label} must be non-negative, got {value}")
    if check in ('positive', 'positive_or_none') and value <= 0:
        raise ConfigurationError(f"{path}: value must be positive, got {value}")
    if check == 'efficiency' and not (0.0 <= value <= 1.0):
        raise ConfigurationError(f"{path}: efficiency out of range [0, 1]: {value}")
    if check == 'count' and (int(value) != value or value < 1):
        raise ConfigurationError(f"{path}: must be an integer of at least 1, got {value}")
    if check == 'nonneg_int' and (int(value) != value or value < 0):
        raise ConfigurationError(f"{path}: must be a non-negative integer, got {value}")


def build_config(document: Dict[str, Any]) -> PhysicsConfig:
    """Validate a parsed human-unit document and convert it to SI.

    Raises:
        ConfigurationError: On missing, unknown or non-physical keys, with the key path
    """
    if not isinstance(document, dict):
        raise ConfigurationError("Configuration document must be a mapping of sections")

    for section, body in document.items():
        if section not in SECTION_TYPES:
            raise ConfigurationError(f"Unknown section: {section}")
        if not isinstance(body, dict):
            raise ConfigurationError(f"{section}: section must be a mapping")
        for key in body:
            if f"{section}.{key}" not in SCHEMA_BY_PATH:
                raise ConfigurationError(f"Unknown key: {section}.{key}")

    values: Dict[str, Dict[str, Any]] = {name: {} for name in SECTIONS}
    for spec in SCHEMA:
        body = document.get(spec.section, {})
        if spec.key in body:
            value = body[spec.key]
        elif spec.default is REQUIRED:
            raise ConfigurationError(f"Missing required key: {spec.path}")
        else:
            value = spec.default
        _check_value(spec, value)
        if spec.check in ('count', 'nonneg_int'):
            value = int(value)
        if spec.unit is not None and value is not None:
            value = to_si(value, spec.unit)
        values[spec.section][spec.attribute] = value

    # Derived defaults
    atom = values['atom']
    surface = values['surface']
    if surface['lambda_ret'] is None:
        surface['lambda_ret'] = atom['wavelength'] / (2.0 * math.pi)
    probe = values['probe']
    if probe['Delta_pa_before'] is None:
        probe['Delta_pa_before'] = values['cavity']['Delta_ca']
    if probe['Delta_pa_after'] is None:
        probe['Delta_pa_after'] = probe['Delta_pa_before']

    config = PhysicsConfig(**{name: SECTION_TYPES[name](**values[name]) for name in SECTIONS})
    _validate_relations(config)
    return config


def _validate_relations(config: PhysicsConfig) -> None:
    """Validate constraints that span several keys."""
    surface = config.surface
    if surface.C3_e < surface.C3_g:
        raise ConfigurationError(
            "surface.C3_e_Jm3: excited-state coefficient must not be below the ground-state one")
    if surface.decay_model == 'tabulated' and not surface.decay_file:
        raise ConfigurationError("surface.decay_file: required for the tabulated decay model")

    numerics = config.numerics
    if numerics.window_stop <= numerics.window_start:
        raise ConfigurationError("numerics.window_stop_ns: averaging window must be ordered")

    detection = config.detection
    ratio = detection.window / detection.clock_period
    if abs(ratio - round(ratio)) > 1e-9 * max(1.0, ratio):
        raise ConfigurationError(
            "detection.window_ns: trigger window must be an integer multiple of the clock period")

    fort = config.fort
    if fort.blue_wavelength >= fort.red_wavelength:
        raise ConfigurationError("fort.blue_wavelength_nm: blue mode must have the shorter wavelength")


def _override_paths(overrides: Iterable[str]) -> set:
    return {item.split('=', 1)[0].strip() for item in overrides or ()}


def resolve_preset(document: Dict[str, Any], overrides: Iterable[str] = ()) -> Dict[str, Any]:
    """Apply overrides and let the mode preset choose g_max.

    A preset switched by an override brings its own g_max unless
    ``mode.g_max_MHz`` is overridden as well. A ``fem`` document without a
    g_max gets the finite-element value.
    """
    overrides = list(overrides or ())
    result = apply_overrides(document, overrides)
    mode = result.get('mode')
    if not isinstance(mode, dict):
        return result
    preset = mode.get('preset', 'calibrated')
    if not isinstance(preset, str) or preset not in PRESET_G_MAX_MHZ:
        return result
    paths = _override_paths(overrides)
    if 'mode.g_max_MHz' in paths:
        return result
    before = document.get('mode')
    original = before.get('preset', 'calibrated') if isinstance(before, dict) else None
    if 'mode.preset' in paths and preset != original:
        mode['g_max_MHz'] = PRESET_G_MAX_MHZ[preset]
    elif preset == 'fem' and 'g_max_MHz' not in mode:
        mode['g_max_MHz'] = FEM_G_MAX_MHZ
    return result


def load_config(text: str, overrides: Iterable[str] = ()) -> PhysicsConfig:
    """Parse a JSON configuration document.

    Args:
        text: JSON text with human-unit keys
        overrides: Optional ``section.key=value`` strings applied before validation

    Returns:
        Validated PhysicsConfig in SI units

    Raises:
        ConfigurationError: Malformed document or invalid values
    """
    try:
        document = json.loads(text)
    except json.JSONDecodeError as e:
        raise ConfigurationError(f"Malformed configuration document: {e}") from None
    if not isinstance(document, dict):
        raise ConfigurationError("Configuration document must be a mapping of sections")
    return build_config(resolve_preset(document, overrides))


def dump_config(config: PhysicsConfig) -> str:
    """Serialize a config to JSON text that ``load_config`` reads back."""
    return json.dumps(config.to_document(), indent=2, sort_keys=False)


def default_config(overrides: Iterable[str] = ()) -> PhysicsConfig:
    """The documented apparatus parameter set."""
    return build_config(resolve_preset(DEFAULT_DOCUMENT, overrides))


def create_config(path: Optional[str] = None, overrides: Iterable[str] = ()) -> PhysicsConfig:
    """Factory function to load and validate configuration.

    The document path comes from ``path``, then the TOROID_CONFIG environment
    variable; without either the default apparatus is used.
    """
    path = path or os.environ.get('TOROID_CONFIG')
    try:
        if path:
            text = Path(path).read_text(encoding='utf-8')
            config = load_config(text, overrides)
        else:
            config = default_config(overrides)
        logger.info("Configuration loaded successfully", extra=config.get_summary())
        return config
    except ConfigurationError as e:
        logger.error(f"Configuration validation failed: {e}")
        raise
    except OSError as e:
        logger.error(f"Cannot read configuration file: {e}")
        raise ConfigurationError(f"Cannot read configuration file {path}: {e}") from e
    except Exception as e:
        logger.error(f"Unexpected error loading configuration: {e}")
        raise ConfigurationError(f"Failed to load configuration: {e}") from e
