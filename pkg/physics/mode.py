"""Toroid geometry and the evanescent coupling field g(r).

The coupling profile is separable:

    g(d, z) = g_max * exp(-d / lambda_bar) * exp(-(z / w0)**2),   d >= 0

with d = rho - D_p/2 the distance from the toroid rim. The azimuth phi only
enters through the traveling-wave phase theta = k_phi * (D_p/2) * phi.
"""
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Tuple

import numpy as np
from scipy.interpolate import RegularGridInterpolator

logger = logging.getLogger(__name__)

TWO_PI = 2.0 * math.pi


class InsideDielectricError(ValueError):
    """Raised when a point lies inside the toroid (d < 0)."""
    pass


@dataclass(frozen=True)
class CylPoint:
    """Point in cylindrical coordinates about the toroid symmetry axis."""
    rho: float
    z: float
    phi: float
    ring_radius: float

    def __post_init__(self):
        object.__setattr__(self, 'phi', float(self.phi) % TWO_PI)

    @property
    def d(self) -> float:
        return self.rho - self.ring_radius

    @classmethod
    def from_distance(cls, d: float, z: float, phi: float, ring_radius: float) -> 'CylPoint':
        return cls(rho=ring_radius + d, z=z, phi=phi, ring_radius=ring_radius)

    @classmethod
    def from_cartesian(cls, x: float, y: float, z: float, ring_radius: float) -> 'CylPoint':
        return cls(rho=math.hypot(x, y), z=z, phi=math.atan2(y, x), ring_radius=ring_radius)

    def to_cartesian(self) -> np.ndarray:
        return np.array([self.rho * math.cos(self.phi), self.rho * math.sin(self.phi), self.z])


@dataclass(frozen=True, eq=False)
class TabulatedMode:
    """Coupling magnitude sampled on a regular (d, z) grid.

    File format: whitespace separated columns ``d_nm z_nm g_MHz`` with ``#``
    comment lines, one row per grid node (any order, full grid required).
    """
    d: np.ndarray
    z: np.ndarray
    g: np.ndarray
    _interp: RegularGridInterpolator = field(repr=False, compare=False, default=None)

    def __post_init__(self):
        interp = RegularGridInterpolator((self.d, self.z), self.g, method='linear',
                                         bounds_error=False, fill_value=0.0)
        object.__setattr__(self, '_interp', interp)

    @classmethod
    def from_file(cls, path: str) -> 'TabulatedMode':
        data = np.loadtxt(path, comments='#', ndmin=2)
        if data.shape[1] != 3:
            raise ValueError(f"Tabulated mode file needs three columns (d_nm z_nm g_MHz): {path}")
        d_nodes = np.unique(data[:, 0])
        z_nodes = np.unique(data[:, 1])
        if d_nodes.size * z_nodes.size != data.shape[0]:
            raise ValueError(f"Tabulated mode file is not a full regular grid: {path}")
        grid = np.zeros((d_nodes.size, z_nodes.size))
        i = np.searchsorted(d_nodes, data[:, 0])
        j = np.searchsorted(z_nodes, data[:, 1])
        grid[i, j] = data[:, 2] * TWO_PI * 1e6
        logger.info("Loaded tabulated mode field",
                    extra={'path': str(Path(path)), 'nodes': int(data.shape[0])})
        return cls(d=d_nodes * 1e-9, z=z_nodes * 1e-9, g=grid)

    def __call__(self, d, z):
        pts = np.stack(np.broadcast_arrays(np.asarray(d, float), np.asarray(z, float)), axis=-1)
        return self._interp(pts)

    def gradient(self, d, z):
        """Central differences of the interpolant at a tenth of the grid pitch."""
        hd = 0.1 * float(np.min(np.diff(self.d)))
        hz = 0.1 * float(np.min(np.diff(self.z)))
        dg_dd = (self(d + hd, z) - self(d - hd, z)) / (2.0 * hd)
        dg_dz = (self(d, z + hz) - self(d, z - hz)) / (2.0 * hz)
        return dg_dd, dg_dz


@dataclass(frozen=True)
class ModeField:
    """Parameters of the evanescent coupling profile."""
    g_max: float
    lambda_bar: float
    w0: float
    k_phi: float
    ring_radius: float
    table: Optional[TabulatedMode] = None

    def __post_init__(self):
        if self.lambda_bar <= 0 or self.w0 <= 0:
            raise ValueError("lambda_bar and w0 must be positive")
        if self.g_max < 0:
            raise ValueError("g_max must be non-negative")

    @classmethod
    def from_config(cls, config) -> 'ModeField':
        table = None
        if config.mode.table_file:
            table = TabulatedMode.from_file(config.mode.table_file)
        return cls(g_max=config.mode.g_max, lambda_bar=config.mode.lambda_bar,
                   w0=config.mode.w0, k_phi=config.k_phi,
                   ring_radius=config.toroid.ring_radius, table=table)

    def profile(self, d, z):
        """Vectorized g(d, z); the caller guarantees d >= 0."""
        if self.table is not None:
            return self.table(d, z)
        return self.g_max * np.exp(-np.asarray(d) / self.lambda_bar) \
            * np.exp(-(np.asarray(z) / self.w0) ** 2)

    def profile_gradient(self, d, z) -> Tuple[np.ndarray, np.ndarray]:
        """Vectorized (dg/drho, dg/dz); dg/drho equals dg/dd."""
        if self.table is not None:
            return self.table.gradient(d, z)
        g = self.profile(d, z)
        return -g / self.lambda_bar, -2.0 * np.asarray(z) * g / self.w0 ** 2

    def phase(self, phi):
        return self.k_phi * self.ring_radius * np.asarray(phi)


def coupling(point: CylPoint, field: ModeField) -> float:
    """Coherent coupling g at a point outside the dielectric.

    Args:
        point: Atom position
        field: Mode field parameters

    Returns:
        Coupling in rad/s, never negative

    Raises:
        InsideDielectricError: If the point is inside the toroid
    """
    if point.d < 0:
        raise InsideDielectricError(f"Point inside dielectric: d = {point.d:.3e} m")
    return float(field.profile(point.d, point.z))


def coupling_gradient(point: CylPoint, field: ModeField) -> np.ndarray:
    """Gradient of g in (rho, z), in rad/s/m."""
    if point.d < 0:
        raise InsideDielectricError(f"Point inside dielectric: d = {point.d:.3e} m")
    dg_drho, dg_dz = field.profile_gradient(point.d, point.z)
    return np.array([float(dg_drho), float(dg_dz)])


def traveling_phase(point: CylPoint, field: ModeField) -> float:
    """Traveling-wave phase of mode a at the point; mode b carries the negative."""
    return float(field.phase(point.phi))


def mode_number(n_eff: float, ring_radius: float, wavelength: float) -> int:
    """Azimuthal mode number closest to 2π n_eff R / λ."""
    return int(round(TWO_PI * n_eff * ring_radius / wavelength))
