"""Atom-surface physics near the silica rim.

Casimir-Polder potential with a retardation roll-off,

    U(d) = -C3 / (d**3 * (1 + d / lambda_ret)),

the resulting transition shift delta_a = (U_e - U_g) / hbar, and the decay
rate of a dipole above a dielectric half-space for parallel (TE) and
perpendicular (TM) orientation.
"""
import functools
import logging
import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
import scipy.constants as const
from scipy.integrate import quad
from scipy.interpolate import CubicSpline
from scipy.optimize import brentq

logger = logging.getLogger(__name__)

HBAR = const.hbar

# Decay table extent and sampling, in units of the transition wavelength.
DECAY_TABLE_SPAN = 10.0
DECAY_TABLE_POINTS = 801

ORIENTATIONS = ('parallel', 'perpendicular')
POLARIZATION_ORIENTATION = {'TE': 'parallel', 'TM': 'perpendicular'}


class SurfaceCutoffError(ValueError):
    """Raised when a distance falls below the surface cutoff d_min."""
    pass


def potential_profile(d, C3: float, lambda_ret: float):
    """U(d) without cutoff checks."""
    d = np.asarray(d, dtype=float)
    return -C3 / (d ** 3 * (1.0 + d / lambda_ret))


def force_profile(d, C3: float, lambda_ret: float):
    """-dU/dd without cutoff checks; always negative."""
    d = np.asarray(d, dtype=float)
    x = d / lambda_ret
    return -C3 * (3.0 + 4.0 * x) / (d ** 4 * (1.0 + x) ** 2)


def _reflection(u_z, s_z2, n):
    """Fresnel amplitudes (r_s, r_p) seen from vacuum."""
    eps = n * n
    r_s = (u_z - s_z2) / (u_z + s_z2)
    r_p = (eps * u_z - s_z2) / (eps * u_z + s_z2)
    return r_s, r_p


def halfspace_decay_ratio(kd: float, n: float, orientation: str) -> float:
    """gamma(d)/gamma_0 for a dipole at k*d above a lossless half-space of index n.

    The propagating part is integrated over u = cos(angle) with an oscillatory
    weight; the evanescent part over the decay constant q up to sqrt(n**2 - 1).
    """
    if orientation not in ORIENTATIONS:
        raise ValueError(f"Unknown dipole orientation: {orientation}")
    w = 2.0 * kd

    def propagating(u):
        s_z2 = math.sqrt(n * n - 1.0 + u * u)
        r_s, r_p = _reflection(u, s_z2, n)
        if orientation == 'perpendicular':
            return 1.5 * (1.0 - u * u) * r_p
        return 0.75 * (r_s - u * u * r_p)

    def evanescent(q):
        s_z2 = math.sqrt(max(n * n - 1.0 - q * q, 0.0))
        r_s, r_p = _reflection(1j * q, s_z2, n)
        if orientation == 'perpendicular':
            value = 1.5 * (1.0 + q * q) * r_p.imag
        else:
            value = 0.75 * (r_s + q * q * r_p).imag
        return value * math.exp(-w * q)

    if w > 0:
        prop, _ = quad(propagating, 0.0, 1.0, weight='cos', wvar=w, limit=200)
    else:
        prop, _ = quad(propagating, 0.0, 1.0, limit=200)
    evan, _ = quad(evanescent, 0.0, math.sqrt(n * n - 1.0), limit=200)
    return 1.0 + prop + evan


@functools.lru_cache(maxsize=16)
def decay_table(n: float, orientation: str):
    """Decay ratio sampled on kd in [0, 2π·DECAY_TABLE_SPAN]."""
    kd = np.linspace(0.0, 2.0 * math.pi * DECAY_TABLE_SPAN, DECAY_TABLE_POINTS)
    ratio = np.array([halfspace_decay_ratio(x, n, orientation) for x in kd])
    logger.debug("Computed half-space decay table",
                 extra={'n': n, 'orientation': orientation, 'points': kd.size})
    return kd, ratio


@dataclass(frozen=True, eq=False)
class SurfaceModel:
    """Casimir-Polder coefficients and decay-rate model of the rim surface."""
    C3_g: float
    C3_e: float
    lambda_ret: float
    d_min: float
    gamma_0: float
    wavelength: float
    refractive_index: float = 1.45
    decay_model: str = 'analytic-halfspace'
    polarization: str = 'TE'
    potential_table: Optional[CubicSpline] = field(default=None, repr=False)
    decay_ratio_table: Optional[CubicSpline] = field(default=None, repr=False)

    def __post_init__(self):
        if not (self.C3_e >= self.C3_g > 0):
            raise ValueError("Casimir-Polder coefficients must satisfy C3_e >= C3_g > 0")
        if self.lambda_ret <= 0:
            raise ValueError("Retardation length must be positive")
        if self.decay_model not in ('analytic-halfspace', 'tabulated'):
            raise ValueError(f"Unknown decay model: {self.decay_model}")
        if self.decay_model == 'tabulated' and self.decay_ratio_table is None:
            raise ValueError("Tabulated decay model needs a decay table")

    @property
    def k(self) -> float:
        return 2.0 * math.pi / self.wavelength

    @property
    def orientation(self) -> str:
        return POLARIZATION_ORIENTATION[self.polarization]

    @classmethod
    def from_config(cls, config) -> 'SurfaceModel':
        surface = config.surface
        potential_table = None
        decay_ratio_table = None
        if surface.potential_file:
            data = np.loadtxt(surface.potential_file, comments='#', ndmin=2)
            # columns: d_nm U_g_uK
            potential_table = CubicSpline(data[:, 0] * 1e-9, data[:, 1] * 1e-6 * const.k)
        if surface.decay_file:
            data = np.loadtxt(surface.decay_file, comments='#', ndmin=2)
            # columns: d_nm gamma/gamma_0
            decay_ratio_table = CubicSpline(data[:, 0] * 1e-9, data[:, 1])
        return cls(C3_g=surface.C3_g, C3_e=surface.C3_e, lambda_ret=surface.lambda_ret,
                   d_min=surface.d_min, gamma_0=config.atom.gamma_0,
                   wavelength=config.atom.wavelength,
                   refractive_index=surface.refractive_index,
                   decay_model=surface.decay_model, polarization=config.mode.polarization,
                   potential_table=potential_table, decay_ratio_table=decay_ratio_table)

    def coefficient(self, state: str) -> float:
        if state == 'ground':
            return self.C3_g
        if state == 'excited':
            return self.C3_e
        raise ValueError(f"Unknown atomic state: {state}")

    def potential(self, d, state: str = 'ground'):
        """Unchecked U(d) for internal use by the integrator."""
        if self.potential_table is not None:
            scale = self.coefficient(state) / self.C3_g
            return scale * self.potential_table(d)
        return potential_profile(d, self.coefficient(state), self.lambda_ret)

    def force(self, d, state: str = 'ground'):
        """Unchecked -dU/dd."""
        if self.potential_table is not None:
            scale = self.coefficient(state) / self.C3_g
            return -scale * self.potential_table(d, 1)
        return force_profile(d, self.coefficient(state), self.lambda_ret)

    def shift(self, d):
        """Unchecked delta_a(d) in rad/s."""
        return (self.potential(d, 'excited') - self.potential(d, 'ground')) / HBAR

    def decay(self, d, orientation: Optional[str] = None):
        """Tabulated gamma(d); beyond the table the free-space rate is returned."""
        d = np.asarray(d, dtype=float)
        if self.decay_model == 'tabulated':
            span = self.decay_ratio_table.x[-1]
            ratio = np.where(d <= span, self.decay_ratio_table(np.minimum(d, span)), 1.0)
            return self.gamma_0 * ratio
        kd_grid, ratio_grid = decay_table(self.refractive_index, orientation or self.orientation)
        kd = self.k * np.maximum(d, 0.0)
        ratio = np.interp(kd, kd_grid, ratio_grid, right=1.0)
        return self.gamma_0 * ratio

    def check_distance(self, d) -> None:
        d_arr = np.asarray(d, dtype=float)
        if np.any(d_arr < self.d_min):
            raise SurfaceCutoffError(
                f"Distance {float(np.min(d_arr)):.3e} m below surface cutoff {self.d_min:.3e} m")


def cp_potential(d, state: str, model: SurfaceModel):
    """Casimir-Polder energy of the given atomic state.

    Args:
        d: Distance from the surface in m (scalar or array)
        state: 'ground' or 'excited'
        model: Surface model

    Returns:
        Energy in J, strictly negative

    Raises:
        SurfaceCutoffError: If any distance is below d_min
    """
    model.check_distance(d)
    return model.potential(d, state)


def cp_force(d, state: str, model: SurfaceModel):
    """Radial Casimir-Polder force -dU/dd in N (negative means toward the surface)."""
    model.check_distance(d)
    return model.force(d, state)


def level_shift(d, model: SurfaceModel):
    """Surface-induced transition shift delta_a in rad/s; never positive."""
    model.check_distance(d)
    return model.shift(d)


def modified_decay(d, model: SurfaceModel, orientation: Optional[str] = None):
    """Boundary-modified atomic decay rate in rad/s.

    Inside the precomputed range the table is interpolated; farther out the
    half-space integral is evaluated directly.
    """
    orientation = orientation or model.orientation
    d_arr = np.atleast_1d(np.asarray(d, dtype=float))
    rates = np.asarray(model.decay(d_arr, orientation), dtype=float)
    if model.decay_model == 'analytic-halfspace':
        far = d_arr * model.k > 2.0 * math.pi * DECAY_TABLE_SPAN
        for i in np.flatnonzero(far):
            rates[i] = model.gamma_0 * halfspace_decay_ratio(model.k * d_arr[i],
                                                             model.refractive_index,
                                                             orientation)
    if np.ndim(d) == 0:
        return float(rates[0])
    return rates


def crossing_distance(model: SurfaceModel, energy: float, state: str = 'ground') -> float:
    """Distance at which |U(d)| equals ``energy``."""
    lo, hi = model.d_min, 1e-3
    return brentq(lambda d: abs(float(model.potential(d, state))) - energy, lo, hi, xtol=1e-15)
