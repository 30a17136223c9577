"""Center-of-mass motion of atoms falling past the toroid.

Atoms are integrated in Cartesian coordinates under gravity, the
Casimir-Polder force, the quasi-static cQED dipole force and, after a
trigger, an optional two-color evanescent trap (FORT). The rim is treated
locally as the cylinder rho = D_p/2; reaching d <= d_min is a crash.

``run_transit`` couples the integrator to photodetection: the pre-trigger
path is integrated with the pre-trigger probe, the flux on the clock grid
feeds the trigger, and the path is restarted at trigger + latency with the
switched probe.
"""
import logging
import math
from dataclasses import dataclass, field
from typing import Callable, List, Optional, Tuple

import numpy as np
import scipy.constants as const
from scipy.integrate import solve_ivp

from physics.cqed import force_components, linear_response, scalar_response
from physics.detection import (ConditioningTable, DetectorModel, DriveSchedule, FluxSchedule,
                               PhotonRecord, TriggerConfig, apply_switch, generate_counts,
                               run_trigger)
from physics.mode import CylPoint, ModeField
from physics.surface import SurfaceModel

logger = logging.getLogger(__name__)

HBAR = const.hbar
GRAVITY = const.g

FATES = ('crashed', 'exited', 'trapped')
VARIANTS = ('full', 'no-surface', 'no-forces', 'p-fall')

# Samples kept before the trigger in stored records.
PRE_TRIGGER_KEEP = 1e-6


class TrajectoryError(RuntimeError):
    """Raised when the integrator produces a non-finite or otherwise invalid state."""
    pass


@dataclass(frozen=True)
class VariantFlags:
    """Switches that separate the model variants.

    ``no-surface`` sets the Casimir-Polder potential to zero, so its force and
    the level shift it causes both vanish. ``no-forces`` only turns
    off the mechanical potentials: the atom moves ballistically under gravity
    while its internal levels still see the surface shift and the modified
    decay rate. ``p-fall`` drops every surface effect and uses the ballistic
    coupling model.
    """
    surface_force: bool
    dipole_force: bool
    level_shift: bool
    modified_decay: bool
    ballistic: bool

    @classmethod
    def for_variant(cls, variant: str) -> 'VariantFlags':
        if variant == 'full':
            return cls(True, True, True, True, False)
        if variant == 'no-surface':
            return cls(False, True, False, True, False)
        if variant == 'no-forces':
            return cls(False, False, True, True, False)
        if variant == 'p-fall':
            return cls(False, False, False, False, True)
        raise ValueError(f"Unknown model variant: {variant}")


@dataclass(frozen=True)
class AtomKinematics:
    """Position, Cartesian velocity and time of one atom."""
    position: CylPoint
    velocity: np.ndarray
    time: float = 0.0

    def __post_init__(self):
        velocity = np.asarray(self.velocity, dtype=float)
        if velocity.shape != (3,) or not np.all(np.isfinite(velocity)):
            raise ValueError("Velocity must be a finite 3-vector")
        object.__setattr__(self, 'velocity', velocity)

    def state_vector(self) -> np.ndarray:
        return np.concatenate([self.position.to_cartesian(), self.velocity])

    @classmethod
    def from_state_vector(cls, y: np.ndarray, time: float, ring_radius: float) -> 'AtomKinematics':
        point = CylPoint.from_cartesian(y[0], y[1], y[2], ring_radius)
        return cls(position=point, velocity=np.array(y[3:6]), time=time)


@dataclass(frozen=True)
class FortField:
    """Two-color evanescent trap: blue repulsive wall over a red attractive well."""
    red_decay: float
    blue_decay: float
    red_peak: float
    blue_peak: float
    w0: float
    enabled: bool = True
    radiation_pressure: bool = True
    red_scatter: float = 0.0
    blue_scatter: float = 0.0

    def __post_init__(self):
        if self.blue_decay >= self.red_decay:
            raise ValueError("Blue decay length must be shorter than the red one")

    @classmethod
    def from_config(cls, config) -> 'FortField':
        fort, atom, mode = config.fort, config.atom, config.mode
        blue_decay = 0.5 * mode.lambda_bar * fort.blue_wavelength / atom.wavelength
        red_decay = 0.5 * fort.red_mode_decay_factor * mode.lambda_bar \
            * fort.red_wavelength / atom.wavelength
        linewidth = 2.0 * atom.gamma_0

        def scatter(wavelength):
            detuning = abs(2.0 * math.pi * const.c * (1.0 / wavelength - 1.0 / atom.wavelength))
            return (2.0 * math.pi / wavelength) * linewidth / detuning

        return cls(red_decay=red_decay, blue_decay=blue_decay,
                   red_peak=fort.red_depth * fort.red_power,
                   blue_peak=fort.blue_depth * fort.blue_power,
                   w0=mode.w0, enabled=fort.enabled,
                   radiation_pressure=fort.radiation_pressure,
                   red_scatter=scatter(fort.red_wavelength),
                   blue_scatter=scatter(fort.blue_wavelength))

    def components(self, d, z):
        """Blue and red potential magnitudes at (d, z)."""
        vertical = np.exp(-2.0 * (np.asarray(z) / self.w0) ** 2)
        blue = self.blue_peak * np.exp(-np.asarray(d) / self.blue_decay) * vertical
        red = self.red_peak * np.exp(-np.asarray(d) / self.red_decay) * vertical
        return blue, red

    def potential(self, d, z):
        blue, red = self.components(d, z)
        return blue - red

    def gradient(self, d, z):
        """(dU/dd, dU/dz)."""
        blue, red = self.components(d, z)
        dU_dd = -blue / self.blue_decay + red / self.red_decay
        dU_dz = -4.0 * np.asarray(z) / self.w0 ** 2 * (blue - red)
        return dU_dd, dU_dz

    def azimuthal_force(self, d, z):
        """Scattering force of the co-propagating trap modes along +phi."""
        if not self.radiation_pressure:
            return np.zeros_like(np.asarray(d, dtype=float))
        blue, red = self.components(d, z)
        return self.blue_scatter * blue + self.red_scatter * red

    def minimum(self) -> Tuple[float, float]:
        """(d, U) of the radial minimum at z = 0."""
        ratio = (self.blue_peak * self.red_decay) / (self.red_peak * self.blue_decay) \
            if self.red_peak > 0 else math.inf
        if not math.isfinite(ratio) or ratio <= 1.0:
            return (0.0 if ratio <= 1.0 else math.inf), float(self.potential(0.0, 0.0))
        d = math.log(ratio) / (1.0 / self.blue_decay - 1.0 / self.red_decay)
        return d, float(self.potential(d, 0.0))


def fort_potential(point: CylPoint, fort: FortField) -> Tuple[float, np.ndarray]:
    """Trap energy in J and its gradient (dU/drho, dU/dz) at a point."""
    U = float(fort.potential(point.d, point.z))
    dU_dd, dU_dz = fort.gradient(point.d, point.z)
    return U, np.array([float(dU_dd), float(dU_dz)])


class TransitModel:
    """Forces and quasi-static observables for one model variant."""

    def __init__(self, config, variant: str = 'full', azimuthal_dipole: bool = True):
        self.config = config
        self.variant = variant
        self.flags = VariantFlags.for_variant(variant)
        self.field = ModeField.from_config(config)
        self.surface = SurfaceModel.from_config(config)
        self.fort = FortField.from_config(config)
        self.azimuthal_dipole = azimuthal_dipole

        self.mass = config.atom.mass
        self.omega = config.atom.omega
        self.gamma_0 = config.atom.gamma_0
        self.ring_radius = config.toroid.ring_radius
        self.d_min = config.surface.d_min
        self.box_radius = 3.0 * config.toroid.D_p
        self.box_height = 10.0 * config.mode.w0
        cavity = config.cavity
        self.kappa_i, self.kappa_ex, self.h = cavity.kappa_i, cavity.kappa_ex, cavity.h
        self.Delta_ca = cavity.Delta_ca
        self.kappa = cavity.kappa

    def alpha(self, P_in, Delta_pa):
        return np.sqrt(np.asarray(P_in) / (HBAR * (self.omega + np.asarray(Delta_pa))))

    def internal(self, d, z):
        """Coupling, its gradient, surface shift and decay rate at (d, z)."""
        d = np.asarray(d, dtype=float)
        outside = d >= 0
        d_pos = np.where(outside, d, 0.0)
        g = np.where(outside, self.field.profile(d_pos, z), 0.0)
        dg_drho, dg_dz = self.field.profile_gradient(d_pos, z)
        d_safe = np.maximum(d, 0.5 * self.d_min)
        delta_a = self.surface.shift(d_safe) if self.flags.level_shift else np.zeros_like(d)
        gamma = self.surface.decay(d_pos) if self.flags.modified_decay \
            else np.full_like(d, self.gamma_0)
        return g, dg_drho, dg_dz, delta_a, gamma

    def derivative(self, t: float, y: np.ndarray, P_in: float, Delta_pa: float,
                   fort_on: bool) -> np.ndarray:
        x, yy, z, vx, vy, vz = y
        rho = math.hypot(x, yy)
        cos_phi, sin_phi = (x / rho, yy / rho) if rho > 0 else (1.0, 0.0)
        d = max(rho - self.ring_radius, 0.5 * self.d_min)
        F_rho = F_phi = F_z = 0.0

        if self.flags.surface_force:
            F_rho += float(self.surface.force(d))
        if self.flags.dipole_force and P_in > 0:
            g, dg_drho, dg_dz, delta_a, gamma = (float(v) for v in self.internal(d, z))
            phi = math.atan2(yy, x)
            theta = float(self.field.phase(phi))
            a, b, sigma = scalar_response(g, theta, self.Delta_ca - Delta_pa, delta_a - Delta_pa,
                                          self.kappa, self.kappa_ex, self.h, gamma)
            alpha = float(self.alpha(P_in, Delta_pa))
            phase_gradient = self.field.k_phi * self.ring_radius / rho if self.azimuthal_dipole else 0.0
            f_rho, f_phi, f_z = force_components(g, theta, a * alpha, b * alpha, sigma * alpha,
                                                 dg_drho, dg_dz, phase_gradient)
            F_rho += float(np.real(f_rho))
            F_phi += float(np.real(f_phi))
            F_z += float(np.real(f_z))
        if fort_on and self.fort.enabled:
            dU_dd, dU_dz = self.fort.gradient(d, z)
            F_rho -= float(dU_dd)
            F_z -= float(dU_dz)
            F_phi += float(self.fort.azimuthal_force(d, z))

        ax = (F_rho * cos_phi - F_phi * sin_phi) / self.mass
        ay = (F_rho * sin_phi + F_phi * cos_phi) / self.mass
        az = F_z / self.mass - GRAVITY
        return np.array([vx, vy, vz, ax, ay, az])

    def observables(self, t: np.ndarray, Y: np.ndarray, drive: DriveSchedule) -> dict:
        """Quasi-static observables along sampled states Y of shape (6, n)."""
        x, y, z = Y[0], Y[1], Y[2]
        rho = np.hypot(x, y)
        phi = np.mod(np.arctan2(y, x), 2.0 * math.pi)
        d = rho - self.ring_radius
        g, _, _, delta_a, gamma = self.internal(d, z)
        P_in, Delta_pa = drive.arrays(t)
        theta = self.field.phase(phi)
        _, _, sigma, t_amp, r_amp = linear_response(g, theta, Delta_pa, delta_a, gamma,
                                                    self.Delta_ca, self.kappa_i, self.kappa_ex,
                                                    self.h)
        excitation = np.abs(sigma) ** 2 * self.alpha(P_in, Delta_pa) ** 2
        return {'rho': rho, 'z': z, 'phi': phi, 'd': d, 'g': g, 'delta_a': delta_a,
                'gamma': gamma, 'transmission': np.abs(t_amp) ** 2,
                'reflection': np.abs(r_amp) ** 2, 'excitation': excitation,
                'P_in': P_in}

    def empty_cavity(self, Delta_pa) -> Tuple[np.ndarray, np.ndarray]:
        zeros = np.zeros_like(np.asarray(Delta_pa, dtype=float))
        _, _, _, t_amp, r_amp = linear_response(zeros, zeros, Delta_pa, zeros, self.gamma_0,
                                                self.Delta_ca, self.kappa_i, self.kappa_ex, self.h)
        return np.abs(t_amp) ** 2, np.abs(r_amp) ** 2


@dataclass
class Segment:
    """Piecewise dense solution between two drive changes."""
    t_start: float
    t_end: float
    pieces: List[Tuple[float, float, Callable]]
    fate: Optional[str]
    y_end: np.ndarray
    kicks: int = 0

    def states(self, t) -> np.ndarray:
        t = np.atleast_1d(np.asarray(t, dtype=float))
        out = np.empty((6, t.size))
        for k, (t0, t1, solution) in enumerate(self.pieces):
            last = k == len(self.pieces) - 1
            mask = (t >= t0) & ((t < t1) | (last & (t <= t1 + 1e-15)))
            if np.any(mask):
                out[:, mask] = solution(np.minimum(t[mask], t1))
        return out

    def state_at(self, t: float) -> np.ndarray:
        return self.states(t)[:, 0]


class _Ballistic:
    """Closed-form free fall under gravity."""

    def __init__(self, t0: float, y0: np.ndarray):
        self.t0 = t0
        self.y0 = np.asarray(y0, dtype=float)

    def __call__(self, t) -> np.ndarray:
        tau = np.atleast_1d(np.asarray(t, dtype=float)) - self.t0
        p0, v0 = self.y0[:3], self.y0[3:]
        accel = np.array([0.0, 0.0, -GRAVITY])
        pos = p0[:, None] + v0[:, None] * tau + 0.5 * accel[:, None] * tau ** 2
        vel = v0[:, None] + accel[:, None] * tau
        return np.vstack([pos, vel])


def _first_root(coefficients, horizon: float) -> float:
    roots = np.roots(coefficients)
    real = roots[np.abs(roots.imag) < 1e-12 * (1.0 + np.abs(roots.real))].real
    real = real[(real > 1e-15) & (real <= horizon)]
    return float(real.min()) if real.size else math.inf


def _ballistic_segment(model: TransitModel, y0: np.ndarray, t0: float, t_stop: float) -> Segment:
    x, y, z, vx, vy, vz = y0
    horizon = t_stop - t0
    A = vx * vx + vy * vy
    B = 2.0 * (x * vx + y * vy)
    C = x * x + y * y
    crash_r = model.ring_radius + model.d_min
    candidates = {
        'crashed': _first_root([A, B, C - crash_r ** 2], horizon) if A > 0 else math.inf,
        'exited': min(
            _first_root([A, B, C - model.box_radius ** 2], horizon) if A > 0 else math.inf,
            _first_root([-0.5 * GRAVITY, vz, z + model.box_height], horizon),
            _first_root([-0.5 * GRAVITY, vz, z - model.box_height], horizon)),
    }
    fate = min(candidates, key=candidates.get)
    tau = candidates[fate]
    if not math.isfinite(tau):
        fate, tau = None, horizon
    solution = _Ballistic(t0, y0)
    t_end = t0 + tau
    return Segment(t_start=t0, t_end=t_end, pieces=[(t0, t_end, solution)], fate=fate,
                   y_end=solution(t_end)[:, 0])


def _events(model: TransitModel):
    def crash(t, y, *args):
        return math.hypot(y[0], y[1]) - model.ring_radius - model.d_min
    crash.terminal = True
    crash.direction = -1

    def radial_exit(t, y, *args):
        return math.hypot(y[0], y[1]) - model.box_radius
    radial_exit.terminal = True
    radial_exit.direction = 1

    def bottom_exit(t, y, *args):
        return y[2] + model.box_height
    bottom_exit.terminal = True
    bottom_exit.direction = -1

    def top_exit(t, y, *args):
        return y[2] - model.box_height
    top_exit.terminal = True
    top_exit.direction = 1

    return [crash, radial_exit, bottom_exit, top_exit]


def _integrate_piece(model: TransitModel, y0: np.ndarray, t0: float, t_stop: float,
                     P_in: float, Delta_pa: float, fort_on: bool):
    numerics = model.config.numerics
    speed = max(float(np.linalg.norm(y0[3:])), model.config.cloud.mean_speed)
    max_step = min(numerics.max_step, model.field.lambda_bar / (10.0 * speed))
    atol = np.array([numerics.atol_position] * 3 + [numerics.atol_velocity] * 3)
    sol = solve_ivp(model.derivative, (t0, t_stop), y0, method='RK45', rtol=numerics.rtol,
                    atol=atol, max_step=max_step, events=_events(model), dense_output=True,
                    args=(P_in, Delta_pa, fort_on))
    if not np.all(np.isfinite(sol.y)):
        bad = int(np.argmax(~np.all(np.isfinite(sol.y), axis=0)))
        raise TrajectoryError(f"Non-finite state at t = {sol.t[bad]:.6e} s: {sol.y[:, bad]}")
    y_end = sol.y[:, -1]
    t_end = float(sol.t[-1])
    fate = None
    if sol.status == 1:
        fate = 'crashed' if sol.t_events[0].size else 'exited'
    elif sol.status == -1:
        d_end = math.hypot(y_end[0], y_end[1]) - model.ring_radius
        if d_end < 10.0 * model.d_min:
            logger.debug("Step size underflow near the surface treated as crash",
                         extra={'t': t_end, 'd': d_end})
            fate = 'crashed'
        else:
            raise TrajectoryError(f"Integration failed at t = {t_end:.6e} s, d = {d_end:.3e} m: "
                                  f"{sol.message}")
    return sol.sol, t_end, y_end, fate


def _recoil_kick(model: TransitModel, y: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """Absorption along a traveling mode plus isotropic emission."""
    k = 2.0 * math.pi / model.config.atom.wavelength
    v_rec = HBAR * k / model.mass
    rho = math.hypot(y[0], y[1])
    tangent = np.array([-y[1] / rho, y[0] / rho, 0.0])
    sign = 1.0 if rng.uniform() < 0.5 else -1.0
    emission = rng.normal(size=3)
    emission /= np.linalg.norm(emission)
    kicked = np.array(y, dtype=float)
    kicked[3:] += v_rec * (sign * tangent + emission)
    return kicked


def integrate_segment(model: TransitModel, y0: np.ndarray, t0: float, t_stop: float,
                      P_in: float, Delta_pa: float, fort_on: bool = False,
                      rng: Optional[np.random.Generator] = None) -> Segment:
    """Integrate at a constant drive until a fate or ``t_stop``.

    With recoil heating enabled, photon-scattering kicks are drawn from the
    excited-state population along the path and the integration restarts at
    each kick.
    """
    if model.flags.ballistic:
        return _ballistic_segment(model, y0, t0, t_stop)
    recoil = model.config.numerics.recoil_heating and rng is not None and P_in > 0
    pieces = []
    kicks = 0
    t, y = t0, np.asarray(y0, dtype=float)
    drive = DriveSchedule.constant(P_in, Delta_pa)
    while True:
        solution, t_end, y_end, fate = _integrate_piece(model, y, t, t_stop, P_in, Delta_pa, fort_on)
        if recoil and t_end > t:
            grid = np.linspace(t, t_end, max(2, int((t_end - t) / model.config.numerics.sample_period) + 2))
            obs = model.observables(grid, solution(grid), drive)
            rate = 2.0 * obs['gamma'] * obs['excitation']
            hazard = np.concatenate([[0.0], np.cumsum(0.5 * (rate[1:] + rate[:-1]) * np.diff(grid))])
            threshold = rng.exponential()
            if hazard[-1] > threshold:
                t_kick = float(np.interp(threshold, hazard, grid))
                pieces.append((t, t_kick, solution))
                y = _recoil_kick(model, solution(np.array([t_kick]))[:, 0], rng)
                t = t_kick
                kicks += 1
                continue
        pieces.append((t, t_end, solution))
        return Segment(t_start=t0, t_end=t_end, pieces=pieces, fate=fate, y_end=y_end, kicks=kicks)


@dataclass(eq=False)
class TrajectoryRecord:
    """Sampled path, quasi-static observables and outcome of one atom."""
    index: int
    variant: str
    initial: AtomKinematics
    t: np.ndarray
    rho: np.ndarray
    z: np.ndarray
    phi: np.ndarray
    velocity: np.ndarray
    g: np.ndarray
    delta_a: np.ndarray
    gamma: np.ndarray
    transmission: np.ndarray
    reflection: np.ndarray
    epoch: np.ndarray
    fate: str
    fate_time: float
    ring_radius: float
    trigger_time: Optional[float] = None
    switch_time: Optional[float] = None
    photons: Optional[PhotonRecord] = field(default=None, repr=False)
    kicks: int = 0

    def __post_init__(self):
        if self.fate not in FATES:
            raise ValueError(f"Unknown fate: {self.fate}")
        if self.t.size > 1 and np.any(np.diff(self.t) < 0):
            raise ValueError("Samples must be time ordered")

    @property
    def triggered(self) -> bool:
        return self.trigger_time is not None

    @property
    def d(self) -> np.ndarray:
        return self.rho - self.ring_radius

    def window_mean(self, name: str, start: float, stop: float) -> float:
        """Mean of a sampled observable over [trigger + start, trigger + stop]."""
        if not self.triggered:
            raise ValueError("Record has no trigger")
        values = self.d if name == 'd' else getattr(self, name)
        mask = (self.t >= self.trigger_time + start) & (self.t <= self.trigger_time + stop)
        if not np.any(mask):
            return math.nan
        return float(np.mean(values[mask]))


def sample_initial(config, rng: np.random.Generator, vertical_only: bool = False) -> AtomKinematics:
    """Draw an atom entering the simulation volume from above.

    The vertical velocity is the free-fall arrival speed plus a thermal
    spread; the distance from the rim is uniform over the transverse extent
    and the azimuth uniform.
    """
    cloud = config.cloud
    sigma_v = math.sqrt(const.k * cloud.temperature / config.atom.mass)
    d = rng.uniform(config.surface.d_min, cloud.transverse_extent)
    phi = rng.uniform(0.0, 2.0 * math.pi)
    z = 10.0 * config.mode.w0 * (1.0 - 1e-6)
    thermal = rng.normal(0.0, 1.0, size=3) * sigma_v
    if vertical_only:
        thermal[:2] = 0.0
    velocity = np.array([thermal[0], thermal[1], -cloud.mean_speed + thermal[2]])
    point = CylPoint.from_distance(d, z, phi, config.toroid.ring_radius)
    return AtomKinematics(position=point, velocity=velocity, time=0.0)


def _sample_grid(t_start: float, t_end: float, period: float) -> np.ndarray:
    grid = np.arange(t_start, t_end, period)
    if grid.size == 0 or grid[-1] < t_end:
        grid = np.append(grid, t_end)
    return grid


def _segments_states(segments: List[Segment], t: np.ndarray) -> np.ndarray:
    out = np.empty((6, t.size))
    for k, seg in enumerate(segments):
        last = k == len(segments) - 1
        mask = (t >= seg.t_start) & ((t < seg.t_end) | (last & (t <= seg.t_end + 1e-15)))
        if np.any(mask):
            out[:, mask] = seg.states(t[mask])
    return out


def _build_record(model: TransitModel, index: int, initial: AtomKinematics,
                  segments: List[Segment], drive: DriveSchedule, fate: Optional[str],
                  keep_from: float, trigger_time: Optional[float] = None,
                  photons: Optional[PhotonRecord] = None,
                  keep_until: float = math.inf) -> TrajectoryRecord:
    t_end = segments[-1].t_end
    period = model.config.numerics.sample_period
    start = max(segments[0].t_start, keep_from)
    stop = min(t_end, keep_until)
    t = _sample_grid(start, stop, period) if start <= stop else np.zeros(0)
    if t.size:
        Y = _segments_states(segments, t)
        obs = model.observables(t, Y, drive)
        velocity = Y[3:6].T
    else:
        obs = {key: np.zeros(0) for key in ('rho', 'z', 'phi', 'g', 'delta_a', 'gamma',
                                            'transmission', 'reflection')}
        velocity = np.zeros((0, 3))
    switch = drive.switch_time
    epoch = (t > switch).astype(np.int8) if switch is not None else np.zeros(t.size, np.int8)
    return TrajectoryRecord(index=index, variant=model.variant, initial=initial, t=t,
                            rho=obs['rho'], z=obs['z'], phi=obs['phi'], velocity=velocity,
                            g=obs['g'], delta_a=obs['delta_a'], gamma=obs['gamma'],
                            transmission=obs['transmission'], reflection=obs['reflection'],
                            epoch=epoch, fate=fate or 'trapped', fate_time=t_end,
                            ring_radius=model.ring_radius, trigger_time=trigger_time,
                            switch_time=switch, photons=photons,
                            kicks=sum(s.kicks for s in segments))


def integrate(state: AtomKinematics, model: TransitModel, drive: DriveSchedule,
              rng: Optional[np.random.Generator], t_stop: float, fort_on: bool = False,
              index: int = 0) -> TrajectoryRecord:
    """Integrate one atom under a fixed drive schedule (no trigger feedback).

    Args:
        state: Initial kinematics; d must exceed d_min
        model: Forces for the chosen variant
        drive: Probe schedule; a switch splits the integration
        rng: Generator for recoil kicks (unused when heating is off)
        t_stop: Time horizon in s
        fort_on: Whether the trap acts after the switch (or throughout without one)

    Returns:
        TrajectoryRecord sampled over the whole path

    Raises:
        ValueError: If the initial distance is not above d_min
        TrajectoryError: If the integration produces a non-finite state
    """
    if state.position.d <= model.d_min:
        raise ValueError(f"Initial distance {state.position.d:.3e} m is not above d_min")
    y0 = state.state_vector()
    t0 = state.time
    switch = drive.switch_time
    segments = []
    if switch is not None and t0 < switch < t_stop:
        first = integrate_segment(model, y0, t0, switch, drive.P_before, drive.Delta_before,
                                  False, rng)
        segments.append(first)
        if first.fate is None:
            segments.append(integrate_segment(model, first.y_end, switch, t_stop, drive.P_after,
                                              drive.Delta_after, fort_on, rng))
    else:
        P_in, Delta_pa = drive.at(t0 + 1e-15)
        segments.append(integrate_segment(model, y0, t0, t_stop, P_in, Delta_pa, fort_on, rng))
    return _build_record(model, index, state, segments, drive, segments[-1].fate, keep_from=t0)


def _clock_flux(model: TransitModel, segments: List[Segment], drive: DriveSchedule,
                edges: np.ndarray, live_until: float) -> FluxSchedule:
    """Transmitted/reflected power on clock intervals, from the state at each tick."""
    ticks = edges[:-1]
    P_in, Delta_pa = drive.arrays(ticks)
    T, R = model.empty_cavity(Delta_pa)
    g = np.zeros(ticks.size)
    live = ticks <= live_until
    if np.any(live):
        Y = _segments_states(segments, ticks[live])
        obs = model.observables(ticks[live], Y, drive)
        T[live], R[live], g[live] = obs['transmission'], obs['reflection'], obs['g']
    return FluxSchedule(edges, T * P_in, R * P_in, coupling=g)


def _clock_edges(start: float, stop: float, period: float) -> np.ndarray:
    first = math.floor(start / period + 1e-9)
    last = math.ceil(stop / period - 1e-9)
    edges = np.arange(first, last + 1) * period
    edges[0], edges[-1] = start, max(stop, edges[-1])
    return edges[np.concatenate([[True], np.diff(edges) > 0])]


def run_transit(config, index: int, variant: str = 'full', model: Optional[TransitModel] = None,
                Delta_after: Optional[float] = None,
                conditioning: Optional[ConditioningTable] = None,
                keep_path: bool = False) -> TrajectoryRecord:
    """Simulate one triggered transit with closed-loop probe switching.

    Args:
        config: PhysicsConfig
        index: Trajectory index; the generator is seeded with (seed, index)
        variant: Model variant
        model: Prebuilt TransitModel to reuse across trajectories
        Delta_after: Post-trigger probe detuning, defaulting to the configured one
        conditioning: Optional g2 table for quantum-conditioned photon events
        keep_path: Keep samples of the whole path instead of the post-trigger part

    Returns:
        TrajectoryRecord with photons, trigger time and fate
    """
    rng = np.random.default_rng([config.numerics.seed, index])
    model = model or TransitModel(config, variant)
    trigger_cfg = TriggerConfig.from_config(config)
    detector = DetectorModel.from_config(config)
    initial = sample_initial(config, rng, vertical_only=model.flags.ballistic)
    y0 = initial.state_vector()
    period = config.detection.clock_period

    pre_drive = DriveSchedule.constant(trigger_cfg.P_before, trigger_cfg.Delta_before)
    first = integrate_segment(model, y0, 0.0, config.numerics.max_time, trigger_cfg.P_before,
                              trigger_cfg.Delta_before, False, rng)
    edges = _clock_edges(0.0, first.t_end, period)
    pre_flux = _clock_flux(model, [first], pre_drive, edges, first.t_end)
    pre_record = generate_counts(pre_flux, detector, rng, epoch=0, conditioning=conditioning)
    trigger = run_trigger(pre_record, trigger_cfg)

    if trigger is None:
        logger.debug("Transit without trigger", extra={'index': index, 'fate': first.fate})
        keep_from = 0.0 if keep_path else math.inf
        return _build_record(model, index, initial, [first], pre_drive, first.fate,
                             keep_from=keep_from, photons=pre_record)

    drive = apply_switch(trigger, trigger_cfg, Delta_after)
    switch = drive.switch_time
    # Without a trap the atom is followed to its fate; the photon record is clipped separately.
    if model.fort.enabled:
        horizon = trigger + max(config.detection.record_duration, config.fort.horizon)
    else:
        horizon = max(config.numerics.max_time, switch)
    segments = [first]
    fate = first.fate
    if switch < first.t_end:
        head = Segment(first.t_start, switch, first.pieces, None, first.state_at(switch),
                       first.kicks)
        second = integrate_segment(model, head.y_end, switch, horizon,
                                   drive.P_after, drive.Delta_after, model.fort.enabled, rng)
        segments = [head, second]
        fate = second.fate
    else:
        logger.warning("Atom reached its fate before the probe switch",
                       extra={'index': index, 'fate': first.fate, 'trigger': trigger})

    record_stop = trigger + config.detection.record_duration
    post_edges = _clock_edges(trigger, record_stop, period)
    post_flux = _clock_flux(model, segments, drive, post_edges, segments[-1].t_end)
    post_record = generate_counts(post_flux, detector, rng, epoch=1, conditioning=conditioning,
                                  not_before=trigger)
    photons = pre_record.truncate(trigger).merge(post_record)
    photons.trigger_time = trigger

    keep_from = 0.0 if keep_path else trigger - PRE_TRIGGER_KEEP
    keep_until = math.inf if keep_path or model.fort.enabled else record_stop
    record = _build_record(model, index, initial, segments, drive, fate, keep_from=keep_from,
                           trigger_time=trigger, photons=photons, keep_until=keep_until)
    logger.debug("Triggered transit", extra={'index': index, 'fate': record.fate,
                                             'trigger': trigger})
    return record
