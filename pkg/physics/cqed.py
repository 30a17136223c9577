"""Weak-drive steady state of two counter-propagating modes and one atom.

Amplitude equations in the probe frame, with kappa = kappa_i + kappa_ex the
field decay, Delta_c = Delta_ca - Delta_pa and Delta_a = delta_a - Delta_pa:

    da/dt = -(kappa + i Delta_c) a - i h b - i (g/√2) e^{+i theta} s - √(2 kappa_ex) alpha
    db/dt = -(kappa + i Delta_c) b - i h a - i (g/√2) e^{-i theta} s
    ds/dt = -(gamma + i Delta_a) s - i (g/√2) (e^{-i theta} a + e^{+i theta} b)

Transmission t = 1 + √(2 kappa_ex) a / alpha, reflection r = √(2 kappa_ex) b / alpha.
"""
import logging
import math
from dataclasses import dataclass, replace
from typing import Optional, Tuple

import numpy as np
import scipy.constants as const
from scipy.integrate import cumulative_trapezoid

logger = logging.getLogger(__name__)

HBAR = const.hbar
SQRT2 = math.sqrt(2.0)


class SingularSystemError(ValueError):
    """Raised when the steady-state linear system has no unique solution."""
    pass


@dataclass(frozen=True)
class CavityAtomParams:
    """Rates and detunings of one quasi-static cavity-atom configuration."""
    g: float
    theta: float
    Delta_pa: float
    Delta_ca: float
    delta_a: float
    kappa_i: float
    kappa_ex: float
    h: float
    gamma: float
    alpha_in: float = 0.0

    def __post_init__(self):
        for name in ('kappa_i', 'kappa_ex', 'h', 'gamma'):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be non-negative")

    @property
    def kappa(self) -> float:
        return self.kappa_i + self.kappa_ex

    @property
    def drive(self) -> complex:
        """Drive term of the mode-a equation, in rad/s."""
        return -math.sqrt(2.0 * self.kappa_ex) * self.alpha_in

    @classmethod
    def from_config(cls, config, g: float = 0.0, theta: float = 0.0, delta_a: float = 0.0,
                    gamma: Optional[float] = None, P_in: Optional[float] = None,
                    Delta_pa: Optional[float] = None) -> 'CavityAtomParams':
        P_in = config.probe.P_in_after if P_in is None else P_in
        Delta_pa = config.probe.Delta_pa_after if Delta_pa is None else Delta_pa
        return cls(g=g, theta=theta, Delta_pa=Delta_pa, Delta_ca=config.cavity.Delta_ca,
                   delta_a=delta_a, kappa_i=config.cavity.kappa_i,
                   kappa_ex=config.cavity.kappa_ex, h=config.cavity.h,
                   gamma=config.atom.gamma_0 if gamma is None else gamma,
                   alpha_in=input_amplitude(P_in, config.atom.omega + Delta_pa))

    def with_updates(self, **changes) -> 'CavityAtomParams':
        return replace(self, **changes)


@dataclass(frozen=True)
class SteadyState:
    a: complex
    b: complex
    sigma: complex
    transmission: float
    reflection: float
    photon_number: float
    force: Optional[np.ndarray] = None


@dataclass(frozen=True)
class Eigenvalues:
    """Complex eigenvalues; real part is the damping, imaginary part the frequency."""
    plus: complex
    minus: complex
    zero: complex

    @property
    def splitting(self) -> float:
        return self.plus.imag - self.minus.imag


@dataclass
class PotentialCurve:
    d: np.ndarray
    U_d: np.ndarray
    U_s: np.ndarray
    F_d: np.ndarray


def input_amplitude(P_in: float, omega_p: float) -> float:
    """Input field amplitude sqrt(photon flux) for power P_in at frequency omega_p."""
    if P_in < 0:
        raise ValueError("Probe power must be non-negative")
    return math.sqrt(P_in / (HBAR * omega_p))


def coupling_matrix(g, theta, Delta_c, Delta_a, kappa, h, gamma) -> np.ndarray:
    """Stack of M = K + iH for broadcast parameters, shape (..., 3, 3)."""
    g, theta, Delta_c, Delta_a, kappa, h, gamma = np.broadcast_arrays(
        *(np.asarray(v, dtype=float) for v in (g, theta, Delta_c, Delta_a, kappa, h, gamma)))
    gp = g / SQRT2
    ep = np.exp(1j * theta)
    em = np.conj(ep)
    M = np.zeros(g.shape + (3, 3), dtype=complex)
    M[..., 0, 0] = kappa + 1j * Delta_c
    M[..., 1, 1] = kappa + 1j * Delta_c
    M[..., 2, 2] = gamma + 1j * Delta_a
    M[..., 0, 1] = 1j * h
    M[..., 1, 0] = 1j * h
    M[..., 0, 2] = 1j * gp * ep
    M[..., 1, 2] = 1j * gp * em
    M[..., 2, 0] = 1j * gp * em
    M[..., 2, 1] = 1j * gp * ep
    return M


def linear_response(g, theta, Delta_pa, delta_a, gamma, Delta_ca, kappa_i, kappa_ex, h
                    ) -> Tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """Vectorized steady state for unit input amplitude.

    Returns:
        Tuple (a, b, sigma, t, r) of arrays; amplitudes scale linearly with alpha_in

    Raises:
        SingularSystemError: If any system is singular
    """
    kappa = kappa_i + kappa_ex
    Delta_pa = np.asarray(Delta_pa, dtype=float)
    M = coupling_matrix(g, theta, Delta_ca - Delta_pa, np.asarray(delta_a) - Delta_pa,
                        kappa, h, gamma)
    source = np.zeros(M.shape[:-1], dtype=complex)
    source[..., 0] = -math.sqrt(2.0 * kappa_ex)
    try:
        x = np.linalg.solve(M, source[..., None])[..., 0]
    except np.linalg.LinAlgError as e:
        raise SingularSystemError(f"Singular cavity-atom system: {e}") from e
    if not np.all(np.isfinite(x)):
        raise SingularSystemError("Cavity-atom system produced non-finite amplitudes")
    a, b, sigma = x[..., 0], x[..., 1], x[..., 2]
    coupling_out = math.sqrt(2.0 * kappa_ex)
    t = 1.0 + coupling_out * a
    r = coupling_out * b
    return a, b, sigma, t, r


def scalar_response(g: float, theta: float, Delta_c: float, Delta_a: float, kappa: float,
                    kappa_ex: float, h: float, gamma: float) -> Tuple[complex, complex, complex]:
    """Unit-drive (a, b, sigma) by eliminating the atom; requires gamma + i Delta_a != 0."""
    D = complex(kappa, Delta_c)
    A = complex(gamma, Delta_a)
    q = 0.5 * g * g / A
    u = complex(math.cos(2.0 * theta), math.sin(2.0 * theta))
    source = -math.sqrt(2.0 * kappa_ex)
    diag = D + q
    upper = 1j * h + q * u
    lower = 1j * h + q / u
    det = diag * diag - upper * lower
    a = source * diag / det
    b = -source * lower / det
    ep = complex(math.cos(theta), -math.sin(theta))
    sigma = -1j * (g / SQRT2) * (ep * a + b / ep) / A
    return a, b, sigma


def steady_state(params: CavityAtomParams, gradient: Optional[np.ndarray] = None,
                 phase_gradient: float = 0.0) -> SteadyState:
    """Solve the weak-drive amplitude equations.

    Args:
        params: Cavity-atom configuration
        gradient: Optional (dg/drho, dg/dz); when given the dipole force is filled in
        phase_gradient: d(theta)/ds along the azimuth in 1/m, for the radiation-pressure term

    Returns:
        SteadyState with amplitudes, T, R and optionally the force

    Raises:
        SingularSystemError: At exceptional points without dissipation
    """
    M = coupling_matrix(params.g, params.theta, params.Delta_ca - params.Delta_pa,
                        params.delta_a - params.Delta_pa, params.kappa, params.h, params.gamma)
    if abs(np.linalg.det(M)) == 0.0:
        raise SingularSystemError("Singular cavity-atom system")
    a, b, sigma, t, r = linear_response(params.g, params.theta, params.Delta_pa, params.delta_a,
                                        params.gamma, params.Delta_ca, params.kappa_i,
                                        params.kappa_ex, params.h)
    alpha = params.alpha_in
    a, b, sigma = complex(a) * alpha, complex(b) * alpha, complex(sigma) * alpha
    state = SteadyState(a=a, b=b, sigma=sigma,
                        transmission=float(abs(t) ** 2), reflection=float(abs(r) ** 2),
                        photon_number=abs(a) ** 2 + abs(b) ** 2)
    if gradient is not None:
        force = dipole_force(params, gradient, state, phase_gradient)
        state = replace(state, force=force)
    return state


def force_components(g, theta, a, b, sigma, dg_drho, dg_dz, phase_gradient=0.0):
    """Vectorized (F_rho, F_phi, F_z) from amplitudes."""
    ep = np.exp(-1j * np.asarray(theta))
    field_sum = a * ep + b * np.conj(ep)
    projection = np.real(np.conj(sigma) * field_sum)
    F_rho = -SQRT2 * HBAR * projection * dg_drho
    F_z = -SQRT2 * HBAR * projection * dg_dz
    phase_sum = -1j * a * ep + 1j * b * np.conj(ep)
    F_phi = -phase_gradient * SQRT2 * HBAR * np.asarray(g) * np.real(np.conj(sigma) * phase_sum)
    return F_rho, F_phi, F_z


def dipole_force(params: CavityAtomParams, gradient, state: Optional[SteadyState] = None,
                 phase_gradient: float = 0.0) -> np.ndarray:
    """Mean force -<grad H_int> on the steady state, as (F_rho, F_phi, F_z) in N.

    The azimuthal component is the radiation pressure of unbalanced traveling
    modes and is only present for a nonzero ``phase_gradient``.
    """
    if state is None:
        state = steady_state(params)
    dg_drho, dg_dz = float(gradient[0]), float(gradient[1])
    F = force_components(params.g, params.theta, state.a, state.b, state.sigma,
                         dg_drho, dg_dz, phase_gradient)
    return np.array([float(np.real(c)) for c in F])


def eigenvalues(params: CavityAtomParams) -> Eigenvalues:
    """Single-excitation eigenvalues in the atom frame.

    The lambda_0 branch is the eigenvector with the least atomic weight; the
    other two are ordered by frequency.
    """
    M = coupling_matrix(params.g, params.theta, params.Delta_ca, params.delta_a,
                        params.kappa, params.h, params.gamma)
    values, vectors = np.linalg.eig(M)
    atomic_weight = np.abs(vectors[2, :]) ** 2
    zero_index = int(np.argmin(atomic_weight))
    others = [i for i in range(3) if i != zero_index]
    others.sort(key=lambda i: values[i].imag)
    return Eigenvalues(plus=complex(values[others[1]]), minus=complex(values[others[0]]),
                       zero=complex(values[zero_index]))


def transmission_spectrum(params: CavityAtomParams,
                          detunings: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """T and R over a probe-detuning sweep at fixed position parameters."""
    _, _, _, t, r = linear_response(params.g, params.theta, detunings, params.delta_a,
                                    params.gamma, params.Delta_ca, params.kappa_i,
                                    params.kappa_ex, params.h)
    return np.abs(t) ** 2, np.abs(r) ** 2


def effective_potential_curve(params: CavityAtomParams, field, surface, d: np.ndarray,
                              z: float = 0.0, include_shift: bool = False) -> PotentialCurve:
    """Dipole and surface potentials along d at fixed z and drive.

    U_d is the line integral of the radial dipole force from the far end of
    the grid, so U_d(d_max) = 0. The atomic shift enters only when
    ``include_shift`` is set.

    Args:
        params: Template parameters (g and delta_a are replaced per point)
        field: ModeField
        surface: SurfaceModel
        d: Increasing distance grid in m, starting at or above d_min

    Returns:
        PotentialCurve with U_d, U_s in J and the radial dipole force in N
    """
    d = np.asarray(d, dtype=float)
    if np.any(np.diff(d) <= 0):
        raise ValueError("Distance grid must be strictly increasing")
    g = field.profile(d, z)
    dg_drho, dg_dz = field.profile_gradient(d, z)
    delta_a = surface.shift(d) if include_shift else np.zeros_like(d)
    a, b, sigma, _, _ = linear_response(g, params.theta, params.Delta_pa, delta_a, params.gamma,
                                        params.Delta_ca, params.kappa_i, params.kappa_ex,
                                        params.h)
    alpha = params.alpha_in
    F_rho, _, _ = force_components(g, params.theta, a * alpha, b * alpha, sigma * alpha,
                                   dg_drho, dg_dz)
    F_rho = np.real(F_rho)
    # U(d) = U(d_max) + integral_d^d_max F dd'
    tail = cumulative_trapezoid(F_rho[::-1], d[::-1], initial=0.0)[::-1]
    U_d = -tail
    logger.debug("Potential curve computed", extra={'points': d.size, 'U_d_min': float(U_d.min())})
    return PotentialCurve(d=d, U_d=U_d, U_s=np.asarray(surface.potential(d, 'ground')), F_d=F_rho)
