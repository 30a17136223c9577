"""Truncated master equation for the transmitted-field photon statistics.

The Hilbert space holds every product state |n_a, n_b, s> of the two
traveling modes and the two-level atom with n_a + n_b + s <= 2. The density
operator is vectorized row-major, so vec(A rho B) = kron(A, B.T) vec(rho).

Steady states and regression are computed in excitation-scaled coordinates,
rho_mn = s**(N_m + N_n) * rho~_mn with s the ratio of drive to decay, which
keeps the weak-drive limit well conditioned.
"""
import logging
import math
from dataclasses import dataclass, field, replace
from typing import Dict, List, Optional, Sequence

import numpy as np
from joblib import Parallel, delayed
from scipy.linalg import expm, svd

from physics.cqed import CavityAtomParams

logger = logging.getLogger(__name__)

MAX_EXCITATION = 2
NULL_SPACE_TOLERANCE = 1e-9


class LiouvillianError(ValueError):
    """Raised when the Liouvillian has no unique stationary state."""
    pass


@dataclass(frozen=True, eq=False)
class TruncatedSpace:
    """Product basis of total excitation <= 2 with projected operators."""
    basis: tuple
    excitation: np.ndarray
    a: np.ndarray
    b: np.ndarray
    sm: np.ndarray

    @property
    def dim(self) -> int:
        return len(self.basis)

    @property
    def identity(self) -> np.ndarray:
        return np.eye(self.dim, dtype=complex)

    def index(self, n_a: int, n_b: int, s: int) -> int:
        return self.basis.index((n_a, n_b, s))

    def vacuum(self) -> np.ndarray:
        rho = np.zeros((self.dim, self.dim), dtype=complex)
        rho[0, 0] = 1.0
        return rho

    @classmethod
    def build(cls, max_excitation: int = MAX_EXCITATION) -> 'TruncatedSpace':
        cutoff = max_excitation + 1
        lower = np.diag(np.sqrt(np.arange(1, cutoff)), k=1).astype(complex)
        atom_lower = np.array([[0, 1], [0, 0]], dtype=complex)
        eye_mode = np.eye(cutoff)
        eye_atom = np.eye(2)
        a_full = np.kron(np.kron(lower, eye_mode), eye_atom)
        b_full = np.kron(np.kron(eye_mode, lower), eye_atom)
        sm_full = np.kron(np.kron(eye_mode, eye_mode), atom_lower)

        product = [(na, nb, s) for na in range(cutoff) for nb in range(cutoff) for s in range(2)]
        keep = [i for i, (na, nb, s) in enumerate(product) if na + nb + s <= max_excitation]
        # order by excitation so the vacuum comes first
        keep.sort(key=lambda i: (sum(product[i]), i))
        P = np.zeros((len(keep), len(product)))
        P[np.arange(len(keep)), keep] = 1.0
        basis = tuple(product[i] for i in keep)
        excitation = np.array([sum(state) for state in basis])
        return cls(basis=basis, excitation=excitation,
                   a=P @ a_full @ P.T, b=P @ b_full @ P.T, sm=P @ sm_full @ P.T)


@dataclass
class QuantumSteadyState:
    rho: np.ndarray
    residual: float
    manifold_populations: np.ndarray
    photon_number: float
    scale: float


@dataclass
class CorrelationCurve:
    """Normalized two-time intensity correlation of the transmitted field."""
    tau: np.ndarray
    values: np.ndarray
    scale: float = 1.0
    unnormalized: Optional[np.ndarray] = field(default=None, repr=False)
    flux: float = 1.0


def hamiltonian(params: CavityAtomParams, space: TruncatedSpace) -> np.ndarray:
    """H/hbar in the probe frame."""
    a, b, sm = space.a, space.b, space.sm
    ad, bd, sp = a.conj().T, b.conj().T, sm.conj().T
    gp = params.g / math.sqrt(2.0)
    phase = np.exp(-1j * params.theta)
    field_op = a * phase + b * np.conj(phase)
    E = 1j * params.drive
    H = (params.Delta_ca - params.Delta_pa) * (ad @ a + bd @ b) \
        + (params.delta_a - params.Delta_pa) * (sp @ sm) \
        + params.h * (ad @ b + bd @ a) \
        + gp * (sp @ field_op + field_op.conj().T @ sm) \
        + E * ad + np.conj(E) * a
    return H


def liouvillian(params: CavityAtomParams, space: TruncatedSpace) -> np.ndarray:
    """Row-major Lindblad superoperator with collapse rates 2κ (a, b) and 2γ (atom)."""
    H = hamiltonian(params, space)
    eye = space.identity
    L = -1j * (np.kron(H, eye) - np.kron(eye, H.T))
    for rate, C in ((2.0 * params.kappa, space.a), (2.0 * params.kappa, space.b),
                    (2.0 * params.gamma, space.sm)):
        if rate == 0.0:
            continue
        CdC = C.conj().T @ C
        L += rate * (np.kron(C, C.conj()) - 0.5 * np.kron(CdC, eye) - 0.5 * np.kron(eye, CdC.T))
    return L


def _scale_factor(params: CavityAtomParams) -> float:
    damping = params.kappa + params.gamma
    drive = abs(params.drive)
    if drive == 0.0 or damping == 0.0:
        return 1.0
    return drive / damping


def _scaling_vector(space: TruncatedSpace, s: float) -> np.ndarray:
    N = space.excitation
    return (float(s) ** (N[:, None] + N[None, :])).ravel()


def _scaled(L: np.ndarray, S: np.ndarray) -> np.ndarray:
    return L * (S[None, :] / S[:, None])


def liouvillian_steady_state(params: CavityAtomParams, space: TruncatedSpace) -> QuantumSteadyState:
    """Stationary density operator of the truncated master equation.

    Args:
        params: Cavity-atom configuration including the drive
        space: Truncated Hilbert space

    Returns:
        QuantumSteadyState with the density matrix and its diagnostics

    Raises:
        LiouvillianError: If the stationary state is not unique
    """
    dim = space.dim
    if params.drive == 0.0:
        rho = space.vacuum()
        return QuantumSteadyState(rho=rho, residual=0.0,
                                  manifold_populations=np.array([1.0, 0.0, 0.0]),
                                  photon_number=0.0, scale=1.0)
    s = _scale_factor(params)
    S = _scaling_vector(space, s)
    L = liouvillian(params, space)
    L_scaled = _scaled(L, S)
    _, singular, vh = svd(L_scaled)
    relative = singular / singular[0]
    null_dim = int(np.sum(relative < NULL_SPACE_TOLERANCE))
    if null_dim != 1:
        raise LiouvillianError(f"Liouvillian null space has dimension {null_dim}, expected 1")
    x = vh[-1].conj()
    x = x / x[0]
    rho = (x * S).reshape(dim, dim)
    rho = 0.5 * (rho + rho.conj().T)
    rho = rho / np.trace(rho).real
    vec = rho.ravel()
    residual = float(np.linalg.norm(L @ vec) / np.linalg.norm(L))

    populations = np.real(np.diag(rho))
    manifolds = np.array([populations[space.excitation == n].sum() for n in range(MAX_EXCITATION + 1)])
    n_op = space.a.conj().T @ space.a + space.b.conj().T @ space.b
    photons = float(np.real(np.trace(n_op @ rho)))
    return QuantumSteadyState(rho=rho, residual=residual, manifold_populations=manifolds,
                              photon_number=photons, scale=s)


class _Propagator:
    """exp(L τ) in scaled coordinates, cached per step length."""

    def __init__(self, L: np.ndarray, S: np.ndarray):
        self._L = _scaled(L, S)
        self._S = S
        self._cache: Dict[float, np.ndarray] = {}

    def step(self, dt: float) -> np.ndarray:
        key = round(dt, 18)
        if key not in self._cache:
            self._cache[key] = expm(self._L * dt)
        return self._cache[key]

    def run(self, vec: np.ndarray, taus: np.ndarray) -> List[np.ndarray]:
        """Physical vectors at sorted non-negative taus."""
        x = vec / self._S
        out = []
        current = 0.0
        for tau in taus:
            dt = tau - current
            if dt > 0:
                x = self.step(dt) @ x
            current = tau
            out.append(x * self._S)
        return out


def evolve_density(rho: np.ndarray, params: CavityAtomParams, space: TruncatedSpace,
                   taus: Sequence[float], scale: float = 1.0) -> List[np.ndarray]:
    """Evolve a density matrix under the Lindblad generator to each tau (sorted, >= 0)."""
    taus = np.asarray(taus, dtype=float)
    if np.any(taus < 0) or np.any(np.diff(taus) < 0):
        raise ValueError("Evolution times must be sorted and non-negative")
    L = liouvillian(params, space)
    S = _scaling_vector(space, scale)
    vectors = _Propagator(L, S).run(rho.ravel(), taus)
    return [v.reshape(space.dim, space.dim) for v in vectors]


def output_operator(params: CavityAtomParams, space: TruncatedSpace) -> np.ndarray:
    """Forward output-field operator alpha + √(2 κ_ex) a, including drive interference."""
    return params.alpha_in * space.identity + math.sqrt(2.0 * params.kappa_ex) * space.a


def g2_transmitted(params: CavityAtomParams, space: TruncatedSpace, taus: Sequence[float],
                   weak_drive_factor: Optional[float] = None) -> CorrelationCurve:
    """Normalized G2(tau) of the transmitted field by quantum regression.

    Args:
        params: Cavity-atom configuration
        space: Truncated space
        taus: Delay grid in s; negative delays use the symmetric value
        weak_drive_factor: When given, the input amplitude is multiplied by it
            so the result is the weak-drive limit

    Returns:
        CorrelationCurve with the unnormalized coincidence rate and the flux
    """
    if weak_drive_factor is not None:
        params = replace(params, alpha_in=params.alpha_in * weak_drive_factor)
    taus = np.asarray(taus, dtype=float)
    steady = liouvillian_steady_state(params, space)
    C = output_operator(params, space)
    CdC = C.conj().T @ C
    flux = float(np.real(np.trace(CdC @ steady.rho)))

    conditioned = C @ steady.rho @ C.conj().T
    abs_taus, inverse = np.unique(np.abs(taus), return_inverse=True)
    S = _scaling_vector(space, steady.scale)
    propagator = _Propagator(liouvillian(params, space), S)
    vectors = propagator.run(conditioned.ravel(), abs_taus)
    coincidences = np.array([np.real(np.trace(CdC @ v.reshape(space.dim, space.dim)))
                             for v in vectors])
    unnormalized = coincidences[inverse]
    values = unnormalized / flux ** 2 if flux > 0 else np.ones_like(unnormalized)
    return CorrelationCurve(tau=taus, values=values, unnormalized=unnormalized, flux=flux)


def ensemble_g2(g_values: Sequence[float], weights: Sequence[float], params: CavityAtomParams,
                space: TruncatedSpace, taus: Sequence[float], weighting: str = 'flux',
                target: Optional[float] = None, scale_at: float = 40e-9,
                weak_drive_factor: Optional[float] = None, n_jobs: int = 1) -> CorrelationCurve:
    """Average fixed-coupling correlation curves over a coupling distribution.

    With ``weighting='flux'`` the unnormalized coincidence rates are averaged
    and divided by the averaged squared flux; ``'uniform'`` averages the
    normalized curves. A ``target`` rescales the result so its mean at
    tau = ±scale_at equals the target.

    Raises:
        ValueError: For an empty distribution or an unknown weighting
    """
    g_values = np.asarray(g_values, dtype=float)
    weights = np.asarray(weights, dtype=float)
    if g_values.size == 0 or weights.sum() <= 0:
        raise ValueError("Coupling distribution is empty")
    if weighting not in ('flux', 'uniform'):
        raise ValueError(f"Unknown weighting: {weighting}")
    taus = np.asarray(taus, dtype=float)

    mask = weights > 0
    curves = Parallel(n_jobs=n_jobs)(
        delayed(g2_transmitted)(replace(params, g=float(g)), space, taus, weak_drive_factor)
        for g in g_values[mask])
    w = weights[mask]
    if weighting == 'flux':
        numerator = sum(wk * c.unnormalized for wk, c in zip(w, curves))
        denominator = sum(wk * c.flux ** 2 for wk, c in zip(w, curves))
        values = numerator / denominator
    else:
        values = sum(wk * c.values for wk, c in zip(w, curves)) / w.sum()
    flux = float(np.sum(w * np.array([c.flux for c in curves])) / w.sum())

    scale = 1.0
    if target is not None:
        order = np.argsort(taus)
        at = np.interp([-scale_at, scale_at], taus[order], values[order])
        scale = float(target / np.mean(at))
        values = values * scale
    logger.debug("Ensemble correlation computed",
                 extra={'points': int(mask.sum()), 'weighting': weighting, 'scale': scale})
    return CorrelationCurve(tau=taus, values=values, scale=scale, flux=flux)


def g2_table(params: CavityAtomParams, space: TruncatedSpace, g_grid: Sequence[float],
             taus: Sequence[float], weak_drive_factor: Optional[float] = 1e-6) -> np.ndarray:
    """Normalized g2 on a (coupling, delay) grid, shape (len(g_grid), len(taus))."""
    return np.array([g2_transmitted(replace(params, g=float(g)), space, taus,
                                    weak_drive_factor).values for g in g_grid])
