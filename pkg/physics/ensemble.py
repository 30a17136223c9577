"""Reductions over many triggered transits.

Everything here consumes photon records or trajectory records and produces
the averaged observables: post-trigger transmission traces and their
two-timescale fit, probe spectra, class-split histograms, detector
cross-correlations and trap statistics. Accumulators are mergeable so
partial results from parallel workers can be combined in any order.
"""
import logging
import math
from dataclasses import dataclass, field
from typing import Dict, List, Mapping, Optional, Sequence, Tuple

import numpy as np
from joblib import Parallel, delayed
from scipy.optimize import curve_fit
from scipy.signal import find_peaks, savgol_filter

from physics.cqed import linear_response
from physics.detection import FORWARD, REFLECTED, PhotonRecord
from physics.surface import SurfaceModel
from physics.trajectory import TrajectoryRecord, run_transit

logger = logging.getLogger(__name__)

CLASSES = ('I', 'II')
QUANTITIES = ('d', 'g', 'delta_a')

# Tail of the post-trigger record used for the background level B.
TAIL_SPAN = 2e-6

# Savitzky-Golay smoothing applied before peak finding.
SMOOTHING_POINTS = 5
SMOOTHING_ORDER = 2

MIN_FIT_BINS = 20

# Closest distance resolved by the delta_a histogram.
HISTOGRAM_SHIFT_DISTANCE = 30e-9


class EnsembleError(ValueError):
    """Raised when a reduction has no usable input."""
    pass


class FitError(RuntimeError):
    """Raised when no start of the multi-start fit converges."""
    pass


def _triggered(records: Sequence[PhotonRecord]) -> List[PhotonRecord]:
    return [r for r in records if r is not None and r.trigger_time is not None]


def _relative_bins(record: PhotonRecord, channels: Sequence[int], bin_ticks: int,
                   n_bins: int) -> np.ndarray:
    """Counts per bin after the trigger, binned on the timestamp grid."""
    trigger_tick = int(round(record.trigger_time / record.resolution))
    mask = np.isin(record.channels, channels)
    offset = record.ticks[mask] - trigger_tick
    offset = offset[(offset >= 0) & (offset < bin_ticks * n_bins)]
    return np.bincount(offset // bin_ticks, minlength=n_bins)[:n_bins].astype(float)


def _bin_ticks(bin_width: float, resolution: float) -> int:
    ratio = bin_width / resolution
    if ratio < 1 or abs(ratio - round(ratio)) > 1e-6:
        raise ValueError(f"Bin width {bin_width:.3e} s must be a multiple of the "
                         f"timestamp resolution {resolution:.3e} s")
    return int(round(ratio))


@dataclass
class TraceAccumulator:
    """Summed forward counts per post-trigger bin."""
    bin_width: float
    n_bins: int
    counts: np.ndarray = None
    squares: np.ndarray = None
    triggers: int = 0

    def __post_init__(self):
        if self.counts is None:
            self.counts = np.zeros(self.n_bins)
        if self.squares is None:
            self.squares = np.zeros(self.n_bins)

    def add(self, record: PhotonRecord) -> None:
        bins = _relative_bins(record, FORWARD, _bin_ticks(self.bin_width, record.resolution),
                              self.n_bins)
        self.counts += bins
        self.squares += bins * bins
        self.triggers += 1

    def merge(self, other: 'TraceAccumulator') -> 'TraceAccumulator':
        if other.n_bins != self.n_bins or other.bin_width != self.bin_width:
            raise ValueError("Cannot merge traces with different binning")
        return TraceAccumulator(self.bin_width, self.n_bins, self.counts + other.counts,
                                self.squares + other.squares, self.triggers + other.triggers)


@dataclass
class TraceResult:
    t: np.ndarray
    T: np.ndarray
    T_B: np.ndarray
    B: float
    stderr: np.ndarray
    triggers: int


def average_trace(records: Sequence[PhotonRecord], bin_width: float, duration: float,
                  unit_rate: float, tail: float = TAIL_SPAN,
                  accumulator: Optional[TraceAccumulator] = None) -> TraceResult:
    """Mean post-trigger transmission, normalized to the count rate at T = 1.

    Args:
        records: Photon records; untriggered ones are ignored
        bin_width: Bin width in s, a multiple of the timestamp resolution
        duration: Post-trigger span in s
        unit_rate: Forward detection rate (both detectors) at unit transmission, in 1/s
        tail: Span at the end of the record averaged into the background B
        accumulator: Partial sums to continue from

    Returns:
        TraceResult with bin centers relative to the trigger

    Raises:
        EnsembleError: If there is no triggered record
    """
    n_bins = int(round(duration / bin_width))
    acc = accumulator or TraceAccumulator(bin_width, n_bins)
    for record in _triggered(records):
        acc.add(record)
    if acc.triggers == 0:
        raise EnsembleError("No triggered records to average")
    if unit_rate <= 0:
        raise ValueError("Unit count rate must be positive")
    expected = unit_rate * bin_width
    mean = acc.counts / acc.triggers
    variance = np.maximum(acc.squares / acc.triggers - mean ** 2, 0.0)
    T = mean / expected
    stderr = np.sqrt(variance / acc.triggers) / expected
    t = (np.arange(acc.n_bins) + 0.5) * bin_width
    tail_mask = t >= duration - tail
    B = float(np.mean(T[tail_mask])) if np.any(tail_mask) else 0.0
    logger.info("Averaged transmission trace",
                extra={'triggers': acc.triggers, 'bins': acc.n_bins, 'background': B})
    return TraceResult(t=t, T=T, T_B=T - B, B=B, stderr=stderr, triggers=acc.triggers)


def exp_gauss(t, A, tau_I, C, tau_II, offset):
    return A * np.exp(-t / tau_I) + C * np.exp(-(t / tau_II) ** 2) + offset


FIT_PARAMETERS = ('A', 'tau_I', 'C', 'tau_II', 'offset')


@dataclass
class FitResult:
    params: Dict[str, float]
    errors: Dict[str, float]
    residuals: np.ndarray
    chi2: float
    starts: int
    converged: int

    def interval(self, name: str) -> Tuple[float, float]:
        """68% confidence interval of a parameter."""
        value, error = self.params[name], self.errors[name]
        return value - error, value + error


def _fit_starts(t: np.ndarray, y: np.ndarray):
    span = float(t[-1] - t[0]) or 1.0
    height = float(y[0]) if y[0] != 0 else float(np.max(np.abs(y))) or 1.0
    for tau_I in span * np.array([0.025, 0.0625, 0.125, 0.25]):
        for tau_II in span * np.array([0.15, 0.4, 0.75]):
            yield [0.5 * height, tau_I, 0.5 * height, tau_II, 0.0]


def fit_exp_gauss(t: np.ndarray, y: np.ndarray, sigma: Optional[np.ndarray] = None) -> FitResult:
    """Least-squares fit of A e^(-t/tau_I) + C e^(-(t/tau_II)^2) + offset.

    The starts are a fixed grid of time constants scaled to the trace span,
    so identical input gives an identical result. Errors are one standard
    deviation from the covariance diagonal.

    Raises:
        EnsembleError: If the trace has fewer than MIN_FIT_BINS bins
        FitError: If no start converges
    """
    t = np.asarray(t, dtype=float)
    y = np.asarray(y, dtype=float)
    if t.size < MIN_FIT_BINS:
        raise EnsembleError(f"Need at least {MIN_FIT_BINS} bins to fit, got {t.size}")
    if sigma is not None:
        sigma = np.asarray(sigma, dtype=float)
        if np.any(sigma <= 0):
            sigma = None
    # fit in units of the trace span
    span = float(t[-1] - t[0])
    x = t / span
    step = float(np.min(np.diff(x)))
    bounds = ([-np.inf, 0.1 * step, -np.inf, 0.1 * step, -np.inf],
              [np.inf, 10.0, np.inf, 10.0, np.inf])

    best = None
    starts = converged = 0
    failures = []
    for p0 in _fit_starts(x, y):
        starts += 1
        try:
            popt, pcov = curve_fit(exp_gauss, x, y, p0=p0, sigma=sigma, bounds=bounds,
                                   method='trf', maxfev=20000)
        except (RuntimeError, ValueError) as e:
            failures.append(str(e))
            continue
        converged += 1
        residuals = y - exp_gauss(x, *popt)
        weights = 1.0 / sigma if sigma is not None else 1.0
        chi2 = float(np.sum((residuals * weights) ** 2))
        if best is None or chi2 < best[2]:
            best = (popt, pcov, chi2, residuals)

    if best is None:
        logger.error("Exponential plus Gaussian fit failed",
                     extra={'starts': starts, 'last_error': failures[-1] if failures else None})
        raise FitError(f"No fit converged from {starts} starts: {failures[-1] if failures else ''}")
    if failures:
        logger.warning("Some fit starts failed", extra={'failed': len(failures), 'starts': starts})

    popt, pcov, chi2, residuals = best
    errors = np.sqrt(np.abs(np.diag(pcov)))
    unit = np.array([1.0, span, 1.0, span, 1.0])
    popt, errors = popt * unit, errors * unit
    result = FitResult(params=dict(zip(FIT_PARAMETERS, (float(v) for v in popt))),
                       errors=dict(zip(FIT_PARAMETERS, (float(v) for v in errors))),
                       residuals=residuals, chi2=chi2, starts=starts, converged=converged)
    logger.info("Fitted two-timescale trace",
                extra={'tau_I': result.params['tau_I'], 'tau_II': result.params['tau_II'],
                       'chi2': chi2})
    return result


def spectrum_peaks(detunings: np.ndarray, values: np.ndarray, dips: bool = False,
                   smoothing: int = SMOOTHING_POINTS) -> Tuple[np.ndarray, float]:
    """Positions of the two most prominent peaks and their separation.

    Args:
        detunings: Probe detunings, increasing
        values: Spectrum on those detunings
        dips: Look for minima instead of maxima
        smoothing: Savitzky-Golay window in points; odd, or 0 for none

    Returns:
        (peak detunings sorted ascending, splitting); the splitting is NaN
        when fewer than two peaks are found
    """
    values = np.asarray(values, dtype=float)
    signal = -values if dips else values
    window = smoothing if smoothing % 2 == 1 else smoothing + 1
    if window > SMOOTHING_ORDER and values.size >= window:
        signal = savgol_filter(signal, window, SMOOTHING_ORDER)
    peaks, properties = find_peaks(signal, prominence=0.0)
    if peaks.size < 2:
        return np.asarray(detunings)[peaks], math.nan
    order = np.argsort(properties['prominences'])[::-1][:2]
    positions = np.sort(np.asarray(detunings)[peaks[order]])
    return positions, float(positions[1] - positions[0])


def inferred_coupling(splitting: float, Delta_ca: float) -> float:
    """Mean coupling from splitting = sqrt(Delta_ca^2 + 4 g^2)."""
    if not math.isfinite(splitting) or splitting <= abs(Delta_ca):
        return math.nan
    return 0.5 * math.sqrt(splitting ** 2 - Delta_ca ** 2)


def _window_counts(records: Sequence[PhotonRecord], channels: Sequence[int],
                   start: float, stop: float) -> np.ndarray:
    counts = []
    for record in _triggered(records):
        times = record.select(channels) - record.trigger_time
        counts.append(np.count_nonzero((times >= start) & (times < stop)))
    return np.asarray(counts, dtype=float)


@dataclass
class SpectraResult:
    detunings: np.ndarray
    T_A: np.ndarray
    R_A: np.ndarray
    T_NA: np.ndarray
    R_NA: np.ndarray
    dT: np.ndarray
    dR: np.ndarray
    T_err: np.ndarray
    R_err: np.ndarray
    triggers: np.ndarray
    peaks: np.ndarray
    splitting: float
    g_bar: float
    window: Tuple[float, float]
    smoothing: int = SMOOTHING_POINTS


def assemble_spectra(atom: Mapping[float, Sequence[PhotonRecord]],
                     reference: Mapping[float, Sequence[PhotonRecord]],
                     normalization: Sequence[PhotonRecord], window: Tuple[float, float],
                     Delta_ca: float = 0.0, peak_source: str = 'R',
                     smoothing: int = SMOOTHING_POINTS) -> SpectraResult:
    """Window-averaged spectra with and without atoms, and their differences.

    Counts in [trigger + start, trigger + stop) are divided by the mean
    forward counts of the large-detuning normalization run in the same
    window. Reference records carry a nominal trigger time that fixes their
    window.

    Args:
        atom: Triggered records per probe detuning
        reference: Empty-cavity records per probe detuning
        normalization: Records taken far from any resonance
        window: (start, stop) after the trigger in s
        Delta_ca: Cavity-atom detuning for the coupling estimate
        peak_source: 'R' (reflection peaks) or 'T' (transmission dips)

    Raises:
        EnsembleError: If the reference run or the normalization is missing
    """
    detunings = np.array(sorted(atom))
    missing = [d for d in detunings if d not in reference]
    if missing:
        raise EnsembleError(f"Missing empty-cavity reference for {len(missing)} detunings")
    if peak_source not in ('R', 'T'):
        raise ValueError(f"Unknown peak source: {peak_source}")
    start, stop = window
    norm_counts = _window_counts(normalization, FORWARD, start, stop)
    if norm_counts.size == 0 or norm_counts.mean() <= 0:
        raise EnsembleError("Normalization run has no counts")
    unit = norm_counts.mean()

    def spectrum(groups, channels):
        mean, err, n = [], [], []
        for delta in detunings:
            counts = _window_counts(groups[delta], channels, start, stop)
            n.append(counts.size)
            if counts.size == 0:
                mean.append(math.nan)
                err.append(math.nan)
                continue
            mean.append(counts.mean() / unit)
            err.append(counts.std() / math.sqrt(counts.size) / unit)
        return np.array(mean), np.array(err), np.array(n)

    T_A, T_err, triggers = spectrum(atom, FORWARD)
    R_A, R_err, _ = spectrum(atom, REFLECTED)
    T_NA, _, _ = spectrum(reference, FORWARD)
    R_NA, _, _ = spectrum(reference, REFLECTED)
    empty = int(np.count_nonzero(triggers == 0))
    if empty:
        logger.warning("Detunings without triggered records", extra={'count': empty})

    source = R_A if peak_source == 'R' else T_A
    valid = np.isfinite(source)
    peaks, splitting = spectrum_peaks(detunings[valid], source[valid], dips=peak_source == 'T',
                                      smoothing=smoothing)
    g_bar = inferred_coupling(splitting, Delta_ca)
    logger.info("Assembled spectra",
                extra={'detunings': detunings.size, 'splitting': splitting, 'g_bar': g_bar})
    return SpectraResult(detunings=detunings, T_A=T_A, R_A=R_A, T_NA=T_NA, R_NA=R_NA,
                         dT=T_A - T_NA, dR=R_A - R_NA, T_err=T_err, R_err=R_err,
                         triggers=triggers, peaks=peaks, splitting=splitting, g_bar=g_bar,
                         window=(start, stop), smoothing=smoothing)


@dataclass
class PFallDistribution:
    g: np.ndarray
    theta: np.ndarray
    edges: np.ndarray
    density: np.ndarray
    trials: int

    @property
    def triggers(self) -> int:
        return int(self.g.size)


def _trigger_window_coupling(record: TrajectoryRecord, window: float, k_phi_R: float
                             ) -> Tuple[float, float]:
    mask = (record.t > record.trigger_time - window) & (record.t <= record.trigger_time)
    if not np.any(mask):
        return math.nan, math.nan
    g = float(np.mean(record.g[mask]))
    theta = float(k_phi_R * np.mean(record.phi[mask]))
    return g, theta


def p_fall_distribution(config, records: Optional[Sequence[TrajectoryRecord]] = None,
                        n_jobs: int = 1, bins: int = 40) -> PFallDistribution:
    """Couplings seen by the trigger for atoms falling straight through the mode.

    Each triggered p-fall trajectory contributes the coupling averaged over
    the trigger counting window before its trigger.
    """
    if records is None:
        count = config.numerics.trajectories
        records = Parallel(n_jobs=n_jobs)(
            delayed(run_transit)(config, index, 'p-fall') for index in range(count))
    trials = len(records)
    k_phi_R = config.k_phi * config.toroid.ring_radius
    samples = [_trigger_window_coupling(r, config.detection.window, k_phi_R)
               for r in records if r.triggered]
    samples = [s for s in samples if math.isfinite(s[0])]
    g = np.array([s[0] for s in samples])
    theta = np.array([s[1] for s in samples])
    edges = np.linspace(0.0, config.mode.g_max, bins + 1)
    if g.size:
        density, _ = np.histogram(g, bins=edges, density=True)
    else:
        density = np.zeros(bins)
    logger.info("Built p_fall(g)", extra={'trials': trials, 'triggers': int(g.size)})
    return PFallDistribution(g=g, theta=theta, edges=edges, density=density, trials=trials)


@dataclass
class FallSpectra:
    detunings: np.ndarray
    T: np.ndarray
    R: np.ndarray
    peaks: np.ndarray
    splitting: float


def p_fall_spectra(distribution: PFallDistribution, config, detunings: np.ndarray,
                   peak_source: str = 'R') -> FallSpectra:
    """Fixed-g steady-state spectra averaged over the p_fall samples."""
    if distribution.triggers == 0:
        raise EnsembleError("p_fall distribution is empty")
    cavity = config.cavity
    detunings = np.asarray(detunings, dtype=float)
    g = distribution.g[:, None]
    theta = distribution.theta[:, None]
    _, _, _, t, r = linear_response(g, theta, detunings[None, :], 0.0, config.atom.gamma_0,
                                    cavity.Delta_ca, cavity.kappa_i, cavity.kappa_ex, cavity.h)
    T = np.mean(np.abs(t) ** 2, axis=0)
    R = np.mean(np.abs(r) ** 2, axis=0)
    source = R if peak_source == 'R' else T
    peaks, splitting = spectrum_peaks(detunings, source, dips=peak_source == 'T', smoothing=0)
    return FallSpectra(detunings=detunings, T=T, R=R, peaks=peaks, splitting=splitting)


@dataclass
class Histogram:
    edges: np.ndarray
    density: np.ndarray
    count: int

    @property
    def mass(self) -> float:
        return float(np.sum(self.density * np.diff(self.edges)))

    @property
    def mode(self) -> float:
        if self.count == 0:
            return math.nan
        k = int(np.argmax(self.density))
        return float(0.5 * (self.edges[k] + self.edges[k + 1]))


def trajectory_class(record: TrajectoryRecord) -> str:
    """Class I for crashing trajectories, class II for the rest."""
    return 'I' if record.fate == 'crashed' else 'II'


def histogram_edges(config, bins: int = 60) -> Dict[str, np.ndarray]:
    """Fixed edges so histograms from separate runs can be combined."""
    d_max = config.cloud.transverse_extent
    shift_min = float(SurfaceModel.from_config(config).shift(HISTOGRAM_SHIFT_DISTANCE))
    return {'d': np.linspace(0.0, d_max, bins + 1),
            'g': np.linspace(0.0, config.mode.g_max, bins + 1),
            'delta_a': np.linspace(shift_min, 0.0, bins + 1)}


def histograms(records: Sequence[TrajectoryRecord], window: Tuple[float, float],
               edges: Mapping[str, np.ndarray]) -> Dict[str, Dict[str, Histogram]]:
    """Normalized p_i(d), p_i(g), p_i(delta_a) of window-averaged values per class.

    Returns:
        Mapping class -> quantity -> Histogram; an empty class has zero density
    """
    start, stop = window
    values = {c: {q: [] for q in QUANTITIES} for c in CLASSES}
    for record in records:
        if not record.triggered:
            continue
        means = {q: record.window_mean(q, start, stop) for q in QUANTITIES}
        if not all(math.isfinite(v) for v in means.values()):
            continue
        cls = trajectory_class(record)
        for q in QUANTITIES:
            values[cls][q].append(means[q])

    result = {}
    for cls in CLASSES:
        result[cls] = {}
        for q in QUANTITIES:
            data = np.clip(np.asarray(values[cls][q]), edges[q][0], edges[q][-1])
            if data.size:
                density, _ = np.histogram(data, bins=edges[q], density=True)
            else:
                density = np.zeros(len(edges[q]) - 1)
            result[cls][q] = Histogram(edges=np.asarray(edges[q]), density=density,
                                       count=int(data.size))
        if result[cls]['d'].count == 0:
            logger.warning("Empty trajectory class", extra={'class': cls})
    return result


@dataclass
class CorrelationAccumulator:
    """Running sums for C12 and the product of mean counts."""
    bin_ticks: int
    n_bins: int
    max_lag: int
    first: Sequence[int] = FORWARD[:1]
    second: Sequence[int] = FORWARD[1:]
    sum_1: np.ndarray = None
    sum_2: np.ndarray = None
    sum_12: np.ndarray = None
    sumsq_12: np.ndarray = None
    triggers: int = 0

    def __post_init__(self):
        if self.sum_1 is None:
            self.sum_1 = np.zeros(self.n_bins)
            self.sum_2 = np.zeros(self.n_bins)
            self.sum_12 = np.zeros(2 * self.max_lag + 1)
            self.sumsq_12 = np.zeros(2 * self.max_lag + 1)

    def _lagged(self, c1: np.ndarray, c2: np.ndarray) -> np.ndarray:
        full = np.correlate(c2, c1, mode='full')
        center = self.n_bins - 1
        return full[center - self.max_lag:center + self.max_lag + 1]

    def add(self, record: PhotonRecord) -> None:
        c1 = _relative_bins(record, self.first, self.bin_ticks, self.n_bins)
        c2 = _relative_bins(record, self.second, self.bin_ticks, self.n_bins)
        product = self._lagged(c1, c2)
        self.sum_1 += c1
        self.sum_2 += c2
        self.sum_12 += product
        self.sumsq_12 += product * product
        self.triggers += 1

    def merge(self, other: 'CorrelationAccumulator') -> 'CorrelationAccumulator':
        if (other.bin_ticks, other.n_bins, other.max_lag) != (self.bin_ticks, self.n_bins,
                                                              self.max_lag):
            raise ValueError("Cannot merge correlations with different binning")
        return CorrelationAccumulator(self.bin_ticks, self.n_bins, self.max_lag, self.first,
                                      self.second, self.sum_1 + other.sum_1,
                                      self.sum_2 + other.sum_2, self.sum_12 + other.sum_12,
                                      self.sumsq_12 + other.sumsq_12,
                                      self.triggers + other.triggers)

    def product_of_means(self) -> np.ndarray:
        return self._lagged(self.sum_1 / self.triggers, self.sum_2 / self.triggers)


@dataclass
class CorrelationResult:
    tau: np.ndarray
    C12: np.ndarray
    C12_bar: np.ndarray
    stderr: np.ndarray
    triggers: int

    @property
    def significance(self) -> np.ndarray:
        """(C12 - C12_bar) in units of the standard error."""
        with np.errstate(divide='ignore', invalid='ignore'):
            return (self.C12 - self.C12_bar) / self.stderr


def correlations(records: Sequence[PhotonRecord], bin_width: float, tau_max: float,
                 duration: float, accumulator: Optional[CorrelationAccumulator] = None
                 ) -> CorrelationResult:
    """Cross-correlation of the two forward detectors after each trigger.

    C12(tau) sums the per-trigger products C1(t_i) C2(t_i + tau) over bins in
    [0, duration) and averages over triggers; C12_bar uses the ensemble-mean
    counts instead.

    Raises:
        ValueError: If the bin width is not a multiple of the timestamp resolution
        EnsembleError: If there is no triggered record
    """
    triggered = _triggered(records)
    if accumulator is None:
        if not triggered:
            raise EnsembleError("No triggered records to correlate")
        resolution = triggered[0].resolution
        bin_ticks = _bin_ticks(bin_width, resolution)
        n_bins = int(round(duration / bin_width))
        max_lag = min(int(round(tau_max / bin_width)), n_bins - 1)
        accumulator = CorrelationAccumulator(bin_ticks, n_bins, max_lag)
    for record in triggered:
        accumulator.add(record)
    n = accumulator.triggers
    if n == 0:
        raise EnsembleError("No triggered records to correlate")
    C12 = accumulator.sum_12 / n
    variance = np.maximum(accumulator.sumsq_12 / n - C12 ** 2, 0.0)
    tau = np.arange(-accumulator.max_lag, accumulator.max_lag + 1) * bin_width
    logger.info("Computed detector cross-correlation", extra={'triggers': n, 'lags': tau.size})
    return CorrelationResult(tau=tau, C12=C12, C12_bar=accumulator.product_of_means(),
                             stderr=np.sqrt(variance / n), triggers=n)


@dataclass
class FortStatistics:
    capture_fraction: float
    captured: int
    triggers: int
    residence_edges: np.ndarray
    residence_density: np.ndarray
    mean_phi_rate: float
    phi_rate_stderr: float


def fort_statistics(records: Sequence[TrajectoryRecord], capture_time: float,
                    horizon: float, bins: int = 20) -> FortStatistics:
    """Capture fraction and residence times of triggered atoms after the trap turns on.

    An atom counts as captured when it is still alive ``capture_time`` after
    the switch. The azimuthal rate is the mean unwrapped dphi/dt of captured
    atoms after the switch.
    """
    triggered = [r for r in records if r.triggered and r.switch_time is not None]
    residence = np.array([r.fate_time - r.switch_time for r in triggered])
    captured = residence >= capture_time if residence.size else np.zeros(0, dtype=bool)
    edges = np.linspace(0.0, horizon, bins + 1)
    if residence.size:
        density, _ = np.histogram(np.clip(residence, 0.0, horizon), bins=edges, density=True)
    else:
        density = np.zeros(bins)

    rates = []
    for record, is_captured in zip(triggered, captured):
        if not is_captured:
            continue
        mask = record.t > record.switch_time
        if np.count_nonzero(mask) < 2:
            continue
        phi = np.unwrap(record.phi[mask])
        t = record.t[mask]
        rates.append((phi[-1] - phi[0]) / (t[-1] - t[0]))
    rates = np.asarray(rates)
    mean_rate = float(rates.mean()) if rates.size else 0.0
    stderr = float(rates.std() / math.sqrt(rates.size)) if rates.size > 1 else math.nan
    fraction = float(captured.mean()) if captured.size else 0.0
    logger.info("Trap statistics", extra={'triggers': len(triggered),
                                          'captured': int(captured.sum()),
                                          'fraction': fraction})
    return FortStatistics(capture_fraction=fraction, captured=int(captured.sum()),
                          triggers=len(triggered), residence_edges=edges,
                          residence_density=density, mean_phi_rate=mean_rate,
                          phi_rate_stderr=stderr)


@dataclass
class EnsembleResult:
    """Aggregated observables of one transit run."""
    trace: TraceResult
    fit: Optional[FitResult]
    histograms: Dict[str, Dict[str, Histogram]]
    trials: int
    fates: Dict[str, int] = field(default_factory=dict)
    correlations: Optional[CorrelationResult] = None
    spectra: Optional[SpectraResult] = None


def transit_ensemble(records: Sequence[TrajectoryRecord], config, unit_rate: float
                     ) -> EnsembleResult:
    """Trace, fit and class histograms of a set of transits.

    A failed fit is logged and leaves ``fit`` empty.
    """
    numerics, detection = config.numerics, config.detection
    photons = [r.photons for r in records if r.triggered]
    trace = average_trace(photons, numerics.trace_bin, detection.record_duration, unit_rate)
    fit = None
    try:
        fit = fit_exp_gauss(trace.t, trace.T_B, trace.stderr)
    except FitError as e:
        logger.warning("Trace fit failed", extra={'error': str(e)})
    hist = histograms(records, (0.0, numerics.histogram_window), histogram_edges(config))
    fates = {}
    for record in records:
        if record.triggered:
            fates[record.fate] = fates.get(record.fate, 0) + 1
    return EnsembleResult(trace=trace, fit=fit, histograms=hist, trials=len(records), fates=fates)
