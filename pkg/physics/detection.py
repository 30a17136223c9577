"""Photodetection and the real-time threshold trigger.

Photon events are drawn by thinning a homogeneous Poisson process against
the maximum rate of a piecewise-constant flux schedule. The trigger counts
forward-channel events inside a sliding window evaluated on the clock grid.
"""
import logging
import math
from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple

import numpy as np
import scipy.constants as const
from scipy.interpolate import RegularGridInterpolator

logger = logging.getLogger(__name__)

CHANNELS = ('D1', 'D2', 'D1r', 'D2r')
FORWARD = (0, 1)
REFLECTED = (2, 3)
EPOCHS = ('pre', 'post')


@dataclass(frozen=True)
class DriveSchedule:
    """Probe power and detuning, switched once at ``switch_time``."""
    P_before: float
    Delta_before: float
    P_after: float
    Delta_after: float
    switch_time: Optional[float] = None

    @classmethod
    def constant(cls, P_in: float, Delta_pa: float) -> 'DriveSchedule':
        return cls(P_in, Delta_pa, P_in, Delta_pa, None)

    def at(self, t: float) -> Tuple[float, float]:
        if self.switch_time is not None and t > self.switch_time:
            return self.P_after, self.Delta_after
        return self.P_before, self.Delta_before

    def arrays(self, t) -> Tuple[np.ndarray, np.ndarray]:
        t = np.asarray(t, dtype=float)
        if self.switch_time is None:
            after = np.zeros(t.shape, dtype=bool)
        else:
            after = t > self.switch_time
        return (np.where(after, self.P_after, self.P_before),
                np.where(after, self.Delta_after, self.Delta_before))


@dataclass(frozen=True)
class TriggerConfig:
    """Sliding-window threshold trigger and the probe settings it switches between."""
    window: float
    threshold: int
    clock_period: float
    switch_latency: float
    P_before: float
    Delta_before: float
    P_after: float
    Delta_after: float

    def __post_init__(self):
        if self.threshold < 1:
            raise ValueError("Trigger threshold must be at least 1")
        ticks = self.window / self.clock_period
        if abs(ticks - round(ticks)) > 1e-9 * max(ticks, 1.0):
            raise ValueError("Trigger window must be an integer multiple of the clock period")

    @classmethod
    def from_config(cls, config) -> 'TriggerConfig':
        det, probe = config.detection, config.probe
        return cls(window=det.window, threshold=det.threshold, clock_period=det.clock_period,
                   switch_latency=probe.switch_latency,
                   P_before=probe.P_in_before, Delta_before=probe.Delta_pa_before,
                   P_after=probe.P_in_after, Delta_after=probe.Delta_pa_after)


@dataclass(frozen=True)
class DetectorModel:
    efficiency: float
    background_rate: float
    resolution: float
    omega: float

    @classmethod
    def from_config(cls, config) -> 'DetectorModel':
        det = config.detection
        return cls(efficiency=det.efficiency, background_rate=det.background_rate,
                   resolution=det.timestamp_resolution, omega=config.atom.omega)

    def photon_rate(self, power):
        """Detected rate per detector of a 50/50 pair."""
        return self.efficiency * np.asarray(power) / (2.0 * const.hbar * self.omega)


@dataclass
class FluxSchedule:
    """Piecewise-constant transmitted/reflected power on [edges[k], edges[k+1])."""
    edges: np.ndarray
    P_T: np.ndarray
    P_R: np.ndarray
    coupling: Optional[np.ndarray] = None

    def __post_init__(self):
        self.edges = np.asarray(self.edges, dtype=float)
        self.P_T = np.asarray(self.P_T, dtype=float)
        self.P_R = np.asarray(self.P_R, dtype=float)
        if self.edges.size != self.P_T.size + 1 or self.P_T.size != self.P_R.size:
            raise ValueError("Flux schedule needs one more edge than intervals")
        if np.any(self.P_T < 0) or np.any(self.P_R < 0):
            raise ValueError("Flux schedule must be non-negative")
        if np.any(np.diff(self.edges) <= 0):
            raise ValueError("Flux schedule edges must increase")

    @property
    def start(self) -> float:
        return float(self.edges[0])

    @property
    def stop(self) -> float:
        return float(self.edges[-1])

    def interval(self, t) -> np.ndarray:
        idx = np.searchsorted(self.edges, t, side='right') - 1
        return np.clip(idx, 0, self.P_T.size - 1)

    @classmethod
    def constant(cls, start: float, stop: float, P_T: float, P_R: float = 0.0) -> 'FluxSchedule':
        return cls(np.array([start, stop]), np.array([P_T]), np.array([P_R]))


@dataclass
class ConditioningTable:
    """Normalized g2 of the transmitted field on a (coupling, delay) grid."""
    g_grid: np.ndarray
    tau_grid: np.ndarray
    values: np.ndarray
    _interp: RegularGridInterpolator = field(init=False, repr=False)

    def __post_init__(self):
        self._interp = RegularGridInterpolator((self.g_grid, self.tau_grid), self.values,
                                               bounds_error=False, fill_value=None)

    @property
    def tau_max(self) -> float:
        return float(self.tau_grid[-1])

    @property
    def bound(self) -> float:
        return max(1.0, float(np.max(self.values)))

    def factor(self, g: float, delay: float) -> float:
        if delay >= self.tau_max:
            return 1.0
        g = min(max(g, self.g_grid[0]), self.g_grid[-1])
        return max(0.0, float(self._interp([[g, delay]])[0]))


@dataclass
class PhotonRecord:
    """Time-ordered detection events.

    Timestamps are stored as integer multiples of ``resolution``.
    """
    channels: np.ndarray
    ticks: np.ndarray
    epochs: np.ndarray
    resolution: float
    trigger_time: Optional[float] = None

    def __post_init__(self):
        self.channels = np.asarray(self.channels, dtype=np.int8)
        self.ticks = np.asarray(self.ticks, dtype=np.int64)
        self.epochs = np.asarray(self.epochs, dtype=np.int8)
        order = np.lexsort((self.channels, self.ticks))
        self.channels, self.ticks, self.epochs = \
            self.channels[order], self.ticks[order], self.epochs[order]

    @classmethod
    def empty(cls, resolution: float) -> 'PhotonRecord':
        return cls(np.zeros(0), np.zeros(0), np.zeros(0), resolution)

    def __len__(self) -> int:
        return int(self.ticks.size)

    @property
    def timestamps(self) -> np.ndarray:
        return self.ticks * self.resolution

    def select(self, channels: Sequence[int] = FORWARD, epoch: Optional[int] = None) -> np.ndarray:
        """Sorted timestamps of the given channels (and epoch)."""
        mask = np.isin(self.channels, channels)
        if epoch is not None:
            mask &= self.epochs == epoch
        return self.timestamps[mask]

    def channel(self, name: str) -> np.ndarray:
        return self.select((CHANNELS.index(name),))

    def truncate(self, stop: float) -> 'PhotonRecord':
        keep = self.timestamps <= stop
        return PhotonRecord(self.channels[keep], self.ticks[keep], self.epochs[keep],
                            self.resolution, self.trigger_time)

    def merge(self, other: 'PhotonRecord') -> 'PhotonRecord':
        if other.resolution != self.resolution:
            raise ValueError("Cannot merge records of different resolution")
        return PhotonRecord(np.concatenate([self.channels, other.channels]),
                            np.concatenate([self.ticks, other.ticks]),
                            np.concatenate([self.epochs, other.epochs]),
                            self.resolution, other.trigger_time or self.trigger_time)

    def rows(self) -> List[Tuple[str, float, str]]:
        """Export rows (channel, timestamp_ns, epoch)."""
        return [(CHANNELS[c], tick * self.resolution * 1e9, EPOCHS[e])
                for c, tick, e in zip(self.channels, self.ticks, self.epochs)]


def _thin(rates: np.ndarray, schedule: FluxSchedule, rng: np.random.Generator) -> np.ndarray:
    """Event times of an inhomogeneous Poisson process with piecewise-constant rates."""
    bound = float(np.max(rates)) if rates.size else 0.0
    duration = schedule.stop - schedule.start
    if bound <= 0.0 or duration <= 0.0:
        return np.zeros(0)
    n = rng.poisson(bound * duration)
    candidates = np.sort(rng.uniform(schedule.start, schedule.stop, size=n))
    accept = rng.uniform(0.0, 1.0, size=n) * bound < rates[schedule.interval(candidates)]
    return candidates[accept]


def _conditioned_forward(schedule: FluxSchedule, detector: DetectorModel,
                         table: ConditioningTable, rng: np.random.Generator) -> np.ndarray:
    """Forward signal events whose rate is modulated by g2 after each detection."""
    signal = 2.0 * detector.photon_rate(schedule.P_T)
    bound = float(np.max(signal)) * table.bound if signal.size else 0.0
    duration = schedule.stop - schedule.start
    if bound <= 0.0:
        return np.zeros(0)
    n = rng.poisson(bound * duration)
    candidates = np.sort(rng.uniform(schedule.start, schedule.stop, size=n))
    u = rng.uniform(0.0, 1.0, size=n)
    coupling = schedule.coupling if schedule.coupling is not None else np.zeros(signal.size)
    intervals = schedule.interval(candidates)
    accepted = []
    last_time, last_g = None, 0.0
    for t, k, draw in zip(candidates, intervals, u):
        rate = signal[k]
        if last_time is not None:
            rate *= table.factor(last_g, t - last_time)
        if draw * bound < rate:
            accepted.append(t)
            last_time, last_g = t, float(coupling[k])
    return np.asarray(accepted)


def generate_counts(schedule: FluxSchedule, detector: DetectorModel, rng: np.random.Generator,
                    epoch: int = 0, conditioning: Optional[ConditioningTable] = None,
                    not_before: Optional[float] = None) -> PhotonRecord:
    """Draw detection events for the four detectors over the schedule span.

    Each forward (reflected) detector sees half of the transmitted (reflected)
    power times the efficiency, plus a flat background.

    Args:
        schedule: Transmitted/reflected power over time
        detector: Efficiency, background and timestamp resolution
        rng: Random generator; consumed in a fixed channel order
        epoch: Label for all events (0 pre-trigger, 1 post-trigger)
        conditioning: Optional g2 table for quantum-conditioned forward events
        not_before: Quantized timestamps are raised to at least this time

    Returns:
        PhotonRecord with quantized timestamps
    """
    times, channels = [], []
    background = np.full(schedule.P_T.size, detector.background_rate)
    if conditioning is None:
        forward_rates = detector.photon_rate(schedule.P_T) + background
        for c in FORWARD:
            events = _thin(forward_rates, schedule, rng)
            times.append(events)
            channels.append(np.full(events.size, c))
    else:
        signal = _conditioned_forward(schedule, detector, conditioning, rng)
        split = rng.uniform(0.0, 1.0, size=signal.size) < 0.5
        for c, mask in zip(FORWARD, (split, ~split)):
            dark = _thin(background, schedule, rng)
            events = np.concatenate([signal[mask], dark])
            times.append(events)
            channels.append(np.full(events.size, c))
    reflected_rates = detector.photon_rate(schedule.P_R) + background
    for c in REFLECTED:
        events = _thin(reflected_rates, schedule, rng)
        times.append(events)
        channels.append(np.full(events.size, c))

    all_times = np.concatenate(times) if times else np.zeros(0)
    ticks = np.floor(all_times / detector.resolution + 1e-9).astype(np.int64)
    if not_before is not None:
        ticks = np.maximum(ticks, int(math.ceil(not_before / detector.resolution - 1e-9)))
    return PhotonRecord(np.concatenate(channels), ticks, np.full(ticks.size, epoch),
                        detector.resolution)


def run_trigger(record: PhotonRecord, cfg: TriggerConfig, start: float = 0.0,
                stop: Optional[float] = None) -> Optional[float]:
    """Earliest clock tick whose trailing window holds at least the threshold.

    The window at tick t_k covers events in (t_k - window, t_k]. Only the
    forward detectors are counted.

    Returns:
        Trigger time in s, or None if the threshold is never reached
    """
    times = record.select(FORWARD)
    times = times[times >= start]
    if stop is not None:
        times = times[times <= stop]
    if times.size < cfg.threshold:
        return None
    period = cfg.clock_period
    ticks = np.unique(np.ceil(times / period - 1e-9))
    tick_times = ticks * period
    upper = np.searchsorted(times, tick_times + 1e-15, side='right')
    lower = np.searchsorted(times, tick_times - cfg.window + 1e-15, side='right')
    hits = np.flatnonzero(upper - lower >= cfg.threshold)
    if hits.size == 0:
        return None
    return float(tick_times[hits[0]])


def apply_switch(trigger_time: Optional[float], cfg: TriggerConfig,
                 Delta_after: Optional[float] = None) -> DriveSchedule:
    """Drive schedule switched to the post-trigger settings at trigger + latency."""
    if trigger_time is None:
        return DriveSchedule.constant(cfg.P_before, cfg.Delta_before)
    return DriveSchedule(P_before=cfg.P_before, Delta_before=cfg.Delta_before,
                         P_after=cfg.P_after,
                         Delta_after=cfg.Delta_after if Delta_after is None else Delta_after,
                         switch_time=trigger_time + cfg.switch_latency)


def spectroscopy_schedules(trigger_time: Optional[float], cfg: TriggerConfig,
                           detunings: Sequence[float]) -> List[DriveSchedule]:
    """One switched schedule per post-trigger probe detuning."""
    return [apply_switch(trigger_time, cfg, Delta_after=float(delta)) for delta in detunings]


@dataclass
class FalseTriggerResult:
    probability: float
    stderr: float
    trials: int
    triggers: int


def false_trigger_probability(detector: DetectorModel, cfg: TriggerConfig,
                              drop_window: float, trials: int,
                              rng: np.random.Generator) -> FalseTriggerResult:
    """Trigger probability per drop window for background-only records."""
    if trials < 1:
        raise ValueError("Need at least one trial")
    schedule = FluxSchedule.constant(0.0, drop_window, 0.0, 0.0)
    triggers = 0
    for _ in range(trials):
        record = generate_counts(schedule, detector, rng)
        if run_trigger(record, cfg) is not None:
            triggers += 1
    p = triggers / trials
    stderr = math.sqrt(max(p * (1.0 - p), 1.0 / trials) / trials)
    logger.info("False-trigger study finished",
                extra={'trials': trials, 'triggers': triggers, 'probability': p})
    return FalseTriggerResult(probability=p, stderr=stderr, trials=trials, triggers=triggers)
