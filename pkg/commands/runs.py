"""Subcommands, one per reproduced observable.

Each ``cmd_*`` takes a RunManifest and the RunExecutor, loads its
configuration, runs the simulation and returns the paths it wrote.
"""
import logging
import math
from pathlib import Path
from typing import Any, Callable, Dict, List, NamedTuple, Optional, Sequence

import numpy as np
import scipy.constants as const

from commands.executor import RunError, RunExecutor, RunManifest
from commands.output import (read_table, run_metadata, write_photons, write_table,
                             write_trajectory)
from config import UNIT_FACTORS, PhysicsConfig, create_config, to_human, to_si
from physics.cqed import (CavityAtomParams, effective_potential_curve, eigenvalues,
                          transmission_spectrum)
from physics.detection import (ConditioningTable, DetectorModel, FluxSchedule, PhotonRecord,
                               TriggerConfig, false_trigger_probability, generate_counts)
from physics.ensemble import (CLASSES, FIT_PARAMETERS, assemble_spectra, correlations,
                              fort_statistics, histogram_edges, p_fall_distribution,
                              p_fall_spectra, transit_ensemble)
from physics.mode import ModeField
from physics.quantum import TruncatedSpace, ensemble_g2, g2_table, g2_transmitted
from physics.surface import SurfaceModel, modified_decay
from physics.trajectory import FortField, TrajectoryRecord, TransitModel, run_transit

logger = logging.getLogger(__name__)

MHZ = UNIT_FACTORS['MHz']

# Offsets of the auxiliary random streams, kept apart from trajectory indices.
REFERENCE_STREAM = 1_000_001
FALSE_TRIGGER_STREAM = 1_000_002

# Far-detuned normalization run, in units of the total cavity decay rate.
NORMALIZATION_DETUNING_KAPPAS = 20.0

SPECTRA_HALF_SPAN_MHZ = 100.0
SPECTRA_STEP_MHZ = 10.0
EIGEN_COUPLING_MHZ = 40.0
EIGEN_SPAN_MHZ = 150.0
POTENTIAL_RANGE_NM = (5.0, 500.0)


def load_run_config(manifest: RunManifest) -> PhysicsConfig:
    return create_config(manifest.config_path, manifest.config_overrides())


def unit_rate(config: PhysicsConfig) -> float:
    """Forward detection rate of both detectors at unit post-trigger transmission."""
    detector = DetectorModel.from_config(config)
    return float(2.0 * detector.photon_rate(config.probe.P_in_after))


def _run_chunk(indices: Sequence[int], config: PhysicsConfig, variant: str,
               Delta_after: Optional[float], conditioning: Optional[ConditioningTable],
               keep_below: int) -> List[TrajectoryRecord]:
    model = TransitModel(config, variant)
    return [run_transit(config, index, variant, model=model, Delta_after=Delta_after,
                        conditioning=conditioning, keep_path=index < keep_below)
            for index in indices]


def simulate(executor: RunExecutor, config: PhysicsConfig, variant: str = 'full',
             Delta_after: Optional[float] = None,
             conditioning: Optional[ConditioningTable] = None) -> List[TrajectoryRecord]:
    """Run the configured number of transits, in index order."""
    indices = list(range(config.numerics.trajectories))
    chunks = executor.chunk(indices)
    results = executor.map(_run_chunk, chunks, config, variant, Delta_after, conditioning,
                           config.numerics.dump_count)
    records = [record for chunk in results for record in chunk]
    triggered = sum(1 for r in records if r.triggered)
    logger.info("Transits simulated", extra={'variant': variant, 'trajectories': len(records),
                                             'triggers': triggered})
    return records


def conditioning_table(config: PhysicsConfig) -> ConditioningTable:
    """Normalized g2 of the post-trigger probe on a coupling and delay grid."""
    quantum = config.quantum
    params = CavityAtomParams.from_config(config)
    g_grid = np.linspace(0.0, config.mode.g_max, quantum.g_grid_points)
    taus = np.arange(0.0, quantum.tau_max + 0.5 * quantum.tau_step, quantum.tau_step)
    values = g2_table(params, TruncatedSpace.build(), g_grid, taus, quantum.weak_drive_factor)
    logger.info("Computed conditioning table", extra={'couplings': g_grid.size,
                                                      'delays': taus.size})
    return ConditioningTable(g_grid=g_grid, tau_grid=taus, values=values)


def _dump_trajectories(out: Path, records: Sequence[TrajectoryRecord], count: int,
                       metadata) -> List[Path]:
    """Sampled paths of the first `count` trajectories, triggered or not."""
    if not count:
        return []
    directory = out / 'dumps'
    directory.mkdir(exist_ok=True)
    return [write_trajectory(directory / f"trajectory_{record.index:05d}.txt", record, metadata)
            for record in records if record.index < count]


def _write_transit_outputs(out: Path, config: PhysicsConfig, records: Sequence[TrajectoryRecord],
                           command: str, variant: str) -> List[Path]:
    result = transit_ensemble(records, config, unit_rate(config))
    metadata = run_metadata(command, config, N=len(records), triggers=result.trace.triggers,
                            variant=variant, fates=result.fates)
    paths = [write_table(out / 'trace.txt',
                         {'t_us': result.trace.t * 1e6, 'T': result.trace.T,
                          'T_B': result.trace.T_B, 'stderr': result.trace.stderr},
                         {**metadata, 'B': result.trace.B,
                          'bin_ns': config.numerics.trace_bin * 1e9})]

    units = {'tau_I': 1e6, 'tau_II': 1e6}
    names = [f"{p}_us" if p in units else p for p in FIT_PARAMETERS]
    if result.fit is not None:
        values = [result.fit.params[p] * units.get(p, 1.0) for p in FIT_PARAMETERS]
        errors = [result.fit.errors[p] * units.get(p, 1.0) for p in FIT_PARAMETERS]
        fit_meta = {'fit': 'ok', 'chi2': result.fit.chi2, 'starts': result.fit.starts,
                    'converged': result.fit.converged, 'rows': 'value error'}
    else:
        values = errors = [math.nan] * len(FIT_PARAMETERS)
        fit_meta = {'fit': 'failed', 'rows': 'value error'}
    paths.append(write_table(out / 'fit.txt',
                             {name: [v, e] for name, v, e in zip(names, values, errors)},
                             {**metadata, **fit_meta}))

    window_ns = config.numerics.histogram_window * 1e9
    for cls in CLASSES:
        hist = result.histograms[cls]
        centers = {q: 0.5 * (h.edges[1:] + h.edges[:-1]) for q, h in hist.items()}
        paths.append(write_table(
            out / f"hist_{cls}.txt",
            {'d_nm': centers['d'] * 1e9, 'p_d': hist['d'].density / 1e9,
             'g_MHz': centers['g'] / MHZ, 'p_g': hist['g'].density * MHZ,
             'delta_a_MHz': centers['delta_a'] / MHZ,
             'p_delta_a': hist['delta_a'].density * MHZ},
            {**metadata, 'class': cls, 'count': hist['d'].count, 'window_ns': f"0-{window_ns:g}",
             'mode_d_nm': hist['d'].mode * 1e9, 'mode_g_MHz': hist['g'].mode / MHZ}))

    triggered = [r.photons for r in records if r.triggered]
    paths.append(write_photons(out / 'photons.txt', triggered, metadata))
    paths.extend(_dump_trajectories(out, records, config.numerics.dump_count, metadata))
    if result.fit is not None:
        logger.info("Transit time constants",
                    extra={'tau_I_us': result.fit.params['tau_I'] * 1e6,
                           'tau_II_us': result.fit.params['tau_II'] * 1e6})
    return paths


def cmd_transits(manifest: RunManifest, executor: RunExecutor) -> List[Path]:
    """Post-trigger trace, its two-timescale fit, class histograms and photon records."""
    config = load_run_config(manifest)
    out = Path(manifest.output_dir)
    conditioning = conditioning_table(config) if config.detection.quantum_conditioning else None
    records = simulate(executor, config, manifest.variant, conditioning=conditioning)
    return _write_transit_outputs(out, config, records, 'transits', manifest.variant)


def spectra_detunings(manifest: RunManifest, config: PhysicsConfig) -> np.ndarray:
    """Probe detunings in rad/s from the options, or a sweep around the cavity."""
    values = manifest.options.get('detunings_MHz')
    if values is None:
        center = to_human(config.cavity.Delta_ca, 'MHz')
        values = center + np.arange(-SPECTRA_HALF_SPAN_MHZ,
                                    SPECTRA_HALF_SPAN_MHZ + 0.5 * SPECTRA_STEP_MHZ,
                                    SPECTRA_STEP_MHZ)
    values = np.atleast_1d(np.asarray(values, dtype=float))
    if values.size == 0:
        raise RunError("Detuning list must not be empty")
    return np.array([to_si(v, 'MHz') for v in values])


def reference_records(config: PhysicsConfig, Delta_pa: float, count: int, stream: int
                      ) -> List[PhotonRecord]:
    """Empty-cavity photon records over the analysis window, with trigger time zero."""
    rng = np.random.default_rng([config.numerics.seed, REFERENCE_STREAM, stream])
    detector = DetectorModel.from_config(config)
    P_in = config.probe.P_in_after
    params = CavityAtomParams.from_config(config, P_in=P_in, Delta_pa=Delta_pa)
    T, R = transmission_spectrum(params, np.array([Delta_pa]))
    schedule = FluxSchedule.constant(0.0, config.numerics.window_stop, float(T[0]) * P_in,
                                     float(R[0]) * P_in)
    records = []
    for _ in range(count):
        record = generate_counts(schedule, detector, rng, epoch=1)
        record.trigger_time = 0.0
        records.append(record)
    return records


def cmd_spectra(manifest: RunManifest, executor: RunExecutor) -> List[Path]:
    """Window-averaged spectra with and without atoms for one model variant."""
    config = load_run_config(manifest)
    out = Path(manifest.output_dir)
    detunings = spectra_detunings(manifest, config)
    variant = manifest.variant
    count = config.numerics.trajectories

    atom, reference = {}, {}
    first_records = None
    for k, delta in enumerate(detunings):
        records = simulate(executor, config, variant, Delta_after=float(delta))
        if first_records is None:
            first_records = records
        atom[float(delta)] = [r.photons for r in records if r.triggered]
        reference[float(delta)] = reference_records(config, float(delta), count, k)
    far = config.cavity.Delta_ca + NORMALIZATION_DETUNING_KAPPAS * config.cavity.kappa
    normalization = reference_records(config, far, count, len(detunings))

    window = (config.numerics.window_start, config.numerics.window_stop)
    result = assemble_spectra(atom, reference, normalization, window,
                              Delta_ca=config.cavity.Delta_ca)
    metadata = run_metadata('spectra', config, N=count, variant=variant,
                            window_ns=f"{window[0] * 1e9:g}-{window[1] * 1e9:g}",
                            splitting_MHz=result.splitting / MHZ, g_bar_MHz=result.g_bar / MHZ,
                            peaks_MHz=[round(p / MHZ, 3) for p in result.peaks],
                            smoothing_points=result.smoothing,
                            normalization_MHz=far / MHZ)
    paths = [write_table(out / f"spectra_{variant}.txt",
                         {'Delta_pa_MHz': result.detunings / MHZ, 'T_A': result.T_A,
                          'R_A': result.R_A, 'T_NA': result.T_NA, 'R_NA': result.R_NA,
                          'dT': result.dT, 'dR': result.dR, 'T_err': result.T_err,
                          'R_err': result.R_err, 'triggers': result.triggers}, metadata)]

    if variant == 'p-fall':
        distribution = p_fall_distribution(config, records=first_records)
        centers = 0.5 * (distribution.edges[1:] + distribution.edges[:-1])
        paths.append(write_table(out / 'p_fall.txt',
                                 {'g_MHz': centers / MHZ, 'p_g': distribution.density * MHZ},
                                 {**metadata, 'triggers': distribution.triggers}))
        if distribution.triggers:
            fine = np.linspace(detunings.min(), detunings.max(), 401)
            simple = p_fall_spectra(distribution, config, fine)
            paths.append(write_table(out / 'spectra_p_fall_model.txt',
                                     {'Delta_pa_MHz': simple.detunings / MHZ, 'T': simple.T,
                                      'R': simple.R},
                                     {**metadata, 'splitting_MHz': simple.splitting / MHZ}))
    logger.info("Spectra written", extra={'variant': variant, 'detunings': detunings.size,
                                          'splitting_MHz': result.splitting / MHZ})
    return paths


def cmd_correlations(manifest: RunManifest, executor: RunExecutor) -> List[Path]:
    """C12 and the product of mean counts after each trigger."""
    config = load_run_config(manifest)
    out = Path(manifest.output_dir)
    quantum_events = not manifest.options.get('classical', False)
    conditioning = conditioning_table(config) if quantum_events else None
    records = simulate(executor, config, manifest.variant, conditioning=conditioning)
    bin_width = manifest.options.get('bin_ns')
    bin_width = config.detection.timestamp_resolution if bin_width is None else bin_width * 1e-9
    result = correlations([r.photons for r in records if r.triggered], bin_width,
                          config.quantum.tau_max, config.detection.record_duration)
    metadata = run_metadata('correlations', config, N=len(records), triggers=result.triggers,
                            variant=manifest.variant, bin_ns=bin_width * 1e9,
                            conditioning='quantum' if quantum_events else 'classical')
    significance = result.significance
    return [write_table(out / 'correlations.txt',
                        {'tau_ns': result.tau * 1e9, 'C12': result.C12,
                         'C12_bar': result.C12_bar, 'stderr': result.stderr,
                         'significance': significance}, metadata)]


def _coupling_weights(manifest: RunManifest, executor: RunExecutor, config: PhysicsConfig):
    source = manifest.options.get('histogram')
    if source:
        table = read_table(Path(source))
        if 'g_MHz' not in table or 'p_g' not in table:
            raise RunError(f"Histogram file {source} needs g_MHz and p_g columns")
        return table['g_MHz'] * MHZ, table['p_g'], source
    records = simulate(executor, config, manifest.variant)
    stop = config.numerics.histogram_window
    g = [r.window_mean('g', 0.0, stop) for r in records if r.triggered]
    g = np.array([v for v in g if math.isfinite(v)])
    edges = histogram_edges(config)['g']
    counts, _ = np.histogram(g, bins=edges)
    return 0.5 * (edges[1:] + edges[:-1]), counts.astype(float), 'simulated'


def cmd_g2model(manifest: RunManifest, executor: RunExecutor) -> List[Path]:
    """Ensemble-averaged G2(tau) of the transmitted field over the coupling distribution."""
    config = load_run_config(manifest)
    out = Path(manifest.output_dir)
    quantum = config.quantum
    g_values, weights, source = _coupling_weights(manifest, executor, config)
    params = CavityAtomParams.from_config(config)
    space = TruncatedSpace.build()
    taus = np.arange(-quantum.tau_max, quantum.tau_max + 0.5 * quantum.tau_step, quantum.tau_step)
    curve = ensemble_g2(g_values, weights, params, space, taus, weighting=quantum.weighting,
                        scale_at=quantum.scale_at, weak_drive_factor=quantum.weak_drive_factor,
                        n_jobs=executor.workers)
    control = g2_transmitted(params, space, taus, quantum.weak_drive_factor)
    zero = float(np.interp(0.0, taus, curve.values))
    metadata = run_metadata('g2model', config, source=source, weighting=quantum.weighting,
                            g2_zero=zero, points=int(np.count_nonzero(weights)))
    return [write_table(out / 'g2_model.txt',
                        {'tau_ns': taus * 1e9, 'g2': curve.values, 'g2_empty': control.values},
                        metadata)]


def cmd_fort(manifest: RunManifest, executor: RunExecutor) -> List[Path]:
    """Trap capture statistics with the two-color trap switched on at the trigger."""
    config = load_run_config(manifest)
    if not config.fort.enabled:
        config = config.replace(['fort.enabled=true'])
    out = Path(manifest.output_dir)
    records = simulate(executor, config, manifest.variant)
    stats = fort_statistics(records, config.fort.capture_time, config.fort.horizon)
    fort = FortField.from_config(config)
    d_min, depth = fort.minimum()
    metadata = run_metadata('fort', config, N=len(records), triggers=stats.triggers,
                            captured=stats.captured, capture_fraction=stats.capture_fraction,
                            mean_phi_rate_rad_s=stats.mean_phi_rate,
                            phi_rate_stderr=stats.phi_rate_stderr,
                            trap_minimum_nm=d_min * 1e9,
                            trap_depth_mK=depth / const.k * 1e3)
    centers = 0.5 * (stats.residence_edges[1:] + stats.residence_edges[:-1])
    paths = [write_table(out / 'fort.txt', {'residence_us': centers * 1e6,
                                            'density': stats.residence_density / 1e6},
                         metadata)]
    d = np.linspace(config.surface.d_min, 1e-6, 500)
    paths.append(write_table(out / 'fort_profile.txt',
                             {'d_nm': d * 1e9, 'U_t_mK': fort.potential(d, 0.0) / const.k * 1e3},
                             metadata))
    paths.extend(_dump_trajectories(out, records, config.numerics.dump_count, metadata))
    return paths


def cmd_eigen(manifest: RunManifest, executor: RunExecutor) -> List[Path]:
    """Single-excitation eigenvalues over a cavity-atom detuning sweep."""
    config = load_run_config(manifest)
    out = Path(manifest.output_dir)
    g = to_si(manifest.options.get('g_MHz', EIGEN_COUPLING_MHZ), 'MHz')
    values = manifest.options.get('detunings_MHz')
    if values is None:
        values = np.linspace(-EIGEN_SPAN_MHZ, EIGEN_SPAN_MHZ, 301)
    sweep = np.asarray(values, dtype=float) * MHZ
    base = CavityAtomParams.from_config(config, g=g)
    rows = {'Delta_ca_MHz': [], 'Re_plus': [], 'Im_plus': [], 'Re_minus': [], 'Im_minus': [],
            'Re_zero': [], 'Im_zero': [], 'splitting_MHz': [], 'rabi_law_MHz': []}
    for delta in sweep:
        ev = eigenvalues(base.with_updates(Delta_ca=float(delta)))
        rows['Delta_ca_MHz'].append(delta / MHZ)
        for name, value in (('plus', ev.plus), ('minus', ev.minus), ('zero', ev.zero)):
            rows[f"Re_{name}"].append(value.real / MHZ)
            rows[f"Im_{name}"].append(value.imag / MHZ)
        rows['splitting_MHz'].append(ev.splitting / MHZ)
        rows['rabi_law_MHz'].append(math.sqrt(delta ** 2 + 4.0 * g ** 2) / MHZ)
    metadata = run_metadata('eigen', config, g_MHz=g / MHZ, units='MHz (rate/2pi)')
    return [write_table(out / 'eigen.txt', {k: np.asarray(v) for k, v in rows.items()}, metadata)]


def cmd_potentials(manifest: RunManifest, executor: RunExecutor) -> List[Path]:
    """Surface, dipole and trap potentials along the distance from the rim at z = 0."""
    config = load_run_config(manifest)
    out = Path(manifest.output_dir)
    lo, hi = POTENTIAL_RANGE_NM
    d = np.linspace(max(lo * 1e-9, config.surface.d_min), hi * 1e-9, 496)
    field = ModeField.from_config(config)
    surface = SurfaceModel.from_config(config)
    params = CavityAtomParams.from_config(config)
    curve = effective_potential_curve(params, field, surface, d,
                                      include_shift=bool(manifest.options.get('include_shift')))
    to_uK = 1e6 / const.k
    fort = FortField.from_config(config)
    metadata = run_metadata('potentials', config,
                            Delta_pa_MHz=params.Delta_pa / MHZ,
                            P_in_pW=to_human(config.probe.P_in_after, 'pW'))
    return [write_table(out / 'potentials.txt',
                        {'d_nm': d * 1e9, 'g_MHz': field.profile(d, 0.0) / MHZ,
                         'U_s_uK': curve.U_s * to_uK, 'U_d_uK': curve.U_d * to_uK,
                         'U_total_uK': (curve.U_s + curve.U_d) * to_uK,
                         'F_d_N': curve.F_d,
                         'delta_a_MHz': surface.shift(d) / MHZ,
                         'gamma_ratio': modified_decay(d, surface) / config.atom.gamma_0,
                         'U_t_uK': fort.potential(d, 0.0) * to_uK},
                        metadata)]


def cmd_false_triggers(manifest: RunManifest, executor: RunExecutor) -> List[Path]:
    """Trigger probability per drop window with background counts only."""
    config = load_run_config(manifest)
    out = Path(manifest.output_dir)
    rng = np.random.default_rng([config.numerics.seed, FALSE_TRIGGER_STREAM])
    result = false_trigger_probability(DetectorModel.from_config(config),
                                       TriggerConfig.from_config(config),
                                       config.detection.drop_window,
                                       config.numerics.trajectories, rng)
    metadata = run_metadata('false-triggers', config,
                            drop_window_us=config.detection.drop_window * 1e6,
                            background_rate_cps=config.detection.background_rate)
    return [write_table(out / 'false_triggers.txt',
                        {'probability': [result.probability], 'stderr': [result.stderr],
                         'trials': [result.trials], 'triggers': [result.triggers]}, metadata)]


def _detuned(mhz: float, after: Optional[float] = None) -> List[str]:
    return [f"cavity.Delta_ca_MHz={mhz}", f"probe.Delta_pa_before_MHz={mhz}",
            f"probe.Delta_pa_after_MHz={mhz if after is None else after}"]


class ReproduceStep(NamedTuple):
    """One step of reproduce-all: its directory, subcommand, overrides, variant and options."""
    name: str
    command: str
    overrides: List[str]
    variant: Optional[str] = None
    options: Optional[Dict[str, Any]] = None


REPRODUCE_STEPS = (
    ReproduceStep('potentials', 'potentials', []),
    ReproduceStep('eigen', 'eigen', []),
    ReproduceStep('eigen-anticrossing', 'eigen', ['cavity.h_MHz=10'],
                  options={'g_MHz': EIGEN_COUPLING_MHZ}),
    ReproduceStep('transits-resonant', 'transits', _detuned(0.0)),
    ReproduceStep('transits-red', 'transits', _detuned(-40.0)),
    ReproduceStep('transits-blue', 'transits', _detuned(40.0)),
    ReproduceStep('transits-red-no-forces', 'transits', _detuned(-40.0), 'no-forces'),
    ReproduceStep('transits-blue-no-forces', 'transits', _detuned(40.0), 'no-forces'),
    ReproduceStep('spectra', 'spectra', _detuned(60.0)),
    ReproduceStep('spectra-p-fall', 'spectra', _detuned(0.0), 'p-fall'),
    ReproduceStep('g2model', 'g2model', _detuned(0.0)),
    ReproduceStep('correlations', 'correlations', _detuned(0.0)),
    ReproduceStep('fort', 'fort', _detuned(0.0)),
)


def cmd_reproduce_all(manifest: RunManifest, executor: RunExecutor) -> List[Path]:
    """Chain every subcommand into per-step subdirectories.

    Raises:
        RunError: When a step fails; earlier outputs are kept
    """
    out = Path(manifest.output_dir)
    outputs: List[Path] = []
    for step in REPRODUCE_STEPS:
        child = manifest.child(step.command, str(out / step.name), step.overrides, step.variant,
                               **(step.options or {}))
        result = executor.execute(step.name, COMMANDS[step.command], child)
        if not result.success:
            raise RunError(f"Step {step.name} failed: {result.error}")
        outputs.extend(result.outputs)
    return outputs


COMMANDS: Dict[str, Callable[[RunManifest, RunExecutor], List[Path]]] = {
    'transits': cmd_transits,
    'spectra': cmd_spectra,
    'correlations': cmd_correlations,
    'g2model': cmd_g2model,
    'fort': cmd_fort,
    'eigen': cmd_eigen,
    'potentials': cmd_potentials,
    'false-triggers': cmd_false_triggers,
    'reproduce-all': cmd_reproduce_all,
}
