"""
toroid-cqed-sim - batch entry point for the atom-toroid transit simulations.
"""
import argparse
import logging
import os
import sys
from typing import List, Optional, Sequence

from dotenv import load_dotenv

# Load environment variables
load_dotenv()

logger = logging.getLogger(__name__)

from commands.executor import (EXIT_INTERNAL_ERROR, EXIT_USER_ERROR, RunError, RunExecutor,
                               RunManifest)
from commands.runs import COMMANDS
from config import ConfigurationError
from physics.trajectory import VARIANTS

LOG_FORMAT = '[%(asctime)s] [%(levelname)s] [%(name)s] %(message)s'
LOG_DATEFMT = '%Y-%m-%d %H:%M:%S'


def configure_logging(level: Optional[str] = None) -> None:
    """Configure root logging once, from the flag or TOROID_LOG_LEVEL."""
    level = (level or os.environ.get('TOROID_LOG_LEVEL') or 'INFO').upper()
    if level not in ('DEBUG', 'INFO', 'WARNING', 'ERROR', 'CRITICAL'):
        raise ConfigurationError(f"Unknown log level: {level}")
    logging.basicConfig(level=getattr(logging, level), format=LOG_FORMAT, datefmt=LOG_DATEFMT)


def _float_list(text: str) -> List[float]:
    try:
        values = [float(item) for item in text.split(',') if item.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"Expected comma-separated numbers: {text}") from None
    if not values:
        raise argparse.ArgumentTypeError("Detuning list must not be empty")
    return values


def create_parser() -> argparse.ArgumentParser:
    """Parser with one subcommand per reproduced observable."""
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument('--config', help='JSON configuration document (default: TOROID_CONFIG)')
    common.add_argument('--set', dest='overrides', action='append', default=[],
                        metavar='SECTION.KEY=VALUE', help='Override one configuration value')
    common.add_argument('--seed', type=int, help='Base random seed')
    common.add_argument('--out', help='Output directory (default: TOROID_OUTPUT_DIR or ./results)')
    common.add_argument('--workers', type=int, help='Parallel workers, -1 for all cores '
                                                    '(default: TOROID_WORKERS or 1)')
    common.add_argument('--variant', choices=VARIANTS, default='full', help='Model variant')
    common.add_argument('--trajectories', type=int, help='Number of trajectories per run')
    common.add_argument('--log-level', help='DEBUG, INFO, WARNING or ERROR')

    parser = argparse.ArgumentParser(prog='toroid-cqed-sim',
                                     description='Monte-Carlo transits of cold atoms past a '
                                                 'microtoroidal resonator')
    sub = parser.add_subparsers(dest='subcommand', required=True)
    sub.add_parser('transits', parents=[common], help='Post-trigger traces, fits and histograms')
    spectra = sub.add_parser('spectra', parents=[common], help='Probe spectra with and without atoms')
    spectra.add_argument('--detunings', type=_float_list, help='Probe detunings in MHz')
    correlations = sub.add_parser('correlations', parents=[common],
                                  help='Detector cross-correlation C12')
    correlations.add_argument('--classical', action='store_true',
                              help='Poisson photon events without g2 conditioning')
    correlations.add_argument('--bin-ns', type=float, help='Correlation bin width in ns')
    g2model = sub.add_parser('g2model', parents=[common], help='Ensemble-averaged G2(tau)')
    g2model.add_argument('--histogram', help='Table with g_MHz and p_g columns')
    sub.add_parser('fort', parents=[common], help='Two-color trap capture statistics')
    eigen = sub.add_parser('eigen', parents=[common], help='Eigenvalues over a detuning sweep')
    eigen.add_argument('--detunings', type=_float_list, help='Cavity-atom detunings in MHz')
    eigen.add_argument('--g', dest='g_MHz', type=float, help='Coupling in MHz')
    potentials = sub.add_parser('potentials', parents=[common], help='Potential curves along d')
    potentials.add_argument('--include-shift', action='store_true',
                            help='Include the surface shift in the dipole potential')
    sub.add_parser('false-triggers', parents=[common], help='Background-only trigger probability')
    sub.add_parser('reproduce-all', parents=[common], help='Run every subcommand in sequence')
    return parser


def build_manifest(args: argparse.Namespace) -> RunManifest:
    """Translate parsed arguments into a RunManifest.

    Raises:
        RunError: If the trajectory count or worker count is invalid
    """
    if args.trajectories is not None and args.trajectories < 1:
        raise RunError(f"Trajectory count must be at least 1, got {args.trajectories}")
    workers = args.workers
    if workers is None:
        try:
            workers = int(os.environ.get('TOROID_WORKERS', '1'))
        except ValueError:
            raise RunError("TOROID_WORKERS must be an integer") from None
    options = {}
    for name, key in (('detunings', 'detunings_MHz'), ('classical', 'classical'),
                      ('bin_ns', 'bin_ns'), ('histogram', 'histogram'), ('g_MHz', 'g_MHz'),
                      ('include_shift', 'include_shift')):
        value = getattr(args, name, None)
        if value not in (None, False):
            options[key] = value
    output_dir = args.out or os.environ.get('TOROID_OUTPUT_DIR') or 'results'
    return RunManifest(subcommand=args.subcommand, output_dir=output_dir,
                       config_path=args.config, overrides=list(args.overrides), seed=args.seed,
                       workers=workers, variant=args.variant, trajectories=args.trajectories,
                       options=options)


def main(argv: Optional[Sequence[str]] = None) -> int:
    """Run one subcommand and return its exit code (0 ok, 1 user error, 2 internal error)."""
    parser = create_parser()
    args = parser.parse_args(argv)
    try:
        configure_logging(args.log_level)
        manifest = build_manifest(args)
        executor = RunExecutor(workers=manifest.workers)
    except (ConfigurationError, RunError) as e:
        logging.basicConfig(format=LOG_FORMAT, datefmt=LOG_DATEFMT)
        logger.error(f"Invalid run options: {e}")
        return EXIT_USER_ERROR
    try:
        result = executor.execute(manifest.subcommand, COMMANDS[manifest.subcommand], manifest)
    except Exception as e:
        logger.exception(f"Unexpected failure: {e}")
        return EXIT_INTERNAL_ERROR
    if result.success:
        logger.info(f"{manifest.subcommand} finished in {result.duration:.1f} s",
                    extra={'outputs': [str(p) for p in result.outputs]})
    return result.exit_code


if __name__ == '__main__':
    sys.exit(main())
