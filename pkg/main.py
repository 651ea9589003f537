"""
Main Entry Point
ISCD-MPC benchmark runner and domain-of-attraction exporter
"""

import argparse
import logging
import sys
from pathlib import Path
from typing import List, Optional

from config.mpc_config import (
    BENCHMARK_NAMES, DOA_GRID, DOA_HORIZONS, DOA_STEPS, LOG_FILE, LOG_FORMAT,
    parse_float_list, parse_int_list,
)
from mpc_engine.errors import ConfigError
from reporting.experiment import ExperimentConfig, run_doa, run_experiment

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_ABORTED = 2


class UsageParser(argparse.ArgumentParser):
    """Argument parser that reports usage errors as ConfigError"""

    def error(self, message):
        raise ConfigError(message)


def setup_logging(level: str = 'INFO'):
    """Log to LOG_FILE and the console"""
    logging.basicConfig(
        level=getattr(logging, level.upper(), logging.INFO),
        format=LOG_FORMAT,
        handlers=[
            logging.FileHandler(LOG_FILE),
            logging.StreamHandler()
        ],
        force=True,
    )


def _float_list(text: str) -> List[float]:
    try:
        return parse_float_list(text)
    except ValueError as exc:
        raise argparse.ArgumentTypeError(str(exc)) from exc


def _int_list(text: str) -> List[int]:
    try:
        return parse_int_list(text)
    except ValueError as exc:
        raise argparse.ArgumentTypeError(str(exc)) from exc


def build_parser() -> argparse.ArgumentParser:
    parser = UsageParser(prog='iscd-mpc', description='Iterated SCDC model predictive control experiments')
    parser.add_argument('--log-level', default='INFO', choices=['DEBUG', 'INFO', 'WARNING', 'ERROR'])
    commands = parser.add_subparsers(dest='command', required=True)

    run = commands.add_parser('run', help='Closed-loop run of one benchmark')
    run.add_argument('benchmark', choices=BENCHMARK_NAMES)
    run.add_argument('--l', type=int, help='Horizon length')
    run.add_argument('--rho', type=int, help='Iteration cap per step')
    run.add_argument('--eps', type=float, help='Stopping tolerance on the iterate gap')
    run.add_argument('--steps', type=int, help='Number of control steps')
    run.add_argument('--x0', type=_float_list, help='Initial state as a comma list (emag: offset from r)')
    run.add_argument('--out', type=Path, default=Path('results'), help='Output directory')
    run.add_argument('--config', type=Path, help='key = value file, overridden by flags')
    run.add_argument('--box-controls', action='store_true', default=None,
                     help='Also bound predicted controls in the QP')

    doa = commands.add_parser('doa', help='Domain-of-attraction sweep')
    doa.add_argument('--l', type=_int_list, default=list(DOA_HORIZONS), help='Horizons as a comma list')
    doa.add_argument('--grid', default=DOA_GRID, help='min:step:max for both grid axes')
    doa.add_argument('--out', type=Path, default=Path('results'), help='Output directory')
    doa.add_argument('--benchmark', choices=BENCHMARK_NAMES, default='triple_integrator')
    doa.add_argument('--steps', type=int, default=DOA_STEPS)
    doa.add_argument('--workers', type=int, help='Worker processes (default: all cores)')
    doa.add_argument('--rho', type=int)
    doa.add_argument('--eps', type=float)
    doa.add_argument('--config', type=Path)
    doa.add_argument('--box-controls', action='store_true', default=None)
    return parser


def _experiment_config(benchmark: str, args: argparse.Namespace) -> ExperimentConfig:
    base = (ExperimentConfig.from_file(benchmark, args.config) if args.config is not None
            else ExperimentConfig(benchmark))
    return base.with_overrides(
        l=getattr(args, 'l', None) if args.command == 'run' else None,
        rho=args.rho,
        eps=args.eps,
        steps=args.steps if args.command == 'run' else None,
        x0=getattr(args, 'x0', None),
        box_controls=args.box_controls,
    )


def main(argv: Optional[List[str]] = None) -> int:
    """
    Entry point

    Returns:
        0 on success, 1 on usage errors, 2 when a run aborted
    """
    try:
        args = build_parser().parse_args(argv)
    except ConfigError as e:
        print(f"usage error: {e}", file=sys.stderr)
        return EXIT_USAGE
    setup_logging(args.log_level)

    try:
        if args.command == 'run':
            result = run_experiment(_experiment_config(args.benchmark, args), args.out)
            if result.aborted:
                logger.error(f"Run aborted at step {result.record.abort_step}: {result.record.abort_reason}")
                return EXIT_ABORTED
        else:
            cfg = _experiment_config(args.benchmark, args)
            run_doa(args.l, args.grid, args.out, args.benchmark, args.steps, args.workers, cfg)
    except ConfigError as e:
        logger.error(f"Configuration error: {e}")
        return EXIT_USAGE
    except Exception as e:
        logger.error(f"Fatal error: {e}", exc_info=True)
        return EXIT_ABORTED
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
