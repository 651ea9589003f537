"""
Experiment Runner - Resolves benchmark settings and writes result files
"""

import logging
from dataclasses import dataclass, fields, replace
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from benchmarks.plants import Benchmark, get_benchmark
from benchmarks.simulator import ClosedLoopRecord, DoaResult, doa_sweep, horizon_config, run_closed_loop
from config.mpc_config import (
    BENCHMARK_NAMES, DOA_GRID, DOA_HORIZONS, DOA_STEPS, DOA_WINDOW,
    grid_points, load_config_file, parse_float_list, parse_grid_spec,
)
from mpc_engine.controller import MpcConfig
from mpc_engine.errors import ConfigError
from reporting.exporter import DoaSummary, RunMetadata, write_doa_csv, write_metadata, write_trajectory_csv

logger = logging.getLogger(__name__)

_LIST_KEYS = ('x0', 'u0', 'q_diag', 'q_terminal_diag', 'r_diag')


@dataclass(frozen=True)
class ExperimentConfig:
    """Benchmark name plus optional overrides; None keeps the benchmark default"""

    benchmark: str
    l: Optional[int] = None
    rho: Optional[int] = None
    eps: Optional[float] = None
    steps: Optional[int] = None
    x0: Optional[List[float]] = None
    u0: Optional[List[float]] = None
    q_diag: Optional[List[float]] = None
    q_terminal_diag: Optional[List[float]] = None
    r_diag: Optional[List[float]] = None
    u_min: Optional[float] = None
    u_max: Optional[float] = None
    box_controls: bool = False

    def __post_init__(self):
        if self.benchmark not in BENCHMARK_NAMES:
            raise ConfigError(f"Unknown benchmark '{self.benchmark}', expected one of {', '.join(BENCHMARK_NAMES)}")

    @classmethod
    def from_file(cls, benchmark: str, path: Path) -> 'ExperimentConfig':
        """
        Build from a key = value file

        Args:
            benchmark: Benchmark name
            path: Config file

        Returns:
            ExperimentConfig with the file's values
        """
        try:
            raw = load_config_file(path)
        except (OSError, ValueError) as exc:
            raise ConfigError(f"Cannot read config file: {exc}") from exc
        values = {}
        try:
            for key, text in raw.items():
                if key in _LIST_KEYS:
                    values[key] = parse_float_list(text)
                elif key in ('l', 'rho', 'steps'):
                    values[key] = int(text)
                elif key == 'box_controls':
                    values[key] = text.lower() in ('1', 'true', 'yes', 'on')
                else:
                    values[key] = float(text)
        except ValueError as exc:
            raise ConfigError(f"{path}: {exc}") from exc
        return cls(benchmark, **values)

    def with_overrides(self, **overrides) -> 'ExperimentConfig':
        """Replace fields whose override is not None"""
        return replace(self, **{key: value for key, value in overrides.items() if value is not None})

    def settings(self) -> Dict[str, object]:
        """Benchmark setting overrides in BENCHMARK_CONFIG naming"""
        names = {'l': 'horizon'}
        settings = {}
        for item in fields(self):
            if item.name in ('benchmark', 'box_controls'):
                continue
            value = getattr(self, item.name)
            if value is not None:
                settings[names.get(item.name, item.name)] = value
        return settings


def resolve(cfg: ExperimentConfig) -> Tuple[Benchmark, MpcConfig]:
    """
    Build the benchmark and controller configuration, checking override dimensions

    Args:
        cfg: Experiment configuration

    Returns:
        (benchmark, controller configuration)
    """
    defaults = get_benchmark(cfg.benchmark)
    n, m = defaults.internal.n, defaults.m
    expected = {'x0': defaults.x0.size, 'u0': m, 'q_diag': n, 'q_terminal_diag': n, 'r_diag': m}
    for key, size in expected.items():
        value = getattr(cfg, key)
        if value is not None and len(value) != size:
            raise ConfigError(f"{cfg.benchmark}: {key} needs {size} values, got {len(value)}")
    try:
        b = get_benchmark(cfg.benchmark, cfg.settings())
        mpc = horizon_config(b, b.default_config, b.default_config.horizon, cfg.box_controls)
    except ValueError as exc:
        raise ConfigError(f"{cfg.benchmark}: {exc}") from exc
    return b, mpc


@dataclass
class ExperimentResult:
    record: ClosedLoopRecord
    files: Dict[str, Path]

    @property
    def aborted(self) -> bool:
        return self.record.aborted


def run_experiment(cfg: ExperimentConfig, out_dir: Path) -> ExperimentResult:
    """
    Run one benchmark and write its trajectory CSV and metadata JSON

    Args:
        cfg: Experiment configuration
        out_dir: Output directory, created if missing

    Returns:
        ExperimentResult with the record and the written files
    """
    b, mpc = resolve(cfg)
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    logger.info(f"Running '{b.name}' for {b.steps} steps into {out_dir}")

    record = run_closed_loop(b, mpc, b.x0, b.steps)
    files = {
        'trajectory': write_trajectory_csv(record, out_dir / f'{b.name}_trajectory.csv'),
        'metadata': write_metadata(RunMetadata.from_run(b, mpc, b.x0, b.steps, record),
                                   out_dir / f'{b.name}_metadata.json'),
    }
    if record.aborted:
        logger.error(f"Run '{b.name}' aborted at step {record.abort_step}: {record.abort_reason}")
    else:
        logger.info(f"Run '{b.name}' completed, final state {np.round(record.final_state, 6)}")
    return ExperimentResult(record, files)


def run_doa(horizons: Sequence[int] = DOA_HORIZONS, grid_spec: str = DOA_GRID, out_dir: Path = Path('.'),
            benchmark: str = 'triple_integrator', steps: int = DOA_STEPS, workers: Optional[int] = None,
            cfg: Optional[ExperimentConfig] = None) -> Dict[str, Path]:
    """
    Domain-of-attraction sweep with one CSV per horizon and a JSON summary

    Args:
        horizons: Horizon lengths
        grid_spec: min:step:max, applied to both leading state components
        out_dir: Output directory, created if missing
        benchmark: Benchmark name
        steps: Control steps per run
        workers: Worker processes (None for all cores)
        cfg: Optional overrides for rho, eps, weights and levels

    Returns:
        Mapping of file role to path
    """
    try:
        axis = parse_grid_spec(grid_spec)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    if not horizons or any(h < 2 for h in horizons):
        raise ConfigError(f"Horizons must be integers >= 2, got {list(horizons)}")
    if steps < DOA_WINDOW[1]:
        raise ConfigError(f"{steps} steps do not reach the criterion window {DOA_WINDOW}")
    cfg = cfg if cfg is not None else ExperimentConfig(benchmark)
    b, mpc = resolve(cfg)
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    result: DoaResult = doa_sweep(b, grid_points(axis), horizons, steps=steps, base=mpc, workers=workers,
                                  box_controls=cfg.box_controls)
    files = {f'l{horizon}': write_doa_csv(result, horizon, out_dir / f'doa_l{horizon}.csv')
             for horizon in result.horizons}
    files['summary'] = write_metadata(DoaSummary.from_result(result, grid_spec, mpc, DOA_WINDOW),
                                      out_dir / 'doa_summary.json')
    logger.info(f"DOA counts: {result.counts()}")
    return files
