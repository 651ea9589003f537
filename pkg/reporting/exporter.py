"""
Result Export - Trajectory CSVs, run metadata and domain-of-attraction maps
"""

import csv
import logging
from dataclasses import asdict, dataclass, field, is_dataclass
from pathlib import Path
from typing import Dict, List, Optional, Tuple

import numpy as np
from dataclasses_json import dataclass_json

from benchmarks.plants import Benchmark
from benchmarks.simulator import ClosedLoopRecord, DoaResult
from config.mpc_config import CSV_DELIMITER, QP_TOLERANCE, RK45_ATOL, RK45_RTOL
from mpc_engine.controller import MpcConfig
from mpc_engine.scdc import saturation_levels

logger = logging.getLogger(__name__)


def format_float(value: float) -> str:
    """Shortest decimal text that parses back to the same double"""
    return repr(float(value))


def trajectory_header(n: int, m: int, extra_columns: Tuple[str, ...] = ()) -> List[str]:
    return (['k', 't'] + [f'x{i + 1}' for i in range(n)] + [f'u{j + 1}' for j in range(m)]
            + [f'sigma_u{j + 1}' for j in range(m)] + ['rho_k', 'qp_status'] + list(extra_columns))


def write_trajectory_csv(record: ClosedLoopRecord, path: Path) -> Path:
    """
    Write one row per recorded step

    Args:
        record: Closed-loop record
        path: Output file

    Returns:
        The written path
    """
    path = Path(path)
    n = record.states[0].size if record.states else 0
    m = record.controls[0].size if record.controls else 0
    with path.open('w', newline='') as handle:
        writer = csv.writer(handle, delimiter=CSV_DELIMITER)
        writer.writerow(trajectory_header(n, m, record.extra_columns))
        for k in range(len(record)):
            writer.writerow(
                [str(k), format_float(record.times[k])]
                + [format_float(v) for v in record.states[k]]
                + [format_float(v) for v in record.controls[k]]
                + [format_float(v) for v in record.saturated[k]]
                + [str(record.rho[k]), record.statuses[k]]
                + [format_float(v) for v in record.extras[k]]
            )
    logger.info(f"Wrote {len(record)} rows to {path}")
    return path


def read_trajectory_csv(path: Path, benchmark: str = '', sample_time: float = float('nan')) -> ClosedLoopRecord:
    """
    Parse a trajectory CSV back into a record

    Args:
        path: CSV written by write_trajectory_csv
        benchmark: Name to put in the record
        sample_time: Sample time to put in the record

    Returns:
        ClosedLoopRecord with the same series
    """
    with Path(path).open(newline='') as handle:
        reader = csv.reader(handle, delimiter=CSV_DELIMITER)
        header = next(reader)
        n = sum(1 for name in header if name.startswith('x') and name[1:].isdigit())
        m = sum(1 for name in header if name.startswith('sigma_u'))
        extra_columns = tuple(header[2 + n + 2 * m + 2:])
        record = ClosedLoopRecord(benchmark, sample_time, extra_columns)
        for row in reader:
            values = row[2:]
            record.append(
                float(row[1]),
                np.array([float(v) for v in values[:n]]),
                np.array([float(v) for v in values[n:n + m]]),
                np.array([float(v) for v in values[n + m:n + 2 * m]]),
                int(values[n + 2 * m]),
                values[n + 2 * m + 1],
                np.array([float(v) for v in values[n + 2 * m + 2:]]),
            )
    return record


def _flatten_params(params) -> Dict[str, float]:
    """Numeric fields of a parameter record, nested records joined with '_'"""
    flat: Dict[str, float] = {}
    source = asdict(params) if is_dataclass(params) else dict(params)
    for key, value in source.items():
        if isinstance(value, dict):
            for inner, inner_value in value.items():
                flat[f'{key}_{inner}'] = float(inner_value)
        else:
            flat[key] = float(value)
    for extra in ('i_star', 'zoh_gain'):
        if hasattr(params, extra):
            flat[extra] = float(getattr(params, extra))
    return flat


@dataclass_json
@dataclass
class RunMetadata:
    """Every setting a closed-loop run consumed, plus its outcome"""

    benchmark: str
    description: str
    sample_time: float
    steps: int
    horizon: int
    rho: int
    eps: float
    q: List[List[float]]
    q_terminal: List[List[float]]
    r: List[List[float]]
    x0: List[float]
    u0: List[float]
    control_lower: List[float]
    control_upper: List[float]
    box_controls: bool
    output_feedback: bool
    params: Dict[str, float]
    rk45_rtol: float = RK45_RTOL
    rk45_atol: float = RK45_ATOL
    qp_tolerance: float = QP_TOLERANCE
    rows: int = 0
    aborted: bool = False
    abort_reason: str = ''
    abort_step: Optional[int] = None
    final_state: List[float] = field(default_factory=list)

    @classmethod
    def from_run(cls, b: Benchmark, cfg: MpcConfig, x0: np.ndarray, steps: int,
                 record: ClosedLoopRecord) -> 'RunMetadata':
        lower, upper = saturation_levels(b.saturation, b.m)
        return cls(
            benchmark=b.name,
            description=str(b.settings.get('description', '')),
            sample_time=b.sample_time,
            steps=steps,
            horizon=cfg.horizon,
            rho=cfg.rho,
            eps=cfg.eps,
            q=cfg.weights.Q.tolist(),
            q_terminal=cfg.weights.Q_terminal.tolist(),
            r=cfg.weights.R.tolist(),
            x0=np.asarray(x0, dtype=float).tolist(),
            u0=b.u0.tolist(),
            control_lower=lower.tolist(),
            control_upper=upper.tolist(),
            box_controls=not cfg.constraints.is_empty,
            output_feedback=b.output_feedback,
            params=_flatten_params(b.params),
            rows=len(record),
            aborted=record.aborted,
            abort_reason=record.abort_reason,
            abort_step=record.abort_step,
            final_state=record.final_state.tolist() if record.states else [],
        )


def write_metadata(metadata, path: Path) -> Path:
    """Write any dataclass_json record as indented JSON"""
    path = Path(path)
    path.write_text(metadata.to_json(indent=2))
    logger.info(f"Wrote metadata to {path}")
    return path


@dataclass_json
@dataclass
class DoaSummary:
    benchmark: str
    grid: str
    points: int
    steps: int
    window: List[int]
    threshold: float
    rho: int
    eps: float
    horizons: List[int]
    counts: Dict[str, int]

    @classmethod
    def from_result(cls, result: DoaResult, grid: str, cfg: MpcConfig,
                    window: Tuple[int, int]) -> 'DoaSummary':
        return cls(
            benchmark=result.benchmark,
            grid=grid,
            points=len(result.points),
            steps=result.steps,
            window=list(window),
            threshold=result.threshold,
            rho=cfg.rho,
            eps=cfg.eps,
            horizons=list(result.horizons),
            counts={str(horizon): count for horizon, count in result.counts().items()},
        )


def write_doa_csv(result: DoaResult, horizon: int, path: Path) -> Path:
    """
    One row per grid point for one horizon

    Args:
        result: Sweep result
        horizon: Horizon length to export
        path: Output file

    Returns:
        The written path
    """
    path = Path(path)
    with path.open('w', newline='') as handle:
        writer = csv.writer(handle, delimiter=CSV_DELIMITER)
        writer.writerow(['x1_0', 'x2_0', 'converged', 'criterion_value'])
        for (x1, x2), flag, value in zip(result.points, result.converged[horizon], result.criterion[horizon]):
            writer.writerow([format_float(x1), format_float(x2), 'true' if flag else 'false', format_float(value)])
    logger.info(f"Wrote DOA map for horizon {horizon} to {path}")
    return path
