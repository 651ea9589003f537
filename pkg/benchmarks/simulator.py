"""
Closed-Loop Simulator - Sampled-data runs under zero-order hold and the
domain-of-attraction sweep
"""

import logging
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy.integrate import solve_ivp

from benchmarks.plants import Benchmark, get_benchmark
from config.mpc_config import DOA_STEPS, DOA_THRESHOLD, DOA_WINDOW, RK45_ATOL, RK45_RTOL
from mpc_engine.bocf import IoHistory, reconstruct_state
from mpc_engine.controller import IscdController, MpcConfig
from mpc_engine.errors import ConfigError, DivergenceError, IscdError, StiffnessError
from mpc_engine.qp import ConstraintSet
from mpc_engine.scdc import saturation_levels

logger = logging.getLogger(__name__)

TimeField = Callable[[float, np.ndarray], np.ndarray]


def rk45(field_fn: TimeField, x0: np.ndarray, t0: float, t1: float,
         rtol: float = RK45_RTOL, atol: float = RK45_ATOL,
         max_step: float = np.inf, first_step: Optional[float] = None) -> np.ndarray:
    """
    Integrate x' = field_fn(t, x) from t0 to t1 with adaptive Dormand-Prince 5(4)

    Args:
        field_fn: Vector field
        x0: Initial state
        t0: Start time
        t1: End time, > t0
        rtol: Relative tolerance
        atol: Absolute tolerance
        max_step: Step size cap
        first_step: Initial step, chosen by the solver when None

    Returns:
        x(t1)
    """
    if not t1 > t0:
        raise ValueError(f"Need t1 > t0, got [{t0}, {t1}]")

    def rhs(t: float, x: np.ndarray) -> np.ndarray:
        dx = np.asarray(field_fn(t, x), dtype=float)
        if not np.all(np.isfinite(dx)):
            raise DivergenceError(f"Vector field is not finite at t={t:.6g}")
        return dx

    sol = solve_ivp(rhs, (t0, t1), np.asarray(x0, dtype=float), method='RK45', rtol=rtol, atol=atol,
                    max_step=max_step, first_step=first_step)
    if not sol.success:
        raise StiffnessError(f"Integration failed on [{t0:.6g}, {t1:.6g}]: {sol.message}")
    x1 = sol.y[:, -1]
    if not np.all(np.isfinite(x1)):
        raise DivergenceError(f"State is not finite at t={t1:.6g}")
    return x1


@dataclass
class ClosedLoopRecord:
    """
    Row k holds x_k, the control u_k held over [kT_s, (k+1)T_s), sigma(u_k),
    and the iteration count and last QP status of the step that computed
    u_{k+1}. The final row has rho_k = 0 and status 'none'.
    """

    benchmark: str
    sample_time: float
    extra_columns: Tuple[str, ...] = ()
    times: List[float] = field(default_factory=list)
    states: List[np.ndarray] = field(default_factory=list)
    controls: List[np.ndarray] = field(default_factory=list)
    saturated: List[np.ndarray] = field(default_factory=list)
    rho: List[int] = field(default_factory=list)
    statuses: List[str] = field(default_factory=list)
    extras: List[np.ndarray] = field(default_factory=list)
    aborted: bool = False
    abort_reason: str = ''
    abort_step: Optional[int] = None

    def append(self, t: float, x: np.ndarray, u: np.ndarray, su: np.ndarray,
               rho_k: int, status: str, extra: np.ndarray):
        self.times.append(float(t))
        self.states.append(np.array(x, dtype=float))
        self.controls.append(np.array(u, dtype=float))
        self.saturated.append(np.array(su, dtype=float))
        self.rho.append(int(rho_k))
        self.statuses.append(status)
        self.extras.append(np.array(extra, dtype=float))

    def abort(self, step: int, reason: str):
        self.aborted = True
        self.abort_step = step
        self.abort_reason = reason

    def __len__(self) -> int:
        return len(self.times)

    def state_array(self) -> np.ndarray:
        return np.array(self.states)

    def control_array(self) -> np.ndarray:
        return np.array(self.controls)

    def saturated_array(self) -> np.ndarray:
        return np.array(self.saturated)

    @property
    def final_state(self) -> np.ndarray:
        return self.states[-1]

    def control_bounds(self) -> Tuple[np.ndarray, np.ndarray]:
        """Per-channel min and max of the applied (saturated) controls"""
        applied = self.saturated_array()
        return applied.min(axis=0), applied.max(axis=0)


def horizon_config(b: Benchmark, base: MpcConfig, horizon: int, box_controls: bool = False) -> MpcConfig:
    """
    Controller configuration for another horizon length

    Args:
        b: Benchmark, supplies the saturation levels for box constraints
        base: Configuration providing rho, eps and weights
        horizon: New horizon length
        box_controls: Also bound every predicted control in the QP

    Returns:
        MpcConfig
    """
    constraints = None
    if box_controls:
        lower, upper = saturation_levels(b.saturation, b.m)
        constraints = ConstraintSet.control_box(horizon, base.n, base.m, lower, upper)
    return MpcConfig(horizon, base.rho, base.eps, base.weights, constraints)


def run_closed_loop(b: Benchmark, cfg: Optional[MpcConfig] = None, x0: Optional[np.ndarray] = None,
                    steps: Optional[int] = None) -> ClosedLoopRecord:
    """
    Sampled-data closed loop

    At step k the controller computes u_{k+1} from x_k (or the state
    reconstructed from measured outputs) and u_k; then the truth dynamics are
    integrated over one sample with u_k held and saturated inside the field.

    Args:
        b: Benchmark
        cfg: Controller configuration, defaults to the benchmark's
        x0: Initial truth state, defaults to the benchmark's
        steps: Number of control steps, defaults to the benchmark's

    Returns:
        ClosedLoopRecord with steps + 1 rows unless aborted
    """
    cfg = cfg if cfg is not None else b.default_config
    steps = steps if steps is not None else b.steps
    if steps < 1:
        raise ValueError(f"Need at least one step, got {steps}")
    x = np.asarray(x0 if x0 is not None else b.x0, dtype=float).copy()
    u = b.u0.copy()
    T = b.sample_time

    controller = IscdController(b.internal, cfg, b.u0)
    history = IoHistory.for_coefficients(b.io) if b.output_feedback else None
    record = ClosedLoopRecord(b.name, T, b.extra_columns)
    logger.info(f"Closed loop '{b.name}': {steps} steps, horizon {cfg.horizon}, rho {cfg.rho}, x0={x}")

    for k in range(steps + 1):
        t = k * T
        extra = b.extra_values(x, u)
        if k == steps:
            record.append(t, x, u, b.saturate(u), 0, 'none', extra)
            break
        try:
            if history is not None:
                y = b.measure(x)
                x_ctrl = reconstruct_state(b.io, history, y)
                u_next, diagnostics = controller.compute(x_ctrl, u, b.internal.with_history(history))
                history.push(y, u)
            else:
                u_next, diagnostics = controller.compute(x, u)
        except IscdError as exc:
            record.append(t, x, u, b.saturate(u), 0, 'aborted', extra)
            record.abort(k, str(exc))
            logger.error(f"Closed loop '{b.name}' aborted in controller at step {k}: {exc}")
            return record
        record.append(t, x, u, b.saturate(u), diagnostics.rho_k, diagnostics.last_status, extra)

        held = u.copy()
        try:
            x = rk45(lambda _t, state: b.truth(state, held), x, t, t + T)
        except IscdError as exc:
            record.abort(k, str(exc))
            logger.error(f"Closed loop '{b.name}' aborted in integration at step {k}: {exc}")
            return record
        u = u_next
        if k % 100 == 0:
            logger.debug(f"Step {k}: |x|={np.linalg.norm(x):.4e}, u={u}")

    logger.info(f"Closed loop '{b.name}' finished, final |x|={np.linalg.norm(x):.4e}")
    return record


def convergence_criterion(states: np.ndarray, window: Tuple[int, int] = DOA_WINDOW) -> float:
    """
    Tail sum of state norms over an inclusive step window

    Args:
        states: Array of shape (K, n)
        window: (first, last) step indices, both included

    Returns:
        sum_{k=first}^{last} ||x_k||, or inf if the record is too short
    """
    first, last = window
    states = np.atleast_2d(np.asarray(states, dtype=float))
    if states.shape[0] <= last:
        return float('inf')
    return float(np.linalg.norm(states[first:last + 1], axis=1).sum())


@dataclass
class DoaResult:
    """Convergence flags and criterion values per horizon over a grid of initial conditions"""

    benchmark: str
    points: List[Tuple[float, float]]
    horizons: List[int]
    converged: Dict[int, np.ndarray]
    criterion: Dict[int, np.ndarray]
    steps: int = DOA_STEPS
    threshold: float = DOA_THRESHOLD

    def counts(self) -> Dict[int, int]:
        return {horizon: int(self.converged[horizon].sum()) for horizon in self.horizons}


def _doa_point(task) -> Tuple[bool, float]:
    """Worker: rebuild the benchmark by name and run one initial condition"""
    name, settings, cfg, x0, steps, window, threshold = task
    b = get_benchmark(name, settings)
    record = run_closed_loop(b, cfg, x0, steps)
    if record.aborted:
        return False, float('inf')
    value = convergence_criterion(record.state_array(), window)
    return bool(value < threshold), value


def _grid_state(b: Benchmark, point: Sequence[float]) -> np.ndarray:
    x0 = np.zeros(b.x0.size)
    x0[:len(point)] = point
    return x0


def doa_sweep(b: Benchmark, grid: Sequence[Tuple[float, float]], horizons: Sequence[int],
              steps: int = DOA_STEPS, base: Optional[MpcConfig] = None, workers: Optional[int] = None,
              box_controls: bool = False, window: Tuple[int, int] = DOA_WINDOW,
              threshold: float = DOA_THRESHOLD) -> DoaResult:
    """
    Domain-of-attraction sweep

    Every grid point sets the leading state components, the rest start at
    zero. Runs are independent; failures count as non-converged.

    Args:
        b: Benchmark
        grid: Initial conditions for the leading state components
        horizons: Horizon lengths to compare
        steps: Control steps per run
        base: Configuration supplying rho, eps and weights, defaults to the benchmark's
        workers: Process count, None for os.cpu_count(), 1 to run in this process
        box_controls: Bound predicted controls in the QP
        window: Criterion window (inclusive)
        threshold: Convergence threshold on the criterion

    Returns:
        DoaResult with results ordered as the grid
    """
    if steps < window[1]:
        raise ConfigError(f"{steps} steps do not reach the criterion window {window}")
    base = base if base is not None else b.default_config
    points = [tuple(float(v) for v in point) for point in grid]
    horizons = [int(h) for h in horizons]
    tasks = [
        (b.name, b.settings, horizon_config(b, base, horizon, box_controls), _grid_state(b, point),
         steps, window, threshold)
        for horizon in horizons for point in points
    ]
    workers = workers if workers is not None else os.cpu_count() or 1
    logger.info(f"DOA sweep '{b.name}': {len(points)} points x {len(horizons)} horizons on {workers} worker(s)")

    if workers == 1:
        outcomes = [_doa_point(task) for task in tasks]
    else:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            outcomes = list(pool.map(_doa_point, tasks))

    converged, criterion = {}, {}
    for index, horizon in enumerate(horizons):
        chunk = outcomes[index * len(points):(index + 1) * len(points)]
        converged[horizon] = np.array([flag for flag, _ in chunk], dtype=bool)
        criterion[horizon] = np.array([value for _, value in chunk], dtype=float)
        logger.info(f"Horizon {horizon}: {int(converged[horizon].sum())}/{len(points)} converged")
    return DoaResult(b.name, points, horizons, converged, criterion, steps, threshold)
