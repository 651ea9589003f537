"""
ISCD-MPC Controller - Iterated QPs over frozen state- and control-dependent coefficients
"""

import logging
from dataclasses import dataclass, field
from typing import List, NamedTuple, Optional, Tuple

import numpy as np
from scipy.linalg import solve

from mpc_engine.errors import ControllerError, DivergenceError, QpSolveError
from mpc_engine.qp import ConstraintSet, HorizonWeights, QpProblem, QpSolution, condense, solve_qp
from mpc_engine.scdc import ScdcModel

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class MpcConfig:
    """Horizon, iteration cap, stopping tolerance, weights and constraints"""

    horizon: int
    rho: int
    eps: float
    weights: HorizonWeights
    constraints: Optional[ConstraintSet] = None

    def __post_init__(self):
        if self.horizon < 2:
            raise ValueError(f"Horizon must be >= 2, got {self.horizon}")
        if self.rho < 1:
            raise ValueError(f"Iteration cap must be >= 1, got {self.rho}")
        if not self.eps > 0:
            raise ValueError(f"Stopping tolerance must be positive, got {self.eps}")
        if self.constraints is None:
            object.__setattr__(self, 'constraints',
                               ConstraintSet.empty(self.horizon, self.weights.n, self.weights.m))

    @property
    def n(self) -> int:
        return self.weights.n

    @property
    def m(self) -> int:
        return self.weights.m


@dataclass(frozen=True)
class ControlSequence:
    """Stacked predicted controls (u_1, ..., u_{l-1}) of one iterate"""

    values: np.ndarray
    m: int

    def __post_init__(self):
        values = np.asarray(self.values, dtype=float).ravel()
        if values.size == 0 or values.size % self.m:
            raise ValueError(f"Sequence length {values.size} is not a positive multiple of m={self.m}")
        object.__setattr__(self, 'values', values)

    @property
    def horizon(self) -> int:
        return self.values.size // self.m + 1

    @property
    def first(self) -> np.ndarray:
        return self.values[:self.m].copy()

    def stage(self, j: int) -> np.ndarray:
        """Control u_j for j in 1..l-1"""
        return self.values[(j - 1) * self.m:j * self.m]

    @classmethod
    def constant(cls, u: np.ndarray, horizon: int) -> 'ControlSequence':
        """u replicated over the horizon (the initial warm start)"""
        u = np.atleast_1d(np.asarray(u, dtype=float))
        return cls(np.tile(u, horizon - 1), u.size)


@dataclass
class StepDiagnostics:
    """Iteration record of one time step"""

    rho_k: int
    iterate_gaps: List[float] = field(default_factory=list)
    qp_statuses: List[str] = field(default_factory=list)
    qp_objectives: List[float] = field(default_factory=list)
    predicted_cost: float = float('nan')

    @property
    def last_status(self) -> str:
        return self.qp_statuses[-1] if self.qp_statuses else 'none'


class Rollout(NamedTuple):
    """Predicted states x_1..x_l and coefficients A_0..A_{l-1}, B_0..B_{l-1}"""

    states: np.ndarray
    A: np.ndarray
    B: np.ndarray


def propagate(model: ScdcModel, x_k: np.ndarray, u_k: np.ndarray, U: ControlSequence) -> Rollout:
    """
    Forward simulation of the SCDC map along a control sequence

    Stage 0 uses (x_k, u_k), so the first predicted state is f(x_k, u_k) and
    does not depend on U.

    Args:
        model: SCDC model
        x_k: Current state
        u_k: Control being applied at step k
        U: Predicted controls u_1..u_{l-1}

    Returns:
        Rollout with states of shape (l, n) and coefficients of shape (l, n, n), (l, n, m)
    """
    if U.m != model.m:
        raise ValueError(f"Sequence has m={U.m}, model has m={model.m}")
    horizon = U.horizon
    n, m = model.n, model.m
    states = np.empty((horizon, n))
    A_seq = np.empty((horizon, n, n))
    B_seq = np.empty((horizon, n, m))

    coefficients = model.rollout()
    x = np.asarray(x_k, dtype=float)
    u = np.atleast_1d(np.asarray(u_k, dtype=float))
    for j in range(horizon):
        A, B = coefficients(x, u)
        x = A @ x + B @ u
        if not np.all(np.isfinite(x)):
            raise DivergenceError(f"{model.label}: predicted state diverged at stage {j + 1}", stage=j + 1)
        states[j], A_seq[j], B_seq[j] = x, A, B
        if j + 1 < horizon:
            u = U.stage(j + 1)
    return Rollout(states, A_seq, B_seq)


def build_iteration_qp(model: ScdcModel, x_k: np.ndarray, u_k: np.ndarray,
                       U_prev: ControlSequence, cfg: MpcConfig) -> QpProblem:
    """Condensed QP with coefficients frozen along the trajectory of U_prev"""
    rollout = propagate(model, x_k, u_k, U_prev)
    return condense(rollout.A[1:], rollout.B[1:], rollout.states[0], cfg.weights, cfg.constraints)


def iterate_once(model: ScdcModel, x_k: np.ndarray, u_k: np.ndarray,
                 U_prev: ControlSequence, cfg: MpcConfig) -> Tuple[ControlSequence, QpSolution]:
    """
    One ISCD iteration: freeze, condense, solve

    Args:
        model: SCDC model
        x_k: Current state
        u_k: Control being applied at step k
        U_prev: Previous iterate
        cfg: Controller configuration

    Returns:
        (new iterate, QP solution)
    """
    problem = build_iteration_qp(model, x_k, u_k, U_prev, cfg)
    solution = solve_qp(problem)
    if not solution.ok:
        raise QpSolveError(f"Horizon QP ended with status '{solution.status}'", solution)
    return ControlSequence(solution.z, model.m), solution


def warm_start_shift(U: ControlSequence) -> ControlSequence:
    """Drop the applied head and repeat the last control"""
    m = U.m
    return ControlSequence(np.concatenate([U.values[m:], U.values[-m:]]), m)


def evaluate_cost(states: np.ndarray, U: ControlSequence, w: HorizonWeights) -> float:
    """
    Horizon cost of predicted states x_1..x_l and controls u_1..u_{l-1}

    Args:
        states: Array of shape (l, n)
        U: Controls
        w: Weights

    Returns:
        1/2 x_l'Q_l x_l + 1/2 sum_j (x_j'Q x_j + u_j'R u_j)
    """
    states = np.atleast_2d(np.asarray(states, dtype=float))
    controls = U.values.reshape(-1, U.m)
    stage = np.einsum('ja,ab,jb->', states[:-1], w.Q, states[:-1])
    control = np.einsum('ja,ab,jb->', controls, w.R, controls)
    terminal = states[-1] @ w.Q_terminal @ states[-1]
    return float(0.5 * (stage + control + terminal))


def step(model: ScdcModel, x_k: np.ndarray, u_k: np.ndarray, warm: ControlSequence,
         cfg: MpcConfig, k: Optional[int] = None) -> Tuple[np.ndarray, ControlSequence, StepDiagnostics]:
    """
    Compute u_{k+1} at step k

    Iterations i = 2, 3, ... replace U_{k|i-1} by the QP solution until the
    2-norm gap drops below eps or i reaches rho. A failed QP keeps the previous
    iterate and ends the iterations. With rho = 1 no QP is solved and the head
    of the warm start is applied.

    Args:
        model: SCDC model for this step
        x_k: State at step k
        u_k: Control applied during step k
        warm: Iterate U_{k|1}
        cfg: Controller configuration
        k: Step index, only used in messages

    Returns:
        (u_{k+1}, final iterate, diagnostics)
    """
    current = warm
    diagnostics = StepDiagnostics(rho_k=cfg.rho)
    try:
        for i in range(2, cfg.rho + 1):
            try:
                candidate, solution = iterate_once(model, x_k, u_k, current, cfg)
            except QpSolveError as exc:
                status = exc.solution.status if exc.solution is not None else 'failed'
                diagnostics.qp_statuses.append(status)
                diagnostics.rho_k = i - 1
                logger.warning(f"Step {k}: QP {status} at iteration {i}, keeping previous iterate")
                break
            gap = float(np.linalg.norm(candidate.values - current.values))
            diagnostics.iterate_gaps.append(gap)
            diagnostics.qp_statuses.append(solution.status)
            diagnostics.qp_objectives.append(solution.objective)
            current = candidate
            logger.debug(f"Step {k} iteration {i}: gap {gap:.3e}")
            if gap < cfg.eps:
                diagnostics.rho_k = i
                break
        else:
            if cfg.rho > 1:
                logger.debug(f"Step {k}: iteration cap {cfg.rho} reached")
        rollout = propagate(model, x_k, u_k, current)
    except DivergenceError as exc:
        raise ControllerError(f"Controller diverged at step {k}: {exc}", step=k) from exc

    diagnostics.predicted_cost = evaluate_cost(rollout.states, current, cfg.weights)
    return current.first, current, diagnostics


def finite_horizon_lqr(A: np.ndarray, B: np.ndarray, w: HorizonWeights, horizon: int,
                       xi1: np.ndarray) -> np.ndarray:
    """
    Optimal controls of the LTI horizon problem by backward Riccati recursion

    Args:
        A: State matrix
        B: Input matrix
        w: Weights (Q on x_1..x_{l-1}, Q_terminal on x_l, R on u_1..u_{l-1})
        horizon: l
        xi1: Head state x_1

    Returns:
        Controls of shape (l-1, m)
    """
    A = np.atleast_2d(np.asarray(A, dtype=float))
    B = np.asarray(B, dtype=float).reshape(A.shape[0], -1)
    P = w.Q_terminal
    gains = []
    for _ in range(horizon - 1):
        K = solve(w.R + B.T @ P @ B, B.T @ P @ A, assume_a='pos')
        P = w.Q + A.T @ P @ (A - B @ K)
        P = 0.5 * (P + P.T)
        gains.append(K)
    gains.reverse()

    xi = np.asarray(xi1, dtype=float)
    controls = []
    for K in gains:
        mu = -K @ xi
        controls.append(mu)
        xi = A @ xi + B @ mu
    return np.array(controls)


class IscdController:
    """Stateful ISCD-MPC controller carrying the warm start between steps"""

    def __init__(self, model: ScdcModel, cfg: MpcConfig, u0: np.ndarray):
        """
        Initialize controller

        Args:
            model: Internal SCDC model
            cfg: Controller configuration
            u0: Initial control, replicated as the first warm start
        """
        if model.m != cfg.m or model.n != cfg.n:
            raise ValueError(f"Model ({model.n}, {model.m}) does not match weights ({cfg.n}, {cfg.m})")
        self.model = model
        self.cfg = cfg
        self.reset(u0)

    def reset(self, u0: np.ndarray):
        """Restart at step 0 with warm start u0"""
        self.warm = ControlSequence.constant(u0, self.cfg.horizon)
        self.k = 0
        self.last_diagnostics: Optional[StepDiagnostics] = None

    def compute(self, x_k: np.ndarray, u_k: np.ndarray,
                model: Optional[ScdcModel] = None) -> Tuple[np.ndarray, StepDiagnostics]:
        """
        Compute the control for the next step and shift the warm start

        Args:
            x_k: State at the current step
            u_k: Control applied during the current step
            model: Per-step model (used for history-bound output-feedback models)

        Returns:
            (u_{k+1}, diagnostics)
        """
        active_model = model if model is not None else self.model
        u_next, final, diagnostics = step(active_model, x_k, u_k, self.warm, self.cfg, self.k)
        self.warm = warm_start_shift(final)
        self.last_diagnostics = diagnostics
        logger.debug(f"Step {self.k}: rho_k={diagnostics.rho_k}, u={u_next}")
        self.k += 1
        return u_next, diagnostics
