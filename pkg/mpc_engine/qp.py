"""
Quadratic Programs - Condensed MPC QP construction and a dense active-set solver
"""

import logging
from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple

import numpy as np
from scipy.linalg import LinAlgError, cho_factor, cho_solve
from scipy.optimize import linprog

from config.mpc_config import QP_MAX_ITER_FACTOR, QP_TOLERANCE
from mpc_engine.errors import QpBuildError

logger = logging.getLogger(__name__)

STATUS_OPTIMAL = 'optimal'
STATUS_INFEASIBLE = 'infeasible'
STATUS_MAX_ITER = 'max_iter'


def _as_matrix(value, size: int) -> np.ndarray:
    matrix = np.atleast_2d(np.asarray(value, dtype=float))
    if matrix.shape != (size, size):
        raise QpBuildError(f"Expected a {size}x{size} weight, got shape {matrix.shape}")
    return matrix


@dataclass(frozen=True)
class HorizonWeights:
    """Stage weight Q, terminal weight Q_terminal and control weight R"""

    Q: np.ndarray
    Q_terminal: np.ndarray
    R: np.ndarray

    def __post_init__(self):
        n = np.atleast_2d(self.Q).shape[0]
        m = np.atleast_2d(self.R).shape[0]
        object.__setattr__(self, 'Q', _as_matrix(self.Q, n))
        object.__setattr__(self, 'Q_terminal', _as_matrix(self.Q_terminal, n))
        object.__setattr__(self, 'R', _as_matrix(self.R, m))

        for name in ('Q', 'Q_terminal', 'R'):
            matrix = getattr(self, name)
            if not np.allclose(matrix, matrix.T):
                raise ValueError(f"{name} must be symmetric")
        for name in ('Q', 'Q_terminal'):
            matrix = getattr(self, name)
            scale = max(1.0, float(np.abs(matrix).max()))
            if np.linalg.eigvalsh(matrix).min() < -1e-12 * scale:
                raise ValueError(f"{name} must be positive semidefinite")
        try:
            cho_factor(self.R)
        except LinAlgError as exc:
            raise ValueError("R must be positive definite") from exc

    @property
    def n(self) -> int:
        return self.Q.shape[0]

    @property
    def m(self) -> int:
        return self.R.shape[0]

    @classmethod
    def diagonal(cls, q_diag: Sequence[float], r_diag: Sequence[float],
                 q_terminal_diag: Optional[Sequence[float]] = None) -> 'HorizonWeights':
        """Diagonal weights; the terminal weight defaults to Q"""
        q_terminal_diag = q_diag if q_terminal_diag is None else q_terminal_diag
        return cls(np.diag(q_diag), np.diag(q_terminal_diag), np.diag(r_diag))


@dataclass(frozen=True)
class ConstraintSet:
    """
    Constraints on the stacked vector v = (x_1, ..., x_l, u_1, ..., u_{l-1})

    Rows: A_ineq v <= b_ineq and A_eq v = b_eq. Box bounds lower <= v <= upper
    use +-inf for unbounded components.
    """

    horizon: int
    n: int
    m: int
    A_ineq: np.ndarray
    b_ineq: np.ndarray
    A_eq: np.ndarray
    b_eq: np.ndarray
    lower: np.ndarray
    upper: np.ndarray

    def __post_init__(self):
        size = self.size
        for name in ('A_ineq', 'A_eq'):
            rows = np.asarray(getattr(self, name), dtype=float).reshape(-1, size)
            object.__setattr__(self, name, rows)
        for name in ('b_ineq', 'b_eq', 'lower', 'upper'):
            object.__setattr__(self, name, np.asarray(getattr(self, name), dtype=float).ravel())
        if self.b_ineq.size != self.A_ineq.shape[0]:
            raise QpBuildError(f"b_ineq has {self.b_ineq.size} entries for {self.A_ineq.shape[0]} rows")
        if self.b_eq.size != self.A_eq.shape[0]:
            raise QpBuildError(f"b_eq has {self.b_eq.size} entries for {self.A_eq.shape[0]} rows")
        if self.lower.size != size or self.upper.size != size:
            raise QpBuildError(f"Box bounds must have {size} entries")
        bounded = np.isfinite(self.lower) & np.isfinite(self.upper)
        if np.any(self.lower[bounded] >= self.upper[bounded]):
            raise ValueError("Box bounds need lower < upper on every bounded component")

    @property
    def size(self) -> int:
        return self.horizon * (self.n + self.m) - self.m

    @property
    def is_empty(self) -> bool:
        return (self.A_ineq.shape[0] == 0 and self.A_eq.shape[0] == 0
                and not np.any(np.isfinite(self.lower)) and not np.any(np.isfinite(self.upper)))

    @classmethod
    def empty(cls, horizon: int, n: int, m: int) -> 'ConstraintSet':
        size = horizon * (n + m) - m
        return cls(horizon, n, m, np.zeros((0, size)), np.zeros(0), np.zeros((0, size)), np.zeros(0),
                   np.full(size, -np.inf), np.full(size, np.inf))

    @classmethod
    def control_box(cls, horizon: int, n: int, m: int,
                    lower: Sequence[float], upper: Sequence[float]) -> 'ConstraintSet':
        """
        Bounds on every predicted control, enforced directly by the QP

        Args:
            horizon: Horizon length l
            n: State dimension
            m: Control dimension
            lower: Per-channel lower levels (length m)
            upper: Per-channel upper levels (length m)
        """
        base = cls.empty(horizon, n, m)
        lo = base.lower.copy()
        hi = base.upper.copy()
        lo[horizon * n:] = np.tile(np.asarray(lower, dtype=float), horizon - 1)
        hi[horizon * n:] = np.tile(np.asarray(upper, dtype=float), horizon - 1)
        return cls(horizon, n, m, base.A_ineq, base.b_ineq, base.A_eq, base.b_eq, lo, hi)


@dataclass(frozen=True)
class QpProblem:
    """Dense QP: minimize 1/2 z'Hz + g'z + offset subject to rows and bounds"""

    H: np.ndarray
    g: np.ndarray
    G_ineq: np.ndarray
    h_ineq: np.ndarray
    G_eq: np.ndarray
    h_eq: np.ndarray
    lb: np.ndarray
    ub: np.ndarray
    offset: float = 0.0

    def __post_init__(self):
        d = self.g.size
        if self.H.shape != (d, d):
            raise QpBuildError(f"H has shape {self.H.shape} for {d} variables")
        if self.G_ineq.shape[1:] != (d,) or self.G_eq.shape[1:] != (d,):
            raise QpBuildError("Constraint rows do not match the number of variables")
        if self.lb.size != d or self.ub.size != d:
            raise QpBuildError("Bounds do not match the number of variables")

    @property
    def dim(self) -> int:
        return self.g.size

    @property
    def is_unconstrained(self) -> bool:
        return (self.G_ineq.shape[0] == 0 and self.G_eq.shape[0] == 0
                and not np.any(np.isfinite(self.lb)) and not np.any(np.isfinite(self.ub)))

    def objective(self, z: np.ndarray) -> float:
        z = np.asarray(z, dtype=float)
        return float(0.5 * z @ self.H @ z + self.g @ z + self.offset)

    @classmethod
    def unconstrained(cls, H, g, offset: float = 0.0) -> 'QpProblem':
        H = np.atleast_2d(np.asarray(H, dtype=float))
        g = np.atleast_1d(np.asarray(g, dtype=float))
        d = g.size
        return cls(H, g, np.zeros((0, d)), np.zeros(0), np.zeros((0, d)), np.zeros(0),
                   np.full(d, -np.inf), np.full(d, np.inf), offset)


@dataclass(frozen=True)
class QpMultipliers:
    """Lagrange multipliers; inequality and bound multipliers are nonnegative"""

    ineq: np.ndarray
    eq: np.ndarray
    lower: np.ndarray
    upper: np.ndarray

    @classmethod
    def zeros(cls, p: QpProblem) -> 'QpMultipliers':
        return cls(np.zeros(p.G_ineq.shape[0]), np.zeros(p.G_eq.shape[0]),
                   np.zeros(p.dim), np.zeros(p.dim))


@dataclass(frozen=True)
class QpSolution:
    """
    Solver result

    active_set indexes the stacked inequality list: general rows first, then
    upper bounds at n_ineq + i, then lower bounds at n_ineq + d + i.
    """

    z: np.ndarray
    status: str
    kkt_residual: float
    active_set: List[int] = field(default_factory=list)
    multipliers: Optional[QpMultipliers] = None
    iterations: int = 0
    tolerance: float = QP_TOLERANCE
    objective: float = float('nan')

    @property
    def ok(self) -> bool:
        return self.status == STATUS_OPTIMAL


def condense(A_seq: Sequence[np.ndarray], B_seq: Sequence[np.ndarray], xi1: np.ndarray,
             w: HorizonWeights, c: Optional[ConstraintSet] = None) -> QpProblem:
    """
    Eliminate predicted states from the horizon QP

    With xi_1 fixed and xi_{j+1} = A_j xi_j + B_j mu_j, every predicted state
    is xi_j = Phi_j xi_1 + Gamma_j z for z = (mu_1, ..., mu_{l-1}). The cost is
    expanded in z and all state-independent terms go into offset, so that
    objective(z) equals the horizon cost.

    Args:
        A_seq: Frozen A_1 ... A_{l-1}
        B_seq: Frozen B_1 ... B_{l-1}
        xi1: Fixed head state
        w: Horizon weights
        c: Optional constraint set over the stacked vector

    Returns:
        Condensed QpProblem
    """
    steps = len(A_seq)
    if steps < 1 or len(B_seq) != steps:
        raise QpBuildError(f"Need matching non-empty coefficient sequences, got {len(A_seq)} and {len(B_seq)}")
    xi1 = np.asarray(xi1, dtype=float).ravel()
    n = xi1.size
    m = np.atleast_2d(B_seq[0]).shape[1] if np.ndim(B_seq[0]) == 2 else 1
    if w.n != n or w.m != m:
        raise QpBuildError(f"Weights are for (n, m) = ({w.n}, {w.m}), model has ({n}, {m})")
    horizon = steps + 1
    d = m * steps

    Phi = np.zeros((horizon, n, n))
    Gamma = np.zeros((horizon, n, d))
    Phi[0] = np.eye(n)
    A_list, B_list = [], []
    for j in range(steps):
        A = np.asarray(A_seq[j], dtype=float)
        B = np.asarray(B_seq[j], dtype=float).reshape(n, m)
        if A.shape != (n, n):
            raise QpBuildError(f"A at stage {j + 1} has shape {A.shape}, expected {(n, n)}")
        Phi[j + 1] = A @ Phi[j]
        Gamma[j + 1] = A @ Gamma[j]
        Gamma[j + 1][:, j * m:(j + 1) * m] += B
        A_list.append(A)
        B_list.append(B)

    free = Phi @ xi1  # (horizon, n)
    weights = np.concatenate([np.repeat(w.Q[None], steps, axis=0), w.Q_terminal[None]])
    weighted = np.einsum('jab,jbd->jad', weights, Gamma)
    weighted_free = np.einsum('jab,jb->ja', weights, free)

    # backward sweep: Lam_s = W_s Gamma_s + A_s' Lam_{s+1}, and control block j
    # couples to the cost only through B_j' Lam_{j+1}
    H = np.kron(np.eye(steps), w.R)
    g = np.zeros(d)
    Lam = weighted[steps].copy()
    lam = weighted_free[steps].copy()
    for j in range(steps - 1, -1, -1):
        block = slice(j * m, (j + 1) * m)
        H[block, :] += B_list[j].T @ Lam
        g[block] = B_list[j].T @ lam
        Lam = weighted[j] + A_list[j].T @ Lam
        lam = weighted_free[j] + A_list[j].T @ lam
    H = 0.5 * (H + H.T)
    offset = 0.5 * float(np.einsum('ja,ja->', free, weighted_free))

    G_ineq, h_ineq = np.zeros((0, d)), np.zeros(0)
    G_eq, h_eq = np.zeros((0, d)), np.zeros(0)
    lb, ub = np.full(d, -np.inf), np.full(d, np.inf)
    if c is not None and not c.is_empty:
        if (c.horizon, c.n, c.m) != (horizon, n, m):
            raise QpBuildError(f"Constraint set is for (l, n, m) = ({c.horizon}, {c.n}, {c.m})")
        V = np.vstack([Gamma.reshape(horizon * n, d), np.eye(d)])
        v0 = np.concatenate([free.ravel(), np.zeros(d)])
        G_ineq = c.A_ineq @ V
        h_ineq = c.b_ineq - c.A_ineq @ v0
        G_eq = c.A_eq @ V
        h_eq = c.b_eq - c.A_eq @ v0

        n_states = horizon * n
        lb = np.maximum(lb, c.lower[n_states:])
        ub = np.minimum(ub, c.upper[n_states:])
        state_rows, state_rhs = [], []
        for s in range(n_states):
            if np.isfinite(c.upper[s]):
                state_rows.append(V[s])
                state_rhs.append(c.upper[s] - v0[s])
            if np.isfinite(c.lower[s]):
                state_rows.append(-V[s])
                state_rhs.append(v0[s] - c.lower[s])
        if state_rows:
            rows, rhs = np.array(state_rows), np.array(state_rhs)
            # rows on the fixed head state are constants: keep only the violated ones
            keep = np.any(rows != 0.0, axis=1) | (rhs < 0.0)
            G_ineq = np.vstack([G_ineq, rows[keep]])
            h_ineq = np.concatenate([h_ineq, rhs[keep]])

    return QpProblem(H, g, G_ineq, h_ineq, G_eq, h_eq, lb, ub, offset)


def kkt_residual(p: QpProblem, z: np.ndarray, multipliers: Optional[QpMultipliers] = None) -> float:
    """
    Infinity norm of the stacked KKT residual

    Covers stationarity, primal feasibility, dual feasibility and
    complementary slackness. Missing multipliers are taken as zero.

    Args:
        p: Problem
        z: Candidate point
        multipliers: Candidate multipliers

    Returns:
        Residual, zero at an exact optimum
    """
    z = np.asarray(z, dtype=float)
    lam = multipliers if multipliers is not None else QpMultipliers.zeros(p)

    stationarity = p.H @ z + p.g + p.G_ineq.T @ lam.ineq + p.G_eq.T @ lam.eq - lam.lower + lam.upper
    slack_ineq = p.h_ineq - p.G_ineq @ z
    finite_lb = np.isfinite(p.lb)
    finite_ub = np.isfinite(p.ub)
    slack_lower = np.where(finite_lb, z - np.where(finite_lb, p.lb, 0.0), np.inf)
    slack_upper = np.where(finite_ub, np.where(finite_ub, p.ub, 0.0) - z, np.inf)

    parts = [
        stationarity,
        np.maximum(-slack_ineq, 0.0),
        p.G_eq @ z - p.h_eq,
        np.maximum(-slack_lower, 0.0),
        np.maximum(-slack_upper, 0.0),
        np.maximum(-lam.ineq, 0.0),
        np.maximum(-lam.lower, 0.0),
        np.maximum(-lam.upper, 0.0),
        lam.ineq * slack_ineq,
        np.where(finite_lb, lam.lower * np.where(finite_lb, slack_lower, 0.0), lam.lower),
        np.where(finite_ub, lam.upper * np.where(finite_ub, slack_upper, 0.0), lam.upper),
    ]
    stacked = np.concatenate([np.atleast_1d(part) for part in parts])
    return float(np.abs(stacked).max()) if stacked.size else 0.0


def _stacked_inequalities(p: QpProblem):
    """General rows, then z <= ub, then -z <= -lb; infinite bounds are skipped"""
    d = p.dim
    eye = np.eye(d)
    upper_idx = np.flatnonzero(np.isfinite(p.ub))
    lower_idx = np.flatnonzero(np.isfinite(p.lb))
    G = np.vstack([p.G_ineq, eye[upper_idx], -eye[lower_idx]])
    h = np.concatenate([p.h_ineq, p.ub[upper_idx], -p.lb[lower_idx]])
    n_ineq = p.G_ineq.shape[0]
    labels = (list(range(n_ineq))
              + [n_ineq + int(i) for i in upper_idx]
              + [n_ineq + d + int(i) for i in lower_idx])
    return G, h, labels


class _ReducedKkt:
    """
    Equality-constrained steps sharing one Cholesky factor of H

    The step of min 1/2 p'Hp + grad'p s.t. A_w p = 0 is
    p = -H^-1 (grad + A_w' lam) with (A_w H^-1 A_w') lam = -A_w H^-1 grad.
    Columns H^-1 a_i are cached per constraint row, so a pivot adds or drops
    one column and only the small Schur complement is refactored.
    """

    def __init__(self, H: np.ndarray):
        try:
            self.factor = cho_factor(H)
        except LinAlgError as exc:
            raise QpBuildError("QP Hessian is not positive definite") from exc
        self._columns = {}

    def _column(self, key, row: np.ndarray) -> np.ndarray:
        if key not in self._columns:
            self._columns[key] = cho_solve(self.factor, row)
        return self._columns[key]

    def solve(self, grad: np.ndarray, rows: np.ndarray, keys: Sequence) -> Tuple[np.ndarray, np.ndarray]:
        """
        Step and multipliers for the working rows

        Args:
            grad: Objective gradient at the current point
            rows: Working constraint rows, shape (k, d)
            keys: Cache key per row

        Returns:
            (step, multipliers)
        """
        h_grad = cho_solve(self.factor, grad)
        if rows.shape[0] == 0:
            return -h_grad, np.zeros(0)
        Y = np.column_stack([self._column(key, row) for key, row in zip(keys, rows)])
        schur = rows @ Y
        rhs = -rows @ h_grad
        try:
            lam = cho_solve(cho_factor(schur), rhs)
        except LinAlgError:
            lam = np.linalg.lstsq(schur, rhs, rcond=None)[0]
        return -(h_grad + Y @ lam), lam


def _tolerance_scale(p: QpProblem, z: np.ndarray) -> float:
    scales = [1.0, float(np.abs(p.g).max(initial=0.0)),
              float(np.abs(p.H).max(initial=0.0)) * float(np.abs(z).max(initial=0.0))]
    if p.G_ineq.size:
        scales.append(float(np.abs(p.G_ineq).max()) * float(np.abs(z).max(initial=0.0)))
    return max(scales)


def solve_qp(p: QpProblem, tolerance: float = QP_TOLERANCE,
             max_iter: Optional[int] = None) -> QpSolution:
    """
    Solve a dense convex QP

    Unconstrained problems take a Cholesky solve. Otherwise a feasible start is
    found with an LP (HiGHS) and a primal active-set method runs from there,
    adding the first blocking constraint and dropping the most negative
    multiplier, ties broken by smallest index.

    Args:
        p: Problem with positive definite H
        tolerance: KKT tolerance, scaled by the problem magnitude
        max_iter: Iteration cap, default 10 * (d + inequality rows)

    Returns:
        QpSolution
    """
    d = p.dim
    if p.is_unconstrained:
        try:
            z = cho_solve(cho_factor(p.H), -p.g)
        except LinAlgError as exc:
            raise QpBuildError("QP Hessian is not positive definite") from exc
        multipliers = QpMultipliers.zeros(p)
        residual = kkt_residual(p, z, multipliers)
        return QpSolution(z, STATUS_OPTIMAL, residual, [], multipliers, 1,
                          tolerance * _tolerance_scale(p, z), p.objective(z))

    G, h, labels = _stacked_inequalities(p)
    n_rows = G.shape[0]
    n_eq = p.G_eq.shape[0]
    cap = max_iter if max_iter is not None else QP_MAX_ITER_FACTOR * (d + n_rows)

    phase1 = linprog(np.zeros(d), A_ub=G if n_rows else None, b_ub=h if n_rows else None,
                     A_eq=p.G_eq if n_eq else None, b_eq=p.h_eq if n_eq else None,
                     bounds=[(None, None)] * d, method='highs')
    if phase1.status == 2:
        logger.debug("Phase-1 LP reports an infeasible constraint set")
        return QpSolution(np.zeros(d), STATUS_INFEASIBLE, float('inf'))
    if not phase1.success:
        logger.warning(f"Phase-1 LP failed: {phase1.message}")
        return QpSolution(np.zeros(d), STATUS_MAX_ITER, float('inf'))

    z = np.asarray(phase1.x, dtype=float)
    kkt = _ReducedKkt(p.H)
    working: List[int] = []

    def working_rows():
        rows = np.vstack([p.G_eq, G[working]]) if working else p.G_eq
        keys = [('eq', i) for i in range(n_eq)] + [('row', i) for i in working]
        return rows, keys

    lam_w = np.zeros(0)
    iterations = 0
    converged = False
    while iterations < cap:
        iterations += 1
        step, lam = kkt.solve(p.H @ z + p.g, *working_rows())
        lam_w = lam[n_eq:]
        if np.abs(step).max(initial=0.0) <= tolerance * max(1.0, np.abs(z).max(initial=0.0)):
            if lam_w.size == 0 or lam_w.min() >= -tolerance * _tolerance_scale(p, z):
                converged = True
                break
            drop = int(np.argmin(lam_w))
            logger.debug(f"Active set: dropping row {labels[working[drop]]}")
            working.pop(drop)
            continue

        alpha, blocking = 1.0, None
        slope = G @ step
        for i in range(n_rows):
            if i in working or slope[i] <= 1e-14 * max(1.0, np.abs(step).max()):
                continue
            ratio = max((h[i] - G[i] @ z) / slope[i], 0.0)
            if ratio < alpha:
                alpha, blocking = ratio, i
        z = z + alpha * step
        if blocking is not None:
            logger.debug(f"Active set: adding row {labels[blocking]}")
            working.append(blocking)
            working.sort()

    lam_rows = np.zeros(n_rows)
    _, lam = kkt.solve(p.H @ z + p.g, *working_rows())
    eq_mult = lam[:n_eq]
    if working:
        lam_rows[working] = np.maximum(lam[n_eq:], 0.0)

    n_ineq = p.G_ineq.shape[0]
    upper = np.zeros(d)
    lower = np.zeros(d)
    for row, label in enumerate(labels):
        if label < n_ineq:
            continue
        if label < n_ineq + d:
            upper[label - n_ineq] = lam_rows[row]
        else:
            lower[label - n_ineq - d] = lam_rows[row]
    multipliers = QpMultipliers(lam_rows[:n_ineq], eq_mult, lower, upper)
    residual = kkt_residual(p, z, multipliers)
    effective_tol = tolerance * _tolerance_scale(p, z)
    status = STATUS_OPTIMAL if converged and residual <= effective_tol else STATUS_MAX_ITER
    if status != STATUS_OPTIMAL:
        logger.warning(f"Active set stopped after {iterations} iterations, KKT residual {residual:.3e}")
    return QpSolution(z, status, residual, sorted(labels[i] for i in working), multipliers,
                      iterations, effective_tol, p.objective(z))
