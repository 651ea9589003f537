"""
Block Observable Canonical Form - LTV realization of input-output SCDC systems
and the deadbeat state reconstruction from the measured I/O window
"""

import logging
from collections import deque
from dataclasses import dataclass, field, replace
from typing import Callable, NamedTuple, Optional, Sequence, Tuple

import numpy as np

from mpc_engine.errors import ModelEvaluationError
from mpc_engine.scdc import CoefficientMap, ScdcModel

logger = logging.getLogger(__name__)


class IoWindow(NamedTuple):
    """
    The last n outputs and inputs, most recent first

    outputs[s - 1] = y_{k-s} and inputs[s - 1] = u_{k-s} for s = 1..n.
    """

    outputs: np.ndarray
    inputs: np.ndarray


WindowMap = Callable[[IoWindow], np.ndarray]


@dataclass(frozen=True)
class IoCoefficients:
    """Order, dimensions and the window maps F_tau, G_tau for tau = 1..n"""

    n: int
    p: int
    m: int
    f_maps: Sequence[WindowMap] = field(repr=False)
    g_maps: Sequence[WindowMap] = field(repr=False)

    def __post_init__(self):
        if min(self.n, self.p, self.m) < 1:
            raise ValueError(f"Order and dimensions must be positive, got n={self.n}, p={self.p}, m={self.m}")
        if len(self.f_maps) != self.n or len(self.g_maps) != self.n:
            raise ValueError(
                f"Need {self.n} F and G maps, got {len(self.f_maps)} and {len(self.g_maps)}"
            )
        object.__setattr__(self, 'f_maps', tuple(self.f_maps))
        object.__setattr__(self, 'g_maps', tuple(self.g_maps))

    @property
    def state_dim(self) -> int:
        return self.n * self.p

    @property
    def output_matrix(self) -> np.ndarray:
        """C = [I_p 0 ... 0]"""
        C = np.zeros((self.p, self.state_dim))
        C[:, :self.p] = np.eye(self.p)
        return C

    def evaluate(self, window: IoWindow) -> Tuple[np.ndarray, np.ndarray]:
        """
        Evaluate every F_tau and G_tau on one window

        Args:
            window: I/O window defining the coefficients

        Returns:
            (F, G) with shapes (n, p, p) and (n, p, m)
        """
        F = np.empty((self.n, self.p, self.p))
        G = np.empty((self.n, self.p, self.m))
        for tau in range(self.n):
            F[tau] = self._checked(self.f_maps[tau](window), (self.p, self.p), f'F_{tau + 1}')
            G[tau] = self._checked(self.g_maps[tau](window), (self.p, self.m), f'G_{tau + 1}')
        return F, G

    @staticmethod
    def _checked(value, shape: Tuple[int, int], name: str) -> np.ndarray:
        value = np.asarray(value, dtype=float)
        if value.size != shape[0] * shape[1]:
            raise ModelEvaluationError(f"{name} has shape {value.shape}, expected {shape}", name)
        value = value.reshape(shape)
        if not np.all(np.isfinite(value)):
            raise ModelEvaluationError(f"{name} is not finite", name)
        return value


class IoHistory:
    """
    Ring buffer of past outputs and inputs, zero-initialized

    The buffer is 2n - 1 samples deep: window() exposes the newest n, and
    window_at(lag) the n-sample window that ended lag pushes earlier, which
    is what the deadbeat reconstruction evaluates older coefficients on.
    """

    def __init__(self, n: int, p: int, m: int, window: Optional[IoWindow] = None):
        """
        Initialize history

        Args:
            n: Order
            p: Output dimension
            m: Input dimension
            window: Optional snapshot (n to 2n - 1 samples, most recent first)
                to start from instead of zeros; missing older samples are zero
        """
        self.n, self.p, self.m = n, p, m
        self.depth = 2 * n - 1
        self._outputs = deque([np.zeros(p) for _ in range(self.depth)], maxlen=self.depth)
        self._inputs = deque([np.zeros(m) for _ in range(self.depth)], maxlen=self.depth)
        if window is not None:
            rows = window.outputs.shape[0]
            if (not n <= rows <= self.depth or window.outputs.shape != (rows, p)
                    or window.inputs.shape != (rows, m)):
                raise ValueError(
                    f"Window shapes {window.outputs.shape}, {window.inputs.shape} do not match ({n}, {p}, {m})"
                )
            for s in range(rows):
                self._outputs[s] = window.outputs[s].copy()
                self._inputs[s] = window.inputs[s].copy()

    @classmethod
    def for_coefficients(cls, co: IoCoefficients, window: Optional[IoWindow] = None) -> 'IoHistory':
        return cls(co.n, co.p, co.m, window)

    def push(self, y: np.ndarray, u: np.ndarray):
        """Record the newest output/input pair, dropping the oldest"""
        y = np.atleast_1d(np.asarray(y, dtype=float)).reshape(self.p)
        u = np.atleast_1d(np.asarray(u, dtype=float)).reshape(self.m)
        self._outputs.appendleft(y.copy())
        self._inputs.appendleft(u.copy())

    def window(self) -> IoWindow:
        """Newest n samples, most recent first"""
        return self.window_at(0)

    def window_at(self, lag: int) -> IoWindow:
        """
        The window as it stood lag pushes ago

        Args:
            lag: 0 .. n - 1

        Returns:
            IoWindow of n samples starting lag entries back
        """
        if not 0 <= lag < self.n:
            raise ValueError(f"Lag {lag} outside 0..{self.n - 1}")
        outputs = np.array([self._outputs[s] for s in range(lag, lag + self.n)])
        inputs = np.array([self._inputs[s] for s in range(lag, lag + self.n)])
        return IoWindow(outputs, inputs)

    def snapshot(self) -> IoWindow:
        """Every stored sample, most recent first"""
        return IoWindow(np.array(self._outputs), np.array(self._inputs))

    def copy(self) -> 'IoHistory':
        return IoHistory(self.n, self.p, self.m, self.snapshot())


def build_bocf(co: IoCoefficients, window: IoWindow) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """
    BOCF matrices for the coefficients defined by one window

    Args:
        co: Input-output coefficients
        window: Data through (y_k, u_k), defining F_{tau,k+1} and G_{tau,k+1}

    Returns:
        (A, B, C) with shapes (np, np), (np, m), (p, np)
    """
    F, G = co.evaluate(window)
    n, p = co.n, co.p
    A = np.zeros((n * p, n * p))
    A[:, :p] = -F.reshape(n * p, p)
    for tau in range(n - 1):
        A[tau * p:(tau + 1) * p, (tau + 1) * p:(tau + 2) * p] = np.eye(p)
    B = G.reshape(n * p, co.m)
    return A, B, co.output_matrix


def reconstruct_state(co: IoCoefficients, hist: IoHistory, y_k: np.ndarray) -> np.ndarray:
    """
    Deadbeat reconstruction of x_k from y_k and the stored I/O history

    Block 1 is y_k. Block tau sums -F_{tau+s-1,k-s+1} y_{k-s} + G_{tau+s-1,k-s+1} u_{k-s}
    over s = 1..n-tau+1. The coefficients of lag s are evaluated on the window
    ending at (y_{k-s}, u_{k-s}), the one the recursion used when that sample
    entered, so the result equals the BOCF recursion state for any
    window-dependent coefficients.

    Args:
        co: Input-output coefficients
        hist: History holding y_{k-1}, u_{k-1} and older samples
        y_k: Current measured output

    Returns:
        BOCF state of dimension n*p
    """
    n, p = co.n, co.p
    x = np.zeros(n * p)
    x[:p] = np.atleast_1d(np.asarray(y_k, dtype=float)).reshape(p)
    if n == 1:
        return x
    newest = hist.window()
    for s in range(1, n):
        F, G = co.evaluate(hist.window_at(s - 1))
        y_s, u_s = newest.outputs[s - 1], newest.inputs[s - 1]
        for tau in range(2, n - s + 2):
            idx = tau + s - 2
            x[(tau - 1) * p:tau * p] += -F[idx] @ y_s + G[idx] @ u_s
    return x


@dataclass(frozen=True)
class BocfModel(ScdcModel):
    """
    SCDC model over the BOCF state

    Stage j of a horizon pass pushes the predicted output C x and control u
    onto a copy of the bound measured history and builds A, B from the
    resulting window. Unbound models start from the zero history.
    """

    coeff: Optional[CoefficientMap] = field(default=None, repr=False)
    io: Optional[IoCoefficients] = None
    history: Optional[IoWindow] = field(default=None, repr=False)

    def __post_init__(self):
        if self.io is None:
            raise ValueError("BocfModel needs input-output coefficients")
        if self.n != self.io.state_dim or self.m != self.io.m:
            raise ValueError(f"Model ({self.n}, {self.m}) does not match coefficients "
                             f"({self.io.state_dim}, {self.io.m})")
        object.__setattr__(self, 'coeff', self._first_stage)

    def _first_stage(self, x: np.ndarray, u: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        return self.rollout()(x, u)

    def with_history(self, hist: IoHistory) -> 'BocfModel':
        """Model bound to a snapshot of the measured history"""
        return replace(self, history=hist.window())

    def rollout(self) -> CoefficientMap:
        predicted = IoHistory.for_coefficients(self.io, self.history)
        C = self.io.output_matrix

        def coefficients(x: np.ndarray, u: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
            x = np.asarray(x, dtype=float)
            predicted.push(C @ x, u)
            A, B, _ = build_bocf(self.io, predicted.window())
            return A, B

        return coefficients


def bocf_scdc_model(co: IoCoefficients, label: str = 'bocf') -> BocfModel:
    """
    Wrap the BOCF realization as an SCDC model

    Args:
        co: Input-output coefficients
        label: Name used in messages

    Returns:
        Unbound BocfModel; bind the measured history per step with with_history
    """
    model = BocfModel(n=co.state_dim, m=co.m, label=label, io=co)
    logger.debug(f"BOCF model '{label}' with n={co.n}, p={co.p}, m={co.m}")
    return model
