"""
SCDC Models - Pseudo-linear plant representation f(x, u) = A(x, u)x + B(x, u)u
Saturation written as a control-dependent coefficient and the sinc helper
"""

import logging
from dataclasses import dataclass, field
from typing import Callable, Sequence, Tuple, Union

import numpy as np

from config.mpc_config import SINGULARITY_GUARD
from mpc_engine.errors import ModelEvaluationError, SingularityError

logger = logging.getLogger(__name__)

CoefficientMap = Callable[[np.ndarray, np.ndarray], Tuple[np.ndarray, np.ndarray]]


@dataclass(frozen=True)
class SaturationSpec:
    """Magnitude saturation levels for one scalar channel"""

    u_min: float
    u_max: float

    def __post_init__(self):
        if not self.u_min < self.u_max:
            raise ValueError(f"Saturation needs u_min < u_max, got ({self.u_min}, {self.u_max})")

    @property
    def zero_is_interior(self) -> bool:
        return self.u_min < 0.0 < self.u_max

    def shifted(self, offset: float) -> 'SaturationSpec':
        """
        Levels expressed in coordinates u = v - offset

        Used for the asymmetric saturation of a control measured relative to
        an operating point (current limits minus the equilibrium current).
        """
        return SaturationSpec(self.u_min - offset, self.u_max - offset)


SaturationLike = Union[SaturationSpec, Sequence[SaturationSpec]]


@dataclass(frozen=True)
class ScdcModel:
    """
    Discrete plant in pseudo-linear form

    coeff returns the full one-step matrices, so that one step of the plant is
    x+ = A(x, u) x + B(x, u) u with the identity already folded into A.
    """

    n: int
    m: int
    coeff: CoefficientMap = field(repr=False)
    label: str = ''

    def coefficients(self, x: np.ndarray, u: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        """
        Evaluate A(x, u), B(x, u) and check their shapes

        Args:
            x: State, shape (n,)
            u: Control, shape (m,)

        Returns:
            (A, B) with shapes (n, n) and (n, m)
        """
        A, B = self.coeff(np.asarray(x, dtype=float), np.asarray(u, dtype=float))
        A = np.asarray(A, dtype=float)
        B = np.asarray(B, dtype=float)
        if B.ndim < 2:
            B = B.reshape(self.n, -1)
        if A.shape != (self.n, self.n):
            raise ModelEvaluationError(f"{self.label}: A has shape {A.shape}, expected {(self.n, self.n)}", 'A')
        if B.shape != (self.n, self.m):
            raise ModelEvaluationError(f"{self.label}: B has shape {B.shape}, expected {(self.n, self.m)}", 'B')
        return A, B

    def rollout(self) -> CoefficientMap:
        """
        Coefficient function for one forward pass over a horizon

        Memoryless models simply return their coefficient map. Models whose
        coefficients depend on earlier stages return a fresh stateful function
        for every pass, so callers must request one per propagation.
        """
        return self.coefficients


def step_pseudolinear(model: ScdcModel, x: np.ndarray, u: np.ndarray) -> np.ndarray:
    """
    One step of the pseudo-linear map A(x, u)x + B(x, u)u

    Args:
        model: SCDC model
        x: State
        u: Control

    Returns:
        Next state
    """
    x = np.asarray(x, dtype=float)
    u = np.atleast_1d(np.asarray(u, dtype=float))
    A, B = model.rollout()(x, u)
    x_next = A @ x + B @ u
    if not np.all(np.isfinite(x_next)):
        culprit = 'A' if not np.all(np.isfinite(A)) else 'B' if not np.all(np.isfinite(B)) else 'A x + B u'
        raise ModelEvaluationError(f"{model.label}: non-finite step caused by {culprit}", culprit)
    return x_next


def saturate(u: float, spec: SaturationSpec) -> float:
    """Clamp a scalar to [u_min, u_max]"""
    return float(np.clip(u, spec.u_min, spec.u_max))


def _channel_specs(spec: SaturationLike, m: int) -> Sequence[SaturationSpec]:
    if isinstance(spec, SaturationSpec):
        return [spec] * m
    if len(spec) != m:
        raise ValueError(f"Expected {m} saturation specs, got {len(spec)}")
    return list(spec)


def saturation_levels(spec: SaturationLike, m: int) -> Tuple[np.ndarray, np.ndarray]:
    """Per-channel (lower, upper) level vectors"""
    specs = _channel_specs(spec, m)
    return np.array([s.u_min for s in specs]), np.array([s.u_max for s in specs])


def saturate_vector(u: np.ndarray, spec: SaturationLike) -> np.ndarray:
    """
    Component-wise saturation

    Args:
        u: Control vector
        spec: One spec for all channels or one per channel

    Returns:
        sigma(u)
    """
    u = np.atleast_1d(np.asarray(u, dtype=float))
    lower, upper = saturation_levels(spec, u.size)
    return np.clip(u, lower, upper)


def saturation_gain_scalar(u: float, spec: SaturationSpec, power: int = 1) -> float:
    """
    Saturation as a control-dependent coefficient

    power=1 gives sigma(u)/u, power=2 gives sigma(u)^2/u. At u = 0 the
    removable singularity is filled by its limit (1 and 0 respectively),
    which exists only when 0 lies strictly inside the saturation levels.

    Args:
        u: Scalar control
        spec: Saturation levels
        power: 1 or 2

    Returns:
        Gain value
    """
    if power not in (1, 2):
        raise ValueError(f"power must be 1 or 2, got {power}")
    if abs(u) < SINGULARITY_GUARD:
        if not spec.zero_is_interior:
            logger.warning(f"Saturation gain requested at u={u:.3e} with zero outside ({spec.u_min}, {spec.u_max})")
            raise SingularityError(
                f"sigma(u)/u has no limit at u=0 for levels ({spec.u_min}, {spec.u_max})"
            )
        return 1.0 if power == 1 else 0.0
    s = saturate(u, spec)
    return s / u if power == 1 else s * s / u


def saturation_gain_vector(u: np.ndarray, spec: SaturationLike) -> np.ndarray:
    """
    Matrix M(u) with M(u) u = sigma(u)

    Identity when no channel saturates, otherwise the rank-one matrix
    sigma(u) u^T / ||u||^2.

    Args:
        u: Control vector
        spec: One spec for all channels or one per channel

    Returns:
        (m, m) gain matrix
    """
    u = np.atleast_1d(np.asarray(u, dtype=float))
    s = saturate_vector(u, spec)
    if np.array_equal(s, u):
        return np.eye(u.size)
    norm_sq = float(u @ u)
    if norm_sq == 0.0:
        logger.warning(f"Vector saturation gain at u=0 with sigma(0)={s}")
        raise SingularityError("sigma(0) != 0 cannot be factored as M(0) 0")
    return np.outer(s, u) / norm_sq


def sinc(x: float) -> float:
    """Unnormalized sinc, sin(x)/x with sinc(0) = 1"""
    return float(np.sinc(x / np.pi))
