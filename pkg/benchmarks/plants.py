"""
Benchmark Plants - Continuous truth dynamics, SCDC internal models and parameter sets
"""

import logging
from dataclasses import dataclass, field
from typing import Callable, Dict, Optional, Tuple

import numpy as np
from scipy.linalg import expm

from config.mpc_config import BENCHMARK_CONFIG, BENCHMARK_NAMES
from mpc_engine.bocf import IoCoefficients, bocf_scdc_model
from mpc_engine.controller import MpcConfig
from mpc_engine.errors import ConfigError, SingularityError
from mpc_engine.qp import HorizonWeights
from mpc_engine.scdc import (
    SaturationLike, SaturationSpec, ScdcModel, saturate_vector,
    saturation_gain_scalar, saturation_gain_vector, sinc,
)

logger = logging.getLogger(__name__)

VectorField = Callable[[np.ndarray, np.ndarray], np.ndarray]
StepMap = Callable[[np.ndarray, np.ndarray], np.ndarray]


@dataclass(frozen=True)
class KapitzaParams:
    """Pendulum length l, wheel radius r, arm length a, gravity g"""

    sample_time: float
    l: float
    r: float
    a: float
    g: float
    sat: SaturationSpec

    def __post_init__(self):
        for name in ('sample_time', 'l', 'r', 'a', 'g'):
            if not getattr(self, name) > 0:
                raise ValueError(f"Kapitza parameter {name} must be positive")

    def crank_factor(self, phi: float) -> float:
        """(r/l)(cos phi + r cos 2phi / a)"""
        return self.r / self.l * (np.cos(phi) + self.r * np.cos(2.0 * phi) / self.a)


@dataclass(frozen=True)
class NonholonomicParams:
    sample_time: float
    sat: SaturationSpec

    def __post_init__(self):
        if not self.sample_time > 0:
            raise ValueError("Sample time must be positive")


@dataclass(frozen=True)
class EmagParams:
    """
    Electromagnetically controlled oscillator

    The control is u = i - i_star; sat bounds the current i, and
    shifted_sat bounds u accordingly.
    """

    sample_time: float
    m_bar: float
    k_bar: float
    b_bar: float
    q_bar: float
    eps_bar: float
    r: float
    sat: SaturationSpec

    def __post_init__(self):
        for name in ('sample_time', 'm_bar', 'k_bar', 'b_bar', 'q_bar', 'eps_bar'):
            if not getattr(self, name) > 0:
                raise ValueError(f"Oscillator parameter {name} must be positive")
        if not 0 < self.r < self.q_bar:
            raise ValueError(f"Setpoint r={self.r} must lie in (0, q_bar={self.q_bar})")

    @property
    def i_star(self) -> float:
        """Equilibrium current holding the mass at r"""
        return float(np.sqrt((self.q_bar - self.r) ** 2 * self.k_bar * self.r / self.eps_bar))

    @property
    def shifted_sat(self) -> SaturationSpec:
        return self.sat.shifted(self.i_star)

    def gap(self, x1: float) -> float:
        """Distance from the mass to the magnet"""
        return self.q_bar - x1 - self.r


@dataclass(frozen=True)
class TripleIntegratorParams:
    sample_time: float
    sat: SaturationSpec

    def __post_init__(self):
        if not self.sample_time > 0:
            raise ValueError("Sample time must be positive")

    @property
    def zoh_gain(self) -> float:
        """Leading coefficient T^3/6 of the sampled transfer function"""
        return self.sample_time ** 3 / 6.0


@dataclass(frozen=True)
class Benchmark:
    """
    One closed-loop benchmark

    truth takes the raw control and applies saturation inside. euler_map is
    the independent one-step reference the internal model is checked against
    (Euler step of truth, or the exact ZOH map for the triple integrator).
    Output-feedback benchmarks carry io and output_matrix.
    """

    name: str
    truth: VectorField = field(repr=False)
    internal: ScdcModel = field(repr=False)
    params: object
    default_config: MpcConfig = field(repr=False)
    x0: np.ndarray
    u0: np.ndarray
    steps: int
    sample_time: float
    saturation: SaturationLike
    euler_map: StepMap = field(repr=False)
    extra_columns: Tuple[str, ...] = ()
    extras: Optional[Callable[[np.ndarray, np.ndarray], np.ndarray]] = field(default=None, repr=False)
    io: Optional[IoCoefficients] = field(default=None, repr=False)
    output_matrix: Optional[np.ndarray] = field(default=None, repr=False)
    settings: Dict[str, object] = field(default_factory=dict, repr=False)

    def __post_init__(self):
        if not self.sample_time > 0:
            raise ValueError(f"{self.name}: sample time must be positive")
        object.__setattr__(self, 'x0', np.asarray(self.x0, dtype=float))
        object.__setattr__(self, 'u0', np.atleast_1d(np.asarray(self.u0, dtype=float)))
        if self.u0.size != self.internal.m:
            raise ValueError(f"{self.name}: u0 has {self.u0.size} entries, model has m={self.internal.m}")
        state_dim = self.x0.size
        if self.io is None and state_dim != self.internal.n:
            raise ValueError(f"{self.name}: x0 has {state_dim} entries, model has n={self.internal.n}")

    @property
    def sim_horizon(self) -> float:
        return self.steps * self.sample_time

    @property
    def output_feedback(self) -> bool:
        return self.io is not None

    @property
    def m(self) -> int:
        return self.internal.m

    def saturate(self, u: np.ndarray) -> np.ndarray:
        return saturate_vector(u, self.saturation)

    def measure(self, x: np.ndarray) -> np.ndarray:
        """Measured output; the full state for state-feedback benchmarks"""
        if self.output_matrix is None:
            return np.asarray(x, dtype=float)
        return self.output_matrix @ np.asarray(x, dtype=float)

    def extra_values(self, x: np.ndarray, u: np.ndarray) -> np.ndarray:
        if self.extras is None:
            return np.zeros(0)
        return np.asarray(self.extras(x, u), dtype=float)


def _settings(name: str, overrides: Optional[Dict[str, object]]) -> Dict[str, object]:
    settings = dict(BENCHMARK_CONFIG[name])
    if overrides:
        settings.update(overrides)
    return settings


def _default_config(settings: Dict[str, object]) -> MpcConfig:
    weights = HorizonWeights.diagonal(settings['q_diag'], settings['r_diag'],
                                      settings.get('q_terminal_diag'))
    return MpcConfig(int(settings['horizon']), int(settings['rho']), float(settings['eps']), weights)


def kapitza(overrides: Optional[Dict[str, object]] = None) -> Benchmark:
    """
    Kapitza pendulum with slider-crank actuation

    State (theta, theta_dot, phi), control is the wheel speed.

    Args:
        overrides: Entries replacing the defaults in BENCHMARK_CONFIG['kapitza']

    Returns:
        Benchmark
    """
    s = _settings('kapitza', overrides)
    p = KapitzaParams(float(s['sample_time']), float(s['l']), float(s['r']), float(s['a']), float(s['g']),
                      SaturationSpec(float(s['u_min']), float(s['u_max'])))
    T = p.sample_time

    def truth(x: np.ndarray, u: np.ndarray) -> np.ndarray:
        su = saturate_vector(u, p.sat)[0]
        return np.array([
            x[1],
            p.g / p.l * np.sin(x[0]) - p.crank_factor(x[2]) * np.sin(x[0]) * su * su,
            su,
        ])

    def coeff(x: np.ndarray, u: np.ndarray):
        A = np.eye(3)
        A[0, 1] += T
        A[1, 0] += T * p.g / p.l * sinc(x[0])
        u0 = float(u[0])
        B = T * np.array([
            [0.0],
            [-p.crank_factor(x[2]) * np.sin(x[0]) * saturation_gain_scalar(u0, p.sat, power=2)],
            [saturation_gain_scalar(u0, p.sat)],
        ])
        return A, B

    def euler_map(x: np.ndarray, u: np.ndarray) -> np.ndarray:
        return np.asarray(x, dtype=float) + T * truth(np.asarray(x, dtype=float), np.atleast_1d(u))

    logger.info(f"Built kapitza benchmark (T_s={T}, l={p.l}, levels=({p.sat.u_min}, {p.sat.u_max}))")
    return Benchmark(
        name='kapitza', truth=truth, internal=ScdcModel(3, 1, coeff, 'kapitza'), params=p,
        default_config=_default_config(s), x0=s['x0'], u0=s['u0'], steps=int(s['steps']),
        sample_time=T, saturation=p.sat, euler_map=euler_map, settings=s,
    )


def nonholonomic(overrides: Optional[Dict[str, object]] = None) -> Benchmark:
    """
    Nonholonomic integrator with component-wise magnitude saturation

    Args:
        overrides: Entries replacing the defaults in BENCHMARK_CONFIG['nonholonomic']

    Returns:
        Benchmark
    """
    s = _settings('nonholonomic', overrides)
    p = NonholonomicParams(float(s['sample_time']), SaturationSpec(float(s['u_min']), float(s['u_max'])))
    T = p.sample_time

    def input_matrix(x: np.ndarray) -> np.ndarray:
        return np.array([[1.0, 0.0], [0.0, 1.0], [-x[1], x[0]]])

    def truth(x: np.ndarray, u: np.ndarray) -> np.ndarray:
        return input_matrix(x) @ saturate_vector(u, p.sat)

    def coeff(x: np.ndarray, u: np.ndarray):
        return np.eye(3), T * input_matrix(x) @ saturation_gain_vector(u, p.sat)

    def euler_map(x: np.ndarray, u: np.ndarray) -> np.ndarray:
        return np.asarray(x, dtype=float) + T * truth(np.asarray(x, dtype=float), np.atleast_1d(u))

    logger.info(f"Built nonholonomic benchmark (T_s={T}, levels=({p.sat.u_min}, {p.sat.u_max}))")
    return Benchmark(
        name='nonholonomic', truth=truth, internal=ScdcModel(3, 2, coeff, 'nonholonomic'), params=p,
        default_config=_default_config(s), x0=s['x0'], u0=s['u0'], steps=int(s['steps']),
        sample_time=T, saturation=p.sat, euler_map=euler_map, settings=s,
    )


def emag(overrides: Optional[Dict[str, object]] = None) -> Benchmark:
    """
    Electromagnetically controlled oscillator, regulated to position r

    The state is x = z - (r, 0) and the control is u = i - i_star. The
    current limits in the settings bound i, so the control saturates
    asymmetrically at (u_min - i_star, u_max - i_star).

    Args:
        overrides: Entries replacing the defaults in BENCHMARK_CONFIG['emag']

    Returns:
        Benchmark
    """
    s = _settings('emag', overrides)
    p = EmagParams(float(s['sample_time']), float(s['m_bar']), float(s['k_bar']), float(s['b_bar']),
                   float(s['q_bar']), float(s['eps_bar']), float(s['r']),
                   SaturationSpec(float(s['u_min']), float(s['u_max'])))
    T = p.sample_time
    sat_u = p.shifted_sat
    i_star = p.i_star

    def truth(x: np.ndarray, u: np.ndarray) -> np.ndarray:
        gap = p.gap(x[0])
        if gap <= 0.0:
            raise SingularityError(f"emag: mass reached the magnet (position {x[0] + p.r:.6g} >= {p.q_bar})")
        current = saturate_vector(u, sat_u)[0] + i_star
        return np.array([
            x[1],
            -p.b_bar / p.m_bar * x[1] - p.k_bar / p.m_bar * (x[0] + p.r)
            + p.eps_bar * current * current / (p.m_bar * gap * gap),
        ])

    d_rest = p.q_bar - p.r

    def coeff(x: np.ndarray, u: np.ndarray):
        # (su + i_star)^2 = su (su + 2 i_star) + i_star^2; the i_star^2 force
        # minus the spring preload is k r x1 (2 d - x1) / gap^2 and goes into A
        gap = p.gap(x[0])
        gap2 = gap * gap
        stiffness = -p.k_bar / p.m_bar + p.k_bar * p.r * (2.0 * d_rest - x[0]) / (p.m_bar * gap2)
        A = np.eye(2) + T * np.array([[0.0, 1.0], [stiffness, -p.b_bar / p.m_bar]])
        u0 = float(u[0])
        su = saturate_vector(u, sat_u)[0]
        gain = saturation_gain_scalar(u0, sat_u) * (2.0 * i_star + su)
        B = T * np.array([[0.0], [p.eps_bar * gain / (p.m_bar * gap2)]])
        return A, B

    def euler_map(x: np.ndarray, u: np.ndarray) -> np.ndarray:
        return np.asarray(x, dtype=float) + T * truth(np.asarray(x, dtype=float), np.atleast_1d(u))

    def extras(x: np.ndarray, u: np.ndarray) -> np.ndarray:
        return np.array([x[0] + p.r, saturate_vector(u, sat_u)[0] + i_star])

    x0 = np.asarray(s.get('x0', np.asarray(s['z0'], dtype=float) - np.array([p.r, 0.0])), dtype=float)
    logger.info(f"Built emag benchmark (T_s={T}, i_star={i_star:.6g}, "
                f"control levels=({sat_u.u_min:.6g}, {sat_u.u_max:.6g}))")
    return Benchmark(
        name='emag', truth=truth, internal=ScdcModel(2, 1, coeff, 'emag'), params=p,
        default_config=_default_config(s), x0=x0, u0=s['u0'], steps=int(s['steps']),
        sample_time=T, saturation=sat_u, euler_map=euler_map,
        extra_columns=('position', 'current'), extras=extras, settings=s,
    )


def triple_integrator_io(p: TripleIntegratorParams) -> IoCoefficients:
    """
    Input-output coefficients of the sampled triple integrator

    y_k = 3 y_{k-1} - 3 y_{k-2} + y_{k-3}
          + c (sigma(u_{k-1}) + 4 sigma(u_{k-2}) + sigma(u_{k-3})), c = T^3/6,
    written as y_k = -sum F_tau y_{k-tau} + sum G_tau u_{k-tau}. In the BOCF
    recursion the lag-tau term multiplies u_{k-tau} by the G_tau evaluated on
    the window ending at u_{k-tau}, so every G_tau reads the newest input:
    G_tau = c_tau sigma(u) / u with u = window.inputs[0].
    """
    c = p.zoh_gain
    f_values = (-3.0, 3.0, -1.0)
    g_weights = (c, 4.0 * c, c)

    def constant(value: float):
        return lambda window: np.array([[value]])

    def gain(weight: float):
        return lambda window: np.array([[weight * saturation_gain_scalar(float(window.inputs[0][0]), p.sat)]])

    return IoCoefficients(
        n=3, p=1, m=1,
        f_maps=[constant(value) for value in f_values],
        g_maps=[gain(weight) for weight in g_weights],
    )


def triple_integrator(overrides: Optional[Dict[str, object]] = None) -> Benchmark:
    """
    Triple integrator under asymmetric saturation, controlled from its output

    The controller works on the BOCF state reconstructed from measured
    outputs and applied (unsaturated) controls.

    Args:
        overrides: Entries replacing the defaults in BENCHMARK_CONFIG['triple_integrator']

    Returns:
        Benchmark
    """
    s = _settings('triple_integrator', overrides)
    p = TripleIntegratorParams(float(s['sample_time']), SaturationSpec(float(s['u_min']), float(s['u_max'])))
    T = p.sample_time
    A_c = np.array([[0.0, 1.0, 0.0], [0.0, 0.0, 1.0], [0.0, 0.0, 0.0]])
    B_c = np.array([0.0, 0.0, 1.0])
    C = np.array([[1.0, 0.0, 0.0]])

    augmented = np.zeros((4, 4))
    augmented[:3, :3] = A_c
    augmented[:3, 3] = B_c
    zoh = expm(augmented * T)
    A_d, B_d = zoh[:3, :3], zoh[:3, 3]

    def truth(x: np.ndarray, u: np.ndarray) -> np.ndarray:
        return A_c @ x + B_c * saturate_vector(u, p.sat)[0]

    def zoh_map(x: np.ndarray, u: np.ndarray) -> np.ndarray:
        return A_d @ np.asarray(x, dtype=float) + B_d * saturate_vector(u, p.sat)[0]

    def extras(x: np.ndarray, u: np.ndarray) -> np.ndarray:
        return C @ x

    io = triple_integrator_io(p)
    logger.info(f"Built triple_integrator benchmark (T_s={T}, levels=({p.sat.u_min}, {p.sat.u_max}))")
    return Benchmark(
        name='triple_integrator', truth=truth, internal=bocf_scdc_model(io, 'triple_integrator'),
        params=p, default_config=_default_config(s), x0=s['x0'], u0=s['u0'], steps=int(s['steps']),
        sample_time=T, saturation=p.sat, euler_map=zoh_map,
        extra_columns=('y',), extras=extras, io=io, output_matrix=C, settings=s,
    )


BENCHMARKS: Dict[str, Callable[..., Benchmark]] = {
    'kapitza': kapitza,
    'nonholonomic': nonholonomic,
    'emag': emag,
    'triple_integrator': triple_integrator,
}


def get_benchmark(name: str, overrides: Optional[Dict[str, object]] = None) -> Benchmark:
    """
    Build a benchmark by name

    Args:
        name: One of BENCHMARK_NAMES
        overrides: Settings replacing the defaults

    Returns:
        Benchmark
    """
    if name not in BENCHMARKS:
        raise ConfigError(f"Unknown benchmark '{name}', expected one of {', '.join(BENCHMARK_NAMES)}")
    return BENCHMARKS[name](overrides)
