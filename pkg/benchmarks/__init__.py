"""
Benchmarks Package
Contains the benchmark plants and the closed-loop simulator
"""

from .plants import Benchmark, BENCHMARKS, get_benchmark, kapitza, nonholonomic, emag, triple_integrator
from .simulator import ClosedLoopRecord, DoaResult, rk45, run_closed_loop, convergence_criterion, doa_sweep

__all__ = [
    'Benchmark',
    'BENCHMARKS',
    'get_benchmark',
    'kapitza',
    'nonholonomic',
    'emag',
    'triple_integrator',
    'ClosedLoopRecord',
    'DoaResult',
    'rk45',
    'run_closed_loop',
    'convergence_criterion',
    'doa_sweep',
]
