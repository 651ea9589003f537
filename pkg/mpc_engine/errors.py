"""
Exception hierarchy shared by the engine, the benchmarks and the CLI
"""

from typing import Optional


class IscdError(Exception):
    """Base class for every error raised by this project"""


class ModelEvaluationError(IscdError, ValueError):
    """SCDC coefficients produced a non-finite one-step map"""

    def __init__(self, message: str, coefficient: Optional[str] = None):
        super().__init__(message)
        self.coefficient = coefficient


class SingularityError(IscdError, ZeroDivisionError):
    """A removable-singularity gain was requested where the limit does not exist"""


class QpBuildError(IscdError, ValueError):
    """Inconsistent dimensions while assembling a quadratic program"""


class DivergenceError(IscdError, ArithmeticError):
    """A propagated trajectory or vector field became non-finite"""

    def __init__(self, message: str, stage: Optional[int] = None):
        super().__init__(message)
        self.stage = stage


class ControllerError(IscdError, RuntimeError):
    """Controller failure at a given time step"""

    def __init__(self, message: str, step: Optional[int] = None):
        super().__init__(message)
        self.step = step


class StiffnessError(IscdError, RuntimeError):
    """Integrator step size underflow"""


class ConfigError(IscdError, ValueError):
    """Invalid configuration or command-line usage"""


class QpSolveError(IscdError, RuntimeError):
    """A horizon QP ended without an optimal solution"""

    def __init__(self, message: str, solution=None):
        super().__init__(message)
        self.solution = solution
