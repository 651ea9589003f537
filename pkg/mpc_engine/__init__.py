"""
MPC Engine Package
Contains SCDC models, the condensed horizon QP, the iterated controller and
the block observable canonical form for output feedback
"""

from .errors import (
    IscdError, ModelEvaluationError, SingularityError, QpBuildError, DivergenceError,
    ControllerError, StiffnessError, ConfigError, QpSolveError,
)
from .scdc import (
    SaturationSpec, ScdcModel, step_pseudolinear, saturate, saturate_vector, saturation_levels,
    saturation_gain_scalar, saturation_gain_vector, sinc,
)
from .qp import HorizonWeights, ConstraintSet, QpProblem, QpSolution, condense, kkt_residual, solve_qp
from .controller import (
    MpcConfig, ControlSequence, StepDiagnostics, IscdController, propagate, build_iteration_qp,
    iterate_once, warm_start_shift, evaluate_cost, step, finite_horizon_lqr,
)
from .bocf import IoCoefficients, IoHistory, IoWindow, BocfModel, build_bocf, reconstruct_state, bocf_scdc_model

__all__ = [
    'IscdError',
    'ModelEvaluationError',
    'SingularityError',
    'QpBuildError',
    'DivergenceError',
    'ControllerError',
    'StiffnessError',
    'ConfigError',
    'QpSolveError',
    'SaturationSpec',
    'ScdcModel',
    'step_pseudolinear',
    'saturate',
    'saturate_vector',
    'saturation_levels',
    'saturation_gain_scalar',
    'saturation_gain_vector',
    'sinc',
    'HorizonWeights',
    'ConstraintSet',
    'QpProblem',
    'QpSolution',
    'condense',
    'kkt_residual',
    'solve_qp',
    'MpcConfig',
    'ControlSequence',
    'StepDiagnostics',
    'IscdController',
    'propagate',
    'build_iteration_qp',
    'iterate_once',
    'warm_start_shift',
    'evaluate_cost',
    'step',
    'finite_horizon_lqr',
    'IoCoefficients',
    'IoHistory',
    'IoWindow',
    'BocfModel',
    'build_bocf',
    'reconstruct_state',
    'bocf_scdc_model',
]
