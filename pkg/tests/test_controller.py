"""Tests for the iterated controller: propagation, stopping rule, warm start and LQR reduction"""

import inspect

import numpy as np
import pytest
from numpy.testing import assert_allclose

from benchmarks.plants import kapitza
from mpc_engine.controller import (
    ControlSequence, IscdController, MpcConfig, build_iteration_qp, evaluate_cost,
    finite_horizon_lqr, iterate_once, propagate, step, warm_start_shift,
)
from mpc_engine.errors import ControllerError
from mpc_engine.qp import ConstraintSet, HorizonWeights
from mpc_engine.scdc import ScdcModel, step_pseudolinear


def _lti(A, B, label='lti') -> ScdcModel:
    A = np.atleast_2d(np.asarray(A, dtype=float))
    B = np.asarray(B, dtype=float).reshape(A.shape[0], -1)
    return ScdcModel(A.shape[0], B.shape[1], lambda x, u: (A, B), label)


def _random_lti(rng, n: int, m: int = 1):
    A = rng.normal(scale=0.5, size=(n, n)) + np.eye(n)
    B = rng.normal(size=(n, m))
    return A, B


@pytest.fixture
def scalar_cfg():
    return MpcConfig(3, 5, 1e-3, HorizonWeights.diagonal([1.0], [1.0]))


class TestMpcConfig:
    @pytest.mark.parametrize("horizon, rho, eps", [(1, 1, 1e-3), (3, 0, 1e-3), (3, 1, 0.0)])
    def test_rejects_invalid(self, horizon, rho, eps):
        with pytest.raises(ValueError):
            MpcConfig(horizon, rho, eps, HorizonWeights.diagonal([1.0], [1.0]))

    def test_defaults_to_empty_constraints(self, scalar_cfg):
        assert scalar_cfg.constraints.is_empty


class TestPropagate:
    def test_zero_model(self):
        model = ScdcModel(2, 1, lambda x, u: (np.zeros((2, 2)), np.zeros((2, 1))))
        rollout = propagate(model, np.ones(2), np.ones(1), ControlSequence(np.ones(3), 1))
        assert_allclose(rollout.states, 0.0)

    def test_cumulative_sum(self):
        rollout = propagate(_lti(1.0, 1.0), np.array([1.0]), np.array([1.0]), ControlSequence([1.0, 1.0], 1))
        assert_allclose(rollout.states.ravel(), [2.0, 3.0, 4.0])

    def test_first_state_ignores_sequence(self, rng):
        model = kapitza().internal
        x = np.array([np.pi, np.pi, np.pi])
        a = propagate(model, x, np.zeros(1), ControlSequence(rng.normal(size=5), 1))
        b = propagate(model, x, np.zeros(1), ControlSequence(rng.normal(size=5), 1))
        assert_allclose(a.states[0], b.states[0], atol=0)
        assert_allclose(a.states[0], [np.pi + 0.1 * np.pi, np.pi, np.pi], atol=1e-12)

    def test_kapitza_matches_euler_rollout(self):
        b = kapitza()
        x = np.array([np.pi, np.pi, np.pi])
        U = ControlSequence.constant(np.zeros(1), 6)
        rollout = propagate(b.internal, x, np.zeros(1), U)
        reference = x
        for j in range(6):
            reference = b.euler_map(reference, np.zeros(1))
            assert_allclose(rollout.states[j], reference, rtol=1e-12, atol=1e-12)


class TestWarmStart:
    def test_shift_duplicates_last(self):
        shifted = warm_start_shift(ControlSequence([1.0, 2.0, 3.0], 1))
        assert_allclose(shifted.values, [2.0, 3.0, 3.0])

    def test_single_element(self):
        assert_allclose(warm_start_shift(ControlSequence([4.0], 1)).values, [4.0])

    def test_zero_sequence(self):
        assert_allclose(warm_start_shift(ControlSequence(np.zeros(6), 2)).values, 0.0)

    def test_vector_controls(self):
        shifted = warm_start_shift(ControlSequence([1.0, 2.0, 3.0, 4.0], 2))
        assert_allclose(shifted.values, [3.0, 4.0, 3.0, 4.0])


class TestEvaluateCost:
    def test_zero(self):
        w = HorizonWeights.diagonal([1.0], [1.0])
        assert evaluate_cost(np.zeros((3, 1)), ControlSequence(np.zeros(2), 1), w) == 0.0

    def test_two_stage_arithmetic(self):
        w = HorizonWeights.diagonal([1.0], [1.0])
        assert_allclose(evaluate_cost(np.array([[1.0], [2.0]]), ControlSequence([3.0], 1), w), 7.0)

    def test_minimizer_beats_perturbations(self, rng, scalar_cfg):
        model = _lti(0.9, 0.5)
        x_k, u_k = np.array([2.0]), np.array([0.1])
        U, _ = iterate_once(model, x_k, u_k, ControlSequence.constant(u_k, 3), scalar_cfg)
        best = evaluate_cost(propagate(model, x_k, u_k, U).states, U, scalar_cfg.weights)
        for _ in range(100):
            other = ControlSequence(U.values + rng.normal(scale=0.1, size=U.values.size), 1)
            cost = evaluate_cost(propagate(model, x_k, u_k, other).states, other, scalar_cfg.weights)
            assert best <= cost + 1e-12


class TestIterateOnce:
    def test_lti_matches_lqr(self, rng):
        A, B = _random_lti(rng, 3)
        w = HorizonWeights.diagonal([1.0, 1.0, 1.0], [1.0])
        cfg = MpcConfig(8, 5, 1e-3, w)
        x_k, u_k = rng.normal(size=3), rng.normal(size=1)
        U, _ = iterate_once(_lti(A, B), x_k, u_k, ControlSequence(rng.normal(size=7), 1), cfg)
        lqr = finite_horizon_lqr(A, B, w, 8, A @ x_k + B @ u_k)
        assert_allclose(U.values, lqr.ravel(), rtol=1e-6, atol=1e-8)

    def test_pure_control_penalty(self):
        cfg = MpcConfig(4, 3, 1e-3, HorizonWeights(np.zeros((1, 1)), np.zeros((1, 1)), np.eye(1)))
        U, _ = iterate_once(_lti(1.2, 1.0), np.array([3.0]), np.array([1.0]), ControlSequence(np.ones(3), 1), cfg)
        assert_allclose(U.values, 0.0, atol=1e-14)

    def test_fixed_point_after_one_qp(self, scalar_cfg):
        model = _lti(1.1, 0.3)
        x_k, u_k = np.array([1.0]), np.array([0.0])
        first, _ = iterate_once(model, x_k, u_k, ControlSequence([5.0, -5.0], 1), scalar_cfg)
        second, _ = iterate_once(model, x_k, u_k, first, scalar_cfg)
        assert_allclose(first.values, second.values, atol=1e-12)


class TestStep:
    def test_rho_one_applies_warm_head(self):
        cfg = MpcConfig(3, 1, 1e-3, HorizonWeights.diagonal([1.0], [1.0]))
        warm = ControlSequence([0.7, 0.2], 1)
        u_next, final, diagnostics = step(_lti(1.0, 1.0), np.array([5.0]), np.array([0.0]), warm, cfg)
        assert_allclose(u_next, [0.7])
        assert diagnostics.rho_k == 1
        assert diagnostics.iterate_gaps == []
        assert final is warm

    def test_lti_stops_within_three(self):
        # double integrator
        A = np.array([[1.0, 0.1], [0.0, 1.0]])
        B = np.array([[0.005], [0.1]])
        cfg = MpcConfig(10, 30, 1e-3, HorizonWeights.diagonal([1.0, 1.0], [1.0]))
        controller = IscdController(_lti(A, B), cfg, np.zeros(1))
        x, u = np.array([1.0, -0.5]), np.zeros(1)
        for _ in range(20):
            u_next, diagnostics = controller.compute(x, u)
            assert diagnostics.rho_k <= 3
            x = A @ x + B @ u
            u = u_next

    def test_stopping_soundness(self):
        b = kapitza()
        cfg = b.default_config
        warm = ControlSequence.constant(b.u0, cfg.horizon)
        _, _, diagnostics = step(b.internal, b.x0, b.u0, warm, cfg, k=0)
        assert 1 <= diagnostics.rho_k <= cfg.rho
        assert len(diagnostics.iterate_gaps) == diagnostics.rho_k - 1
        if diagnostics.rho_k < cfg.rho:
            assert diagnostics.iterate_gaps[-1] < cfg.eps
        assert all(gap >= cfg.eps for gap in diagnostics.iterate_gaps[:-1])

    def test_qp_objective_monotone_under_frozen_coefficients(self):
        b = kapitza()
        cfg = MpcConfig(20, 5, 1e-3, b.default_config.weights)
        x_k, u_k = b.x0, b.u0
        previous = ControlSequence.constant(u_k, cfg.horizon)
        for _ in range(4):
            problem = build_iteration_qp(b.internal, x_k, u_k, previous, cfg)
            candidate, solution = iterate_once(b.internal, x_k, u_k, previous, cfg)
            assert solution.objective <= problem.objective(previous.values) * (1 + 1e-12) + 1e-9
            previous = candidate

    def test_qp_failure_keeps_previous_iterate(self):
        size = 3 * 2 - 1
        rows = np.zeros((2, size))
        rows[0, 3], rows[1, 3] = 1.0, -1.0  # u_1 <= -1 and u_1 >= 1
        base = ConstraintSet.empty(3, 1, 1)
        infeasible = ConstraintSet(3, 1, 1, rows, np.array([-1.0, -1.0]), base.A_eq, base.b_eq,
                                   base.lower, base.upper)
        cfg = MpcConfig(3, 10, 1e-3, HorizonWeights.diagonal([1.0], [1.0]), infeasible)
        warm = ControlSequence([0.25, 0.5], 1)
        u_next, final, diagnostics = step(_lti(1.0, 1.0), np.array([1.0]), np.array([0.0]), warm, cfg)
        assert diagnostics.rho_k == 1
        assert diagnostics.qp_statuses == ['infeasible']
        assert_allclose(u_next, [0.25])
        assert final is warm

    def test_divergence_reports_step(self):
        cfg = MpcConfig(3, 3, 1e-3, HorizonWeights.diagonal([1.0], [1.0]))
        model = ScdcModel(1, 1, lambda x, u: (np.array([[1e300]]), np.eye(1)))
        with pytest.raises(ControllerError) as info:
            step(model, np.array([1e10]), np.zeros(1), ControlSequence.constant(np.zeros(1), 3), cfg, k=7)
        assert info.value.step == 7

    def test_step_does_not_take_next_state(self):
        assert 'x_next' not in inspect.signature(step).parameters
        assert list(inspect.signature(step).parameters)[:4] == ['model', 'x_k', 'u_k', 'warm']


class TestLqrReduction:
    @pytest.mark.parametrize("n", [1, 2, 3])
    def test_applied_control_matches_lqr(self, rng, n):
        A, B = _random_lti(rng, n)
        w = HorizonWeights.diagonal(np.ones(n), [1.0])
        horizon = 12
        cfg = MpcConfig(horizon, 10, 1e-3, w)
        model = _lti(A, B)
        controller = IscdController(model, cfg, np.zeros(1))
        x, u = rng.normal(size=n), np.zeros(1)
        for _ in range(15):
            u_next, diagnostics = controller.compute(x, u)
            expected = finite_horizon_lqr(A, B, w, horizon, step_pseudolinear(model, x, u))[0]
            assert_allclose(u_next, expected, rtol=1e-6, atol=1e-6)
            assert diagnostics.rho_k <= 3
            x = A @ x + B @ u
            u = u_next
