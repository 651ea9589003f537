"""Tests for the BOCF realization, the I/O history and deadbeat reconstruction"""

import numpy as np
import pytest
from numpy.testing import assert_allclose

from benchmarks.plants import TripleIntegratorParams, triple_integrator, triple_integrator_io
from mpc_engine.bocf import (
    BocfModel, IoCoefficients, IoHistory, IoWindow, bocf_scdc_model, build_bocf, reconstruct_state,
)
from mpc_engine.controller import ControlSequence, propagate
from mpc_engine.errors import ModelEvaluationError
from mpc_engine.scdc import SaturationSpec, step_pseudolinear

T = 0.1
C3 = T ** 3 / 6.0


def _constant_io(F, G) -> IoCoefficients:
    """Coefficients that ignore the window; F has shape (n, p, p), G (n, p, m)"""
    F = np.asarray(F, dtype=float)
    G = np.asarray(G, dtype=float)
    n, p, m = G.shape
    return IoCoefficients(n, p, m,
                          [lambda w, value=F[tau]: value for tau in range(n)],
                          [lambda w, value=G[tau]: value for tau in range(n)])


def _window_dependent_io(rng, n: int = 3, p: int = 2, m: int = 1) -> IoCoefficients:
    """Every F_tau and G_tau varies with outputs and inputs at several lags"""
    F_scale = 0.05 * rng.uniform(-1.0, 1.0, size=(n, p, p))
    G_scale = rng.uniform(-1.0, 1.0, size=(n, p, m))
    f_maps = [
        lambda w, S=F_scale[tau], tau=tau: S * (1.0 + np.sin(w.outputs[tau].sum() + (tau + 1) * w.inputs[0].sum()))
        for tau in range(n)
    ]
    g_maps = [
        lambda w, K=G_scale[tau], tau=tau: K * (1.0 + 0.5 * np.tanh(w.inputs[n - 1 - tau].sum() - w.outputs[0].sum()))
        for tau in range(n)
    ]
    return IoCoefficients(n, p, m, f_maps, g_maps)


def _zero_window(n: int, p: int = 1, m: int = 1) -> IoWindow:
    return IoWindow(np.zeros((n, p)), np.zeros((n, m)))


def _realized_step(co: IoCoefficients, hist: IoHistory) -> np.ndarray:
    """y_{k+1} of the BOCF recursion from the history through (y_k, u_k)"""
    newest = hist.window()
    y = np.zeros(co.p)
    for tau in range(co.n):
        F, G = co.evaluate(hist.window_at(tau))
        y += -F[tau] @ newest.outputs[tau] + G[tau] @ newest.inputs[tau]
    return y


@pytest.fixture
def triple_io():
    return triple_integrator_io(TripleIntegratorParams(T, SaturationSpec(-1.0, 2.0)))


class TestIoCoefficients:
    def test_map_count(self):
        with pytest.raises(ValueError):
            IoCoefficients(2, 1, 1, [lambda w: 1.0], [lambda w: 1.0, lambda w: 1.0])

    def test_output_matrix(self):
        co = _constant_io(np.zeros((3, 2, 2)), np.zeros((3, 2, 1)))
        assert co.state_dim == 6
        assert_allclose(co.output_matrix, np.hstack([np.eye(2), np.zeros((2, 4))]))

    def test_wrong_shape_names_map(self):
        co = IoCoefficients(1, 1, 1, [lambda w: np.zeros(2)], [lambda w: 1.0])
        with pytest.raises(ModelEvaluationError) as info:
            co.evaluate(_zero_window(1))
        assert info.value.coefficient == 'F_1'

    def test_non_finite_names_map(self):
        co = IoCoefficients(2, 1, 1, [lambda w: 0.0, lambda w: 0.0], [lambda w: 1.0, lambda w: np.nan])
        with pytest.raises(ModelEvaluationError) as info:
            co.evaluate(_zero_window(2))
        assert info.value.coefficient == 'G_2'


class TestIoHistory:
    def test_starts_at_zero(self):
        window = IoHistory(3, 2, 1).window()
        assert window.outputs.shape == (3, 2)
        assert window.inputs.shape == (3, 1)
        assert not window.outputs.any() and not window.inputs.any()

    def test_most_recent_first(self):
        hist = IoHistory(2, 1, 1)
        for value in (1.0, 2.0, 3.0):
            hist.push([value], [10 * value])
        window = hist.window()
        assert_allclose(window.outputs.ravel(), [3.0, 2.0])
        assert_allclose(window.inputs.ravel(), [30.0, 20.0])

    def test_older_windows(self):
        hist = IoHistory(3, 1, 1)
        for value in range(1, 7):
            hist.push([value], [-value])
        assert hist.depth == 5
        assert_allclose(hist.window_at(1).outputs.ravel(), [5.0, 4.0, 3.0])
        assert_allclose(hist.window_at(2).inputs.ravel(), [-4.0, -3.0, -2.0])
        with pytest.raises(ValueError):
            hist.window_at(3)

    def test_copy_is_independent(self):
        hist = IoHistory(2, 1, 1)
        hist.push([1.0], [1.0])
        hist.push([2.0], [2.0])
        clone = hist.copy()
        hist.push([5.0], [5.0])
        assert_allclose(clone.window().outputs.ravel(), [2.0, 1.0])
        assert_allclose(clone.window_at(1).outputs.ravel(), [1.0, 0.0])

    def test_short_window_pads_with_zeros(self):
        window = IoWindow(np.array([[1.0], [2.0]]), np.array([[3.0], [4.0]]))
        hist = IoHistory(2, 1, 1, window)
        assert_allclose(hist.window_at(1).outputs.ravel(), [2.0, 0.0])

    def test_window_shape_checked(self):
        with pytest.raises(ValueError):
            IoHistory(3, 1, 1, _zero_window(2))
        with pytest.raises(ValueError):
            IoHistory(2, 1, 1, _zero_window(4))


class TestBuildBocf:
    def test_first_order(self):
        A, B, C = build_bocf(_constant_io([[[0.4]]], [[[2.0]]]), _zero_window(1))
        assert_allclose(A, [[-0.4]])
        assert_allclose(B, [[2.0]])
        assert_allclose(C, [[1.0]])

    def test_second_order(self):
        A, B, C = build_bocf(_constant_io([[[0.5]], [[-0.2]]], [[[1.0]], [[3.0]]]), _zero_window(2))
        assert_allclose(A, [[-0.5, 1.0], [0.2, 0.0]])
        assert_allclose(B, [[1.0], [3.0]])
        assert_allclose(C, [[1.0, 0.0]])

    def test_block_structure(self, rng):
        F = rng.normal(size=(3, 2, 2))
        co = _constant_io(F, rng.normal(size=(3, 2, 1)))
        A, _, _ = build_bocf(co, _zero_window(3, 2))
        for tau in range(3):
            assert_allclose(A[2 * tau:2 * tau + 2, :2], -F[tau])
        assert_allclose(A[0:2, 2:4], np.eye(2))
        assert_allclose(A[2:4, 4:6], np.eye(2))
        assert_allclose(A[4:6, 2:], 0.0)

    def test_triple_integrator_unsaturated(self, triple_io):
        A, B, _ = build_bocf(triple_io, _zero_window(3))
        assert_allclose(A[:, 0], [3.0, -3.0, 1.0])
        assert_allclose(B.ravel(), [C3, 4 * C3, C3], rtol=1e-12)

    def test_triple_integrator_saturated_window(self, triple_io):
        # the newest input 4 saturates at 2, halving every gain
        window = IoWindow(np.zeros((3, 1)), np.array([[4.0], [0.5], [-2.0]]))
        _, B, _ = build_bocf(triple_io, window)
        assert_allclose(B.ravel(), [0.5 * C3, 2 * C3, 0.5 * C3], rtol=1e-12)


class TestReconstruction:
    def test_impulse_response_matches_difference_equation(self):
        # stable roots give the F coefficients through the characteristic polynomial
        F = np.poly([0.9, -0.5, 0.3])[1:]
        G = np.array([1.0, 0.5, -0.25])
        co = _constant_io(F.reshape(3, 1, 1), G.reshape(3, 1, 1))
        A, B, C = build_bocf(co, _zero_window(3))

        hist = IoHistory(3, 1, 1)
        x = np.zeros(3)
        y = np.zeros(1)
        for k in range(50):
            u = np.array([1.0 if k == 0 else 0.0])
            assert_allclose(C @ x, y, atol=1e-12)
            hist.push(y, u)
            y = _realized_step(co, hist)
            x = A @ x + B @ u

    def test_lti_deadbeat(self, rng):
        n, p, m = 3, 2, 2
        co = _constant_io(0.2 * rng.normal(size=(n, p, p)), rng.normal(size=(n, p, m)))
        A, B, C = build_bocf(co, _zero_window(n, p, m))
        hist = IoHistory(n, p, m)
        x = np.zeros(n * p)
        for _ in range(20):
            y = C @ x
            assert_allclose(reconstruct_state(co, hist, y), x, rtol=1e-10, atol=1e-10)
            u = rng.normal(size=m)
            hist.push(y, u)
            x = A @ x + B @ u

    @pytest.mark.parametrize("n, p, m", [(2, 1, 1), (3, 2, 1), (4, 1, 2)])
    def test_ltv_deadbeat(self, rng, n, p, m):
        co = _window_dependent_io(rng, n, p, m)
        C = co.output_matrix
        hist = IoHistory.for_coefficients(co)
        x = np.zeros(n * p)
        for _ in range(40):
            y = C @ x
            assert_allclose(reconstruct_state(co, hist, y), x, rtol=1e-10, atol=1e-10)
            u = rng.normal(size=m)
            hist.push(y, u)
            A, B, _ = build_bocf(co, hist.window())
            x = A @ x + B @ u
            assert_allclose(C @ x, _realized_step(co, hist), rtol=1e-10, atol=1e-10)

    def test_ltv_output_consistency(self, rng):
        co = _window_dependent_io(rng)
        hist = IoHistory.for_coefficients(co)
        for _ in range(5):
            hist.push(rng.normal(size=2), rng.normal(size=1))
        y = rng.normal(size=2)
        assert np.array_equal(co.output_matrix @ reconstruct_state(co, hist, y), y)

    def test_triple_integrator_under_saturation(self, rng):
        """One-step output prediction from the reconstructed state matches the sampled plant"""
        b = triple_integrator()
        hist = IoHistory.for_coefficients(b.io)
        x_true = np.zeros(3)
        for _ in range(60):
            y = b.measure(x_true)
            x_hat = reconstruct_state(b.io, hist, y)
            u = np.array([rng.choice([-5.0, 4.0, 0.5, -0.3])])
            hist.push(y, u)
            A, B, C = build_bocf(b.io, hist.window())
            x_true = b.euler_map(x_true, u)
            assert_allclose(C @ (A @ x_hat + B @ u), b.measure(x_true), rtol=1e-10, atol=1e-12)


class TestBocfModel:
    def test_dimensions(self, triple_io):
        model = bocf_scdc_model(triple_io)
        assert (model.n, model.m) == (3, 1)

    def test_stage_gain_follows_stage_control(self, triple_io):
        coefficients = bocf_scdc_model(triple_io).rollout()
        x = np.array([1.0, 0.0, 0.0])
        _, B1 = coefficients(x, np.array([4.0]))
        _, B2 = coefficients(x, np.array([0.5]))
        assert_allclose(B1.ravel(), [0.5 * C3, 2 * C3, 0.5 * C3], rtol=1e-12)
        assert_allclose(B2.ravel(), [C3, 4 * C3, C3], rtol=1e-12)

    def test_fresh_rollout_per_pass(self):
        # G_1 is the previous stage's control
        co = IoCoefficients(2, 1, 1, [lambda w: [[0.0]]] * 2,
                            [lambda w: np.array([[w.inputs[1, 0]]]), lambda w: np.array([[1.0]])])
        model = bocf_scdc_model(co)
        first = model.rollout()
        first(np.zeros(2), np.array([4.0]))
        _, B_next = first(np.zeros(2), np.array([0.0]))
        _, B_fresh = model.rollout()(np.zeros(2), np.array([0.0]))
        assert_allclose(B_next.ravel(), [4.0, 1.0])
        assert_allclose(B_fresh.ravel(), [0.0, 1.0])

    def test_with_history_takes_snapshot(self):
        co = IoCoefficients(2, 1, 1, [lambda w: [[0.0]]] * 2,
                            [lambda w: np.array([[w.inputs[1, 0]]]), lambda w: np.array([[1.0]])])
        model = bocf_scdc_model(co)
        hist = IoHistory.for_coefficients(co)
        hist.push([0.0], [4.0])
        bound = model.with_history(hist)
        hist.push([0.0], [-2.0])
        _, B = bound.coefficients(np.zeros(2), np.array([0.0]))
        # window after the stage push: inputs (0, 4)
        assert_allclose(B.ravel(), [4.0, 1.0])
        assert bound.io is model.io
        assert model.history is None

    def test_rejects_mismatched_dimensions(self, triple_io):
        with pytest.raises(ValueError):
            BocfModel(n=4, m=1, io=triple_io)

    def test_prediction_follows_sampled_plant(self):
        """A horizon pass from the reconstructed state reproduces the plant, saturated inputs included"""
        b = triple_integrator()
        hist = IoHistory.for_coefficients(b.io)
        x_true = np.zeros(3)
        for u in (0.5, 3.0, -2.5, 1.2):
            hist.push(b.measure(x_true), [u])
            x_true = b.euler_map(x_true, np.array([u]))

        y_k = b.measure(x_true)
        x_k = reconstruct_state(b.io, hist, y_k)
        ahead = [4.0, -0.4, -3.0, 1.5, 0.0]
        rollout = propagate(b.internal.with_history(hist), x_k, np.array([ahead[0]]),
                            ControlSequence(ahead[1:], 1))
        for j, u in enumerate(ahead):
            x_true = b.euler_map(x_true, np.array([u]))
            assert_allclose(rollout.states[j][:1], b.measure(x_true), rtol=1e-10, atol=1e-12)

    def test_single_step_matches_pseudolinear(self, triple_io):
        model = bocf_scdc_model(triple_io)
        x = np.array([1.0, -2.0, 0.5])
        A, B = model.rollout()(x, np.array([0.3]))
        assert_allclose(step_pseudolinear(model, x, np.array([0.3])), A @ x + B @ [0.3])
