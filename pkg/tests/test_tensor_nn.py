"""Tensor, layer, backprop, optimizer and metric tests.

Gradient assertions use central finite differences as the independent
oracle; closed-form cases are hand-derived in the comments.
"""

import math

import numpy as np
import pytest

from airhealth.errors import DimensionError, DivergenceError, DomainError
from airhealth.nn import (
    BatchNormLayer,
    DenseLayer,
    DropoutLayer,
    MlpRegressor,
    Mode,
    backprop_gradients,
    batchnorm_forward,
    dense_forward,
    dropout_forward,
    grad_check,
    mse_loss,
    r2_score,
)
from airhealth.optim import AdamState, adam_step
from airhealth.tensor import Tensor, seeded_rng
from airhealth.training import TrainConfig, train_regressor


def small_model(input_dim=3, widths=(5, 4, 4, 3), dropout=0.0, seed=0):
    return MlpRegressor.create(
        input_dim, hidden_widths=widths, dropout_rate=dropout, seed=seed
    )


class TestTensor:
    def test_shape_data_invariant(self):
        t = Tensor([[1, 2], [3, 4], [5, 6]])
        assert t.shape == (3, 2)
        assert len(t.data) == 6
        assert t.data == [1, 2, 3, 4, 5, 6]  # row-major

    def test_from_flat_round_trip(self):
        t = Tensor.from_flat((2, 3), [1, 2, 3, 4, 5, 6])
        assert t.tolist() == [[1, 2, 3], [4, 5, 6]]

    def test_bad_shape_rejected(self):
        with pytest.raises(DimensionError):
            Tensor([1, 2, 3], shape=(2, 2))


class TestDense:
    def test_identity(self):
        layer = DenseLayer(Tensor(np.eye(2)), Tensor.zeros(2))
        out = dense_forward(Tensor([[1.0, 2.0]]), layer)
        assert out.tolist() == [[1.0, 2.0]]

    def test_hand_computed(self):
        # 1*2 + 1*3 + 1 = 6
        layer = DenseLayer(Tensor([[2.0], [3.0]]), Tensor([1.0]))
        out = dense_forward(Tensor([[1.0, 1.0]]), layer)
        assert out.tolist() == [[6.0]]

    def test_shape_contract(self):
        rng = seeded_rng(0)
        layer = DenseLayer.create(2, 4, rng)
        out = dense_forward(Tensor(rng.normal(size=(3, 2))), layer)
        assert out.shape == (3, 4)

    def test_mismatch_names_both_shapes(self):
        layer = DenseLayer.create(2, 4, seeded_rng(0))
        with pytest.raises(DimensionError) as exc:
            dense_forward(Tensor(np.zeros((3, 5))), layer)
        assert "(3, 5)" in str(exc.value) and "(2, 4)" in str(exc.value)


class TestBatchNorm:
    def test_constant_column_maps_to_beta(self):
        layer = BatchNormLayer(Tensor([1.0]), Tensor([5.0]))
        out = batchnorm_forward(Tensor([[2.0], [2.0], [2.0]]), layer, Mode.TRAIN)
        assert out.array == pytest.approx(np.full((3, 1), 5.0))

    def test_two_point_normalization(self):
        # mean 2, biased var 1 -> approx [-1, 1] as eps -> 0
        layer = BatchNormLayer(Tensor([1.0]), Tensor([0.0]), epsilon=1e-12)
        out = batchnorm_forward(Tensor([[1.0], [3.0]]), layer, Mode.TRAIN)
        assert out.array.reshape(-1) == pytest.approx([-1.0, 1.0], abs=1e-6)

    def test_eval_identity_under_unit_stats(self):
        layer = BatchNormLayer(Tensor([1.0, 1.0]), Tensor([0.0, 0.0]), epsilon=1e-12)
        x = Tensor([[0.5, -1.0], [2.0, 3.0]])
        out = batchnorm_forward(x, layer, Mode.EVAL)
        assert out.array == pytest.approx(x.array, abs=1e-9)

    def test_train_batch_of_one_rejected(self):
        layer = BatchNormLayer.create(1)
        with pytest.raises(DomainError):
            batchnorm_forward(Tensor([[1.0]]), layer, Mode.TRAIN)

    def test_eval_never_mutates_running_stats(self):
        layer = BatchNormLayer.create(2)
        before = (layer.running_mean.array.copy(), layer.running_var.array.copy())
        batchnorm_forward(Tensor(seeded_rng(1).normal(size=(8, 2))), layer, Mode.EVAL)
        assert np.array_equal(layer.running_mean.array, before[0])
        assert np.array_equal(layer.running_var.array, before[1])

    def test_running_stats_update_rule(self):
        layer = BatchNormLayer.create(1, momentum=0.1)
        x = np.array([[1.0], [3.0]])
        batchnorm_forward(Tensor(x), layer, Mode.TRAIN)
        # running <- 0.9*0 + 0.1*batch_mean, 0.9*1 + 0.1*batch_var
        assert layer.running_mean.array == pytest.approx([0.2])
        assert layer.running_var.array == pytest.approx([0.9 + 0.1 * 1.0])

    def test_pre_affine_output_standardized(self):
        # Invariant: gamma=1, beta=0 gives per-feature mean ~0, var ~1.
        for seed in range(10):
            rng = seeded_rng(seed)
            x = rng.normal(size=(16, 3)) * rng.uniform(0.5, 4.0) + rng.normal(size=3)
            layer = BatchNormLayer.create(3, epsilon=1e-12)
            out = batchnorm_forward(Tensor(x), layer, Mode.TRAIN)
            assert np.abs(out.array.mean(axis=0)).max() < 1e-9
            assert np.abs(out.array.var(axis=0) - 1.0).max() < 1e-6


class TestDropout:
    def test_rate_zero_identity(self):
        x = Tensor([[1.0, 2.0], [3.0, 4.0]])
        out, mask = dropout_forward(x, DropoutLayer(0.0), Mode.TRAIN, seeded_rng(0))
        assert out == x
        assert np.all(mask == 1.0)

    def test_eval_identity(self):
        x = Tensor([[1.0, 2.0], [3.0, 4.0]])
        out, _ = dropout_forward(x, DropoutLayer(0.5), Mode.EVAL)
        assert out == x

    def test_train_preserves_expectation(self):
        # Monte Carlo: mean over 10,000 seeded trials ~ input within 3%.
        rng = seeded_rng(42)
        x = Tensor(rng.uniform(1.0, 2.0, size=(4, 5)))
        layer = DropoutLayer(0.5)
        acc = np.zeros(x.shape)
        trials = 10_000
        for _ in range(trials):
            out, _ = dropout_forward(x, layer, Mode.TRAIN, rng)
            acc += out.array
        rel = np.abs(acc / trials - x.array) / x.array
        assert rel.max() < 0.03

    def test_bad_rate_rejected(self):
        with pytest.raises(DomainError):
            DropoutLayer(1.0)


class TestMseLoss:
    def test_perfect_prediction(self):
        x = Tensor(seeded_rng(0).normal(size=(3, 7)))
        assert mse_loss(x, x) == 0.0

    def test_hand_computed(self):
        assert mse_loss(Tensor([[0.0], [2.0]]), Tensor([[0.0], [0.0]])) == 2.0

    def test_non_negative(self):
        rng = seeded_rng(3)
        for _ in range(20):
            assert mse_loss(rng.normal(size=(4, 7)), rng.normal(size=(4, 7))) >= 0.0

    def test_permutation_invariant(self):
        rng = seeded_rng(4)
        p, t = rng.normal(size=(6, 7)), rng.normal(size=(6, 7))
        perm = rng.permutation(6)
        assert mse_loss(p, t) == pytest.approx(mse_loss(p[perm], t[perm]))

    def test_shape_mismatch(self):
        with pytest.raises(DimensionError):
            mse_loss(np.zeros((2, 7)), np.zeros((3, 7)))


class TestBackprop:
    def test_zero_residual_gives_zero_gradients(self):
        rng = seeded_rng(0)
        model = MlpRegressor([DenseLayer.create(3, 7, rng)], input_dim=3)
        x = rng.normal(size=(4, 3))
        target = x @ model.layers[0].weights.array + model.layers[0].bias.array
        grads, loss, _ = backprop_gradients(model, x, target, rng=rng)
        assert loss == 0.0
        for g in grads.values():
            assert np.all(g == 0.0)

    def test_single_linear_layer_closed_form(self):
        # dL/dW = 2 x^T (xW + b - t) / count with count = n * out_dim
        rng = seeded_rng(1)
        model = MlpRegressor([DenseLayer.create(2, 7, rng)], input_dim=2)
        x = rng.normal(size=(1, 2))
        t = rng.normal(size=(1, 7))
        w = model.layers[0].weights.array
        b = model.layers[0].bias.array
        expected_dw = 2.0 * x.T @ (x @ w + b - t) / t.size
        grads, _, _ = backprop_gradients(model, x, t, rng=rng)
        assert grads["0.weights"] == pytest.approx(expected_dw, rel=1e-12)

    def test_full_model_matches_finite_differences(self):
        rng = seeded_rng(2)
        model = small_model(dropout=0.3)
        x = rng.normal(size=(4, 3))
        t = rng.normal(size=(4, 7))
        assert grad_check(model, x, t, eps=1e-5) < 1e-4


class TestGradCheck:
    def test_linear_model_near_machine_precision(self):
        rng = seeded_rng(5)
        model = MlpRegressor([DenseLayer.create(2, 7, rng)], input_dim=2)
        x = rng.normal(size=(3, 2))
        t = rng.normal(size=(3, 7))
        assert grad_check(model, x, t, eps=1e-5) < 1e-8

    def test_eps_out_of_range_rejected(self):
        model = MlpRegressor([DenseLayer.create(2, 7, seeded_rng(0))], input_dim=2)
        with pytest.raises(DomainError):
            grad_check(model, np.zeros((2, 2)), np.zeros((2, 7)), eps=1e-2)


class TestAdam:
    def test_zero_gradient_is_fixed_point(self):
        params = {"w": np.array([1.5, -2.0])}
        state = AdamState.create_for(params)
        before = params["w"].copy()
        adam_step(params, {"w": np.zeros(2)}, state)
        assert np.array_equal(params["w"], before)
        assert state.step_count == 1

    def test_first_step_moves_by_lr_times_sign(self):
        # At t=1, m_hat = g and v_hat = g^2, so the step is
        # -lr * g/(|g| + eps) ~ -lr * sign(g).
        params = {"w": np.array([0.0])}
        state = AdamState.create_for(params, learning_rate=0.1)
        adam_step(params, {"w": np.array([2.0])}, state)
        assert params["w"][0] == pytest.approx(-0.1, rel=1e-6)

    def test_quadratic_convergence(self):
        # Reference run of the published recurrence on f(w) = (w-3)^2.
        params = {"w": np.array([0.0])}
        state = AdamState.create_for(params, learning_rate=0.1)
        for _ in range(500):
            grad = {"w": 2.0 * (params["w"] - 3.0)}
            adam_step(params, grad, state)
        assert abs(params["w"][0] - 3.0) < 0.01


class TestTrainRegressor:
    @staticmethod
    def linear_dataset(n=64, d=4, seed=0):
        rng = seeded_rng(seed)
        x = rng.normal(size=(n, d))
        w = rng.normal(size=(d, 7))
        return x, x @ w

    def test_zero_learning_rate_keeps_parameters(self):
        x, y = self.linear_dataset()
        model = small_model(input_dim=4)
        before = {k: v.copy() for k, v in model.parameters().items()}
        trained, _ = train_regressor(
            model, x, y, TrainConfig(epochs=1, learning_rate=0.0, seed=1)
        )
        for key, arr in trained.parameters().items():
            assert np.array_equal(arr, before[key])

    def test_same_seed_bit_identical(self):
        x, y = self.linear_dataset()
        model = small_model(input_dim=4, dropout=0.3)
        cfg = TrainConfig(epochs=3, seed=7)
        _, hist_a = train_regressor(model, x, y, cfg)
        trained_b, hist_b = train_regressor(model, x, y, cfg)
        trained_c, _ = train_regressor(model, x, y, cfg)
        assert hist_a == hist_b
        for key, arr in trained_b.parameters().items():
            assert np.array_equal(arr, trained_c.parameters()[key])

    def test_input_model_not_mutated(self):
        x, y = self.linear_dataset()
        model = small_model(input_dim=4)
        before = {k: v.copy() for k, v in model.parameters().items()}
        train_regressor(model, x, y, TrainConfig(epochs=2, seed=0))
        for key, arr in model.parameters().items():
            assert np.array_equal(arr, before[key])

    def test_loss_history_length_and_descent(self):
        x, y = self.linear_dataset(n=128)
        model = small_model(input_dim=4, widths=(32, 16, 16, 8))
        cfg = TrainConfig(epochs=200, batch_size=64, learning_rate=0.01, seed=3)
        _, history = train_regressor(model, x, y, cfg)
        assert len(history) == 200
        assert history[-1] < 0.05 * history[0]

    def test_empty_dataset_rejected(self):
        model = small_model(input_dim=4)
        with pytest.raises(DomainError):
            train_regressor(model, np.zeros((0, 4)), np.zeros((0, 7)), TrainConfig())

    def test_divergence_names_epoch(self):
        x, y = self.linear_dataset(n=32)
        model = small_model(input_dim=4)
        with np.errstate(over="ignore"), pytest.raises(DivergenceError) as exc:
            train_regressor(
                model, x, y * 1e160, TrainConfig(epochs=5, learning_rate=1e3, seed=0)
            )
        assert exc.value.epoch == 0


class TestR2Score:
    def test_perfect_fit(self):
        t = Tensor([1.0, 2.0, 3.0])
        assert r2_score(t, t) == 1.0

    def test_mean_predictor_scores_zero(self):
        t = np.array([1.0, 2.0, 3.0])
        assert r2_score(np.full(3, 2.0), t) == pytest.approx(0.0)

    def test_hand_computed(self):
        # SS_res = 1, SS_tot = 2 -> 1 - 1/2
        assert r2_score([1.0, 2.0, 4.0], [1.0, 2.0, 3.0]) == pytest.approx(0.5)

    def test_constant_target_rejected(self):
        with pytest.raises(DomainError):
            r2_score([1.0, 2.0], [5.0, 5.0])

    def test_permutation_invariant(self):
        rng = seeded_rng(9)
        p, t = rng.normal(size=12), rng.normal(size=12)
        perm = rng.permutation(12)
        assert r2_score(p, t) == pytest.approx(r2_score(p[perm], t[perm]))


class TestArchitecture:
    def test_canonical_stack_shape(self):
        model = MlpRegressor.create(528, seed=0)
        dense = [l for l in model.layers if isinstance(l, DenseLayer)]
        assert [d.out_dim for d in dense] == [512, 256, 128, 64, 7]
        pred = model.predict(np.zeros((2, 528)))
        assert pred.shape == (2, 7)

    def test_final_width_enforced(self):
        rng = seeded_rng(0)
        with pytest.raises(DimensionError):
            MlpRegressor([DenseLayer.create(3, 5, rng)], input_dim=3)

    def test_eval_forward_consumes_no_randomness(self):
        model = small_model(dropout=0.5)
        x = seeded_rng(0).normal(size=(3, 3))
        a = model.predict(x)
        b = model.predict(x)
        assert a == b
