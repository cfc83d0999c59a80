"""Forward-value contracts of the differentiable primitives."""

import math

import numpy as np
import numpy.testing as npt
import pytest

from botnet_ids.errors import ConfigError, LabelError, ShapeError
from botnet_ids.tensor import (
    BatchNormParams,
    ConvParams,
    DropoutState,
    Tensor,
    activation,
    activation_backward,
    batchnorm1d,
    conv1d_forward,
    dense,
    dropout,
    dropout_backward,
    grad_check,
    matmul,
    maxpool1d,
    maxpool1d_backward,
    softmax,
    sparse_ce_loss,
)
from conftest import naive_conv1d, naive_matmul, naive_maxpool1d


def make_conv(w, b, stride=1, padding="valid"):
    return ConvParams(kernels=Tensor(w), bias=Tensor(b), stride=stride, padding=padding)


class TestTensor:
    def test_grad_must_match_shape(self):
        with pytest.raises(ShapeError):
            Tensor(np.zeros((2, 3)), grad=np.zeros(5))

    def test_ensure_and_zero_grad(self):
        t = Tensor(np.arange(6.0).reshape(2, 3))
        buf = t.ensure_grad()
        buf += 1.0
        t.zero_grad()
        assert not t.grad.any()


class TestMatmul:
    def test_identity(self):
        a = np.array([[1.0, 2.0], [3.0, 4.0]])
        y, _ = matmul(np.eye(2), a)
        npt.assert_array_equal(y.data, a)

    def test_analytic_1x2_2x1(self):
        y, _ = matmul(np.array([[1.0, 2.0]]), np.array([[3.0], [4.0]]))
        npt.assert_array_equal(y.data, [[11.0]])

    def test_matches_triple_loop(self, rng):
        for _ in range(20):
            a = rng.normal(size=(3, 4))
            b = rng.normal(size=(4, 2))
            y, _ = matmul(a, b)
            npt.assert_allclose(y.data, naive_matmul(a, b), atol=1e-12)

    def test_shape_error_names_both_shapes(self):
        with pytest.raises(ShapeError, match=r"\(2, 3\).*\(2, 2\)"):
            matmul(np.zeros((2, 3)), np.zeros((2, 2)))


class TestConv1d:
    def test_identity_kernel(self):
        p = make_conv(np.ones((1, 1, 1)), np.zeros(1))
        y, _ = conv1d_forward(np.array([[1.0, 2.0, 3.0, 4.0]]), p)
        npt.assert_array_equal(y.data, [[1.0, 2.0, 3.0, 4.0]])

    def test_sliding_sum(self):
        p = make_conv(np.ones((1, 1, 2)), np.zeros(1))
        y, _ = conv1d_forward(np.array([[1.0, 2.0, 3.0, 4.0]]), p)
        npt.assert_array_equal(y.data, [[3.0, 5.0, 7.0]])

    def test_zero_input_yields_bias(self, rng):
        p = make_conv(rng.normal(size=(3, 1, 2)), np.full(3, 0.7))
        y, _ = conv1d_forward(np.zeros((1, 5)), p)
        npt.assert_allclose(y.data, 0.7)

    def test_short_input_valid_padding(self):
        p = make_conv(np.ones((1, 1, 4)), np.zeros(1))
        with pytest.raises(ShapeError):
            conv1d_forward(np.ones((1, 3)), p)

    def test_channel_mismatch(self):
        p = make_conv(np.ones((1, 2, 3)), np.zeros(1))
        with pytest.raises(ShapeError):
            conv1d_forward(np.ones((3, 8)), p)

    @pytest.mark.parametrize("kernel", [1, 3, 5])
    def test_same_padding_preserves_length(self, kernel, rng):
        for length in range(kernel, 257):
            x = rng.normal(size=(1, length))
            p = make_conv(rng.normal(size=(2, 1, kernel)), np.zeros(2), padding="same")
            y, _ = conv1d_forward(x, p)
            assert y.shape == (2, length)

    def test_matches_naive_oracle(self, rng):
        for i in range(20):
            stride = 1 + i % 3
            padding = "same" if i % 2 else "valid"
            x = rng.normal(size=(3, 11))
            w = rng.normal(size=(4, 3, 3))
            b = rng.normal(size=4)
            y, _ = conv1d_forward(x, make_conv(w, b, stride=stride, padding=padding))
            npt.assert_allclose(y.data, naive_conv1d(x, w, b, stride, padding), atol=1e-12)

    def test_batched_equals_per_sample(self, rng):
        x = rng.normal(size=(4, 2, 9))
        p = make_conv(rng.normal(size=(3, 2, 3)), rng.normal(size=3), padding="same")
        y_batch, _ = conv1d_forward(x, p)
        for i in range(4):
            y_one, _ = conv1d_forward(x[i], p)
            npt.assert_allclose(y_batch.data[i], y_one.data, atol=1e-13)


class TestMaxPool:
    def test_basic_windows(self):
        y, ctx = maxpool1d(np.array([[1.0, 3.0, 2.0, 5.0]]), pool=2, stride=2)
        npt.assert_array_equal(y.data, [[3.0, 5.0]])
        npt.assert_array_equal(ctx.indices[0, 0], [1, 3])

    def test_tie_break_lowest_index(self):
        y, ctx = maxpool1d(np.array([[7.0, 7.0, 7.0, 7.0]]), pool=2, stride=2)
        npt.assert_array_equal(y.data, [[7.0, 7.0]])
        npt.assert_array_equal(ctx.indices[0, 0], [0, 2])

    def test_matches_naive_scan(self, rng):
        for i in range(20):
            pool = 2 + i % 3
            stride = 1 + i % 4
            x = rng.normal(size=(3, 16))
            y, ctx = maxpool1d(x, pool=pool, stride=stride)
            expect_y, expect_idx = naive_maxpool1d(x, pool, stride)
            npt.assert_array_equal(y.data, expect_y)
            npt.assert_array_equal(ctx.indices[0], expect_idx)

    def test_pool_longer_than_input(self):
        with pytest.raises(ShapeError):
            maxpool1d(np.ones((1, 3)), pool=4, stride=2)

    def test_ceil_semantics_keeps_partial_window(self):
        x = np.arange(115.0)[None, :]
        y, _ = maxpool1d(x, pool=2, stride=2)
        assert y.shape == (1, 58)
        assert y.data[0, -1] == 114.0  # final window holds a single element

    def test_backward_routes_only_to_argmax(self, rng):
        x = rng.normal(size=(2, 3, 12))
        y, ctx = maxpool1d(x, pool=2, stride=2)
        d_out = rng.normal(size=y.shape)
        dx = maxpool1d_backward(ctx, d_out)
        rebuilt = np.zeros_like(x)
        for b in range(2):
            for c in range(3):
                for t, pos in enumerate(ctx.indices[b, c]):
                    rebuilt[b, c, pos] += d_out[b, c, t]
        npt.assert_array_equal(dx, rebuilt)
        mask = np.ones_like(x, dtype=bool)
        mask[
            np.arange(2)[:, None, None], np.arange(3)[None, :, None], ctx.indices
        ] = False
        assert not dx[mask].any()


class TestBatchNorm:
    def test_train_mode_standardizes(self, rng):
        x = rng.normal(loc=3.0, scale=2.5, size=(4, 3, 10))
        y, _ = batchnorm1d(x, BatchNormParams.identity(3), mode="train")
        npt.assert_allclose(y.data.mean(axis=(0, 2)), 0.0, atol=1e-10)
        npt.assert_allclose(y.data.var(axis=(0, 2)), 1.0, atol=1e-4)

    def test_affine_parameters(self, rng):
        x = rng.normal(size=(8, 2, 30))
        p = BatchNormParams.identity(2)
        p.gamma.data[...] = 2.0
        p.beta.data[...] = 3.0
        y, _ = batchnorm1d(x, p, mode="train")
        npt.assert_allclose(y.data.mean(axis=(0, 2)), 3.0, atol=1e-10)
        npt.assert_allclose(y.data.std(axis=(0, 2)), 2.0, atol=1e-3)

    def test_degenerate_batch(self):
        with pytest.raises(ShapeError, match="degenerate"):
            batchnorm1d(np.ones((1, 2, 1)), BatchNormParams.identity(2), mode="train")

    def test_infer_mode_is_deterministic_affine(self, rng):
        x = rng.normal(size=(3, 2, 5))
        p = BatchNormParams.identity(2)
        y1, _ = batchnorm1d(x, p, mode="infer")
        y2, _ = batchnorm1d(x, p, mode="infer")
        npt.assert_array_equal(y1.data, y2.data)
        npt.assert_allclose(y1.data, x / np.sqrt(1.0 + p.epsilon), atol=1e-15)

    def test_running_stats_update(self, rng):
        x = rng.normal(loc=5.0, size=(4, 2, 8))
        p = BatchNormParams.identity(2, momentum=0.9)
        batchnorm1d(x, p, mode="train")
        expect_mean = 0.9 * 0.0 + 0.1 * x.mean(axis=(0, 2))
        expect_var = 0.9 * 1.0 + 0.1 * x.var(axis=(0, 2))
        npt.assert_allclose(p.running_mean.data, expect_mean, atol=1e-12)
        npt.assert_allclose(p.running_var.data, expect_var, atol=1e-12)

    def test_update_can_be_suppressed(self, rng):
        x = rng.normal(size=(4, 2, 8))
        p = BatchNormParams.identity(2)
        batchnorm1d(x, p, mode="train", update_running=False)
        npt.assert_array_equal(p.running_mean.data, np.zeros(2))
        npt.assert_array_equal(p.running_var.data, np.ones(2))


class TestActivation:
    def test_relu(self):
        y, _ = activation("relu", np.array([-1.0, 0.0, 2.0]))
        npt.assert_array_equal(y.data, [0.0, 0.0, 2.0])

    def test_tanh_sigmoid_at_zero(self):
        assert activation("tanh", np.zeros(1))[0].data[0] == 0.0
        assert activation("sigmoid", np.zeros(1))[0].data[0] == 0.5

    def test_relu_derivative_at_zero_is_zero(self):
        _, ctx = activation("relu", np.array([0.0]))
        assert activation_backward(ctx, np.array([1.0]))[0] == 0.0

    def test_unknown_kind(self):
        with pytest.raises(ConfigError):
            activation("gelu", np.zeros(3))


class TestSoftmax:
    def test_symmetry(self):
        npt.assert_allclose(softmax(np.array([0.0, 0.0])).data, [0.5, 0.5])

    def test_analytic(self):
        npt.assert_allclose(
            softmax(np.array([math.log(2.0), 0.0])).data, [2 / 3, 1 / 3], atol=1e-15
        )

    def test_large_values_do_not_overflow(self):
        y = softmax(np.array([1000.0, 1000.0]))
        npt.assert_allclose(y.data, [0.5, 0.5])
        assert np.isfinite(y.data).all()

    def test_slices_sum_to_one_and_positive(self, rng):
        x = rng.normal(scale=50.0, size=(6, 4, 9))
        y = softmax(x)
        npt.assert_allclose(y.data.sum(axis=-1), 1.0, atol=1e-12)
        assert (y.data > 0).all()


class TestDropout:
    def test_rate_zero_is_identity(self, rng):
        x = Tensor(rng.normal(size=(4, 5)))
        s = DropoutState(rate=0.0, rng_seed=1)
        for mode in ("train", "infer"):
            y, _ = dropout(x, s, mode)
            npt.assert_array_equal(y.data, x.data)

    def test_infer_is_identity(self, rng):
        x = Tensor(rng.normal(size=(4, 5)))
        y, _ = dropout(x, DropoutState(rate=0.4, rng_seed=1), "infer")
        npt.assert_array_equal(y.data, x.data)

    def test_inverted_scaling_preserves_mean(self):
        s = DropoutState(rate=0.3, rng_seed=99)
        y, _ = dropout(Tensor(np.ones(1_000_000)), s, "train")
        assert 0.99 <= y.data.mean() <= 1.01

    def test_mask_values_and_backward_reuse(self, rng):
        s = DropoutState(rate=0.25, rng_seed=5)
        x = rng.normal(size=(30, 30))
        y, ctx = dropout(Tensor(x), s, "train")
        assert set(np.round(np.unique(ctx.mask), 12)) <= {0.0, round(1 / 0.75, 12)}
        npt.assert_array_equal(s.mask, ctx.mask)
        d_out = rng.normal(size=x.shape)
        npt.assert_array_equal(dropout_backward(ctx, d_out), d_out * ctx.mask)

    def test_invalid_rate(self):
        with pytest.raises(ConfigError):
            DropoutState(rate=1.0, rng_seed=3)


class TestDense:
    def test_identity(self, rng):
        x = rng.normal(size=(3, 4))
        y, _ = dense(x, np.eye(4), np.zeros(4))
        npt.assert_allclose(y.data, x, atol=1e-15)

    def test_analytic(self):
        y, _ = dense(np.array([[1.0, 1.0]]), np.array([[1.0], [1.0]]), np.array([0.5]))
        npt.assert_array_equal(y.data, [[2.5]])

    def test_shape_error(self):
        with pytest.raises(ShapeError):
            dense(np.ones((2, 3)), np.ones((4, 2)), np.ones(2))


class TestSparseCE:
    def test_confident_correct_is_near_zero(self):
        logits = np.array([[50.0, 0.0, 0.0], [0.0, 50.0, 0.0]])
        loss, _ = sparse_ce_loss(logits, np.array([0, 1]))
        assert loss < 1e-6

    def test_uniform_logits(self):
        loss, _ = sparse_ce_loss(np.zeros((4, 10)), np.array([0, 3, 7, 9]))
        npt.assert_allclose(loss, math.log(10.0), atol=1e-12)

    def test_out_of_range_label_names_row(self):
        with pytest.raises(LabelError, match="row 1"):
            sparse_ce_loss(np.zeros((3, 4)), np.array([0, 7, 1]))

    def test_gradient_is_fused_form(self, rng):
        logits = rng.normal(size=(5, 6))
        labels = rng.integers(0, 6, size=5)
        _, d_logits = sparse_ce_loss(logits, labels)
        probs = softmax(logits).data
        onehot = np.zeros_like(probs)
        onehot[np.arange(5), labels] = 1.0
        npt.assert_allclose(d_logits, (probs - onehot) / 5, atol=1e-12)


class TestGradCheckHarness:
    def test_linear_function(self, rng):
        def closure(inputs):
            (x,) = inputs
            return float(x.sum()), [np.ones_like(x)]

        assert grad_check(closure, [rng.normal(size=(3, 3))]) < 1e-10

    def test_quadratic(self):
        def closure(inputs):
            (x,) = inputs
            return float((x ** 2).sum()), [2.0 * x]

        x = np.array([1.0, 2.0])
        assert grad_check(closure, [x], eps=1e-5) < 1e-8
