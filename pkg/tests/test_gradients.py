"""Finite-difference verification of every hand-derived backward rule.

Each closure reduces the op output to a scalar through a fixed random
projection, returns analytic gradients from the op's backward, and is
then swept coordinate by coordinate with central differences. ReLU
inputs are nudged away from the kink; maxpool inputs rely on continuous
sampling keeping window values separated (seeds are frozen).
"""

import numpy as np
import pytest

from botnet_ids.recurrent import (
    AttentionParams,
    LstmDirection,
    LstmParams,
    attention_backward,
    attention_forward,
    bilstm_backward,
    bilstm_forward,
    lstm_step,
    lstm_step_backward,
)
from botnet_ids.tensor import (
    BatchNormParams,
    ConvParams,
    Tensor,
    activation,
    activation_backward,
    batchnorm1d,
    batchnorm1d_backward,
    conv1d_forward,
    conv1d_backward,
    dense,
    dense_backward,
    grad_check,
    matmul,
    matmul_backward,
    maxpool1d,
    maxpool1d_backward,
    sparse_ce_loss,
)

TOL = 1e-4
EPS = 1e-5
SEEDS = range(10)


@pytest.mark.parametrize("seed", SEEDS)
def test_matmul_grads(seed):
    rng = np.random.default_rng(100 + seed)
    proj = rng.normal(size=(3, 2))

    def closure(inputs):
        a, b = inputs
        y, ctx = matmul(a, b)
        da, db = matmul_backward(ctx, proj)
        return float((y.data * proj).sum()), [da, db]

    assert grad_check(closure, [rng.normal(size=(3, 4)), rng.normal(size=(4, 2))], EPS) < TOL


@pytest.mark.parametrize("seed", SEEDS)
def test_conv1d_grads(seed):
    rng = np.random.default_rng(200 + seed)
    stride = 1 + seed % 2
    padding = "same" if seed % 2 else "valid"
    x = rng.normal(size=(2, 3, 10))
    w = rng.normal(size=(4, 3, 3))
    b = rng.normal(size=4)
    p = ConvParams(Tensor(w), Tensor(b), stride=stride, padding=padding)
    y0, _ = conv1d_forward(x, p)
    proj = rng.normal(size=y0.shape)

    def closure(inputs):
        xi, wi, bi = inputs
        pi = ConvParams(Tensor(wi), Tensor(bi), stride=stride, padding=padding)
        y, ctx = conv1d_forward(xi, pi)
        dx, dw, db = conv1d_backward(ctx, proj)
        return float((y.data * proj).sum()), [dx, dw, db]

    assert grad_check(closure, [x, w, b], EPS) < TOL


def test_conv1d_zero_cotangent_and_scalar_case():
    rng = np.random.default_rng(7)
    x = rng.normal(size=(1, 6))
    p = ConvParams(Tensor(rng.normal(size=(2, 1, 3))), Tensor(rng.normal(size=2)))
    _, ctx = conv1d_forward(x, p)
    dx, dw, db = conv1d_backward(ctx, np.zeros((2, 6)))
    assert not dx.any() and not dw.any() and not db.any()
    # L=1, k=1: dL/dw = dL/dy * x
    x1 = np.array([[2.5]])
    p1 = ConvParams(Tensor(np.array([[[1.5]]])), Tensor(np.zeros(1)), padding="valid")
    _, ctx1 = conv1d_forward(x1, p1)
    _, dw1, _ = conv1d_backward(ctx1, np.array([[3.0]]))
    assert dw1[0, 0, 0] == 7.5


@pytest.mark.parametrize("seed", SEEDS)
def test_maxpool_grads(seed):
    rng = np.random.default_rng(300 + seed)
    x = rng.normal(size=(2, 3, 12))
    y0, _ = maxpool1d(x, pool=2, stride=2)
    proj = rng.normal(size=y0.shape)

    def closure(inputs):
        (xi,) = inputs
        y, ctx = maxpool1d(xi, pool=2, stride=2)
        return float((y.data * proj).sum()), [maxpool1d_backward(ctx, proj)]

    assert grad_check(closure, [x], EPS) < TOL


@pytest.mark.parametrize("seed", SEEDS)
def test_batchnorm_train_grads(seed):
    rng = np.random.default_rng(400 + seed)
    x = rng.normal(loc=0.5, scale=1.5, size=(3, 2, 6))
    gamma = rng.normal(size=2) + 1.5
    beta = rng.normal(size=2)
    proj = rng.normal(size=x.shape)

    def closure(inputs):
        xi, gi, bi = inputs
        p = BatchNormParams(
            gamma=Tensor(gi), beta=Tensor(bi),
            running_mean=Tensor(np.zeros(2)), running_var=Tensor(np.ones(2)),
        )
        y, ctx = batchnorm1d(xi, p, mode="train", update_running=False)
        dx, dgamma, dbeta = batchnorm1d_backward(ctx, proj)
        return float((y.data * proj).sum()), [dx, dgamma, dbeta]

    assert grad_check(closure, [x, gamma, beta], EPS) < TOL


@pytest.mark.parametrize("kind", ["relu", "tanh", "sigmoid"])
@pytest.mark.parametrize("seed", SEEDS)
def test_activation_grads(kind, seed):
    rng = np.random.default_rng(500 + seed)
    x = rng.uniform(0.1, 2.0, size=(4, 5)) * rng.choice([-1.0, 1.0], size=(4, 5))
    proj = rng.normal(size=x.shape)

    def closure(inputs):
        (xi,) = inputs
        y, ctx = activation(kind, xi)
        return float((y.data * proj).sum()), [activation_backward(ctx, proj)]

    assert grad_check(closure, [x], EPS) < TOL


@pytest.mark.parametrize("seed", SEEDS)
def test_dense_grads(seed):
    rng = np.random.default_rng(600 + seed)
    proj = rng.normal(size=(3, 4))

    def closure(inputs):
        xi, wi, bi = inputs
        y, ctx = dense(xi, wi, bi)
        dx, dw, db = dense_backward(ctx, proj)
        return float((y.data * proj).sum()), [dx, dw, db]

    inputs = [rng.normal(size=(3, 5)), rng.normal(size=(5, 4)), rng.normal(size=4)]
    assert grad_check(closure, inputs, EPS) < TOL


@pytest.mark.parametrize("seed", SEEDS)
def test_softmax_ce_grads(seed):
    rng = np.random.default_rng(700 + seed)
    labels = rng.integers(0, 6, size=4)

    def closure(inputs):
        (logits,) = inputs
        loss, d_logits = sparse_ce_loss(logits, labels)
        return loss, [d_logits]

    assert grad_check(closure, [rng.normal(size=(4, 6))], EPS) < TOL


def _direction(rng, hidden, input_dim):
    return LstmDirection(
        w_x=Tensor(rng.normal(size=(4 * hidden, input_dim)) * 0.5),
        w_h=Tensor(rng.normal(size=(4 * hidden, hidden)) * 0.5),
        b=Tensor(rng.normal(size=4 * hidden) * 0.5),
    )


@pytest.mark.parametrize("seed", SEEDS)
def test_lstm_cell_grads(seed):
    rng = np.random.default_rng(800 + seed)
    hidden, input_dim = 3, 4
    d0 = _direction(rng, hidden, input_dim)
    x = rng.normal(size=(1, input_dim))
    h_prev = rng.normal(size=(1, hidden))
    c_prev = rng.normal(size=(1, hidden))
    proj_h = rng.normal(size=(1, hidden))
    proj_c = rng.normal(size=(1, hidden))

    def closure(inputs):
        wx, wh, b, xi, hi, ci = inputs
        d = LstmDirection(w_x=Tensor(wx), w_h=Tensor(wh), b=Tensor(b))
        h, c, cache = lstm_step(xi, hi, ci, d)
        dx, dh_prev, dc_prev, dz = lstm_step_backward(cache, d, proj_h, proj_c)
        dwx = dz.T @ xi
        dwh = dz.T @ hi
        db = dz.sum(axis=0)
        loss = float((h * proj_h).sum() + (c * proj_c).sum())
        return loss, [dwx, dwh, db, dx, dh_prev, dc_prev]

    inputs = [d0.w_x.data, d0.w_h.data, d0.b.data, x, h_prev, c_prev]
    assert grad_check(closure, inputs, EPS) < TOL


@pytest.mark.parametrize("seed", SEEDS)
def test_bilstm_grads(seed):
    rng = np.random.default_rng(900 + seed)
    hidden, input_dim, steps = 3, 2, 5
    p0 = LstmParams(
        fwd=_direction(rng, hidden, input_dim), bwd=_direction(rng, hidden, input_dim)
    )
    x = rng.normal(size=(steps, input_dim))
    proj = rng.normal(size=(steps, 2 * hidden))

    def closure(inputs):
        x_in, fwx, fwh, fb, bwx, bwh, bb = inputs
        p = LstmParams(
            fwd=LstmDirection(Tensor(fwx), Tensor(fwh), Tensor(fb)),
            bwd=LstmDirection(Tensor(bwx), Tensor(bwh), Tensor(bb)),
        )
        out = bilstm_forward(x_in, p)
        dx, grads = bilstm_backward(out, proj)
        loss = float((out.h_seq.data * proj).sum())
        return loss, [
            dx, grads.fwd.w_x, grads.fwd.w_h, grads.fwd.b,
            grads.bwd.w_x, grads.bwd.w_h, grads.bwd.b,
        ]

    inputs = [
        x, p0.fwd.w_x.data, p0.fwd.w_h.data, p0.fwd.b.data,
        p0.bwd.w_x.data, p0.bwd.w_h.data, p0.bwd.b.data,
    ]
    assert grad_check(closure, inputs, EPS) < TOL


@pytest.mark.parametrize("seed", SEEDS)
def test_attention_grads(seed):
    rng = np.random.default_rng(1000 + seed)
    steps, width, d_k = 4, 6, 8
    v = rng.normal(size=(steps, width))
    w_a = rng.normal(size=(width, d_k)) * 0.5
    q = rng.normal(size=d_k)
    proj = rng.normal(size=width)

    def closure(inputs):
        vi, wi, qi = inputs
        p = AttentionParams(w_a=Tensor(wi), q=Tensor(qi))
        a, _, ctx = attention_forward(vi, p)
        dv, dw, dq = attention_backward(ctx, proj)
        return float((a.data * proj).sum()), [dv, dw, dq]

    assert grad_check(closure, [v, w_a, q], EPS) < TOL


def test_attention_degenerate_keys_gradient():
    # W_a = 0 makes d uniform; the dV adjoint still carries both paths.
    rng = np.random.default_rng(77)
    steps, width, d_k = 5, 3, 4
    v = rng.normal(size=(steps, width))
    w_a = np.zeros((width, d_k))
    q = rng.normal(size=d_k)
    unit = np.zeros(width)
    unit[0] = 1.0

    def closure(inputs):
        vi, wi, qi = inputs
        p = AttentionParams(w_a=Tensor(wi), q=Tensor(qi))
        a, _, ctx = attention_forward(vi, p)
        dv, dw, dq = attention_backward(ctx, unit)
        return float(a.data[0]), [dv, dw, dq]

    assert grad_check(closure, [v, w_a, q], EPS) < TOL


@pytest.mark.parametrize("seed", range(5))
def test_bilstm_attention_composed_grads(seed):
    rng = np.random.default_rng(1100 + seed)
    hidden, input_dim, steps, d_k = 4, 3, 8, 5
    p0 = LstmParams(
        fwd=_direction(rng, hidden, input_dim), bwd=_direction(rng, hidden, input_dim)
    )
    a0 = AttentionParams(
        w_a=Tensor(rng.normal(size=(2 * hidden, d_k)) * 0.5), q=Tensor(rng.normal(size=d_k))
    )
    x = rng.normal(size=(steps, input_dim))
    proj = rng.normal(size=2 * hidden)

    def closure(inputs):
        x_in, fwx, fwh, fb, bwx, bwh, bb, wa, q = inputs
        p = LstmParams(
            fwd=LstmDirection(Tensor(fwx), Tensor(fwh), Tensor(fb)),
            bwd=LstmDirection(Tensor(bwx), Tensor(bwh), Tensor(bb)),
        )
        ap = AttentionParams(w_a=Tensor(wa), q=Tensor(q))
        out = bilstm_forward(x_in, p)
        a, _, ctx = attention_forward(out.h_seq, ap)
        dv, dwa, dq = attention_backward(ctx, proj)
        dx, grads = bilstm_backward(out, dv)
        loss = float((a.data * proj).sum())
        return loss, [
            dx, grads.fwd.w_x, grads.fwd.w_h, grads.fwd.b,
            grads.bwd.w_x, grads.bwd.w_h, grads.bwd.b, dwa, dq,
        ]

    inputs = [
        x, p0.fwd.w_x.data, p0.fwd.w_h.data, p0.fwd.b.data,
        p0.bwd.w_x.data, p0.bwd.w_h.data, p0.bwd.b.data,
        a0.w_a.data, a0.q.data,
    ]
    assert grad_check(closure, inputs, EPS) < TOL
