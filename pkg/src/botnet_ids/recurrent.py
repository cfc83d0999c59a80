"""Bidirectional LSTM encoder and the single-query attention head.

The recurrence is a full LSTM cell (gates i, f, g, o). One direction
reads the sequence start to end, the other end to start, and the
per-step hidden states are concatenated into rows [h_t_fwd || h_t_bwd].
Attention then scores each row against a learned query through a tanh
key projection and collapses the sequence into one context vector.

Both layers carry exact backward passes: backpropagation through time
for the recurrence (including the cell-state path) and the full adjoint
of the key/score/softmax/aggregate chain for attention. Ops accept a
single sequence [T, D] or a batch [B, T, D].
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .errors import GradientStateError, ShapeError
from .tensor import Tensor, as_array


def _sigmoid(x: np.ndarray) -> np.ndarray:
    return 1.0 / (1.0 + np.exp(-x))


@dataclass
class LstmDirection:
    """Weights of one direction: gate blocks stacked as [i; f; g; o]."""

    w_x: Tensor  # [4H, input_dim]
    w_h: Tensor  # [4H, H]
    b: Tensor    # [4H]

    def __post_init__(self):
        four_h = self.w_x.shape[0]
        if four_h % 4 != 0 or self.w_h.shape != (four_h, four_h // 4) or self.b.shape != (four_h,):
            raise ShapeError(
                f"inconsistent LSTM direction shapes: w_x {self.w_x.shape}, "
                f"w_h {self.w_h.shape}, b {self.b.shape}"
            )

    @property
    def hidden_size(self) -> int:
        return self.w_x.shape[0] // 4

    @property
    def input_dim(self) -> int:
        return self.w_x.shape[1]


@dataclass
class LstmParams:
    """Forward- and backward-direction weights of a BiLSTM layer."""

    fwd: LstmDirection
    bwd: LstmDirection

    def __post_init__(self):
        if (
            self.fwd.hidden_size != self.bwd.hidden_size
            or self.fwd.input_dim != self.bwd.input_dim
        ):
            raise ShapeError("both directions must share hidden_size and input_dim")

    @property
    def hidden_size(self) -> int:
        return self.fwd.hidden_size

    @property
    def input_dim(self) -> int:
        return self.fwd.input_dim


@dataclass
class LstmDirectionGrads:
    w_x: np.ndarray
    w_h: np.ndarray
    b: np.ndarray


@dataclass
class LstmGrads:
    fwd: LstmDirectionGrads
    bwd: LstmDirectionGrads


def lstm_step(x_t, h_prev, c_prev, d: LstmDirection, x_proj=None):
    """One batched cell update: returns (h_t, c_t, cache) for [B, .] inputs.

    ``x_proj`` optionally carries a precomputed ``x_t @ w_x.T`` so a
    sequence runner can batch that product over all timesteps at once.
    """
    hid = d.hidden_size
    if x_proj is None:
        x_proj = x_t @ d.w_x.data.T
    z = x_proj + h_prev @ d.w_h.data.T + d.b.data
    gif = _sigmoid(z[:, :2 * hid])    # i and f share one contiguous block
    gi = gif[:, :hid]
    gf = gif[:, hid:]
    gg = np.tanh(z[:, 2 * hid:3 * hid])
    go = _sigmoid(z[:, 3 * hid:])
    c_t = gf * c_prev + gi * gg
    tanh_c = np.tanh(c_t)
    h_t = go * tanh_c
    cache = (x_t, h_prev, c_prev, gi, gf, gg, go, tanh_c)
    return h_t, c_t, cache


def lstm_step_backward(cache, d: LstmDirection, dh, dc, compute_dx: bool = True):
    """Adjoint of one cell update.

    Returns (dx_t, dh_prev, dc_prev, dz) where dz is the [B, 4H]
    pre-activation gradient the caller accumulates into the weights.
    Sequence runners that batch the input gradient afterwards pass
    ``compute_dx=False`` and get None in the first slot.
    """
    x_t, h_prev, c_prev, gi, gf, gg, go, tanh_c = cache
    d_go = dh * tanh_c
    dc_total = dc + dh * go * (1.0 - tanh_c ** 2)
    d_gi = dc_total * gg
    d_gf = dc_total * c_prev
    d_gg = dc_total * gi
    dc_prev = dc_total * gf
    dz = np.concatenate(
        [
            d_gi * gi * (1.0 - gi),
            d_gf * gf * (1.0 - gf),
            d_gg * (1.0 - gg ** 2),
            d_go * go * (1.0 - go),
        ],
        axis=1,
    )
    dx_t = dz @ d.w_x.data if compute_dx else None
    dh_prev = dz @ d.w_h.data
    return dx_t, dh_prev, dc_prev, dz


def lstm_cell(x_t, h_prev, c_prev, d: LstmDirection) -> tuple[np.ndarray, np.ndarray]:
    """Single-sample cell update on vectors x_t [D], h_prev/c_prev [H]."""
    x_t = as_array(x_t)
    h_prev = as_array(h_prev)
    c_prev = as_array(c_prev)
    hid = d.hidden_size
    if x_t.shape != (d.input_dim,) or h_prev.shape != (hid,) or c_prev.shape != (hid,):
        raise ShapeError(
            f"lstm_cell shapes: x {x_t.shape}, h {h_prev.shape}, c {c_prev.shape} "
            f"do not match input_dim={d.input_dim}, H={hid}"
        )
    h_t, c_t, _ = lstm_step(x_t[None], h_prev[None], c_prev[None], d)
    return h_t[0], c_t[0]


@dataclass
class BiLstmOutput:
    """Concatenated per-step states plus the caches BPTT needs.

    h_seq row t is [h_t_fwd || h_t_bwd], shaped [T, 2H] for a single
    sequence or [B, T, 2H] for a batch.
    """

    h_seq: Tensor
    hidden_size: int
    _caches_fwd: Optional[list] = field(default=None, repr=False)
    _caches_bwd: Optional[list] = field(default=None, repr=False)
    _params: Optional[LstmParams] = field(default=None, repr=False)
    _squeeze: bool = field(default=False, repr=False)


def _run_direction(x: np.ndarray, d: LstmDirection):
    """Process x [B, T, D] in order t = 0..T-1 with zero initial state."""
    x = np.ascontiguousarray(x)      # reversed-direction input is a strided view
    batch, steps, _ = x.shape
    hid = d.hidden_size
    x_proj = x @ d.w_x.data.T        # one matmul for every timestep
    h = np.zeros((batch, hid))
    c = np.zeros((batch, hid))
    h_all = np.empty((batch, steps, hid))
    caches = []
    for t in range(steps):
        h, c, cache = lstm_step(x[:, t], h, c, d, x_proj=x_proj[:, t])
        h_all[:, t] = h
        caches.append(cache)
    return h_all, caches


def _run_direction_backward(caches: list, d: LstmDirection, d_h_all: np.ndarray):
    """BPTT over one direction, in the same processing order as forward.

    The recurrence forces the dh/dc chain to walk step by step, but the
    weight gradients contract over all steps in single matmuls.
    """
    batch, steps, hid = d_h_all.shape
    dz_all = np.empty((batch, steps, 4 * hid))
    dh_next = np.zeros((batch, hid))
    dc_next = np.zeros((batch, hid))
    for t in reversed(range(steps)):
        dh = d_h_all[:, t] + dh_next
        _, dh_next, dc_next, dz = lstm_step_backward(
            caches[t], d, dh, dc_next, compute_dx=False
        )
        dz_all[:, t] = dz
    x_all = np.stack([c[0] for c in caches], axis=1)        # [B, T, D]
    h_prev_all = np.stack([c[1] for c in caches], axis=1)   # [B, T, H]
    dz_flat = dz_all.reshape(batch * steps, 4 * hid)
    dx = dz_all @ d.w_x.data
    grads = LstmDirectionGrads(
        w_x=dz_flat.T @ x_all.reshape(batch * steps, -1),
        w_h=dz_flat.T @ h_prev_all.reshape(batch * steps, hid),
        b=dz_flat.sum(axis=0),
    )
    return dx, grads


def bilstm_forward(x_seq, p: LstmParams) -> BiLstmOutput:
    """Run both directions over the sequence and concatenate states.

    The backward direction consumes the time-reversed sequence, so its
    state at row t has seen steps T-1..t.
    """
    x = as_array(x_seq)
    squeeze = x.ndim == 2
    if squeeze:
        x = x[None]
    if x.ndim != 3 or x.shape[1] < 1:
        raise ShapeError(f"bilstm input must be [T,D] or [B,T,D] with T >= 1, got {x.shape}")
    if x.shape[2] != p.input_dim:
        raise ShapeError(f"bilstm input dim {x.shape[2]} != params input_dim {p.input_dim}")
    h_fwd, caches_fwd = _run_direction(x, p.fwd)
    h_bwd_rev, caches_bwd = _run_direction(x[:, ::-1], p.bwd)
    h_seq = np.concatenate([h_fwd, h_bwd_rev[:, ::-1]], axis=2)
    return BiLstmOutput(
        h_seq=Tensor(h_seq[0] if squeeze else h_seq),
        hidden_size=p.hidden_size,
        _caches_fwd=caches_fwd,
        _caches_bwd=caches_bwd,
        _params=p,
        _squeeze=squeeze,
    )


def bilstm_backward(out: BiLstmOutput, d_h_seq) -> tuple[np.ndarray, LstmGrads]:
    """Exact BPTT through both directions, including the cell-state path."""
    if out._caches_fwd is None or out._params is None:
        raise GradientStateError("bilstm_backward needs the cache from bilstm_forward")
    d_h = as_array(d_h_seq)
    if out._squeeze:
        d_h = d_h[None]
    p = out._params
    hid = p.hidden_size
    if d_h.shape != (d_h.shape[0], len(out._caches_fwd), 2 * hid):
        raise ShapeError(
            f"upstream gradient shape {d_h.shape} does not match h_seq "
            f"[B, {len(out._caches_fwd)}, {2 * hid}]"
        )
    dx_fwd, g_fwd = _run_direction_backward(out._caches_fwd, p.fwd, d_h[:, :, :hid])
    dx_bwd_rev, g_bwd = _run_direction_backward(
        out._caches_bwd, p.bwd, d_h[:, ::-1, hid:]
    )
    dx = dx_fwd + dx_bwd_rev[:, ::-1]
    if out._squeeze:
        dx = dx[0]
    return np.ascontiguousarray(dx), LstmGrads(fwd=g_fwd, bwd=g_bwd)


# ---------------------------------------------------------------------------
# Attention
# ---------------------------------------------------------------------------

@dataclass
class AttentionParams:
    """Key projection and learned query of the attention head."""

    w_a: Tensor  # [2H, d_k]
    q: Tensor    # [d_k]

    def __post_init__(self):
        if self.w_a.ndim != 2 or self.q.ndim != 1 or self.w_a.shape[1] != self.q.shape[0]:
            raise ShapeError(
                f"attention shapes: w_a {self.w_a.shape} must have q's length "
                f"{self.q.shape} as its column count"
            )
        if self.q.shape[0] < 1:
            raise ShapeError("attention d_k must be >= 1")

    @property
    def d_k(self) -> int:
        return self.q.shape[0]


@dataclass
class AttentionCtx:
    v: np.ndarray
    keys: np.ndarray
    weights: np.ndarray
    w_a: np.ndarray
    q: np.ndarray
    squeeze: bool


def attention_forward(values, p: AttentionParams):
    """Collapse per-step states into one vector.

    K = tanh(V W_a), d = softmax(q K^T), a = d V. There is no 1/sqrt(d_k)
    scaling inside the softmax. Returns (a, d, ctx); d is a probability
    vector over the T steps.
    """
    v = as_array(values)
    squeeze = v.ndim == 2
    if squeeze:
        v = v[None]
    if v.ndim != 3 or v.shape[2] != p.w_a.shape[0]:
        raise ShapeError(
            f"attention input {v.shape} does not match w_a rows {p.w_a.shape[0]}"
        )
    keys = np.tanh(v @ p.w_a.data)          # [B, T, d_k]
    scores = keys @ p.q.data                # [B, T]
    shifted = scores - scores.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    weights = e / e.sum(axis=1, keepdims=True)
    context = np.einsum("bt,btj->bj", weights, v)
    ctx = AttentionCtx(
        v=v, keys=keys, weights=weights, w_a=p.w_a.data, q=p.q.data, squeeze=squeeze
    )
    if squeeze:
        return Tensor(context[0]), Tensor(weights[0]), ctx
    return Tensor(context), Tensor(weights), ctx


def attention_backward(ctx: AttentionCtx, d_context):
    """Adjoints through a = dV, d = softmax(qK^T), K = tanh(V W_a).

    V receives gradient along both of its paths: directly through the
    aggregation and through the keys.
    """
    if not isinstance(ctx, AttentionCtx):
        raise GradientStateError("attention_backward needs the ctx from attention_forward")
    da = as_array(d_context)
    if ctx.squeeze:
        da = da[None]
    weights = ctx.weights
    batch, steps, width = ctx.v.shape
    d_k = ctx.q.shape[0]
    dv = weights[:, :, None] * da[:, None, :]
    d_weights = (ctx.v @ da[:, :, None])[:, :, 0]
    inner = (weights * d_weights).sum(axis=1, keepdims=True)
    d_scores = weights * (d_weights - inner)
    dq = ctx.keys.reshape(-1, d_k).T @ d_scores.reshape(-1)
    d_pre = (d_scores[:, :, None] * ctx.q) * (1.0 - ctx.keys ** 2)
    dv += d_pre @ ctx.w_a.T
    dw_a = ctx.v.reshape(-1, width).T @ d_pre.reshape(-1, d_k)
    if ctx.squeeze:
        dv = dv[0]
    return np.ascontiguousarray(dv), dw_a, dq
