"""Dense float64 tensors and the differentiable primitives of the network.

Every operation comes as a forward function returning ``(output, ctx)``
plus a matching ``*_backward(ctx, upstream)`` that applies the
hand-derived adjoint. There is no taped autograd: the model composes
these pairs explicitly, which keeps each gradient rule small enough to
verify against finite differences (see :func:`grad_check`).

All math runs in float64. Single-sample 2-D inputs are accepted by the
convolution/pooling ops and treated as a batch of one.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from .errors import ConfigError, GradientStateError, LabelError, ShapeError
from .rng import stream_key


class Tensor:
    """A dense float64 array with an optional gradient buffer.

    ``data`` is always C-contiguous (row-major). ``grad``, when
    allocated, matches ``data`` elementwise.
    """

    __slots__ = ("data", "grad")

    def __init__(self, data, grad=None):
        self.data = np.ascontiguousarray(data, dtype=np.float64)
        self.grad = None if grad is None else np.ascontiguousarray(grad, dtype=np.float64)
        if self.grad is not None and self.grad.shape != self.data.shape:
            raise ShapeError(
                f"grad shape {self.grad.shape} does not match data shape {self.data.shape}"
            )

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def ensure_grad(self) -> np.ndarray:
        """Allocate (zeroed) the gradient buffer if absent and return it."""
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        return self.grad

    def zero_grad(self) -> None:
        if self.grad is not None:
            self.grad.fill(0.0)

    def copy(self) -> "Tensor":
        return Tensor(self.data.copy(), None if self.grad is None else self.grad.copy())

    @classmethod
    def zeros(cls, shape) -> "Tensor":
        return cls(np.zeros(shape))

    def __repr__(self) -> str:
        return f"Tensor(shape={self.data.shape})"


def as_array(x) -> np.ndarray:
    """Coerce a Tensor or array-like to a float64 ndarray."""
    if isinstance(x, Tensor):
        return x.data
    return np.asarray(x, dtype=np.float64)


def glorot_uniform(rng: np.random.Generator, shape, fan_in: int, fan_out: int) -> np.ndarray:
    """Glorot/Xavier uniform sample in +-sqrt(6 / (fan_in + fan_out))."""
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape)


# ---------------------------------------------------------------------------
# Parameter/state records
# ---------------------------------------------------------------------------

@dataclass
class ConvParams:
    """Weights of one 1-D convolution layer.

    kernels: [out_channels, in_channels, kernel_size]
    bias:    [out_channels]
    """

    kernels: Tensor
    bias: Tensor
    stride: int = 1
    padding: str = "same"

    def __post_init__(self):
        if self.kernels.ndim != 3:
            raise ShapeError(f"conv kernels must be 3-D, got shape {self.kernels.shape}")
        if self.padding not in ("valid", "same"):
            raise ConfigError(f"padding must be 'valid' or 'same', got {self.padding!r}")
        if self.stride < 1:
            raise ConfigError(f"stride must be >= 1, got {self.stride}")
        out_c, in_c, k = self.kernels.shape
        if min(out_c, in_c, k) < 1:
            raise ShapeError(f"conv kernel shape {self.kernels.shape} has a zero extent")
        if self.bias.shape != (out_c,):
            raise ShapeError(
                f"conv bias shape {self.bias.shape} does not match out_channels {out_c}"
            )

    @property
    def out_channels(self) -> int:
        return self.kernels.shape[0]

    @property
    def in_channels(self) -> int:
        return self.kernels.shape[1]

    @property
    def kernel_size(self) -> int:
        return self.kernels.shape[2]


@dataclass
class BatchNormParams:
    """Per-channel scale/shift plus running statistics."""

    gamma: Tensor
    beta: Tensor
    running_mean: Tensor
    running_var: Tensor
    momentum: float = 0.99
    epsilon: float = 1e-5

    def __post_init__(self):
        if self.epsilon <= 0:
            raise ConfigError(f"batchnorm epsilon must be > 0, got {self.epsilon}")
        if not 0.0 < self.momentum < 1.0:
            raise ConfigError(f"batchnorm momentum must be in (0,1), got {self.momentum}")
        if np.any(self.running_var.data < 0):
            raise ConfigError("running_var must be elementwise >= 0")

    @classmethod
    def identity(cls, channels: int, momentum: float = 0.99, epsilon: float = 1e-5) -> "BatchNormParams":
        return cls(
            gamma=Tensor(np.ones(channels)),
            beta=Tensor(np.zeros(channels)),
            running_mean=Tensor(np.zeros(channels)),
            running_var=Tensor(np.ones(channels)),
            momentum=momentum,
            epsilon=epsilon,
        )


@dataclass
class DropoutState:
    """Rate plus the private stream a dropout layer draws masks from.

    Inverted scaling: surviving activations are multiplied by
    1/(1-rate) at train time so inference is exactly the identity.
    """

    rate: float
    rng_seed: int
    mask: Optional[np.ndarray] = None
    _rng: Optional[np.random.Generator] = field(default=None, repr=False)

    def __post_init__(self):
        if not 0.0 <= self.rate < 1.0:
            raise ConfigError(f"dropout rate must be in [0, 1), got {self.rate}")

    @property
    def rng(self) -> np.random.Generator:
        if self._rng is None:
            key = stream_key(self.rng_seed, "dropout")
            self._rng = np.random.Generator(np.random.Philox(key=key))
        return self._rng


# ---------------------------------------------------------------------------
# matmul / dense
# ---------------------------------------------------------------------------

@dataclass
class MatmulCtx:
    a: np.ndarray
    b: np.ndarray


def matmul(a, b):
    """Matrix product [m,k]x[k,n] -> ([m,n], ctx)."""
    a = as_array(a)
    b = as_array(b)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul shapes do not align: {a.shape} x {b.shape}")
    return Tensor(a @ b), MatmulCtx(a=a, b=b)


def matmul_backward(ctx: MatmulCtx, d_out) -> tuple[np.ndarray, np.ndarray]:
    """dL/da = dL/dc . b^T, dL/db = a^T . dL/dc."""
    d_out = as_array(d_out)
    return d_out @ ctx.b.T, ctx.a.T @ d_out


@dataclass
class DenseCtx:
    x: np.ndarray
    w: np.ndarray


def dense(x, w, b):
    """Affine layer x @ W + b for x of shape [B, n_in]."""
    x = as_array(x)
    w = as_array(w)
    b = as_array(b)
    if x.ndim != 2 or w.ndim != 2 or x.shape[1] != w.shape[0] or b.shape != (w.shape[1],):
        raise ShapeError(
            f"dense shapes do not align: x {x.shape}, W {w.shape}, b {b.shape}"
        )
    return Tensor(x @ w + b), DenseCtx(x=x, w=w)


def dense_backward(ctx: DenseCtx, d_out) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    d_out = as_array(d_out)
    dx = d_out @ ctx.w.T
    dw = ctx.x.T @ d_out
    db = d_out.sum(axis=0)
    return dx, dw, db


# ---------------------------------------------------------------------------
# 1-D convolution
# ---------------------------------------------------------------------------

def _conv_geometry(length: int, k: int, stride: int, padding: str) -> tuple[int, int, int]:
    """Return (pad_left, pad_right, out_length) for one spatial axis."""
    if padding == "valid":
        if length < k:
            raise ShapeError(
                f"input length {length} shorter than kernel {k} under valid padding"
            )
        return 0, 0, (length - k) // stride + 1
    # 'same': out = ceil(L / stride), short side padded on the right
    out_len = -(-length // stride)
    total = max((out_len - 1) * stride + k - length, 0)
    left = total // 2
    return left, total - left, out_len


@dataclass
class ConvCtx:
    col: np.ndarray          # [B*L_out, C_in*k] im2col view of the padded input
    w2: np.ndarray           # [C_out, C_in*k]
    kernel_shape: tuple
    x_shape: tuple           # padded shape [B, C_in, L_pad]
    pad_left: int
    in_length: int
    stride: int
    out_length: int
    squeeze: bool


def conv1d_forward(x, p: ConvParams):
    """Cross-correlate x with p.kernels and add bias.

    x: [in_channels, L] for a single sample or [B, in_channels, L].
    Output length follows the padding mode; the nonlinearity is NOT
    applied here (see :func:`activation`).
    """
    x = as_array(x)
    squeeze = x.ndim == 2
    if squeeze:
        x = x[None]
    if x.ndim != 3:
        raise ShapeError(f"conv input must be [C,L] or [B,C,L], got shape {x.shape}")
    batch, in_c, length = x.shape
    if in_c != p.in_channels:
        raise ShapeError(
            f"conv input has {in_c} channels but kernels expect {p.in_channels}"
        )
    k = p.kernel_size
    left, right, out_len = _conv_geometry(length, k, p.stride, p.padding)
    xp = np.pad(x, ((0, 0), (0, 0), (left, right))) if left or right else x
    sb, sc, sl = xp.strides
    windows = np.lib.stride_tricks.as_strided(
        xp,
        shape=(batch, in_c, out_len, k),
        strides=(sb, sc, sl * p.stride, sl),
        writeable=False,
    )
    col = windows.transpose(0, 2, 1, 3).reshape(batch * out_len, in_c * k)
    w2 = p.kernels.data.reshape(p.out_channels, in_c * k)
    y = col @ w2.T + p.bias.data
    y = y.reshape(batch, out_len, p.out_channels).transpose(0, 2, 1)
    ctx = ConvCtx(
        col=np.ascontiguousarray(col),
        w2=w2,
        kernel_shape=p.kernels.shape,
        x_shape=xp.shape,
        pad_left=left,
        in_length=length,
        stride=p.stride,
        out_length=out_len,
        squeeze=squeeze,
    )
    return Tensor(y[0] if squeeze else y), ctx


def conv1d_backward(ctx: ConvCtx, d_out) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Adjoints of conv1d_forward: (dL/dx, dL/dkernels, dL/dbias)."""
    if not isinstance(ctx, ConvCtx):
        raise GradientStateError("conv1d_backward needs the ctx from conv1d_forward")
    d_out = as_array(d_out)
    if ctx.squeeze:
        d_out = d_out[None]
    batch, _, l_pad = ctx.x_shape
    out_c = ctx.kernel_shape[0]
    dy2 = d_out.transpose(0, 2, 1).reshape(batch * ctx.out_length, out_c)
    db = dy2.sum(axis=0)
    dw = (dy2.T @ ctx.col).reshape(ctx.kernel_shape)
    dcol = (dy2 @ ctx.w2).reshape(batch, ctx.out_length, ctx.kernel_shape[1], ctx.kernel_shape[2])
    dcol = dcol.transpose(0, 2, 1, 3)  # [B, C_in, L_out, k]
    dxp = np.zeros(ctx.x_shape)
    span = ctx.stride * (ctx.out_length - 1) + 1
    for tap in range(ctx.kernel_shape[2]):
        dxp[:, :, tap:tap + span:ctx.stride] += dcol[:, :, :, tap]
    dx = dxp[:, :, ctx.pad_left:ctx.pad_left + ctx.in_length]
    if ctx.squeeze:
        dx = dx[0]
    return np.ascontiguousarray(dx), dw, db


# ---------------------------------------------------------------------------
# Max pooling
# ---------------------------------------------------------------------------

@dataclass
class MaxPoolCtx:
    indices: np.ndarray      # absolute argmax position along L, shaped like y
    x_shape: tuple
    squeeze: bool
    no_overlap: bool         # stride >= pool: each input element feeds one window


def maxpool1d(x, pool: int, stride: int):
    """Window maxima with recorded argmax routing.

    Uses ceil semantics: a final partial window is kept and pooled over
    its valid elements, so length 115 pools to 58 with pool=stride=2.
    Ties go to the lowest index.
    """
    x = as_array(x)
    squeeze = x.ndim == 2
    if squeeze:
        x = x[None]
    if pool < 1 or stride < 1:
        raise ConfigError(f"pool and stride must be >= 1, got pool={pool} stride={stride}")
    batch, channels, length = x.shape
    if pool > length:
        raise ShapeError(f"pool window {pool} exceeds input length {length}")
    n_windows = 1 + -(-(length - pool) // stride)
    if (n_windows - 1) * stride >= length:
        n_windows -= 1  # a window must start inside the input
    if pool == 2 and stride == 2:
        # hot path for the model's pooling: compare element pairs directly
        first = x[:, :, 0:2 * n_windows:2]
        second = x[:, :, 1::2]
        if second.shape[-1] < n_windows:   # odd length, partial tail window
            second = np.concatenate([second, first[:, :, -1:]], axis=-1)
        take_second = second > first
        y = np.where(take_second, second, first)
        indices = np.arange(0, 2 * n_windows, 2) + take_second
    elif stride == pool and length == n_windows * pool:
        blocks = x.reshape(batch, channels, n_windows, pool)
        local = blocks.argmax(axis=-1)
        indices = local + np.arange(n_windows) * stride
        y = np.take_along_axis(x, indices.reshape(batch, channels, n_windows), axis=-1)
    else:
        y = np.empty((batch, channels, n_windows))
        indices = np.empty((batch, channels, n_windows), dtype=np.int64)
        for t in range(n_windows):
            start = t * stride
            window = x[:, :, start:start + pool]
            local = window.argmax(axis=-1)
            indices[:, :, t] = start + local
            y[:, :, t] = np.take_along_axis(window, local[:, :, None], axis=-1)[:, :, 0]
    ctx = MaxPoolCtx(
        indices=indices, x_shape=x.shape, squeeze=squeeze, no_overlap=stride >= pool
    )
    if squeeze:
        return Tensor(y[0]), ctx
    return Tensor(y), ctx


def maxpool1d_backward(ctx: MaxPoolCtx, d_out) -> np.ndarray:
    """Scatter upstream gradient onto the recorded argmax positions only."""
    if not isinstance(ctx, MaxPoolCtx):
        raise GradientStateError("maxpool1d_backward needs the ctx from maxpool1d")
    d_out = as_array(d_out)
    if ctx.squeeze:
        d_out = d_out[None]
    batch, channels, _ = ctx.x_shape
    dx = np.zeros(ctx.x_shape)
    if ctx.no_overlap:
        np.put_along_axis(dx, ctx.indices, d_out, axis=-1)
    else:
        b_idx = np.arange(batch)[:, None, None]
        c_idx = np.arange(channels)[None, :, None]
        np.add.at(dx, (b_idx, c_idx, ctx.indices), d_out)
    return dx[0] if ctx.squeeze else dx


# ---------------------------------------------------------------------------
# Batch normalization
# ---------------------------------------------------------------------------

@dataclass
class BatchNormCtx:
    mode: str
    xhat: np.ndarray
    inv_std: np.ndarray      # [C]
    gamma: np.ndarray


def batchnorm1d(x, p: BatchNormParams, mode: str, update_running: bool = True):
    """Per-channel normalization over the batch and length axes.

    Train mode standardizes with batch statistics and (unless
    ``update_running`` is off, e.g. inside a gradient check) folds them
    into the running estimates. Infer mode is the deterministic affine
    map defined by the running statistics.
    """
    x = as_array(x)
    if x.ndim != 3:
        raise ShapeError(f"batchnorm input must be [B,C,L], got shape {x.shape}")
    if mode not in ("train", "infer"):
        raise ConfigError(f"mode must be 'train' or 'infer', got {mode!r}")
    batch, channels, length = x.shape
    if p.gamma.shape != (channels,):
        raise ShapeError(
            f"batchnorm expects {p.gamma.shape[0]} channels, input has {channels}"
        )
    if mode == "train":
        if batch * length < 2:
            raise ShapeError(
                f"degenerate batch: B*L = {batch * length} < 2, variance undefined"
            )
        mean = x.mean(axis=(0, 2))
        var = x.var(axis=(0, 2))
        if update_running:
            m = p.momentum
            p.running_mean.data = m * p.running_mean.data + (1.0 - m) * mean
            p.running_var.data = m * p.running_var.data + (1.0 - m) * var
    else:
        mean = p.running_mean.data
        var = p.running_var.data
    inv_std = 1.0 / np.sqrt(var + p.epsilon)
    xhat = (x - mean[None, :, None]) * inv_std[None, :, None]
    y = p.gamma.data[None, :, None] * xhat + p.beta.data[None, :, None]
    return Tensor(y), BatchNormCtx(mode=mode, xhat=xhat, inv_std=inv_std, gamma=p.gamma.data)


def batchnorm1d_backward(ctx: BatchNormCtx, d_out) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Full batch-statistics chain rule in train mode.

    With N = B*L per channel and xhat the standardized input:
      dx = inv_std/N * (N*dxhat - sum(dxhat) - xhat * sum(dxhat*xhat))
    Infer mode reduces to the affine adjoint.
    """
    if not isinstance(ctx, BatchNormCtx):
        raise GradientStateError("batchnorm1d_backward needs the ctx from batchnorm1d")
    d_out = as_array(d_out)
    dgamma = (d_out * ctx.xhat).sum(axis=(0, 2))
    dbeta = d_out.sum(axis=(0, 2))
    dxhat = d_out * ctx.gamma[None, :, None]
    inv = ctx.inv_std[None, :, None]
    if ctx.mode == "infer":
        return dxhat * inv, dgamma, dbeta
    n = d_out.shape[0] * d_out.shape[2]
    sum_dxhat = dxhat.sum(axis=(0, 2), keepdims=True)
    sum_dxhat_xhat = (dxhat * ctx.xhat).sum(axis=(0, 2), keepdims=True)
    dx = (inv / n) * (n * dxhat - sum_dxhat - ctx.xhat * sum_dxhat_xhat)
    return dx, dgamma, dbeta


# ---------------------------------------------------------------------------
# Activations, softmax, dropout
# ---------------------------------------------------------------------------

_ACTIVATIONS = ("relu", "tanh", "sigmoid")


@dataclass
class ActivationCtx:
    kind: str
    cache: np.ndarray        # input for relu, output for tanh/sigmoid


def activation(kind: str, x):
    """Elementwise nonlinearity. relu'(0) is defined as 0."""
    x = as_array(x)
    if kind == "relu":
        return Tensor(np.maximum(x, 0.0)), ActivationCtx(kind, x)
    if kind == "tanh":
        y = np.tanh(x)
        return Tensor(y), ActivationCtx(kind, y)
    if kind == "sigmoid":
        y = 1.0 / (1.0 + np.exp(-x))
        return Tensor(y), ActivationCtx(kind, y)
    raise ConfigError(f"unknown activation {kind!r}, expected one of {_ACTIVATIONS}")


def activation_backward(ctx: ActivationCtx, d_out) -> np.ndarray:
    d_out = as_array(d_out)
    if ctx.kind == "relu":
        return d_out * (ctx.cache > 0)
    if ctx.kind == "tanh":
        return d_out * (1.0 - ctx.cache ** 2)
    return d_out * ctx.cache * (1.0 - ctx.cache)


def softmax(x, axis: int = -1) -> Tensor:
    """Exp-normalize along ``axis`` with max subtraction.

    Each slice sums to 1 within 1e-12 and is strictly positive as long
    as the slice's spread stays below the float64 exp underflow point
    (about 745).
    """
    x = as_array(x)
    if x.shape[axis] < 1:
        raise ShapeError(f"softmax axis has zero extent in shape {x.shape}")
    shifted = x - x.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    return Tensor(e / e.sum(axis=axis, keepdims=True))


@dataclass
class DropoutCtx:
    mask: Optional[np.ndarray]   # None means the op was the identity


def dropout(x, s: DropoutState, mode: str):
    """Inverted dropout: identity at inference, masked-and-rescaled in train."""
    x_t = x if isinstance(x, Tensor) else Tensor(x)
    if mode not in ("train", "infer"):
        raise ConfigError(f"mode must be 'train' or 'infer', got {mode!r}")
    if mode == "infer" or s.rate == 0.0:
        return x_t, DropoutCtx(mask=None)
    keep = 1.0 - s.rate
    mask = (s.rng.random(x_t.shape) >= s.rate) / keep
    s.mask = mask
    return Tensor(x_t.data * mask), DropoutCtx(mask=mask)


def dropout_backward(ctx: DropoutCtx, d_out) -> np.ndarray:
    d_out = as_array(d_out)
    if ctx.mask is None:
        return d_out
    return d_out * ctx.mask


# ---------------------------------------------------------------------------
# Loss
# ---------------------------------------------------------------------------

def sparse_ce_loss(logits, labels) -> tuple[float, np.ndarray]:
    """Mean negative log-likelihood of the true class under softmax.

    Returns (loss, dL/dlogits) where the gradient is the fused
    (softmax - onehot)/B form, so no separate softmax backward is
    needed at the head.
    """
    logits = as_array(logits)
    labels = np.asarray(labels)
    if logits.ndim != 2 or labels.ndim != 1 or logits.shape[0] != labels.shape[0]:
        raise ShapeError(
            f"logits {logits.shape} and labels {labels.shape} do not form a batch"
        )
    batch, n_classes = logits.shape
    bad = np.nonzero((labels < 0) | (labels >= n_classes))[0]
    if bad.size:
        raise LabelError(
            f"label {labels[bad[0]]} at row {bad[0]} outside [0, {n_classes})"
        )
    shifted = logits - logits.max(axis=1, keepdims=True)
    log_z = np.log(np.exp(shifted).sum(axis=1))
    rows = np.arange(batch)
    loss = float(np.mean(log_z - shifted[rows, labels]))
    probs = np.exp(shifted - log_z[:, None])
    d_logits = probs.copy()
    d_logits[rows, labels] -= 1.0
    d_logits /= batch
    return loss, d_logits


# ---------------------------------------------------------------------------
# Finite-difference harness
# ---------------------------------------------------------------------------

def grad_check(
    op_closure: Callable[[Sequence[np.ndarray]], tuple[float, Sequence[np.ndarray]]],
    inputs: Sequence[np.ndarray],
    eps: float = 1e-5,
) -> float:
    """Compare a closure's analytic gradients against central differences.

    ``op_closure(inputs)`` must return ``(scalar, grads)`` with one
    gradient array per input, and must be deterministic and free of
    side effects. Returns the max over coordinates of
    ``|analytic - numeric| / max(1e-8, |analytic| + |numeric|)``.
    """
    inputs = [np.array(a, dtype=np.float64) for a in inputs]
    _, analytic = op_closure(inputs)
    if len(analytic) != len(inputs):
        raise ShapeError(
            f"closure returned {len(analytic)} gradients for {len(inputs)} inputs"
        )
    worst = 0.0
    for i, x in enumerate(inputs):
        grad = np.asarray(analytic[i], dtype=np.float64)
        if grad.shape != x.shape:
            raise ShapeError(
                f"gradient {i} has shape {grad.shape}, input has {x.shape}"
            )
        flat = x.reshape(-1)
        for j in range(flat.size):
            orig = flat[j]
            flat[j] = orig + eps
            f_plus, _ = op_closure(inputs)
            flat[j] = orig - eps
            f_minus, _ = op_closure(inputs)
            flat[j] = orig
            numeric = (f_plus - f_minus) / (2.0 * eps)
            a = grad.reshape(-1)[j]
            rel = abs(a - numeric) / max(1e-8, abs(a) + abs(numeric))
            worst = max(worst, rel)
    return worst
