"""The full classifier: three conv blocks, BiLSTM, attention, dense head.

Each conv block is conv -> ReLU -> batchnorm -> maxpool -> dropout (the
batchnorm/activation order can be swapped via config). The final
feature map [C, T] is transposed into a T-step sequence for the BiLSTM,
attention collapses the sequence to one vector, and two dropout-
regularized dense layers feed a softmax head.

``model_forward`` records every op context; ``model_backward`` replays
them in reverse and fills the parameter gradient buffers.
"""

from __future__ import annotations

from dataclasses import dataclass, field, asdict
from typing import Optional

import numpy as np

from . import data as data_mod
from .errors import ConfigError, GradientStateError, ShapeError
from .recurrent import (
    AttentionParams,
    LstmDirection,
    LstmParams,
    attention_backward,
    attention_forward,
    bilstm_backward,
    bilstm_forward,
)
from .rng import derive_seed, stream
from .serialize import load_container, save_container
from .tensor import (
    BatchNormParams,
    ConvParams,
    DropoutState,
    Tensor,
    activation,
    activation_backward,
    as_array,
    batchnorm1d,
    batchnorm1d_backward,
    conv1d_forward,
    conv1d_backward,
    dense,
    dense_backward,
    dropout,
    dropout_backward,
    glorot_uniform,
    maxpool1d,
    maxpool1d_backward,
    softmax,
    sparse_ce_loss,
    _conv_geometry,
)

CHECKPOINT_KIND = "checkpoint"


@dataclass(frozen=True)
class ModelConfig:
    """Architecture hyperparameters. Defaults are the deployed network."""

    input_len: int = 115
    input_channels: int = 1
    conv_blocks: tuple = ((128, 5), (256, 3), (128, 3))
    conv_dropout: float = 0.3
    lstm_hidden: int = 128
    attention_dk: int = 256
    dense_units: tuple = (256, 128)
    dense_dropout: float = 0.4
    n_classes: int = 10
    activation: str = "relu"
    pool_size: int = 2
    pool_stride: int = 2
    conv_padding: str = "same"
    conv_stride: int = 1
    batchnorm_before_activation: bool = False
    bn_momentum: float = 0.99
    bn_epsilon: float = 1e-5

    def block_lengths(self) -> list[int]:
        """Sequence length after each conv+pool block."""
        lengths = []
        length = self.input_len
        for _, kernel in self.conv_blocks:
            _, _, length = _conv_geometry(length, kernel, self.conv_stride, self.conv_padding)
            if length >= self.pool_size:
                length = 1 + -(-(length - self.pool_size) // self.pool_stride)
            else:
                length = 0
            lengths.append(length)
        return lengths

    def to_dict(self) -> dict:
        d = asdict(self)
        d["conv_blocks"] = [list(b) for b in self.conv_blocks]
        d["dense_units"] = list(self.dense_units)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        d = dict(d)
        d["conv_blocks"] = tuple(tuple(b) for b in d["conv_blocks"])
        d["dense_units"] = tuple(d["dense_units"])
        return cls(**d)


@dataclass
class ModelParams:
    """Every parameter tensor of the network, under stable names."""

    cfg: ModelConfig
    convs: list[ConvParams]
    bns: list[BatchNormParams]
    conv_dropouts: list[DropoutState]
    bilstm: LstmParams
    attention: AttentionParams
    dense_w: list[Tensor]
    dense_b: list[Tensor]
    dense_dropouts: list[DropoutState]
    head_w: Tensor
    head_b: Tensor
    seed: int = 0

    def named_parameters(self) -> dict[str, Tensor]:
        """Trainable tensors in a stable order, keyed by unique names."""
        out: dict[str, Tensor] = {}
        for i, (conv, bn) in enumerate(zip(self.convs, self.bns), start=1):
            out[f"conv{i}.kernels"] = conv.kernels
            out[f"conv{i}.bias"] = conv.bias
            out[f"conv{i}.bn.gamma"] = bn.gamma
            out[f"conv{i}.bn.beta"] = bn.beta
        for tag, d in (("fwd", self.bilstm.fwd), ("bwd", self.bilstm.bwd)):
            out[f"bilstm.{tag}.w_x"] = d.w_x
            out[f"bilstm.{tag}.w_h"] = d.w_h
            out[f"bilstm.{tag}.b"] = d.b
        out["attention.w_a"] = self.attention.w_a
        out["attention.q"] = self.attention.q
        for i, (w, b) in enumerate(zip(self.dense_w, self.dense_b), start=1):
            out[f"dense{i}.w"] = w
            out[f"dense{i}.b"] = b
        out["head.w"] = self.head_w
        out["head.b"] = self.head_b
        return out

    def named_state(self) -> dict[str, Tensor]:
        """Non-trained tensors (batchnorm running statistics)."""
        out: dict[str, Tensor] = {}
        for i, bn in enumerate(self.bns, start=1):
            out[f"conv{i}.bn.running_mean"] = bn.running_mean
            out[f"conv{i}.bn.running_var"] = bn.running_var
        return out

    def parameter_count(self) -> int:
        return sum(t.size for t in self.named_parameters().values())

    def clone(self) -> "ModelParams":
        """Deep copy of all tensors (used for early-stopping snapshots)."""
        fresh = allocate_model(self.cfg, self.seed)
        src = {**self.named_parameters(), **self.named_state()}
        dst = {**fresh.named_parameters(), **fresh.named_state()}
        for name, tensor in dst.items():
            tensor.data[...] = src[name].data
        return fresh


def allocate_model(cfg: ModelConfig, seed: int = 0) -> ModelParams:
    """Zero-filled parameter set with the shapes cfg dictates."""
    lengths = cfg.block_lengths()
    if min(lengths) < 1:
        raise ConfigError(
            f"config pools the sequence away: lengths after each block are {lengths}"
        )
    convs, bns, conv_drops = [], [], []
    in_c = cfg.input_channels
    for i, (filters, kernel) in enumerate(cfg.conv_blocks, start=1):
        convs.append(
            ConvParams(
                kernels=Tensor.zeros((filters, in_c, kernel)),
                bias=Tensor.zeros(filters),
                stride=cfg.conv_stride,
                padding=cfg.conv_padding,
            )
        )
        bns.append(
            BatchNormParams.identity(filters, momentum=cfg.bn_momentum, epsilon=cfg.bn_epsilon)
        )
        conv_drops.append(
            DropoutState(rate=cfg.conv_dropout, rng_seed=derive_seed(seed, f"dropout/conv{i}"))
        )
        in_c = filters
    hid = cfg.lstm_hidden
    def direction():
        return LstmDirection(
            w_x=Tensor.zeros((4 * hid, in_c)),
            w_h=Tensor.zeros((4 * hid, hid)),
            b=Tensor.zeros(4 * hid),
        )
    bilstm = LstmParams(fwd=direction(), bwd=direction())
    attn = AttentionParams(
        w_a=Tensor.zeros((2 * hid, cfg.attention_dk)), q=Tensor.zeros(cfg.attention_dk)
    )
    dense_w, dense_b, dense_drops = [], [], []
    n_in = 2 * hid
    for i, units in enumerate(cfg.dense_units, start=1):
        dense_w.append(Tensor.zeros((n_in, units)))
        dense_b.append(Tensor.zeros(units))
        dense_drops.append(
            DropoutState(rate=cfg.dense_dropout, rng_seed=derive_seed(seed, f"dropout/dense{i}"))
        )
        n_in = units
    return ModelParams(
        cfg=cfg,
        convs=convs,
        bns=bns,
        conv_dropouts=conv_drops,
        bilstm=bilstm,
        attention=attn,
        dense_w=dense_w,
        dense_b=dense_b,
        dense_dropouts=dense_drops,
        head_w=Tensor.zeros((n_in, cfg.n_classes)),
        head_b=Tensor.zeros(cfg.n_classes),
        seed=seed,
    )


def build_model(cfg: ModelConfig, seed: int) -> ModelParams:
    """Initialize parameters deterministically from the seed.

    Glorot-uniform weights, zero biases, forget-gate bias 1.0,
    batchnorm at identity.
    """
    params = allocate_model(cfg, seed)
    rng = stream(seed, "init")
    hid = cfg.lstm_hidden
    for conv in params.convs:
        out_c, in_c, k = conv.kernels.shape
        conv.kernels.data[...] = glorot_uniform(
            rng, (out_c, in_c, k), fan_in=in_c * k, fan_out=out_c * k
        )
    for d in (params.bilstm.fwd, params.bilstm.bwd):
        d.w_x.data[...] = glorot_uniform(rng, d.w_x.shape, d.input_dim, 4 * hid)
        d.w_h.data[...] = glorot_uniform(rng, d.w_h.shape, hid, 4 * hid)
        d.b.data[hid:2 * hid] = 1.0
    attn = params.attention
    attn.w_a.data[...] = glorot_uniform(rng, attn.w_a.shape, 2 * hid, cfg.attention_dk)
    attn.q.data[...] = glorot_uniform(rng, attn.q.shape, cfg.attention_dk, 1)
    for w in params.dense_w:
        w.data[...] = glorot_uniform(rng, w.shape, w.shape[0], w.shape[1])
    params.head_w.data[...] = glorot_uniform(
        rng, params.head_w.shape, params.head_w.shape[0], cfg.n_classes
    )
    return params


@dataclass
class BlockCache:
    conv: object
    act: object
    bn: object
    pool: object
    drop: object


@dataclass
class ModelCache:
    """Everything model_backward needs, in application order."""

    mode: str
    blocks: list[BlockCache]
    bilstm_out: object
    attn_ctx: object
    dense: list[tuple]          # (dense_ctx, act_ctx, drop_ctx) per layer
    head_ctx: object
    logits: np.ndarray
    batch_size: int


def model_forward(params: ModelParams, x, mode: str, update_bn_running: bool = True):
    """Whole-network forward pass.

    x: Tensor or array [B, input_channels, input_len]. Returns
    (logits [B, C], probs [B, C], cache). Inference mode is a pure
    deterministic function of (params, x); train mode draws dropout
    masks and, unless ``update_bn_running`` is off, advances the
    batchnorm running statistics.
    """
    cfg = params.cfg
    x = as_array(x)
    if x.ndim != 3 or x.shape[1:] != (cfg.input_channels, cfg.input_len):
        raise ShapeError(
            f"model input must be [B, {cfg.input_channels}, {cfg.input_len}], got {x.shape}"
        )
    h = x
    blocks = []
    for conv, bn, drop in zip(params.convs, params.bns, params.conv_dropouts):
        y, conv_ctx = conv1d_forward(h, conv)
        if cfg.batchnorm_before_activation:
            y, bn_ctx = batchnorm1d(y, bn, mode, update_running=update_bn_running)
            y, act_ctx = activation(cfg.activation, y)
        else:
            y, act_ctx = activation(cfg.activation, y)
            y, bn_ctx = batchnorm1d(y, bn, mode, update_running=update_bn_running)
        y, pool_ctx = maxpool1d(y, cfg.pool_size, cfg.pool_stride)
        y, drop_ctx = dropout(y, drop, mode)
        blocks.append(BlockCache(conv=conv_ctx, act=act_ctx, bn=bn_ctx, pool=pool_ctx, drop=drop_ctx))
        h = y.data
    # [B, C, T] -> T-step sequence of C-dim inputs
    seq = np.ascontiguousarray(h.transpose(0, 2, 1))
    bilstm_out = bilstm_forward(seq, params.bilstm)
    context, _, attn_ctx = attention_forward(bilstm_out.h_seq, params.attention)
    h = context.data
    dense_caches = []
    for w, b, drop in zip(params.dense_w, params.dense_b, params.dense_dropouts):
        y, dense_ctx = dense(h, w, b)
        y, act_ctx = activation(cfg.activation, y)
        y, drop_ctx = dropout(y, drop, mode)
        dense_caches.append((dense_ctx, act_ctx, drop_ctx))
        h = y.data
    logits, head_ctx = dense(h, params.head_w, params.head_b)
    probs = softmax(logits.data, axis=-1)
    cache = ModelCache(
        mode=mode,
        blocks=blocks,
        bilstm_out=bilstm_out,
        attn_ctx=attn_ctx,
        dense=dense_caches,
        head_ctx=head_ctx,
        logits=logits.data,
        batch_size=x.shape[0],
    )
    return logits, probs, cache


def model_backward(params: ModelParams, cache: ModelCache, labels):
    """Backpropagate the cross-entropy loss through the whole network.

    Requires a train-mode cache. Returns (loss, grads) where grads maps
    the names of ``named_parameters`` onto gradient arrays (these are
    the tensors' own ``grad`` buffers, freshly overwritten).
    """
    if cache.mode != "train":
        raise GradientStateError("model_backward needs a cache from a train-mode forward")
    cfg = params.cfg
    loss, d_h = sparse_ce_loss(cache.logits, labels)
    grads: dict[str, np.ndarray] = {}

    def put(name: str, tensor: Tensor, value: np.ndarray):
        buf = tensor.ensure_grad()
        buf[...] = value
        grads[name] = buf

    d_h, dw, db = dense_backward(cache.head_ctx, d_h)
    put("head.w", params.head_w, dw)
    put("head.b", params.head_b, db)
    for i in range(len(params.dense_w) - 1, -1, -1):
        dense_ctx, act_ctx, drop_ctx = cache.dense[i]
        d_h = dropout_backward(drop_ctx, d_h)
        d_h = activation_backward(act_ctx, d_h)
        d_h, dw, db = dense_backward(dense_ctx, d_h)
        put(f"dense{i + 1}.w", params.dense_w[i], dw)
        put(f"dense{i + 1}.b", params.dense_b[i], db)

    d_seq, dw_a, dq = attention_backward(cache.attn_ctx, d_h)
    put("attention.w_a", params.attention.w_a, dw_a)
    put("attention.q", params.attention.q, dq)
    d_seq, lstm_grads = bilstm_backward(cache.bilstm_out, d_seq)
    for tag, d, g in (
        ("fwd", params.bilstm.fwd, lstm_grads.fwd),
        ("bwd", params.bilstm.bwd, lstm_grads.bwd),
    ):
        put(f"bilstm.{tag}.w_x", d.w_x, g.w_x)
        put(f"bilstm.{tag}.w_h", d.w_h, g.w_h)
        put(f"bilstm.{tag}.b", d.b, g.b)

    d_h = np.ascontiguousarray(d_seq.transpose(0, 2, 1))
    for i in range(len(params.convs) - 1, -1, -1):
        block = cache.blocks[i]
        d_h = dropout_backward(block.drop, d_h)
        d_h = maxpool1d_backward(block.pool, d_h)
        if cfg.batchnorm_before_activation:
            d_h = activation_backward(block.act, d_h)
            d_h, dgamma, dbeta = batchnorm1d_backward(block.bn, d_h)
        else:
            d_h, dgamma, dbeta = batchnorm1d_backward(block.bn, d_h)
            d_h = activation_backward(block.act, d_h)
        put(f"conv{i + 1}.bn.gamma", params.bns[i].gamma, dgamma)
        put(f"conv{i + 1}.bn.beta", params.bns[i].beta, dbeta)
        d_h, dw, db = conv1d_backward(block.conv, d_h)
        put(f"conv{i + 1}.kernels", params.convs[i].kernels, dw)
        put(f"conv{i + 1}.bias", params.convs[i].bias, db)
    return loss, grads


# ---------------------------------------------------------------------------
# Checkpoints
# ---------------------------------------------------------------------------

@dataclass
class Checkpoint:
    params: ModelParams
    scaler: "data_mod.MinMaxScaler"
    vocab: "data_mod.LabelVocab"


def save_checkpoint(params: ModelParams, scaler, vocab, path) -> None:
    """Write parameters, running stats, scaler bounds and vocab to disk."""
    tensors: dict[str, np.ndarray] = {
        name: t.data for name, t in params.named_parameters().items()
    }
    tensors.update({name: t.data for name, t in params.named_state().items()})
    tensors["scaler.min"] = scaler.feature_min
    tensors["scaler.max"] = scaler.feature_max
    meta = {
        "config": params.cfg.to_dict(),
        "label_vocab": list(vocab.names),
        "seed": params.seed,
    }
    save_container(path, CHECKPOINT_KIND, meta, tensors)


def load_checkpoint(path, cfg: Optional[ModelConfig] = None) -> Checkpoint:
    """Rebuild a checkpoint; bit-exact inverse of save_checkpoint.

    If ``cfg`` is given, the stored tensors are validated against the
    shapes that config implies; a mismatch names the offending tensor.
    """
    _, meta, tensors = load_container(path, expect_kind=CHECKPOINT_KIND)
    stored_cfg = ModelConfig.from_dict(meta["config"])
    target_cfg = cfg if cfg is not None else stored_cfg
    params = allocate_model(target_cfg, seed=int(meta.get("seed", 0)))
    expected = {**params.named_parameters(), **params.named_state()}
    for name, tensor in expected.items():
        if name not in tensors:
            raise ShapeError(f"checkpoint is missing tensor {name!r}")
        if tuple(tensors[name].shape) != tensor.shape:
            raise ShapeError(
                f"checkpoint tensor {name!r} has shape {tuple(tensors[name].shape)}, "
                f"config expects {tensor.shape}"
            )
        tensor.data[...] = tensors[name]
    for key in ("scaler.min", "scaler.max"):
        if key not in tensors:
            raise ShapeError(f"checkpoint is missing tensor {key!r}")
    scaler = data_mod.MinMaxScaler(
        feature_min=tensors["scaler.min"], feature_max=tensors["scaler.max"]
    )
    vocab = data_mod.LabelVocab(tuple(meta["label_vocab"]))
    return Checkpoint(params=params, scaler=scaler, vocab=vocab)
