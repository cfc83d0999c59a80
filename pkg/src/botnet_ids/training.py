"""Adam optimization, the epoch loop, early stopping, learning curves."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, DataError, LabelError
from .model import ModelParams, model_backward, model_forward
from .rng import stream
from .tensor import Tensor, sparse_ce_loss

# An epoch must beat the best validation loss by this margin to count
# as an improvement for early stopping.
MIN_IMPROVEMENT = 1e-4

EVAL_BATCH = 256


@dataclass
class AdamState:
    """First/second moment buffers plus the shared step counter."""

    lr: float = 0.001
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    t: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def adam_step(params: dict[str, Tensor], grads: dict[str, np.ndarray], state: AdamState) -> None:
    """One bias-corrected Adam update, in place, for every parameter."""
    state.t += 1
    correct1 = 1.0 - state.beta1 ** state.t
    correct2 = 1.0 - state.beta2 ** state.t
    for name, tensor in params.items():
        if name not in grads:
            raise KeyError(f"no gradient supplied for parameter {name!r}")
        g = grads[name]
        if name not in state.m:
            state.m[name] = np.zeros_like(tensor.data)
            state.v[name] = np.zeros_like(tensor.data)
        m = state.m[name]
        v = state.v[name]
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * g * g
        m_hat = m / correct1
        v_hat = v / correct2
        tensor.data -= state.lr * m_hat / (np.sqrt(v_hat) + state.epsilon)


@dataclass
class TrainConfig:
    batch_size: int = 128
    epochs: int = 50
    early_stop_patience: int = 5
    seed: int = 42
    shuffle: bool = True
    validation_fraction: float = 0.1

    def __post_init__(self):
        if self.batch_size < 1:
            raise ConfigError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.epochs < 1:
            raise ConfigError(f"epochs must be >= 1, got {self.epochs}")
        if not 0.0 <= self.validation_fraction < 1.0:
            raise ConfigError(
                f"validation_fraction must be in [0, 1), got {self.validation_fraction}"
            )


@dataclass
class TrainingCurves:
    """Per-epoch metrics; all arrays share length == completed epochs."""

    train_loss: list = field(default_factory=list)
    train_accuracy: list = field(default_factory=list)
    val_loss: list = field(default_factory=list)
    val_accuracy: list = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.train_loss)

    def to_csv(self, path) -> None:
        lines = ["epoch,train_loss,train_acc,val_loss,val_acc"]
        for i in range(len(self)):
            lines.append(
                f"{i + 1},{self.train_loss[i]!r},{self.train_accuracy[i]!r},"
                f"{self.val_loss[i]!r},{self.val_accuracy[i]!r}"
            )
        with open(path, "w", encoding="utf-8") as fh:
            fh.write("\n".join(lines) + "\n")


def evaluate(params: ModelParams, features: np.ndarray, labels: np.ndarray, batch_size: int = EVAL_BATCH):
    """Inference-mode pass over a whole set.

    Returns (loss, accuracy, predictions, probs). Deterministic: fixed
    chunking, no dropout, running batchnorm statistics.
    """
    features = np.asarray(features, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    if len(features) != len(labels):
        raise DataError(f"{len(features)} feature rows vs {len(labels)} labels")
    if len(features) == 0:
        raise DataError("cannot evaluate an empty set")
    n = len(features)
    probs = np.empty((n, params.cfg.n_classes))
    loss_sum = 0.0
    for start in range(0, n, batch_size):
        stop = min(start + batch_size, n)
        x = features[start:stop].reshape(stop - start, 1, -1)
        logits, p, _ = model_forward(params, x, mode="infer")
        chunk_loss, _ = sparse_ce_loss(logits, labels[start:stop])
        loss_sum += chunk_loss * (stop - start)
        probs[start:stop] = p.data
    predictions = probs.argmax(axis=1)
    accuracy = float(np.mean(predictions == labels))
    return loss_sum / n, accuracy, predictions, probs


def _carve_validation(labels: np.ndarray, fraction: float, seed: int):
    """Stratified train/validation index split for early stopping."""
    rng = stream(seed, "val-split")
    train_idx, val_idx = [], []
    for cls in np.unique(labels):
        idx = np.nonzero(labels == cls)[0]
        shuffled = idx[rng.permutation(len(idx))]
        n_val = int(round(len(idx) * fraction))
        n_val = min(n_val, len(idx) - 1)
        val_idx.append(shuffled[:n_val])
        train_idx.append(shuffled[n_val:])
    return np.sort(np.concatenate(train_idx)), np.sort(np.concatenate(val_idx))


def fit(params: ModelParams, features: np.ndarray, labels: np.ndarray, cfg: TrainConfig):
    """Train on the given partition and return (best params, curves).

    Only the training partition may be passed here; the caller keeps
    the test split to itself. A stratified ``validation_fraction``
    slice is held out for early stopping, which restores the
    parameters of the best validation epoch.
    """
    features = np.asarray(features, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    if features.ndim != 2 or len(features) == 0:
        raise DataError(f"training features must be a non-empty matrix, got {features.shape}")
    if len(features) != len(labels):
        raise DataError(f"{len(features)} feature rows vs {len(labels)} labels")
    n_classes = params.cfg.n_classes
    if labels.min() < 0 or labels.max() >= n_classes:
        raise LabelError(
            f"labels span [{labels.min()}, {labels.max()}], model has {n_classes} classes"
        )

    if cfg.validation_fraction > 0:
        train_idx, val_idx = _carve_validation(labels, cfg.validation_fraction, cfg.seed)
    else:
        train_idx = np.arange(len(labels))
        val_idx = np.empty(0, dtype=np.int64)
    train_x, train_y = features[train_idx], labels[train_idx]
    val_x, val_y = features[val_idx], labels[val_idx]
    if cfg.batch_size > len(train_x):
        raise ConfigError(
            f"batch_size {cfg.batch_size} exceeds the {len(train_x)} training rows"
        )

    shuffle_rng = stream(cfg.seed, "shuffle")
    opt = AdamState()
    named = params.named_parameters()
    curves = TrainingCurves()
    best_val = np.inf
    best_snapshot = None
    epochs_since_best = 0

    for _epoch in range(cfg.epochs):
        order = shuffle_rng.permutation(len(train_x)) if cfg.shuffle else np.arange(len(train_x))
        for start in range(0, len(order), cfg.batch_size):
            batch = order[start:start + cfg.batch_size]
            x = train_x[batch].reshape(len(batch), 1, -1)
            _, _, cache = model_forward(params, x, mode="train")
            _, grads = model_backward(params, cache, train_y[batch])
            adam_step(named, grads, opt)
        train_loss, train_acc, _, _ = evaluate(params, train_x, train_y)
        curves.train_loss.append(train_loss)
        curves.train_accuracy.append(train_acc)
        if len(val_x):
            val_loss, val_acc, _, _ = evaluate(params, val_x, val_y)
        else:
            val_loss, val_acc = float("nan"), float("nan")
        curves.val_loss.append(val_loss)
        curves.val_accuracy.append(val_acc)

        if len(val_x):
            if best_val - val_loss >= MIN_IMPROVEMENT:
                best_val = val_loss
                best_snapshot = params.clone()
                epochs_since_best = 0
            else:
                epochs_since_best += 1
                if cfg.early_stop_patience > 0 and epochs_since_best >= cfg.early_stop_patience:
                    break

    return (best_snapshot if best_snapshot is not None else params), curves
