"""N-BaIoT ingestion: load, balance, normalize, split, reshape.

The public dataset ships one CSV per (device, traffic class) with 115
numeric feature columns and a header row. Both common layouts are
recognized: flat Kaggle-style names like ``1.mirai.udp.csv`` and the
nested archive style ``Danmini_Doorbell/mirai_attacks/udp.csv``. Files
are always merged in sorted-path order so the result is deterministic.

The class set is benign plus nine attacks; ``gafgyt_tcp`` files exist
in the download but are outside the vocabulary and get skipped with a
notice.
"""

from __future__ import annotations

import logging
import re
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Optional

import numpy as np
import pandas as pd

from .errors import ConfigError, DataError
from .rng import stream
from .serialize import load_container, save_container
from .tensor import Tensor

logger = logging.getLogger(__name__)

FEATURE_COUNT = 115

DEFAULT_CLASSES = (
    "benign",
    "gafgyt_combo",
    "gafgyt_junk",
    "gafgyt_scan",
    "gafgyt_udp",
    "mirai_ack",
    "mirai_scan",
    "mirai_syn",
    "mirai_udp",
    "mirai_udpplain",
)

DATASET_KIND = "dataset"

_BOTNET_TOKENS = {"gafgyt": "gafgyt", "bashlite": "gafgyt", "mirai": "mirai"}
_ATTACK_TOKENS = {"combo", "junk", "scan", "tcp", "udp", "udpplain", "ack", "syn"}
_STOP_TOKENS = {"benign", "traffic", "attacks", "attack"} | set(_BOTNET_TOKENS)


@dataclass(frozen=True)
class LabelVocab:
    """Ordered, bijective class-name <-> id map."""

    names: tuple

    def __post_init__(self):
        if len(self.names) != len(set(self.names)) or not self.names:
            raise ConfigError(f"label vocabulary must be unique and non-empty: {self.names}")

    def __len__(self) -> int:
        return len(self.names)

    def id_of(self, name: str) -> int:
        try:
            return self.names.index(name)
        except ValueError:
            raise ConfigError(f"unknown class {name!r}, vocabulary is {self.names}") from None

    def name_of(self, class_id: int) -> str:
        return self.names[class_id]

    def __contains__(self, name: str) -> bool:
        return name in self.names


DEFAULT_VOCAB = LabelVocab(DEFAULT_CLASSES)


@dataclass
class RawTable:
    """Loaded rows plus their (device, class) source tags."""

    features: np.ndarray   # [n, 115] float64
    devices: np.ndarray    # [n] str
    labels: np.ndarray     # [n] str class names

    def __post_init__(self):
        if self.features.ndim != 2 or self.features.shape[1] != FEATURE_COUNT:
            raise DataError(
                f"feature matrix must have {FEATURE_COUNT} columns, got shape {self.features.shape}"
            )
        if len(self.devices) != len(self.features) or len(self.labels) != len(self.features):
            raise DataError("feature/tag row counts disagree")

    def __len__(self) -> int:
        return len(self.features)

    def counts(self) -> dict:
        """Row counts per (device, class) pair."""
        out: dict = {}
        for dev, cls in zip(self.devices, self.labels):
            out[(dev, cls)] = out.get((dev, cls), 0) + 1
        return out


def parse_source_name(relpath: str) -> tuple[str, Optional[str]]:
    """Infer (device, class_name) from a CSV's path relative to the data dir.

    Returns class_name None when no known traffic class is recognized.
    """
    stem = relpath.lower()
    if stem.endswith(".csv"):
        stem = stem[:-4]
    tokens = [t for t in re.split(r"[^a-z0-9]+", stem) if t]
    device_tokens = []
    for tok in tokens:
        if tok in _STOP_TOKENS or tok in _ATTACK_TOKENS:
            break
        device_tokens.append(tok)
    device = "_".join(device_tokens) if device_tokens else "unknown"
    if "benign" in tokens:
        return device, "benign"
    botnet = next((_BOTNET_TOKENS[t] for t in tokens if t in _BOTNET_TOKENS), None)
    if botnet is None:
        return device, None
    if "udpplain" in tokens or ("udp" in tokens and "plain" in tokens):
        attack = "udpplain"
    else:
        attack = next((t for t in tokens if t in _ATTACK_TOKENS), None)
    if attack is None:
        return device, None
    return device, f"{botnet}_{attack}"


def _read_csv_rows(path: Path) -> np.ndarray:
    """Read one file, enforcing the 115-column header and rejecting bad rows."""
    try:
        header = pd.read_csv(path, nrows=0)
    except Exception as exc:
        raise DataError(f"{path}: unreadable CSV header: {exc}") from exc
    if header.shape[1] != FEATURE_COUNT:
        raise DataError(
            f"{path}: header has {header.shape[1]} columns, expected {FEATURE_COUNT}"
        )
    try:
        frame = pd.read_csv(path, dtype=np.float64)
        values = frame.to_numpy()
    except (ValueError, TypeError):
        frame = pd.read_csv(path)
        coerced = frame.apply(pd.to_numeric, errors="coerce")
        good = ~coerced.isna().any(axis=1)
        rejected = int((~good).sum())
        if rejected:
            logger.warning("%s: rejected %d non-numeric/missing rows", path, rejected)
        values = coerced.loc[good].to_numpy(dtype=np.float64)
    if values.ndim != 2 or (values.size and values.shape[1] != FEATURE_COUNT):
        raise DataError(f"{path}: rows do not have {FEATURE_COUNT} columns")
    return values.reshape(-1, FEATURE_COUNT)


def load_nbaiot(
    dir_path,
    device_filter: Optional[Iterable[str]] = None,
    class_map: Optional[dict] = None,
    vocab: LabelVocab = DEFAULT_VOCAB,
) -> RawTable:
    """Load every recognized CSV under ``dir_path`` into one tagged table.

    ``class_map`` optionally renames parsed classes (value None drops
    the file); anything that does not land in the vocabulary is skipped
    with a notice. Files merge in sorted-path order.
    """
    root = Path(dir_path)
    if not root.is_dir():
        raise DataError(f"data directory not found: {root}")
    devices = set(device_filter) if device_filter is not None else None
    files = sorted(root.rglob("*.csv"), key=lambda p: p.relative_to(root).as_posix())
    if not files:
        raise DataError(f"no CSV files under {root}")
    parts, part_devices, part_labels = [], [], []
    for path in files:
        rel = path.relative_to(root).as_posix()
        device, cls = parse_source_name(rel)
        if class_map is not None and cls in class_map:
            cls = class_map[cls]
        if cls is None or cls not in vocab:
            logger.info("skipping %s: class %r outside the vocabulary", rel, cls)
            continue
        if devices is not None and device not in devices:
            continue
        rows = _read_csv_rows(path)
        if not len(rows):
            continue
        parts.append(rows)
        part_devices.append(np.full(len(rows), device))
        part_labels.append(np.full(len(rows), cls))
        logger.info("loaded %s: %d rows tagged (%s, %s)", rel, len(rows), device, cls)
    if not parts:
        raise DataError(f"no rows for the requested devices/classes under {root}")
    return RawTable(
        features=np.concatenate(parts, axis=0),
        devices=np.concatenate(part_devices),
        labels=np.concatenate(part_labels),
    )


def balance_classes(
    table: RawTable, per_class: int, seed: int, vocab: LabelVocab = DEFAULT_VOCAB
) -> RawTable:
    """Seeded subsample of exactly ``per_class`` rows for every class.

    A class already at ``per_class`` rows passes through unsampled. The
    result is deterministically shuffled so classes interleave.
    """
    if per_class < 1:
        raise ConfigError(f"per_class must be >= 1, got {per_class}")
    rng = stream(seed, "balance")
    chosen = []
    for cls in vocab.names:
        idx = np.nonzero(table.labels == cls)[0]
        if len(idx) < per_class:
            raise DataError(
                f"class {cls!r} has only {len(idx)} rows, need {per_class}"
            )
        if len(idx) > per_class:
            idx = rng.choice(idx, size=per_class, replace=False)
        chosen.append(idx)
    order = np.concatenate(chosen)
    order = order[rng.permutation(len(order))]
    return RawTable(
        features=table.features[order],
        devices=table.devices[order],
        labels=table.labels[order],
    )


# ---------------------------------------------------------------------------
# Normalization
# ---------------------------------------------------------------------------

@dataclass
class MinMaxScaler:
    """Per-feature min/max fitted on training rows only.

    Transform maps into [0,1]; constant features map to 0 and
    out-of-range values (e.g. at test time) clip into [0,1].
    """

    feature_min: np.ndarray
    feature_max: np.ndarray

    def transform(self, rows: np.ndarray) -> np.ndarray:
        rows = np.asarray(rows, dtype=np.float64)
        span = self.feature_max - self.feature_min
        safe = np.where(span > 0, span, 1.0)
        scaled = (rows - self.feature_min) / safe
        scaled[:, span == 0] = 0.0
        return np.clip(scaled, 0.0, 1.0)


def fit_transform_scaler(train_rows: np.ndarray) -> tuple[MinMaxScaler, np.ndarray]:
    """Fit on the training rows and return (scaler, scaled rows)."""
    train_rows = np.asarray(train_rows, dtype=np.float64)
    if train_rows.ndim != 2 or len(train_rows) == 0:
        raise DataError(f"cannot fit a scaler on shape {train_rows.shape}")
    scaler = MinMaxScaler(
        feature_min=train_rows.min(axis=0), feature_max=train_rows.max(axis=0)
    )
    return scaler, scaler.transform(train_rows)


def apply_scaler(scaler: MinMaxScaler, rows: np.ndarray) -> np.ndarray:
    return scaler.transform(rows)


# ---------------------------------------------------------------------------
# Splitting
# ---------------------------------------------------------------------------

@dataclass
class DatasetSplit:
    """Scaled train/test partitions plus the fitted scaler and vocab."""

    train_x: np.ndarray
    train_y: np.ndarray
    test_x: np.ndarray
    test_y: np.ndarray
    scaler: MinMaxScaler
    vocab: LabelVocab
    seed: int


def stratified_split(
    table: RawTable,
    test_fraction: float = 0.2,
    seed: int = 0,
    vocab: LabelVocab = DEFAULT_VOCAB,
) -> DatasetSplit:
    """Per-class partition; the scaler is fitted on the train side only."""
    if not 0.0 < test_fraction < 1.0:
        raise ConfigError(
            f"test_fraction must be in (0, 1), got {test_fraction} (a test set is mandatory)"
        )
    rng = stream(seed, "split")
    train_idx, test_idx = [], []
    for cls in vocab.names:
        idx = np.nonzero(table.labels == cls)[0]
        if len(idx) < 5:
            raise DataError(f"class {cls!r} has only {len(idx)} rows, need at least 5")
        shuffled = idx[rng.permutation(len(idx))]
        n_test = int(round(len(idx) * test_fraction))
        n_test = min(max(n_test, 1), len(idx) - 1)
        test_idx.append(shuffled[:n_test])
        train_idx.append(shuffled[n_test:])
    train_idx = np.concatenate(train_idx)
    test_idx = np.concatenate(test_idx)
    train_idx = train_idx[rng.permutation(len(train_idx))]
    test_idx = test_idx[rng.permutation(len(test_idx))]
    label_ids = {name: i for i, name in enumerate(vocab.names)}
    to_ids = np.vectorize(label_ids.__getitem__, otypes=[np.int64])
    scaler, train_x = fit_transform_scaler(table.features[train_idx])
    return DatasetSplit(
        train_x=train_x,
        train_y=to_ids(table.labels[train_idx]),
        test_x=scaler.transform(table.features[test_idx]),
        test_y=to_ids(table.labels[test_idx]),
        scaler=scaler,
        vocab=vocab,
        seed=seed,
    )


def to_model_input(rows) -> Tensor:
    """Reshape [n, 115] feature rows into [n, 1, 115] conv input."""
    rows = np.asarray(rows, dtype=np.float64)
    if rows.ndim != 2 or rows.shape[1] != FEATURE_COUNT:
        raise DataError(
            f"model input rows must be [n, {FEATURE_COUNT}], got shape {rows.shape}"
        )
    return Tensor(rows.reshape(len(rows), 1, FEATURE_COUNT))


# ---------------------------------------------------------------------------
# Dataset cache artifact
# ---------------------------------------------------------------------------

def save_dataset(split: DatasetSplit, path, provenance: Optional[dict] = None) -> None:
    """Persist a prepared split for fast re-runs (bit-exact round trip)."""
    tensors = {
        "train_x": split.train_x,
        "train_y": split.train_y,
        "test_x": split.test_x,
        "test_y": split.test_y,
        "scaler.min": split.scaler.feature_min,
        "scaler.max": split.scaler.feature_max,
    }
    meta = {
        "label_vocab": list(split.vocab.names),
        "seed": split.seed,
        "provenance": provenance or {},
    }
    save_container(path, DATASET_KIND, meta, tensors)


def load_dataset(path) -> DatasetSplit:
    _, meta, tensors = load_container(path, expect_kind=DATASET_KIND)
    return DatasetSplit(
        train_x=tensors["train_x"],
        train_y=tensors["train_y"],
        test_x=tensors["test_x"],
        test_y=tensors["test_y"],
        scaler=MinMaxScaler(
            feature_min=tensors["scaler.min"], feature_max=tensors["scaler.max"]
        ),
        vocab=LabelVocab(tuple(meta["label_vocab"])),
        seed=int(meta["seed"]),
    )


# ---------------------------------------------------------------------------
# Synthetic data (demos and end-to-end tests)
# ---------------------------------------------------------------------------

def synthetic_blobs(
    n_per_class: int,
    n_classes: int = 10,
    n_features: int = FEATURE_COUNT,
    separation: float = 4.0,
    seed: int = 0,
) -> tuple[np.ndarray, np.ndarray]:
    """Gaussian blobs with unit noise and well-separated class means.

    Each class gets its own block of features whose means sit
    ``separation`` standard deviations away from every other class's,
    which keeps the classes cleanly separable in any dimension count.
    """
    rng = stream(seed, "blobs")
    block = n_features // n_classes
    means = np.zeros((n_classes, n_features))
    for c in range(n_classes):
        means[c, c * block:(c + 1) * block] = separation
    labels = np.repeat(np.arange(n_classes, dtype=np.int64), n_per_class)
    features = means[labels] + rng.standard_normal((len(labels), n_features))
    order = rng.permutation(len(labels))
    return features[order], labels[order]
