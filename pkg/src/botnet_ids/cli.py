"""Command-line surface: prepare, train, eval, infer.

Config precedence is built-in defaults < config file < command-line
flags, and every command echoes the fully resolved config into its
output directory so a run can be reproduced bit-for-bit. Log lines go
to stderr; data only ever goes to files.

Exit codes: 0 success, 2 usage/config, 3 data error, 4 internal
invariant violation.
"""

from __future__ import annotations

import argparse
import csv
import logging
import sys
import time
from pathlib import Path

import numpy as np

from . import data as data_mod
from . import metrics as metrics_mod
from .errors import (
    BotnetIdsError,
    ConfigError,
    ContainerError,
    DataError,
    GradientStateError,
    LabelError,
    ShapeError,
)
from .model import (
    ModelConfig,
    build_model,
    load_checkpoint,
    model_forward,
    save_checkpoint,
)
from .training import TrainConfig, evaluate, fit

logger = logging.getLogger("botnet_ids")

USAGE_EXIT = 2
DATA_EXIT = 3
INTERNAL_EXIT = 4


def _parse_bool(text: str) -> bool:
    low = text.strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ConfigError(f"not a boolean: {text!r}")


def _parse_blocks(text: str) -> tuple:
    blocks = []
    for part in text.split(","):
        filters, _, kernel = part.strip().partition("x")
        if not kernel:
            raise ConfigError(f"conv block {part!r} must look like '128x5'")
        blocks.append((int(filters), int(kernel)))
    return tuple(blocks)


def _parse_units(text: str) -> tuple:
    return tuple(int(p) for p in text.split(",") if p.strip())


def _fmt_blocks(blocks) -> str:
    return ",".join(f"{f}x{k}" for f, k in blocks)


def _fmt_units(units) -> str:
    return ",".join(str(u) for u in units)


# key -> (parser, formatter, default)
_MODEL_DEFAULT = ModelConfig()
_TRAIN_DEFAULT = TrainConfig()
_SCHEMA = {
    "input_len": (int, str, _MODEL_DEFAULT.input_len),
    "n_classes": (int, str, _MODEL_DEFAULT.n_classes),
    "conv_blocks": (_parse_blocks, _fmt_blocks, _MODEL_DEFAULT.conv_blocks),
    "conv_dropout": (float, repr, _MODEL_DEFAULT.conv_dropout),
    "lstm_hidden": (int, str, _MODEL_DEFAULT.lstm_hidden),
    "attention_dk": (int, str, _MODEL_DEFAULT.attention_dk),
    "dense_units": (_parse_units, _fmt_units, _MODEL_DEFAULT.dense_units),
    "dense_dropout": (float, repr, _MODEL_DEFAULT.dense_dropout),
    "activation": (str, str, _MODEL_DEFAULT.activation),
    "pool_size": (int, str, _MODEL_DEFAULT.pool_size),
    "pool_stride": (int, str, _MODEL_DEFAULT.pool_stride),
    "conv_padding": (str, str, _MODEL_DEFAULT.conv_padding),
    "batchnorm_before_activation": (_parse_bool, lambda v: str(v).lower(), False),
    "bn_momentum": (float, repr, _MODEL_DEFAULT.bn_momentum),
    "bn_epsilon": (float, repr, _MODEL_DEFAULT.bn_epsilon),
    "batch_size": (int, str, _TRAIN_DEFAULT.batch_size),
    "epochs": (int, str, _TRAIN_DEFAULT.epochs),
    "early_stop_patience": (int, str, _TRAIN_DEFAULT.early_stop_patience),
    "seed": (int, str, _TRAIN_DEFAULT.seed),
    "shuffle": (_parse_bool, lambda v: str(v).lower(), _TRAIN_DEFAULT.shuffle),
    "validation_fraction": (float, repr, _TRAIN_DEFAULT.validation_fraction),
    "per_class": (int, str, 10_000),
    "test_fraction": (float, repr, 0.2),
}

_MODEL_KEYS = (
    "input_len", "n_classes", "conv_blocks", "conv_dropout", "lstm_hidden",
    "attention_dk", "dense_units", "dense_dropout", "activation", "pool_size",
    "pool_stride", "conv_padding", "batchnorm_before_activation", "bn_momentum",
    "bn_epsilon",
)
_TRAIN_KEYS = (
    "batch_size", "epochs", "early_stop_patience", "seed", "shuffle",
    "validation_fraction",
)


class RunConfig:
    """Flat key=value config uniting model, training and data settings."""

    def __init__(self):
        self.values = {key: default for key, (_, _, default) in _SCHEMA.items()}

    def apply_file(self, path) -> None:
        path = Path(path)
        if not path.is_file():
            raise ConfigError(f"config file not found: {path}")
        for lineno, raw in enumerate(path.read_text(encoding="utf-8").splitlines(), 1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            key, sep, value = line.partition("=")
            if not sep:
                raise ConfigError(f"{path}:{lineno}: expected key=value, got {raw!r}")
            self.set(key.strip(), value.strip())

    def set(self, key: str, raw_value: str) -> None:
        if key not in _SCHEMA:
            raise ConfigError(f"unknown config key {key!r}")
        parser = _SCHEMA[key][0]
        try:
            self.values[key] = parser(raw_value)
        except (ValueError, TypeError) as exc:
            raise ConfigError(f"bad value for {key}: {raw_value!r} ({exc})") from exc

    def override(self, key: str, value) -> None:
        if value is not None:
            self.values[key] = value

    def model_config(self) -> ModelConfig:
        return ModelConfig(**{k: self.values[k] for k in _MODEL_KEYS})

    def train_config(self) -> TrainConfig:
        return TrainConfig(**{k: self.values[k] for k in _TRAIN_KEYS})

    def render(self) -> str:
        lines = []
        for key in _SCHEMA:
            fmt = _SCHEMA[key][1]
            lines.append(f"{key}={fmt(self.values[key])}")
        return "\n".join(lines) + "\n"

    def write_resolved(self, out_dir: Path) -> None:
        (out_dir / "config.resolved").write_text(self.render(), encoding="utf-8")


def _load_run_config(args) -> RunConfig:
    cfg = RunConfig()
    if getattr(args, "config", None):
        cfg.apply_file(args.config)
    for key in ("per_class", "seed", "epochs", "batch_size", "test_fraction"):
        if hasattr(args, key):
            cfg.override(key, getattr(args, key))
    if getattr(args, "patience", None) is not None:
        cfg.override("early_stop_patience", args.patience)
    return cfg


def _ensure_out(path_str: str) -> Path:
    out = Path(path_str)
    out.mkdir(parents=True, exist_ok=True)
    return out


# ---------------------------------------------------------------------------
# Subcommands
# ---------------------------------------------------------------------------

def cmd_prepare(args) -> int:
    cfg = _load_run_config(args)
    out = _ensure_out(args.out)
    table = data_mod.load_nbaiot(
        args.data_dir,
        device_filter=args.devices.split(",") if args.devices else None,
    )
    _print_count_table(table)
    balanced = data_mod.balance_classes(table, cfg.values["per_class"], cfg.values["seed"])
    split = data_mod.stratified_split(
        balanced, test_fraction=cfg.values["test_fraction"], seed=cfg.values["seed"]
    )
    provenance = {
        "data_dir": str(Path(args.data_dir).resolve()),
        "per_class": cfg.values["per_class"],
        "seed": cfg.values["seed"],
        "files": sorted(
            p.relative_to(args.data_dir).as_posix()
            for p in Path(args.data_dir).rglob("*.csv")
        ),
    }
    artifact = out / "dataset.bin"
    data_mod.save_dataset(split, artifact, provenance)
    cfg.write_resolved(out)
    logger.info(
        "dataset: %d train rows, %d test rows -> %s",
        len(split.train_y), len(split.test_y), artifact,
    )
    return 0


def _print_count_table(table: data_mod.RawTable) -> None:
    """Device x class row counts in the shape of the dataset's schema table."""
    counts = table.counts()
    devices = sorted({dev for dev, _ in counts})
    width = max(16, max((len(c) for c in data_mod.DEFAULT_CLASSES), default=16) + 2)
    head = f"{'class':<{width}}" + "".join(f"{d:>18}" for d in devices)
    print(head, file=sys.stderr)
    for cls in data_mod.DEFAULT_CLASSES:
        row = f"{cls:<{width}}" + "".join(
            f"{counts.get((d, cls), 0):>18d}" for d in devices
        )
        print(row, file=sys.stderr)


def cmd_train(args) -> int:
    cfg = _load_run_config(args)
    out = _ensure_out(args.out)
    split = data_mod.load_dataset(args.dataset)
    model_cfg = cfg.model_config()
    if model_cfg.n_classes != len(split.vocab):
        raise ConfigError(
            f"model expects {model_cfg.n_classes} classes but the dataset "
            f"vocabulary has {len(split.vocab)}: {split.vocab.names}"
        )
    train_cfg = cfg.train_config()
    params = build_model(model_cfg, seed=train_cfg.seed)
    logger.info(
        "training on %d rows (%d parameters), batch %d, up to %d epochs",
        len(split.train_y), params.parameter_count(), train_cfg.batch_size, train_cfg.epochs,
    )
    best, curves = fit(params, split.train_x, split.train_y, train_cfg)
    curves.to_csv(out / "curves.csv")
    save_checkpoint(best, split.scaler, split.vocab, out / "checkpoint.bin")
    cfg.write_resolved(out)
    if len(curves) < train_cfg.epochs and curves.val_loss:
        best_epoch = int(np.argmin(curves.val_loss)) + 1
        logger.info(
            "early stop after epoch %d; best validation epoch was %d", len(curves), best_epoch
        )
    train_loss, train_acc, _, _ = evaluate(best, split.train_x, split.train_y)
    logger.info("final train loss %.6f, accuracy %.4f", train_loss, train_acc)
    if curves.val_loss and not np.isnan(curves.val_loss[-1]):
        logger.info(
            "best validation loss %.6f", float(np.min(curves.val_loss))
        )
    return 0


def cmd_eval(args) -> int:
    out = _ensure_out(args.out)
    split = data_mod.load_dataset(args.dataset)
    checkpoint = load_checkpoint(args.checkpoint)
    if checkpoint.vocab.names != split.vocab.names:
        raise ConfigError(
            "checkpoint and dataset vocabularies differ:\n"
            f"  checkpoint: {checkpoint.vocab.names}\n"
            f"  dataset:    {split.vocab.names}"
        )
    loss, accuracy, predictions, probs = evaluate(
        checkpoint.params, split.test_x, split.test_y
    )
    cm = metrics_mod.confusion(
        split.test_y, predictions, len(split.vocab), class_names=split.vocab.names
    )
    formats = [f.strip() for f in args.format.split(",") if f.strip()]
    for fmt in formats:
        doc = metrics_mod.render_report(cm, fmt=fmt)
        suffix = {"text": "txt", "csv": "csv", "json": "json"}.get(fmt)
        if suffix is None:
            raise ConfigError(f"unknown report format {fmt!r}")
        (out / f"report.{suffix}").write_text(doc, encoding="utf-8")
    curves, macro = metrics_mod.roc_per_class(probs, split.test_y, split.vocab.names)
    _write_roc_csv(out / "roc.csv", curves, macro)
    logger.info("test loss %.6f, accuracy %.4f", loss, accuracy)
    print(metrics_mod.render_report(cm, fmt="text"), end="")
    return 0


def _write_roc_csv(path, curves: dict, macro) -> None:
    lines = ["class,threshold,fpr,tpr"]
    for name, curve in curves.items():
        for thr, fpr, tpr in zip(curve.thresholds, curve.fpr, curve.tpr):
            lines.append(f"{name},{thr!r},{fpr!r},{tpr!r}")
    for thr, fpr, tpr in zip(macro.thresholds, macro.fpr, macro.tpr):
        lines.append(f"macro,{thr!r},{fpr!r},{tpr!r}")
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def cmd_infer(args) -> int:
    checkpoint = load_checkpoint(args.checkpoint)
    rows = _read_infer_rows(args.input_csv)
    vocab = checkpoint.vocab
    header = ["row_id", "predicted_class"] + [f"p_{i}" for i in range(len(vocab))] + ["latency_ms"]
    latencies = []
    with open(args.output_csv, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for row_id, row in enumerate(rows):
            scaled = checkpoint.scaler.transform(row[None, :])
            start = time.perf_counter()
            _, probs, _ = model_forward(
                checkpoint.params, scaled.reshape(1, 1, -1), mode="infer"
            )
            elapsed_ms = (time.perf_counter() - start) * 1000.0
            latencies.append(elapsed_ms)
            p = probs.data[0]
            predicted = vocab.name_of(int(np.argmax(p)))
            writer.writerow([row_id, predicted] + [repr(float(v)) for v in p] + [repr(elapsed_ms)])
    if latencies:
        arr = np.array(latencies)
        logger.info(
            "inference latency per sample: mean %.2f ms, p95 %.2f ms over %d rows",
            arr.mean(), np.percentile(arr, 95), len(arr),
        )
    else:
        logger.info("input had no data rows; wrote header only")
    return 0


def _read_infer_rows(path) -> list:
    """Feature rows from a CSV; a leading non-numeric row is a header."""
    path = Path(path)
    if not path.is_file():
        raise DataError(f"input CSV not found: {path}")
    with open(path, newline="", encoding="utf-8") as fh:
        raw = [r for r in csv.reader(fh) if r]
    if not raw:
        return []
    for i, cells in enumerate(raw):
        if len(cells) != data_mod.FEATURE_COUNT:
            raise DataError(
                f"{path}: row {i} has {len(cells)} columns, expected {data_mod.FEATURE_COUNT}"
            )
    rows = []
    for i, cells in enumerate(raw):
        try:
            rows.append(np.array([float(c) for c in cells], dtype=np.float64))
        except ValueError as exc:
            if i == 0:
                continue  # header row
            raise DataError(f"{path}: row {i} is not numeric: {exc}") from exc
    return rows


# ---------------------------------------------------------------------------
# Entry point
# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="botnet-ids",
        description="Attention-based 1D-CNN + BiLSTM intrusion detection pipeline",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("prepare", help="load, balance, split and cache the dataset")
    p.add_argument("--data-dir", required=True)
    p.add_argument("--per-class", type=int, dest="per_class")
    p.add_argument("--seed", type=int)
    p.add_argument("--test-fraction", type=float, dest="test_fraction")
    p.add_argument("--devices", help="comma-separated device filter")
    p.add_argument("--config")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_prepare)

    p = sub.add_parser("train", help="train a model on a prepared dataset")
    p.add_argument("--dataset", required=True)
    p.add_argument("--config")
    p.add_argument("--seed", type=int)
    p.add_argument("--epochs", type=int)
    p.add_argument("--batch-size", type=int, dest="batch_size")
    p.add_argument("--patience", type=int)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint on a dataset's test split")
    p.add_argument("--dataset", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--format", default="text", help="comma list of text,csv,json")
    p.add_argument("--out", default=".")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("infer", help="classify feature rows from a CSV")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--input-csv", required=True, dest="input_csv")
    p.add_argument("--output-csv", required=True, dest="output_csv")
    p.set_defaults(func=cmd_infer)
    return parser


def main(argv=None) -> int:
    logging.basicConfig(
        stream=sys.stderr, level=logging.INFO, format="%(levelname)s %(message)s"
    )
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return USAGE_EXIT
    except (DataError, ContainerError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return DATA_EXIT
    except (ShapeError, LabelError, GradientStateError, BotnetIdsError) as exc:
        print(f"internal error: {exc}", file=sys.stderr)
        return INTERNAL_EXIT


if __name__ == "__main__":
    sys.exit(main())
