"""Self-describing binary container for checkpoints and dataset caches.

Layout: 8-byte magic, u32 version, u64 header length, UTF-8 JSON
header, then the raw payload. The header carries the container kind,
free-form metadata, and a tensor table of (name, dtype, shape, offset,
nbytes) entries pointing into the payload. Tensor bytes are written
little-endian, so a save/load round trip is bit-exact on any platform.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from .errors import (
    ContainerFormatError,
    ContainerTruncatedError,
    ContainerVersionError,
)

MAGIC = b"BIDSCNT\x00"
VERSION = 1

_DTYPES = {"float64": "<f8", "int64": "<i8"}


def save_container(path, kind: str, meta: dict, tensors: dict[str, np.ndarray]) -> None:
    """Write named arrays plus metadata to ``path`` atomically."""
    table = []
    blobs = []
    offset = 0
    for name, arr in tensors.items():
        arr = np.asarray(arr)
        if arr.dtype == np.float64:
            dtype = "float64"
        elif arr.dtype == np.int64:
            dtype = "int64"
        else:
            raise ContainerFormatError(
                f"tensor {name!r} has unsupported dtype {arr.dtype}"
            )
        raw = np.ascontiguousarray(arr).astype(_DTYPES[dtype], copy=False).tobytes()
        table.append(
            {
                "name": name,
                "dtype": dtype,
                "shape": list(arr.shape),
                "offset": offset,
                "nbytes": len(raw),
            }
        )
        blobs.append(raw)
        offset += len(raw)
    header = json.dumps(
        {"kind": kind, "meta": meta, "tensors": table}, separators=(",", ":")
    ).encode("utf-8")
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", VERSION))
        fh.write(struct.pack("<Q", len(header)))
        fh.write(header)
        for raw in blobs:
            fh.write(raw)
    tmp.replace(path)


def load_container(path, expect_kind: str | None = None):
    """Read a container back as ``(kind, meta, {name: array})``.

    Raises distinct errors for a bad magic, an unsupported version, and
    a file that ends before its declared contents do. Nothing partial
    is ever returned.
    """
    data = Path(path).read_bytes()
    fixed = len(MAGIC) + 4 + 8
    if len(data) < fixed or data[: len(MAGIC)] != MAGIC:
        raise ContainerFormatError(f"{path}: not a container file (bad magic)")
    version = struct.unpack_from("<I", data, len(MAGIC))[0]
    if version != VERSION:
        raise ContainerVersionError(
            f"{path}: container version {version}, this build reads {VERSION}"
        )
    header_len = struct.unpack_from("<Q", data, len(MAGIC) + 4)[0]
    if len(data) < fixed + header_len:
        raise ContainerTruncatedError(f"{path}: truncated header")
    try:
        header = json.loads(data[fixed:fixed + header_len].decode("utf-8"))
        kind = header["kind"]
        meta = header["meta"]
        table = header["tensors"]
    except (ValueError, KeyError) as exc:
        raise ContainerFormatError(f"{path}: malformed header: {exc}") from exc
    if expect_kind is not None and kind != expect_kind:
        raise ContainerFormatError(
            f"{path}: container holds {kind!r}, expected {expect_kind!r}"
        )
    payload = data[fixed + header_len:]
    tensors: dict[str, np.ndarray] = {}
    for entry in table:
        end = entry["offset"] + entry["nbytes"]
        if end > len(payload):
            raise ContainerTruncatedError(
                f"{path}: tensor {entry['name']!r} extends past end of file"
            )
        if entry["dtype"] not in _DTYPES:
            raise ContainerFormatError(
                f"{path}: tensor {entry['name']!r} has unknown dtype {entry['dtype']!r}"
            )
        raw = payload[entry["offset"]:end]
        arr = np.frombuffer(raw, dtype=_DTYPES[entry["dtype"]])
        native = "float64" if entry["dtype"] == "float64" else "int64"
        tensors[entry["name"]] = arr.astype(native).reshape(entry["shape"])
    return kind, meta, tensors
