"""Flat named-tensor checkpoints.

Byte layout::

    offset 0   8 bytes   magic b"LSCKPT\\x00\\x01"
    offset 8   8 bytes   manifest length N, unsigned little-endian
    offset 16  N bytes   UTF-8 JSON manifest
    offset 16+N          tensor payload, each tensor's raw little-endian data
                         back to back in manifest order, C order

The manifest is ``{"spec": <ModelSpec dict>, "dtype": "float32"|"float64",
"tensors": [{"name", "dtype", "shape", "offset", "nbytes", "trainable"}]}``
with ``offset`` measured from the start of the payload.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from ..errors import DataError
from .spec import ModelSpec

MAGIC = b"LSCKPT\x00\x01"


def save_checkpoint(model, path) -> None:
    entries, blobs, offset = [], [], 0
    for name, t in model.named_tensors().items():
        arr = np.ascontiguousarray(t.data, dtype=t.data.dtype.newbyteorder("<"))
        raw = arr.tobytes()
        entries.append({
            "name": name,
            "dtype": arr.dtype.str,
            "shape": list(arr.shape),
            "offset": offset,
            "nbytes": len(raw),
            "trainable": bool(t.requires_grad),
        })
        blobs.append(raw)
        offset += len(raw)
    manifest = json.dumps(
        {"spec": model.spec.to_dict(), "dtype": model.dtype.name, "tensors": entries}, sort_keys=True
    ).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<Q", len(manifest)))
        fh.write(manifest)
        for raw in blobs:
            fh.write(raw)


def read_checkpoint(path) -> tuple[dict, dict[str, np.ndarray]]:
    data = Path(path).read_bytes()
    if data[:8] != MAGIC:
        raise DataError(f"{path}: not a checkpoint (bad magic)")
    (n,) = struct.unpack("<Q", data[8:16])
    manifest = json.loads(data[16:16 + n].decode("utf-8"))
    base = 16 + n
    tensors = {}
    for ent in manifest["tensors"]:
        start = base + ent["offset"]
        buf = data[start:start + ent["nbytes"]]
        if len(buf) != ent["nbytes"]:
            raise DataError(f"{path}: truncated tensor {ent['name']}")
        tensors[ent["name"]] = np.frombuffer(buf, dtype=np.dtype(ent["dtype"])).reshape(ent["shape"]).copy()
    return manifest, tensors


def load_checkpoint(path):
    from . import build_model

    manifest, tensors = read_checkpoint(path)
    model = build_model(ModelSpec.from_dict(manifest["spec"]), dtype=np.dtype(manifest["dtype"]))
    try:
        model.load_state_dict(tensors)
    except (KeyError, ValueError) as exc:
        raise DataError(f"{path}: tensors do not match the rebuilt model: {exc}") from exc
    return model
