"""Binary checkpoints: magic, version, JSON header, raw float64 tensors.

::

    b"VGCK" | u32 version | u64 header_len | header (utf-8 JSON) | tensor bytes

The header lists ``{"name", "shape", "dtype", "offset", "nbytes"}`` for each
tensor (offsets relative to the end of the header), the model config and any
caller metadata. All integers and tensor data are little-endian.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from .config import ModelConfig
from .network import GroundingModel

MAGIC = b"VGCK"
VERSION = 1


class CheckpointError(ValueError):
    pass


def save_checkpoint(path, model, state=None, metadata=None):
    """Write ``state`` (default: the model's parameters) to ``path``."""
    state = model.state_dict() if state is None else state
    entries, blobs, offset = [], [], 0
    for name in sorted(state):
        arr = np.ascontiguousarray(state[name], dtype="<f8")
        raw = arr.tobytes()
        entries.append({"name": name, "shape": list(arr.shape), "dtype": "float64",
                        "offset": offset, "nbytes": len(raw)})
        blobs.append(raw)
        offset += len(raw)
    header = json.dumps({"version": VERSION, "config": model.config.to_dict(),
                         "tensors": entries, "metadata": metadata or {}},
                        sort_keys=True).encode()
    path = Path(path)
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<IQ", VERSION, len(header)))
        fh.write(header)
        for raw in blobs:
            fh.write(raw)
    return path


def read_checkpoint(path):
    """Return ``(header, {name: array})``."""
    blob = Path(path).read_bytes()
    if blob[:4] != MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint (bad magic)")
    version, hlen = struct.unpack("<IQ", blob[4:16])
    if version != VERSION:
        raise CheckpointError(f"{path}: unsupported checkpoint version {version}")
    header = json.loads(blob[16:16 + hlen])
    base = 16 + hlen
    tensors = {}
    for e in header["tensors"]:
        start = base + e["offset"]
        raw = blob[start:start + e["nbytes"]]
        if len(raw) != e["nbytes"]:
            raise CheckpointError(f"{path}: truncated tensor {e['name']!r}")
        tensors[e["name"]] = np.frombuffer(raw, dtype="<f8").reshape(e["shape"]).astype(np.float64)
    return header, tensors


def load_checkpoint(path):
    """Rebuild the model stored at ``path``; returns ``(model, metadata)``."""
    header, tensors = read_checkpoint(path)
    model = GroundingModel(ModelConfig(**header["config"]))
    model.load_state_dict(tensors)
    return model, header.get("metadata", {})
