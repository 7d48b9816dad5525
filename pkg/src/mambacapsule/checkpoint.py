"""Versioned parameter checkpoint.

Layout (all integers little-endian)::

    offset 0   8 bytes   magic b"MCAPCKPT"
    offset 8   uint32    format version (currently 1)
    offset 12  uint64    manifest length M in bytes
    offset 20  M bytes   UTF-8 JSON manifest
    offset 20+M          payload: raw little-endian float64 buffers

The manifest is ``{"format": 1, "model_config": {...}, "meta": {...},
"tensors": [{"name", "shape", "dtype": "<f8", "offset", "nbytes"}, ...]}``
with offsets relative to the start of the payload. JSON keys are sorted so
identical parameters always serialise to identical bytes.
"""
from __future__ import annotations

import json
import struct

import numpy as np

from .config import model_from_dict, model_to_dict
from .errors import ParseError
from .model import MambaCapsule

MAGIC = b"MCAPCKPT"
VERSION = 1
_HEAD = struct.Struct("<8sIQ")


def save(path, model, meta: dict | None = None):
    tensors, chunks, offset = [], [], 0
    for name, p in model.named_parameters():
        buf = np.ascontiguousarray(p.data, dtype="<f8").tobytes()
        tensors.append({"name": name, "shape": list(p.shape), "dtype": "<f8",
                        "offset": offset, "nbytes": len(buf)})
        chunks.append(buf)
        offset += len(buf)
    manifest = {"format": VERSION, "model_config": model_to_dict(model.cfg),
                "meta": meta or {}, "tensors": tensors}
    blob = json.dumps(manifest, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(_HEAD.pack(MAGIC, VERSION, len(blob)))
        fh.write(blob)
        for c in chunks:
            fh.write(c)


def read(path) -> tuple[dict, dict[str, np.ndarray]]:
    with open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) < _HEAD.size:
        raise ParseError(f"{path}: truncated checkpoint header")
    magic, version, mlen = _HEAD.unpack_from(raw)
    if magic != MAGIC:
        raise ParseError(f"{path}: not a checkpoint (bad magic)")
    if version != VERSION:
        raise ParseError(f"{path}: unsupported checkpoint version {version}")
    start = _HEAD.size + mlen
    manifest = json.loads(raw[_HEAD.size:start].decode("utf-8"))
    payload = memoryview(raw)[start:]
    arrays = {}
    for t in manifest["tensors"]:
        if t["dtype"] != "<f8" or t["offset"] + t["nbytes"] > len(payload):
            raise ParseError(f"{path}: bad tensor entry {t['name']}")
        arr = np.frombuffer(payload[t["offset"]:t["offset"] + t["nbytes"]], dtype="<f8")
        arrays[t["name"]] = arr.reshape(t["shape"]).astype(np.float64)
    return manifest, arrays


def load(path):
    """Rebuild the model stored at ``path``; returns (model, meta)."""
    manifest, arrays = read(path)
    model = MambaCapsule(model_from_dict(manifest["model_config"]), seed=0)
    model.load_state_dict(arrays)
    return model, manifest.get("meta", {})
