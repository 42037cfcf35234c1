"""Model checkpoint container.

Layout (all integers little-endian, all tensors float32):
  magic "SMM1", u32 version
  u32 json length, config+styles json (utf-8)
  normalization block: 6 named tensors
  u32 tensor count, then per tensor: name (u16 length + utf-8),
    u8 ndim, u32 dims..., raw float32 data
  u32 embedding count, then per embedding: name, u32 length, float32 data
"""
from __future__ import annotations

import io
import json
import struct

import numpy as np

from .features import NormalizationStats
from .model import ModelConfig, StyleModel
from .util import atomic_write_bytes

MAGIC = b"SMM1"
VERSION = 1


class CheckpointError(ValueError):
    pass


def _write_str(buf, s: str) -> None:
    raw = s.encode("utf-8")
    if len(raw) > 0xFFFF:
        raise CheckpointError(f"name too long: {len(raw)} bytes")
    buf.write(struct.pack("<H", len(raw)))
    buf.write(raw)


def _read(f, n: int) -> bytes:
    raw = f.read(n)
    if len(raw) != n:
        raise CheckpointError("truncated checkpoint")
    return raw


def _read_str(f) -> str:
    (n,) = struct.unpack("<H", _read(f, 2))
    return _read(f, n).decode("utf-8")


def _write_tensor(buf, name: str, arr: np.ndarray) -> None:
    arr = np.ascontiguousarray(arr, dtype=np.float32)
    _write_str(buf, name)
    buf.write(struct.pack("<B", arr.ndim))
    for d in arr.shape:
        buf.write(struct.pack("<I", d))
    buf.write(arr.tobytes())


def _read_tensor(f) -> tuple[str, np.ndarray]:
    name = _read_str(f)
    (ndim,) = struct.unpack("<B", _read(f, 1))
    shape = tuple(struct.unpack("<I", _read(f, 4))[0] for _ in range(ndim))
    count = int(np.prod(shape)) if shape else 1
    data = np.frombuffer(_read(f, 4 * count), dtype="<f4").reshape(shape)
    return name, data.copy()


def save_checkpoint(model: StyleModel, path: str) -> None:
    """Write model parameters, normalization and style embeddings atomically."""
    buf = io.BytesIO()
    buf.write(MAGIC)
    buf.write(struct.pack("<I", VERSION))
    meta = json.dumps(model.config.to_dict()).encode("utf-8")
    buf.write(struct.pack("<I", len(meta)))
    buf.write(meta)
    n = model.norm
    for name, arr in (
        ("input_mean", n.input_mean), ("input_std", n.input_std),
        ("output_mean", n.output_mean), ("output_std", n.output_std),
        ("clip_mean", n.clip_mean), ("clip_std", n.clip_std),
    ):
        _write_tensor(buf, name, arr)
    params = model.parameters()
    buf.write(struct.pack("<I", len(params)))
    for p in params:
        _write_tensor(buf, p.name, p.data)
    buf.write(struct.pack("<I", len(model.embeddings)))
    for name, emb in model.embeddings.items():
        _write_str(buf, name)
        emb = np.ascontiguousarray(emb, dtype=np.float32)
        buf.write(struct.pack("<I", emb.size))
        buf.write(emb.tobytes())
    atomic_write_bytes(path, buf.getvalue())


def load_checkpoint(path: str) -> StyleModel:
    with open(path, "rb") as f:
        magic = _read(f, 4)
        if magic != MAGIC:
            raise CheckpointError(f"bad magic {magic!r}, expected {MAGIC!r}")
        (version,) = struct.unpack("<I", _read(f, 4))
        if version != VERSION:
            raise CheckpointError(f"unsupported checkpoint version {version}")
        (meta_len,) = struct.unpack("<I", _read(f, 4))
        config = ModelConfig.from_dict(json.loads(_read(f, meta_len).decode("utf-8")))
        stats = {}
        for _ in range(6):
            name, arr = _read_tensor(f)
            stats[name] = arr.astype(np.float64)
        norm = NormalizationStats(
            stats["input_mean"], stats["input_std"],
            stats["output_mean"], stats["output_std"],
            stats["clip_mean"], stats["clip_std"],
        )
        (n_params,) = struct.unpack("<I", _read(f, 4))
        tensors = {}
        for _ in range(n_params):
            name, arr = _read_tensor(f)
            tensors[name] = arr
        model = StyleModel(config, norm)
        for p in model.parameters():
            if p.name not in tensors:
                raise CheckpointError(f"missing tensor {p.name!r}")
            stored = tensors.pop(p.name)
            if stored.shape != p.data.shape:
                raise CheckpointError(
                    f"tensor {p.name!r} shape {stored.shape}, expected {p.data.shape}"
                )
            p.data = stored
        if tensors:
            raise CheckpointError(f"unexpected tensors: {sorted(tensors)}")
        (n_emb,) = struct.unpack("<I", _read(f, 4))
        for _ in range(n_emb):
            name = _read_str(f)
            (count,) = struct.unpack("<I", _read(f, 4))
            model.embeddings[name] = np.frombuffer(
                _read(f, 4 * count), dtype="<f4"
            ).copy()
    return model
