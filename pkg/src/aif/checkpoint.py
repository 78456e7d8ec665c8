"""Flat binary checkpoint container.

Layout (all little-endian)::

    b"AIFX1"
    int32  field count (8)
    int32  num_layers, num_heads, d_model, d_ff, vocab_size, max_seq_len, rpe_dim, rng_seed
    float64 tensors, C order, in ``param_shapes(config)`` order

Shapes are implied by the config, so nothing else is stored.
"""
from __future__ import annotations

import io
import os
import struct
import tempfile
from pathlib import Path

import numpy as np

from .encoder import EncoderConfig, check_params, param_shapes

MAGIC = b"AIFX1"
CONFIG_FIELDS = ("num_layers", "num_heads", "d_model", "d_ff", "vocab_size",
                 "max_seq_len", "rpe_dim", "rng_seed")


class CheckpointError(ValueError):
    pass


def dumps(params: dict[str, np.ndarray], config: EncoderConfig) -> bytes:
    check_params(params, config)
    buf = io.BytesIO()
    buf.write(MAGIC)
    values = [getattr(config, f) for f in CONFIG_FIELDS]
    buf.write(struct.pack(f"<i{len(values)}i", len(values), *values))
    for name in param_shapes(config):
        buf.write(np.ascontiguousarray(params[name], dtype="<f8").tobytes())
    return buf.getvalue()


def loads(data: bytes) -> tuple[dict[str, np.ndarray], EncoderConfig]:
    if data[:len(MAGIC)] != MAGIC:
        raise CheckpointError("bad magic bytes")
    off = len(MAGIC)
    (count,) = struct.unpack_from("<i", data, off)
    if count != len(CONFIG_FIELDS):
        raise CheckpointError(f"expected {len(CONFIG_FIELDS)} config fields, found {count}")
    off += 4
    values = struct.unpack_from(f"<{count}i", data, off)
    off += 4 * count
    config = EncoderConfig(**dict(zip(CONFIG_FIELDS, values)))
    params = {}
    for name, shape in param_shapes(config).items():
        size = int(np.prod(shape))
        end = off + 8 * size
        if end > len(data):
            raise CheckpointError(f"truncated checkpoint while reading {name}")
        params[name] = np.frombuffer(data, dtype="<f8", count=size, offset=off).astype(np.float64).reshape(shape)
        off = end
    if off != len(data):
        raise CheckpointError(f"{len(data) - off} trailing bytes")
    return params, config


def atomic_write_bytes(path: str | Path, data: bytes) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as f:
            f.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def save(path: str | Path, params: dict[str, np.ndarray], config: EncoderConfig) -> None:
    atomic_write_bytes(path, dumps(params, config))


def load(path: str | Path) -> tuple[dict[str, np.ndarray], EncoderConfig]:
    return loads(Path(path).read_bytes())
