"""Binary checkpoint container.

Layout (little-endian):
    b"HKT1"
    u32 config length, config bytes (UTF-8 JSON, keys sorted)
    u32 tensor count
    per tensor: u32 name length, name bytes, u32 rank, rank x u64 dims,
                float64 row-major payload
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from .config import ModelConfig
from .model import HktModel

MAGIC = b"HKT1"


class CheckpointError(ValueError):
    pass


def encode_checkpoint(config: dict, tensors: dict[str, np.ndarray]) -> bytes:
    cfg = json.dumps(config, sort_keys=True, separators=(",", ":")).encode("utf-8")
    parts = [MAGIC, struct.pack("<I", len(cfg)), cfg, struct.pack("<I", len(tensors))]
    for name in sorted(tensors):
        arr = np.ascontiguousarray(tensors[name], dtype="<f8")
        nb = name.encode("utf-8")
        parts.append(struct.pack("<I", len(nb)))
        parts.append(nb)
        parts.append(struct.pack("<I", arr.ndim))
        parts.append(struct.pack(f"<{arr.ndim}Q", *arr.shape))
        parts.append(arr.tobytes(order="C"))
    return b"".join(parts)


def decode_checkpoint(blob: bytes) -> tuple[dict, dict[str, np.ndarray]]:
    if blob[:4] != MAGIC:
        raise CheckpointError(f"not a checkpoint or unsupported version (magic {blob[:4]!r})")
    pos = 4

    def take(fmt):
        nonlocal pos
        size = struct.calcsize(fmt)
        if pos + size > len(blob):
            raise CheckpointError("truncated checkpoint")
        vals = struct.unpack_from(fmt, blob, pos)
        pos += size
        return vals

    (clen,) = take("<I")
    config = json.loads(blob[pos:pos + clen].decode("utf-8"))
    pos += clen
    (count,) = take("<I")
    tensors = {}
    for _ in range(count):
        (nlen,) = take("<I")
        name = blob[pos:pos + nlen].decode("utf-8")
        pos += nlen
        (rank,) = take("<I")
        dims = take(f"<{rank}Q") if rank else ()
        n = int(np.prod(dims)) if rank else 1
        if pos + 8 * n > len(blob):
            raise CheckpointError("truncated checkpoint payload")
        tensors[name] = np.frombuffer(blob, dtype="<f8", count=n, offset=pos).reshape(dims).astype(np.float64)
        pos += 8 * n
    if pos != len(blob):
        raise CheckpointError(f"{len(blob) - pos} trailing bytes in checkpoint")
    return config, tensors


def save_checkpoint(path, model: HktModel, extra: dict | None = None) -> None:
    config = {"model": model.cfg.to_dict()}
    if extra:
        config.update(extra)
    Path(path).write_bytes(encode_checkpoint(config, model.state_dict()))


def load_checkpoint(path) -> tuple[HktModel, dict]:
    config, tensors = decode_checkpoint(Path(path).read_bytes())
    if "model" not in config:
        raise CheckpointError("checkpoint config has no 'model' section")
    model = HktModel(ModelConfig.from_dict(config["model"]))
    model.load_state_dict(tensors)
    return model, config
