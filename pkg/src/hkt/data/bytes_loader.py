"""Byte-level sequence classification corpora.

Layout: one sub-directory per label name under the root, each holding text
files (any extension). Files are read as raw bytes, so ids 0-255 are bytes and
256 is the pad id.
"""

from __future__ import annotations

import os

import numpy as np

from .dataset import Dataset

BYTE_PAD = 256
BYTE_VOCAB = 257


class UnknownLabelError(ValueError):
    pass


def encode_bytes(raw: bytes, T: int) -> np.ndarray:
    """Keep the last T bytes and left-pad with BYTE_PAD."""
    if T < 1:
        raise ValueError(f"T must be >= 1, got {T}")
    tail = np.frombuffer(raw[-T:] if len(raw) > T else raw, dtype=np.uint8).astype(np.int64)
    out = np.full(T, BYTE_PAD, dtype=np.int64)
    if tail.size:
        out[T - tail.size:] = tail
    return out


def load_bytes_dataset(path: str, T: int, label_map: dict[str, int]) -> Dataset:
    """Load ``path/<label>/<file>`` into a byte dataset, files in sorted order."""
    if not os.path.isdir(path):
        raise OSError(f"not a directory: {path}")
    n_classes = max(label_map.values()) + 1 if label_map else 0
    rows, labels, names = [], [], []
    for label_name in sorted(os.listdir(path)):
        sub = os.path.join(path, label_name)
        if not os.path.isdir(sub):
            continue
        if label_name not in label_map:
            raise UnknownLabelError(f"directory {label_name!r} has no entry in label_map")
        for fname in sorted(os.listdir(sub)):
            fpath = os.path.join(sub, fname)
            if not os.path.isfile(fpath):
                continue
            with open(fpath, "rb") as fh:
                rows.append(encode_bytes(fh.read(), T))
            labels.append(label_map[label_name])
            names.append(f"{label_name}/{fname}")
    tokens = np.stack(rows) if rows else np.zeros((0, T), dtype=np.int64)
    return Dataset(tokens, np.asarray(labels, dtype=np.int64), BYTE_VOCAB, n_classes,
                   {"kind": "bytes", "seq_len": T, "label_map": dict(label_map), "files": names})
