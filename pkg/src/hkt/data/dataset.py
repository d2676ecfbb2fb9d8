"""Token datasets: container, text file format with metadata sidecar, batching and splits."""

from __future__ import annotations

import hashlib
import json
import os
from dataclasses import dataclass, field
from typing import Iterator

import numpy as np

from ..numkit import Prng

FORMAT_TAG = "hkt-dataset/1"


class DatasetFormatError(ValueError):
    pass


@dataclass
class Dataset:
    tokens: np.ndarray  # (n, T) int64
    labels: np.ndarray  # (n,) int64
    vocab_size: int
    n_classes: int
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.tokens = np.asarray(self.tokens, dtype=np.int64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.tokens.ndim != 2 or self.labels.shape != (self.tokens.shape[0],):
            raise DatasetFormatError(
                f"tokens must be (n, T) and labels (n,), got {self.tokens.shape} and {self.labels.shape}")
        if self.labels.size and (self.labels.min() < 0 or self.labels.max() >= self.n_classes):
            raise DatasetFormatError(f"labels outside [0, {self.n_classes})")
        if self.tokens.size and (self.tokens.min() < 0 or self.tokens.max() >= self.vocab_size):
            raise DatasetFormatError(f"token ids outside [0, {self.vocab_size})")

    def __len__(self) -> int:
        return self.tokens.shape[0]

    @property
    def seq_len(self) -> int:
        return self.tokens.shape[1]

    def subset(self, index) -> "Dataset":
        index = np.asarray(index, dtype=np.int64)
        return Dataset(self.tokens[index], self.labels[index], self.vocab_size, self.n_classes,
                       dict(self.meta))

    def checksum(self) -> str:
        """sha256 of the serialised sample lines."""
        return hashlib.sha256(_serialise(self)).hexdigest()


def _serialise(ds: Dataset) -> bytes:
    lines = [" ".join(map(str, row.tolist())) + "\t" + str(int(y)) for row, y in zip(ds.tokens, ds.labels)]
    return ("\n".join(lines) + ("\n" if lines else "")).encode("utf-8")


def meta_path(path: str) -> str:
    return path + ".meta.json"


def write_dataset(ds: Dataset, path: str) -> str:
    """Write samples as "ids<TAB>label" lines plus a JSON sidecar; returns the checksum."""
    payload = _serialise(ds)
    digest = hashlib.sha256(payload).hexdigest()
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    with open(path, "wb") as fh:
        fh.write(payload)
    sidecar = {"format": FORMAT_TAG, "n": len(ds), "seq_len": ds.seq_len,
               "vocab_size": ds.vocab_size, "n_classes": ds.n_classes,
               "sha256": digest, "meta": ds.meta}
    with open(meta_path(path), "w", encoding="utf-8") as fh:
        json.dump(sidecar, fh, sort_keys=True, indent=1)
        fh.write("\n")
    return digest


def read_dataset(path: str, verify: bool = True) -> Dataset:
    try:
        with open(meta_path(path), encoding="utf-8") as fh:
            sidecar = json.load(fh)
        with open(path, "rb") as fh:
            payload = fh.read()
    except OSError as exc:
        raise DatasetFormatError(f"cannot read dataset {path}: {exc}") from exc
    if sidecar.get("format") != FORMAT_TAG:
        raise DatasetFormatError(f"unsupported dataset format {sidecar.get('format')!r}")
    if verify and hashlib.sha256(payload).hexdigest() != sidecar["sha256"]:
        raise DatasetFormatError(f"checksum mismatch for {path}")
    rows, labels = [], []
    for lineno, line in enumerate(payload.decode("utf-8").splitlines(), 1):
        try:
            ids, label = line.split("\t")
            rows.append([int(t) for t in ids.split()])
            labels.append(int(label))
        except ValueError as exc:
            raise DatasetFormatError(f"{path}:{lineno}: malformed line") from exc
    T = sidecar["seq_len"]
    if any(len(r) != T for r in rows):
        raise DatasetFormatError(f"{path}: rows do not all have length {T}")
    tokens = np.array(rows, dtype=np.int64).reshape(len(rows), T)
    return Dataset(tokens, np.array(labels, dtype=np.int64), sidecar["vocab_size"],
                   sidecar["n_classes"], sidecar.get("meta", {}))


def iterate_batches(ds: Dataset, batch_size: int, rng: Prng | None = None,
                    drop_last: bool = False) -> Iterator[tuple[np.ndarray, np.ndarray]]:
    """Yield (tokens, labels) batches; shuffled with ``rng`` when given."""
    if batch_size < 1:
        raise ValueError(f"batch_size must be >= 1, got {batch_size}")
    n = len(ds)
    order = rng.permutation(n) if rng is not None else np.arange(n)
    stop = n - (n % batch_size) if drop_last else n
    for start in range(0, stop, batch_size):
        idx = order[start:start + batch_size]
        yield ds.tokens[idx], ds.labels[idx]


def split_dataset(ds: Dataset, sizes: dict[str, int], seed: int) -> dict[str, Dataset]:
    """Disjoint random splits of exact sizes (sizes must not exceed len(ds))."""
    total = sum(sizes.values())
    if total > len(ds) or min(sizes.values(), default=0) < 0:
        raise ValueError(f"split sizes {sizes} do not fit {len(ds)} samples")
    order = Prng(seed).permutation(len(ds))
    out, start = {}, 0
    for name, n in sizes.items():
        part = ds.subset(order[start:start + n])
        part.meta["split"] = name
        out[name] = part
        start += n
    return out
