"""Wall-clock and operation-count benchmark of training steps."""

from __future__ import annotations

import statistics
import time
from dataclasses import dataclass, replace

import numpy as np

from .. import gradcore as gc
from ..model import HktModel, ModelConfig
from .opcount import count_ops


@dataclass
class BenchRow:
    model: str
    T: int
    batch: int
    median_s: float
    score_entries: int
    flat_entries: int
    op_ratio: float

    def row(self) -> dict:
        return {"model": self.model, "T": self.T, "batch": self.batch, "median_s": self.median_s,
                "score_entries": self.score_entries, "flat_entries": self.flat_entries,
                "op_ratio": self.op_ratio}


def bench_config(kind: str, base: ModelConfig, T: int) -> ModelConfig:
    if kind == "hkt":
        return replace(base, max_seq_len=T)
    if kind == "mha":
        return replace(base, max_seq_len=T, n_levels=1, beta_fixed=1.0, lambda_fixed=None)
    raise ValueError(f"unknown model kind {kind!r}; use hkt or mha")


def time_step(cfg: ModelConfig, batch: int, repeats: int = 20, warmup: int = 3, seed: int = 0) -> float:
    """Median seconds of a forward+backward step; the first ``warmup`` steps are discarded."""
    model = HktModel(cfg, seed=seed)
    rng = np.random.default_rng(seed)
    tokens = rng.integers(0, cfg.vocab_size, size=(batch, cfg.max_seq_len))
    labels = rng.integers(0, cfg.n_classes, size=batch)
    times = []
    for i in range(warmup + repeats):
        t0 = time.perf_counter()
        with gc.graph_scope():
            gc.backward(gc.cross_entropy_logits(model(tokens), labels))
        if i >= warmup:
            times.append(time.perf_counter() - t0)
    return statistics.median(times)


def benchmark(kinds, lengths, base: ModelConfig | None = None, batch: int = 16, repeats: int = 20,
              warmup: int = 3) -> list[BenchRow]:
    base = base if base is not None else ModelConfig()
    rows = []
    for T in lengths:
        for kind in kinds:
            cfg = bench_config(kind, base, T)
            oc = count_ops(cfg, T)
            rows.append(BenchRow(kind, T, batch, time_step(cfg, batch, repeats, warmup),
                                 oc.total_entries, oc.flat_entries, float(oc.ratio_measured)))
    return rows
