"""Training loop, optimiser, schedule and sweep harness."""

from .config import TrainConfig, apply_ablations
from .loop import (
    EpochMetrics, RunRecord, TrainingDivergedError, check_compatible, code_hash, content_hash, evaluate,
    save_run, simplex_stats, train, write_metrics,
)
from .optim import AdamW, OneCycle, clip_global_norm, global_norm
from .sweep import ABLATIONS, SweepRow, ablation_sweep

__all__ = [
    "TrainConfig", "apply_ablations", "AdamW", "OneCycle", "clip_global_norm", "global_norm",
    "train", "evaluate", "RunRecord", "EpochMetrics", "TrainingDivergedError", "simplex_stats",
    "check_compatible", "code_hash", "content_hash", "save_run", "write_metrics",
    "ABLATIONS", "SweepRow", "ablation_sweep",
]
