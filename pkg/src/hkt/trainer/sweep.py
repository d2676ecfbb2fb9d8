"""Ablation rows and the (levels, stride) sensitivity grid."""

from __future__ import annotations

import os
from dataclasses import dataclass, replace

from ..data import Dataset
from ..model import HktModel, ModelConfig
from ..verify.opcount import count_ops
from .config import TrainConfig, apply_ablations
from .loop import RunRecord, train

ABLATIONS = {
    "full": {},
    "w/o hierarchy (L=1, flat)": {"no_hierarchy": True},
    "w/o hybrid heads (beta=1)": {"beta_fixed": 1.0},
    "pure convolution (beta=0)": {"beta_fixed": 0.0},
    "w/o dynamic fusion (alpha uniform)": {"alpha_uniform": True},
    "with diversity loss": {"div_off": False},
    "with monotonicity loss": {"mono_off": False},
}


@dataclass
class SweepRow:
    kind: str  # "ablation" or "grid"
    name: str
    n_levels: int
    stride: int
    overhead: float
    val_acc: float | None
    test_acc: float | None
    status: str
    record: RunRecord | None = None

    def row(self) -> dict:
        return {"kind": self.kind, "name": self.name, "levels": self.n_levels, "stride": self.stride,
                "overhead": self.overhead, "val_acc": self.val_acc, "test_acc": self.test_acc,
                "status": self.status}


def _run(kind, name, model_cfg, cfg, data, out_dir, log) -> SweepRow:
    mc = apply_ablations(model_cfg, cfg)
    overhead = float(count_ops(mc).ratio_measured)
    try:
        model = HktModel(mc, seed=cfg.seed)
        rec = train(model, data, cfg, out_dir=out_dir, log=log)
        return SweepRow(kind, name, mc.n_levels, mc.stride, overhead, rec.best_val_acc, rec.test_acc, "ok", rec)
    except Exception as exc:  # a failed run is recorded and the sweep continues
        return SweepRow(kind, name, mc.n_levels, mc.stride, overhead, None, None,
                        f"failed: {type(exc).__name__}: {exc}")


def ablation_sweep(model_cfg: ModelConfig, cfg: TrainConfig, data: dict[str, Dataset],
                   ablations: list[str] | None = None, grid: bool = True, out_dir: str | None = None,
                   log=None) -> list[SweepRow]:
    """One run per ablation row, then one per (L, s) grid point of ``cfg``."""
    rows = []
    names = list(ABLATIONS) if ablations is None else ablations
    for name in names:
        if name not in ABLATIONS:
            raise KeyError(f"unknown ablation {name!r}; choose from {list(ABLATIONS)}")
        sub = None if out_dir is None else os.path.join(out_dir, "ablation", _slug(name))
        rows.append(_run("ablation", name, model_cfg, replace(cfg, **ABLATIONS[name]), data, sub, log))
    if grid:
        for s in cfg.sweep_strides:
            for L in cfg.sweep_levels:
                name = f"L={L} s={s}"
                sub = None if out_dir is None else os.path.join(out_dir, "grid", _slug(name))
                try:
                    mc = replace(model_cfg, n_levels=L, stride=s, lambda_fixed=None)
                except Exception as exc:
                    rows.append(SweepRow("grid", name, L, s, float("nan"), None, None,
                                         f"failed: {type(exc).__name__}: {exc}"))
                    continue
                rows.append(_run("grid", name, mc, cfg, data, sub, log))
    return rows


def _slug(name: str) -> str:
    keep = [c if c.isalnum() else "_" for c in name]
    return "".join(keep).strip("_")
