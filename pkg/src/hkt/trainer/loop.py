"""Training loop with metrics, best-validation checkpointing and simplex logging."""

from __future__ import annotations

import csv
import hashlib
import io
import json
import math
import os
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .. import gradcore as gc
from ..data import Dataset, iterate_batches
from ..gradcore import ConfigError
from ..model import HktModel, save_checkpoint
from ..numkit import Prng
from .config import TrainConfig
from .optim import AdamW, OneCycle, clip_global_norm

SUMMARY_FORMAT = "hkt-run/1"
SIMPLEX_TOL = 1e-12
METRIC_FIELDS = ["epoch", "lr", "train_loss", "train_acc", "val_loss", "val_acc", "grad_norm",
                 "lambda", "lambda_dev", "alpha_dev", "alpha_min"]


class TrainingDivergedError(RuntimeError):
    def __init__(self, message: str, lr: float, grad_norm: float, step: int):
        super().__init__(f"{message} (step {step}, lr {lr:.3g}, grad norm {grad_norm:.3g})")
        self.lr = lr
        self.grad_norm = grad_norm
        self.step = step


@dataclass
class EpochMetrics:
    epoch: int
    lr: float
    train_loss: float
    train_acc: float
    val_loss: float
    val_acc: float
    grad_norm: float
    lam: list[list[float]]  # per layer
    lambda_dev: float  # max |sum - 1| or negative mass over layers
    alpha_dev: float
    alpha_min: float

    @property
    def simplex_ok(self) -> bool:
        return self.lambda_dev <= SIMPLEX_TOL and self.alpha_dev <= SIMPLEX_TOL and self.alpha_min >= 0.0

    def row(self) -> dict:
        lam = "|".join(" ".join(repr(v) for v in layer) for layer in self.lam)
        return {"epoch": self.epoch, "lr": repr(self.lr), "train_loss": repr(self.train_loss),
                "train_acc": repr(self.train_acc), "val_loss": repr(self.val_loss),
                "val_acc": repr(self.val_acc), "grad_norm": repr(self.grad_norm), "lambda": lam,
                "lambda_dev": repr(self.lambda_dev), "alpha_dev": repr(self.alpha_dev),
                "alpha_min": repr(self.alpha_min)}


@dataclass
class RunRecord:
    model_config: dict
    train_config: dict
    seed: int
    epochs: list[EpochMetrics] = field(default_factory=list)
    best_epoch: int = 0
    best_val_acc: float = 0.0
    test_acc: float | None = None
    seconds_per_batch: list[float] = field(default_factory=list)  # per epoch mean
    content_hash: str = ""
    checkpoint: str | None = None

    @property
    def val_accs(self) -> list[float]:
        return [e.val_acc for e in self.epochs]

    @property
    def simplex_ok(self) -> bool:
        return all(e.simplex_ok for e in self.epochs)

    def summary(self) -> dict:
        """Deterministic summary (no timing)."""
        return {"format": SUMMARY_FORMAT, "seed": self.seed, "content_hash": self.content_hash,
                "model_config": self.model_config, "train_config": self.train_config,
                "best_epoch": self.best_epoch, "best_val_acc": self.best_val_acc,
                "test_acc": self.test_acc, "simplex_ok": self.simplex_ok,
                "epochs": [e.row() for e in self.epochs]}


def code_hash() -> str:
    """sha256 over the package sources (sorted relative paths and contents)."""
    root = Path(__file__).resolve().parent.parent
    h = hashlib.sha256()
    for path in sorted(root.rglob("*.py")):
        h.update(str(path.relative_to(root)).encode())
        h.update(b"\0")
        h.update(path.read_bytes())
    return h.hexdigest()


def content_hash(model_cfg: dict, train_cfg: dict) -> str:
    blob = json.dumps({"model": model_cfg, "train": train_cfg}, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256((code_hash() + blob).encode()).hexdigest()


def _level_regulariser(model: HktModel, cfg: TrainConfig):
    """Optional level-weight penalties: negative entropy of lambda and
    sum_l max(0, lambda_{l+1} - lambda_l)."""
    terms = []
    for block in model.blocks:
        attn = block.attn
        if attn._cfg.lambda_fixed is not None or attn._cfg.n_levels < 2:
            continue
        lam = attn.level_weights()
        if not cfg.div_off:
            terms.append(gc.mul(gc.sum(gc.mul(lam, gc.log(lam))), cfg.div_weight))
        if not cfg.mono_off:
            L = lam.shape[0]
            rise = gc.sub(gc.getitem(lam, slice(1, L)), gc.getitem(lam, slice(0, L - 1)))
            terms.append(gc.mul(gc.sum(gc.ops.relu(rise)), cfg.mono_weight))
    return terms


def evaluate(model: HktModel, ds: Dataset, batch_size: int = 100) -> tuple[float, float]:
    """(mean cross-entropy, accuracy) in eval mode."""
    if len(ds) == 0:
        return float("nan"), float("nan")
    was = model.training
    model.eval()
    loss_sum, correct = 0.0, 0
    with gc.no_grad():
        for xb, yb in iterate_batches(ds, batch_size):
            logits = model(xb)
            loss_sum += float(gc.cross_entropy_logits(logits, yb).data) * len(yb)
            correct += int(np.sum(np.argmax(logits.data, axis=-1) == yb))
    model.train(was)
    return loss_sum / len(ds), correct / len(ds)


def simplex_stats(model: HktModel, tokens: np.ndarray) -> tuple[list[list[float]], float, float, float]:
    """lambda per layer and the simplex deviations of lambda and alpha on ``tokens``."""
    was = model.training
    model.eval()
    traces: list = []
    with gc.no_grad():
        model(tokens, traces=traces)
    model.train(was)
    lams, lam_dev, a_dev, a_min = [], 0.0, 0.0, math.inf
    for tr in traces:
        lam = tr["lam"].data
        lams.append([float(v) for v in lam])
        lam_dev = max(lam_dev, abs(float(lam.sum()) - 1.0), float(max(0.0, -lam.min())))
        alpha = tr["alpha"].data
        a_dev = max(a_dev, float(np.max(np.abs(alpha.sum(axis=-1) - 1.0))))
        a_min = min(a_min, float(alpha.min()))
    return lams, lam_dev, a_dev, a_min


def check_compatible(model: HktModel, ds: Dataset):
    if ds.vocab_size > model.cfg.vocab_size:
        raise ConfigError(f"dataset vocabulary {ds.vocab_size} exceeds model vocabulary {model.cfg.vocab_size}")
    if ds.n_classes != model.cfg.n_classes:
        raise ConfigError(f"dataset has {ds.n_classes} classes, model predicts {model.cfg.n_classes}")
    if ds.seq_len > model.cfg.max_seq_len:
        raise ConfigError(f"sequence length {ds.seq_len} exceeds max_seq_len {model.cfg.max_seq_len}")


def write_metrics(path, record: RunRecord):
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=METRIC_FIELDS, lineterminator="\n")
    w.writeheader()
    for e in record.epochs:
        w.writerow(e.row())
    Path(path).write_text(buf.getvalue())


def train(model: HktModel, data: dict[str, Dataset], cfg: TrainConfig, out_dir: str | None = None,
          log=None) -> RunRecord:
    """Train on data["train"], select on data["val"], report data["test"] (optional).

    Deterministic given ``cfg.seed``: batch order and dropout masks derive
    from it. The best-validation weights are restored into ``model`` at the
    end and written to ``out_dir/best.ckpt`` when ``out_dir`` is given.
    """
    train_ds, val_ds = data["train"], data.get("val")
    test_ds = data.get("test")
    for ds in (train_ds, val_ds, test_ds):
        if ds is not None:
            check_compatible(model, ds)
    if len(train_ds) == 0:
        raise ConfigError("empty training set")

    rng = Prng(cfg.seed)
    order_rng = rng.spawn()
    model.set_dropout_rng(rng.spawn().numpy_generator())
    names, params = zip(*model.named_parameters())
    opt = AdamW(list(params), lr=cfg.peak_lr, weight_decay=cfg.weight_decay)
    steps_per_epoch = math.ceil(len(train_ds) / cfg.batch_size)
    sched = OneCycle(cfg.peak_lr, cfg.epochs * steps_per_epoch, cfg.warmup_epochs * steps_per_epoch,
                     cfg.div_factor, cfg.final_div)
    record = RunRecord(model_config=model.cfg.to_dict(), train_config=cfg.to_dict(), seed=cfg.seed,
                       content_hash=content_hash(model.cfg.to_dict(), cfg.to_dict()))
    probe = (val_ds if val_ds is not None and len(val_ds) else train_ds).tokens[:16]
    best_state = model.state_dict()
    record.best_val_acc = -1.0
    step = 0
    for epoch in range(1, cfg.epochs + 1):
        model.train()
        loss_sum, correct, seen, norm_sum, nb = 0.0, 0, 0, 0.0, 0
        t0 = time.perf_counter()
        lr = sched(step)
        for xb, yb in iterate_batches(train_ds, cfg.batch_size, order_rng):
            lr = sched(step)
            opt.lr = lr
            with gc.graph_scope():
                logits = model(xb)
                loss = gc.cross_entropy_logits(logits, yb)
                total = loss
                for term in _level_regulariser(model, cfg):
                    total = gc.add(total, term)
                gc.backward(total)
            grads = [p.grad for p in params]
            norm = clip_global_norm(grads, cfg.clip_norm)
            lv = float(loss.data)
            if not (math.isfinite(lv) and math.isfinite(norm)):
                raise TrainingDivergedError("non-finite loss or gradient", lr, norm, step)
            opt.step(grads)
            loss_sum += lv * len(yb)
            correct += int(np.sum(np.argmax(logits.data, axis=-1) == yb))
            seen += len(yb)
            norm_sum += norm
            nb += 1
            step += 1
        elapsed = time.perf_counter() - t0
        val_loss, val_acc = evaluate(model, val_ds, cfg.eval_batch_size) if val_ds is not None else (math.nan, math.nan)
        lams, lam_dev, a_dev, a_min = simplex_stats(model, probe)
        em = EpochMetrics(epoch, lr, loss_sum / seen, correct / seen, val_loss, val_acc, norm_sum / nb,
                          lams, lam_dev, a_dev, a_min)
        record.epochs.append(em)
        record.seconds_per_batch.append(elapsed / nb)
        score = val_acc if math.isfinite(val_acc) else em.train_acc
        if score > record.best_val_acc:
            record.best_val_acc, record.best_epoch = score, epoch
            best_state = model.state_dict()
        if log is not None:
            log(f"epoch {epoch:3d}  loss {em.train_loss:.4f}  train {em.train_acc:.4f}  "
                f"val {val_acc:.4f}  lr {lr:.2e}  {elapsed / nb:.3f}s/batch")
    model.load_state_dict(best_state)
    if test_ds is not None and len(test_ds):
        record.test_acc = evaluate(model, test_ds, cfg.eval_batch_size)[1]
    if out_dir is not None:
        save_run(record, model, out_dir)
    return record


def save_run(record: RunRecord, model: HktModel, out_dir: str):
    os.makedirs(out_dir, exist_ok=True)
    write_metrics(os.path.join(out_dir, "metrics.csv"), record)
    with open(os.path.join(out_dir, "timing.csv"), "w") as fh:
        fh.write("epoch,seconds_per_batch\n")
        for i, s in enumerate(record.seconds_per_batch, 1):
            fh.write(f"{i},{s!r}\n")
    with open(os.path.join(out_dir, "summary.json"), "w") as fh:
        json.dump(record.summary(), fh, sort_keys=True, indent=1)
        fh.write("\n")
    ckpt = os.path.join(out_dir, "best.ckpt")
    save_checkpoint(ckpt, model, extra={"run": {"seed": record.seed, "best_epoch": record.best_epoch,
                                                "content_hash": record.content_hash}})
    record.checkpoint = ckpt
