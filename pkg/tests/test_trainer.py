import csv
import math

import numpy as np
import pytest

from hkt import gradcore as gc
from hkt.data import ListOpsSpec, generate_listops
from hkt.gradcore import Tensor
from hkt.model import HktModel, ModelConfig, load_checkpoint
from hkt.trainer import (
    ABLATIONS, AdamW, OneCycle, TrainConfig, TrainingDivergedError, ablation_sweep,
    apply_ablations, clip_global_norm, global_norm, train,
)


@pytest.fixture(scope="module")
def tiny_data():
    return generate_listops(ListOpsSpec(seed=1, n_train=64, n_val=32, n_test=32, seq_len=32,
                                        max_depth=2, max_arity=4))


def tiny_model_cfg(**kw):
    base = dict(d_model=32, n_heads=2, n_levels=2, n_layers=1, max_seq_len=32)
    base.update(kw)
    return ModelConfig(**base)


# --- optimiser pieces ---------------------------------------------------------------

def test_adamw_decay_is_decoupled():
    w = Tensor(np.full((3, 3), 2.0), requires_grad=True)
    b = Tensor(np.full(3, 2.0), requires_grad=True)
    opt = AdamW([w, b], lr=0.1, weight_decay=0.01)
    for k in range(1, 4):
        opt.step([np.zeros((3, 3)), np.zeros(3)])
        np.testing.assert_allclose(w.data, 2.0 * (1 - 0.1 * 0.01) ** k, rtol=0, atol=1e-15)
        np.testing.assert_array_equal(b.data, 2.0)


def test_adamw_first_step_is_sign_sized():
    p = Tensor(np.zeros(4), requires_grad=True)
    g = np.array([3.0, -0.5, 1e-3, 0.0])
    AdamW([p], lr=0.01, weight_decay=0.0).step([g])
    # bias-corrected moments are g and g^2 after one step
    np.testing.assert_allclose(p.data, -0.01 * g / (np.abs(g) + 1e-8), rtol=1e-12, atol=0)


def test_one_cycle_shape():
    sched = OneCycle(1e-2, total_steps=100, warmup_steps=20)
    assert abs(sched(0) - 1e-2 / 25) < 1e-18
    assert sched(20) == 1e-2
    assert sched(99) <= 1e-2 / 1e3
    lrs = [sched(k) for k in range(100)]
    assert all(a <= b for a, b in zip(lrs[:20], lrs[1:21]))
    assert all(a >= b for a, b in zip(lrs[20:], lrs[21:]))
    with pytest.raises(ValueError):
        OneCycle(1e-2, 10, 10)


def test_clip_to_unit_norm():
    rng = np.random.default_rng(0)
    grads = [rng.standard_normal((4, 5)), rng.standard_normal(7)]
    scale = 10.0 / global_norm(grads)
    grads = [g * scale for g in grads]
    before = clip_global_norm(grads, 1.0)
    assert abs(before - 10.0) < 1e-12
    assert abs(global_norm(grads) - 1.0) < 1e-9


def test_clip_leaves_small_gradients():
    grads = [np.array([0.3, 0.4])]
    clip_global_norm(grads, 1.0)
    np.testing.assert_array_equal(grads[0], [0.3, 0.4])


# --- config ---------------------------------------------------------------------------

@pytest.mark.parametrize("kw", [{"epochs": 0}, {"warmup_epochs": 15}, {"clip_norm": 0.0},
                                {"beta_fixed": 2.0}, {"peak_lr": -1.0}])
def test_train_config_errors(kw):
    with pytest.raises(gc.ConfigError):
        TrainConfig(**kw)


def test_apply_ablations():
    mc = ModelConfig()
    assert apply_ablations(mc, TrainConfig(no_hierarchy=True)).n_levels == 1
    assert apply_ablations(mc, TrainConfig(beta_fixed=0.0)).beta_fixed == 0.0
    assert apply_ablations(mc, TrainConfig(alpha_uniform=True)).alpha_uniform
    assert apply_ablations(mc, TrainConfig()) is mc


# --- training loop ----------------------------------------------------------------------

def test_seed_determinism(tiny_data, tmp_path):
    cfg = TrainConfig(epochs=2, warmup_epochs=1, seed=3)
    r1 = train(HktModel(tiny_model_cfg(), seed=3), tiny_data, cfg, out_dir=str(tmp_path / "a"))
    r2 = train(HktModel(tiny_model_cfg(), seed=3), tiny_data, cfg, out_dir=str(tmp_path / "b"))
    assert abs(r1.epochs[0].train_loss - r2.epochs[0].train_loss) <= 1e-12
    assert (tmp_path / "a" / "metrics.csv").read_bytes() == (tmp_path / "b" / "metrics.csv").read_bytes()
    assert (tmp_path / "a" / "summary.json").read_bytes() == (tmp_path / "b" / "summary.json").read_bytes()
    r3 = train(HktModel(tiny_model_cfg(), seed=4), tiny_data, TrainConfig(epochs=2, warmup_epochs=1, seed=4))
    assert r3.epochs[0].train_loss != r1.epochs[0].train_loss


def test_run_outputs(tiny_data, tmp_path):
    cfg = TrainConfig(epochs=3, warmup_epochs=1, seed=0)
    rec = train(HktModel(tiny_model_cfg(), seed=0), tiny_data, cfg, out_dir=str(tmp_path))
    assert len(rec.epochs) == 3 and rec.simplex_ok
    assert all(math.isfinite(e.train_loss) and math.isfinite(e.val_acc) for e in rec.epochs)
    assert rec.best_val_acc == max(rec.val_accs)
    with open(tmp_path / "metrics.csv") as fh:
        rows = list(csv.DictReader(fh))
    assert [int(r["epoch"]) for r in rows] == [1, 2, 3]
    model, config = load_checkpoint(tmp_path / "best.ckpt")
    assert config["run"]["best_epoch"] == rec.best_epoch
    assert model.cfg == HktModel(tiny_model_cfg()).cfg


def test_overfit_sanity(tiny_data):
    cfg = TrainConfig(epochs=60, warmup_epochs=5, peak_lr=5e-3, weight_decay=0.0, seed=0)
    rec = train(HktModel(tiny_model_cfg(), seed=0), {"train": tiny_data["train"]}, cfg)
    assert max(e.train_acc for e in rec.epochs) == 1.0


def test_regularisers_enabled(tiny_data):
    cfg = TrainConfig(epochs=1, warmup_epochs=0, div_off=False, mono_off=False, seed=0)
    rec = train(HktModel(tiny_model_cfg(), seed=0), tiny_data, cfg)
    assert rec.simplex_ok and math.isfinite(rec.epochs[0].train_loss)


def test_divergence_reports_lr_and_norm(tiny_data):
    model = HktModel(tiny_model_cfg(), seed=0)
    model.embed.data[:] = np.nan
    with pytest.raises(TrainingDivergedError) as exc:
        train(model, tiny_data, TrainConfig(epochs=1, warmup_epochs=0))
    assert exc.value.step == 0 and exc.value.lr > 0


def test_incompatible_dataset(tiny_data):
    with pytest.raises(gc.ConfigError):
        train(HktModel(tiny_model_cfg(n_classes=5)), tiny_data, TrainConfig(epochs=1, warmup_epochs=0))


# --- sweep ----------------------------------------------------------------------------------

def test_sweep_grid_overheads_and_determinism(tiny_data):
    cfg = TrainConfig(epochs=1, warmup_epochs=0, sweep_levels=[1, 2, 3], sweep_strides=[2])
    rows = ablation_sweep(tiny_model_cfg(), cfg, tiny_data, ablations=["w/o hierarchy (L=1, flat)"])
    grid = [r for r in rows if r.kind == "grid"]
    assert [r.overhead for r in grid] == [1.0, 1.25, 1.3125]
    flat = rows[0]
    assert flat.kind == "ablation" and flat.n_levels == 1 and flat.status == "ok"
    again = ablation_sweep(tiny_model_cfg(), cfg, tiny_data, ablations=["w/o hierarchy (L=1, flat)"])
    assert [r.val_acc for r in rows] == [r.val_acc for r in again]


def test_sweep_records_failures(tiny_data):
    cfg = TrainConfig(epochs=1, warmup_epochs=0, sweep_levels=[6], sweep_strides=[3])
    rows = ablation_sweep(tiny_model_cfg(), cfg, tiny_data, ablations=[])
    assert len(rows) == 1 and rows[0].status.startswith("failed")


def test_sweep_unknown_ablation(tiny_data):
    with pytest.raises(KeyError):
        ablation_sweep(tiny_model_cfg(), TrainConfig(epochs=1, warmup_epochs=0), tiny_data,
                       ablations=["nope"], grid=False)


def test_ablation_table_rows():
    assert "w/o hierarchy (L=1, flat)" in ABLATIONS and len(ABLATIONS) == 7
