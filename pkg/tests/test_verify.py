from fractions import Fraction

import numpy as np
import pytest

from hkt import gradcore as gc
from hkt.model import HktModel, ModelConfig
from hkt.verify import (
    bench_config, benchmark, count_ops, format_table, leakage_matrix, measure_leakage,
    ops_suite, reduction_suite, run_suites, single_level_forward, theory_ratio,
)
from hkt.verify.gradients import model_errors
from hkt.verify.suites import causal_config


# --- op counting -------------------------------------------------------------------

@pytest.mark.parametrize("L,ratio", [(1, Fraction(1)), (2, Fraction(5, 4)), (3, Fraction(21, 16)),
                                     (4, Fraction(85, 64))])
def test_overhead_ratios(L, ratio):
    oc = count_ops(ModelConfig(n_levels=L, max_seq_len=128))
    assert oc.ratio_measured == ratio == oc.ratio_theory and oc.exact
    assert oc.ratio_measured <= Fraction(4, 3)


def test_overhead_closed_form():
    for L in range(1, 7):
        assert theory_ratio(L, 2) == Fraction(4, 3) * (1 - Fraction(1, 4 ** L))


def test_overhead_floor_correction_noted():
    oc = count_ops(ModelConfig(n_levels=3, max_seq_len=130), T=130)
    assert oc.lengths == [130, 65, 32] and not oc.exact
    assert oc.ratio_measured < oc.ratio_theory and oc.notes


def test_count_ops_repeatable_and_macs():
    cfg = ModelConfig(n_levels=3)
    a, b = count_ops(cfg), count_ops(cfg)
    assert a.row() == b.row()
    assert a.score_macs == [4 * 128 ** 2 * 16, 4 * 64 ** 2 * 16, 4 * 32 ** 2 * 16]


def test_ops_suite_passes():
    assert all(c.passed for c in ops_suite())


# --- leakage --------------------------------------------------------------------------

def test_leakage_refuses_noncausal():
    with pytest.raises(gc.ConfigError):
        measure_leakage(HktModel(ModelConfig(max_seq_len=16)), T=16, trials=1)


def test_flat_causal_no_leakage():
    model = HktModel(causal_config(8, n_levels=1, beta_fixed=1.0), seed=1)
    assert measure_leakage(model, T=8, trials=3, seed=1).max_leakage <= 1e-12


def test_hkt_causal_small_and_sabotage():
    model = HktModel(causal_config(16, d_model=32, n_heads=2, n_layers=1), seed=2)
    assert measure_leakage(model, T=16, trials=3, seed=2).max_leakage <= 1e-12
    model.sabotage_mask(True)
    assert measure_leakage(model, T=16, trials=2, seed=2).max_leakage > 1e-3


def test_leakage_matrix_matches_single_backward():
    model = HktModel(causal_config(8, d_model=32, n_heads=2, n_layers=1), seed=3)
    model.eval()
    x = np.random.default_rng(3).standard_normal((8, 32))
    n = leakage_matrix(model, x)
    t = 5
    xt = gc.Tensor(x[None].copy(), requires_grad=True)
    with gc.graph_scope():
        gc.backward(gc.sum(gc.getitem(model.position_logits(xt), (0, t))))
        ref = np.linalg.norm(xt.grad[0], axis=-1)
    np.testing.assert_allclose(n[t], ref, rtol=1e-12, atol=1e-15)


# --- reductions -------------------------------------------------------------------------

def test_reduction_suite_small():
    certs = reduction_suite(seed=1, draws=2)
    assert all(c.passed for c in certs), format_table(certs)
    assert any("negative control" in c.name for c in certs)


def test_oracle_rejects_unknown_mixer():
    model = HktModel(ModelConfig(d_model=32, n_heads=2, n_levels=1, beta_fixed=1.0, max_seq_len=8))
    with pytest.raises(ValueError):
        single_level_forward(model, np.zeros((1, 8), dtype=int), "rnn")


# --- gradients -----------------------------------------------------------------------------

def test_small_model_gradients():
    errs = model_errors(ModelConfig(d_model=32, n_heads=2, n_layers=1, max_seq_len=16), seed=0, T=16)
    assert max(errs.values()) < 1e-4


# --- harness -------------------------------------------------------------------------------

def test_run_suites_unknown():
    with pytest.raises(ValueError):
        run_suites(["bogus"])


def test_benchmark_rows():
    base = ModelConfig(d_model=32, n_heads=2, n_layers=1)
    rows = benchmark(["hkt", "mha"], [16], base=base, batch=2, repeats=2, warmup=1)
    assert [(r.model, r.T) for r in rows] == [("hkt", 16), ("mha", 16)]
    assert rows[0].op_ratio == 1.3125 and rows[1].op_ratio == 1.0
    assert all(r.median_s > 0 for r in rows)
    with pytest.raises(ValueError):
        bench_config("rnn", base, 16)
