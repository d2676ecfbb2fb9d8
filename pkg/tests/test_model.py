import math

import numpy as np
import pytest

from hkt import gradcore as gc
from hkt.analysis import scale_separation
from hkt.gradcore import Tensor
from hkt.model import (
    CheckpointError, HktModel, ModelConfig, causal_mask, decode_checkpoint, downsample_cascade,
    dynamic_fusion, encode_checkpoint, fuse_scores, hybrid_head_forward, level_scores,
    load_checkpoint, save_checkpoint,
)
from hkt.model.layers import hierarchical_probs


def small_cfg(**kw):
    base = dict(d_model=32, n_heads=2, n_levels=3, stride=2, n_layers=1, max_seq_len=16)
    base.update(kw)
    return ModelConfig(**base)


# --- config ---------------------------------------------------------------------

def test_derived_sizes():
    cfg = ModelConfig()
    assert [cfg.level_dim(l) for l in range(3)] == [64, 32, 32]
    assert [cfg.level_key_dim(l) for l in range(3)] == [16, 16, 16]
    assert cfg.level_lengths(128) == [128, 64, 32]
    big = ModelConfig(d_model=256, n_heads=4, n_levels=4)
    assert [big.level_dim(l) for l in range(4)] == [256, 128, 64, 32]
    assert [big.level_key_dim(l) for l in range(4)] == [64, 32, 16, 16]


@pytest.mark.parametrize("kw", [
    {"n_levels": 0}, {"stride": 1}, {"d_model": 30, "n_heads": 4}, {"dropout": 1.0},
    {"n_levels": 4, "max_seq_len": 8}, {"lambda_fixed": [0.5, 0.6, 0.0]}, {"beta_fixed": 1.5},
])
def test_config_errors(kw):
    with pytest.raises(gc.ConfigError):
        ModelConfig(**kw)


def test_config_unknown_key():
    with pytest.raises(gc.ConfigError, match="bogus"):
        ModelConfig.from_dict({"bogus": 1})


# --- cascade ----------------------------------------------------------------------

def test_cascade_single_level_is_identity():
    m = HktModel(small_cfg(n_levels=1))
    x = Tensor(np.random.default_rng(0).standard_normal((1, 8, 32)))
    stack = downsample_cascade(x, m.blocks[0].attn.down, 1, 2)
    assert len(stack) == 1 and stack[0] is x


def test_cascade_lengths():
    m = HktModel(small_cfg())
    x = Tensor(np.random.default_rng(1).standard_normal((2, 8, 32)))
    stack = downsample_cascade(x, m.blocks[0].attn.down, 3, 2)
    assert [s.shape for s in stack] == [(2, 8, 32), (2, 4, 32), (2, 2, 32)]


def test_cascade_too_short():
    m = HktModel(small_cfg())
    with pytest.raises(gc.ConfigError):
        downsample_cascade(Tensor(np.zeros((1, 3, 32))), m.blocks[0].attn.down, 3, 2)


def test_cascade_causal_perturbation():
    m = HktModel(small_cfg(), seed=3)
    down = m.blocks[0].attn.down
    x = np.random.default_rng(2).standard_normal((1, 8, 32))
    base = downsample_cascade(Tensor(x), down, 3, 2)
    for tp in range(8):
        x2 = x.copy()
        x2[0, tp] += 1.0
        pert = downsample_cascade(Tensor(x2), down, 3, 2)
        for l in (1, 2):
            # row m of level l reads positions up to m * s^l only
            first = -(-tp // 2 ** l)
            np.testing.assert_array_equal(pert[l].data[0, :first], base[l].data[0, :first])


# --- scores and fusion --------------------------------------------------------------

def test_level_scores_identity_weights():
    x = np.eye(4)[None]
    s = level_scores([Tensor(x)], [Tensor(np.eye(4)[None])], [Tensor(np.eye(4)[None])])[0].data
    np.testing.assert_allclose(s[0, 0], np.eye(4) / 2.0, atol=1e-15)


def test_level_scores_single_token():
    rng = np.random.default_rng(3)
    s = level_scores([Tensor(rng.standard_normal((1, 1, 4)))], [Tensor(rng.standard_normal((2, 3, 4)))],
                     [Tensor(rng.standard_normal((2, 3, 4)))])[0]
    assert s.shape == (1, 2, 1, 1)


def test_level_scores_brute_force():
    rng = np.random.default_rng(4)
    x = rng.standard_normal((1, 5, 6))
    wq, wk = rng.standard_normal((2, 3, 6)), rng.standard_normal((2, 3, 6))
    s = level_scores([Tensor(x)], [Tensor(wq)], [Tensor(wk)])[0].data
    for h in range(2):
        for i in range(5):
            for j in range(5):
                ref = np.dot(wq[h] @ x[0, i], wk[h] @ x[0, j]) / math.sqrt(3)
                assert abs(s[0, h, i, j] - ref) < 1e-12


def test_fuse_onehot_level0_is_identity():
    rng = np.random.default_rng(5)
    s0, s1 = rng.standard_normal((1, 1, 8, 8)), rng.standard_normal((1, 1, 4, 4))
    out = fuse_scores([Tensor(s0), Tensor(s1)], [1.0, 0.0], 8, 2).data
    np.testing.assert_array_equal(out, s0)


def test_fuse_index_example():
    rng = np.random.default_rng(6)
    s0, s1 = rng.standard_normal((4, 4)), rng.standard_normal((2, 2))
    lam = [0.3, 0.7]
    out = fuse_scores([Tensor(s0), Tensor(s1)], lam, 4, 2).data
    assert abs(out[2, 3] - (0.3 * s0[2, 3] + 0.7 * s1[1, 1])) < 1e-15


@pytest.mark.parametrize("T", [8, 11])
def test_fuse_brute_force(T):
    rng = np.random.default_rng(T)
    s = 2
    lens = [T, T // 2, T // 4]
    scores = [rng.standard_normal((n, n)) for n in lens]
    lam = rng.dirichlet(np.ones(3))
    out = fuse_scores([Tensor(a) for a in scores], lam, T, s).data
    for i in range(T):
        for j in range(T):
            ref = sum(lam[l] * scores[l][min(i // s ** l, lens[l] - 1), min(j // s ** l, lens[l] - 1)]
                      for l in range(3))
            assert abs(out[i, j] - ref) < 1e-12


def test_fused_probs_match_composed():
    rng = np.random.default_rng(7)
    scores = [Tensor(rng.standard_normal((2, 2, n, n))) for n in (8, 4, 2)]
    lam = rng.dirichlet(np.ones(3))
    mask = causal_mask(8)
    probs, _ = hierarchical_probs(scores, lam, 8, 2, mask)
    ref = gc.softmax_rows(fuse_scores(scores, lam, 8, 2), mask).data
    np.testing.assert_allclose(probs.data, ref, atol=1e-15)
    assert np.all(probs.data[..., mask] == 0.0)


# --- hybrid heads and fusion --------------------------------------------------------

def _hybrid_parts(seed=8):
    rng = np.random.default_rng(seed)
    v = Tensor(rng.standard_normal((1, 6, 4)))
    probs = Tensor(gc.softmax_rows(rng.standard_normal((1, 2, 6, 6))).data)
    conv_w = Tensor(rng.standard_normal((4, 3)))
    parts = {}
    hybrid_head_forward(v, probs, conv_w, np.full(2, 0.3), 2, parts=parts)
    return v, probs, conv_w, parts["attn"].data, parts["conv"].data


def test_hybrid_endpoints_and_blend():
    v, probs, conv_w, attn, conv = _hybrid_parts()
    one = hybrid_head_forward(v, probs, conv_w, np.ones(2), 2).data
    zero = hybrid_head_forward(v, probs, conv_w, np.zeros(2), 2).data
    half = hybrid_head_forward(v, probs, conv_w, np.full(2, 0.5), 2).data
    np.testing.assert_array_equal(one, attn)
    np.testing.assert_array_equal(zero, conv)
    np.testing.assert_allclose(half, 0.5 * (attn + conv), atol=1e-12)


def test_hybrid_per_head_channels():
    v, probs, conv_w, attn, conv = _hybrid_parts(9)
    out = hybrid_head_forward(v, probs, conv_w, np.array([1.0, 0.0]), 2).data
    np.testing.assert_array_equal(out[..., :2], attn[..., :2])
    np.testing.assert_array_equal(out[..., 2:], conv[..., 2:])


def test_dynamic_fusion_convexity():
    o = Tensor(np.random.default_rng(10).standard_normal((2, 5, 4)))
    alpha = Tensor(np.random.default_rng(11).dirichlet(np.ones(3), size=2))
    out = dynamic_fusion([o, o, o], alpha).data
    np.testing.assert_allclose(out, o.data, atol=1e-14)


def test_dynamic_fusion_uniform_is_average():
    rng = np.random.default_rng(12)
    outs = [Tensor(rng.standard_normal((1, 5, 4))) for _ in range(3)]
    out = dynamic_fusion(outs, Tensor(np.full((1, 3), 1 / 3))).data
    np.testing.assert_allclose(out, sum(o.data for o in outs) / 3, atol=1e-14)


def test_fusion_mlp_gradient():
    m = HktModel(small_cfg(), seed=4)
    attn = m.blocks[0].attn
    for p in (attn.f1_w, attn.f2_w, attn.f2_b):
        p.data = p.data + 0.3 * np.random.default_rng(13).standard_normal(p.shape)
    x = Tensor(np.random.default_rng(14).standard_normal((2, 8, 32)))
    c = np.random.default_rng(15).standard_normal((2, 3))
    errs = gc.check_gradients(lambda: gc.sum(gc.mul(attn.fusion_weights(x), c)),
                              [attn.f1_w, attn.f1_b, attn.f2_w, attn.f2_b])
    assert max(errs.values()) < 1e-4


# --- encoder ------------------------------------------------------------------------

def test_simplex_invariants():
    m = HktModel(small_cfg(), seed=5)
    m.blocks[0].attn.gamma.data = np.array([0.3, -1.2, 2.0])
    traces = []
    m.eval()
    m.forward(np.random.default_rng(16).integers(0, 17, (3, 16)), traces)
    lam, alpha = traces[0]["lam"].data, traces[0]["alpha"].data
    assert abs(lam.sum() - 1) < 1e-12 and lam.min() >= 0
    np.testing.assert_allclose(alpha.sum(axis=-1), 1.0, atol=1e-12)
    assert alpha.min() >= 0


def test_identical_tokens_identical_positions():
    # single level, pure attention: no padding-dependent conv path
    m = HktModel(small_cfg(n_levels=1, beta_fixed=1.0), seed=6)
    m.eval()
    out = m.position_logits(m.embed_tokens(np.full((1, 16), 5))).data[0]
    assert np.abs(out - out[0]).max() < 1e-9


def test_forward_deterministic_in_eval():
    m = HktModel(small_cfg(dropout=0.1), seed=7)
    m.eval()
    tok = np.random.default_rng(17).integers(0, 17, (2, 16))
    a, b = m(tok).data, m(tok).data
    assert a.shape == (2, 10) and a.tobytes() == b.tobytes()


def test_out_of_vocab():
    m = HktModel(small_cfg())
    with pytest.raises(IndexError):
        m(np.full((1, 16), 17))


def test_parameter_count_desk_model():
    m = HktModel(ModelConfig())
    assert len(m.parameters()) == 83
    assert m.n_parameters() == 159278


def test_scale_separation_positive():
    m = HktModel(ModelConfig(d_model=32, n_heads=2, n_levels=2, n_layers=1, max_seq_len=64), seed=8)
    tokens = np.random.default_rng(18).integers(0, 17, (1, 64))
    res = scale_separation(m, tokens)
    assert res.residual > 1e-6
    assert res.control_residual < 1e-9


# --- checkpoints ------------------------------------------------------------------------

def test_checkpoint_roundtrip(tmp_path):
    m = HktModel(small_cfg(), seed=9)
    path = tmp_path / "m.ckpt"
    save_checkpoint(path, m, extra={"epoch": 3})
    m2, config = load_checkpoint(path)
    assert config["epoch"] == 3
    for (n1, p1), (n2, p2) in zip(m.named_parameters(), m2.named_parameters()):
        assert n1 == n2 and p1.data.tobytes() == p2.data.tobytes()
    save_checkpoint(tmp_path / "again.ckpt", m2, extra={"epoch": 3})
    assert path.read_bytes() == (tmp_path / "again.ckpt").read_bytes()
    tok = np.random.default_rng(19).integers(0, 17, (2, 16))
    assert m(tok).data.tobytes() == m2(tok).data.tobytes()


def test_checkpoint_header_layout():
    blob = encode_checkpoint({"b": 1, "a": 2}, {"w": np.arange(6.0).reshape(2, 3)})
    assert blob[:4] == b"HKT1"
    assert b'{"a":2,"b":1}' in blob
    cfg, tensors = decode_checkpoint(blob)
    np.testing.assert_array_equal(tensors["w"], np.arange(6.0).reshape(2, 3))


@pytest.mark.parametrize("mutate", [lambda b: b"XXXX" + b[4:], lambda b: b[:-3], lambda b: b + b"\0"])
def test_checkpoint_corruption(mutate):
    blob = encode_checkpoint({"a": 1}, {"w": np.ones((2, 2))})
    with pytest.raises(CheckpointError):
        decode_checkpoint(mutate(blob))


def test_prng_initialisation_reproducible():
    a, b = HktModel(small_cfg(), seed=11), HktModel(small_cfg(), seed=11)
    c = HktModel(small_cfg(), seed=12)
    assert all(x.data.tobytes() == y.data.tobytes() for x, y in zip(a.parameters(), b.parameters()))
    assert any(x.data.tobytes() != y.data.tobytes() for x, y in zip(a.parameters(), c.parameters()))
