"""Finite-difference certificates for every primitive and the composed model."""

from __future__ import annotations

from typing import Callable

import numpy as np

from .. import gradcore as gc
from ..gradcore import Tensor
from ..model import HktModel, ModelConfig
from ..model.layers import causal_mask, hierarchical_probs

# each builder takes a generator and a shape variant (0, 1, 2) and returns (loss_fn, params)
Builder = Callable[[np.random.Generator, int], tuple[Callable[[], Tensor], list[Tensor]]]


def _t(rng, shape, positive=False):
    a = rng.standard_normal(shape)
    if positive:
        a = np.abs(a) + 0.5
    return Tensor(a, requires_grad=True)


def _weighted(out: Tensor, w: np.ndarray) -> Tensor:
    """Scalar sum(out * w) with a fixed random weighting."""
    return gc.sum(gc.mul(out, w))


_SHAPES = [(3, 4), (2, 3, 5), (4, 1, 6)]


def _unary(op, positive=False) -> Builder:
    def build(rng, k):
        x = _t(rng, _SHAPES[k], positive)
        w = rng.standard_normal(_SHAPES[k])
        return (lambda: _weighted(op(x), w)), [x]
    return build


def _binary(op, positive_b=False) -> Builder:
    def build(rng, k):
        shape = _SHAPES[k]
        a = _t(rng, shape)
        b = _t(rng, shape[-1:] if k == 1 else shape, positive_b)  # k=1 exercises broadcasting
        w = rng.standard_normal(shape)
        return (lambda: _weighted(op(a, b), w)), [a, b]
    return build


def _matmul(rng, k):
    m, n, p = [(2, 3, 4), (3, 5, 2), (4, 4, 4)][k]
    lead = [(), (2,), (3,)][k]
    a, b = _t(rng, lead + (m, n)), _t(rng, (n, p))
    w = rng.standard_normal(lead + (m, p))
    return (lambda: _weighted(gc.matmul(a, b), w)), [a, b]


def _linear(rng, k):
    lead, din, dout = [((3,), 4, 2), ((2, 3), 5, 3), ((4, 2), 3, 6)][k]
    x, wt, b = _t(rng, lead + (din,)), _t(rng, (dout, din)), _t(rng, (dout,))
    w = rng.standard_normal(lead + (dout,))
    return (lambda: _weighted(gc.linear(x, wt, b), w)), [x, wt, b]


def _softmax(rng, k):
    n = [3, 4, 6][k]
    s = _t(rng, (2, n, n))
    mask = causal_mask(n) if k > 0 else None
    w = rng.standard_normal((2, n, n))
    return (lambda: _weighted(gc.softmax_rows(s, mask), w)), [s]


def _cross_entropy(rng, k):
    B, C = [(3, 4), (5, 2), (2, 7)][k]
    x = _t(rng, (B, C))
    y = rng.integers(0, C, size=B)
    return (lambda: gc.cross_entropy_logits(x, y)), [x]


def _layernorm(rng, k):
    shape = _SHAPES[k]
    x, g, b = _t(rng, shape), _t(rng, shape[-1:]), _t(rng, shape[-1:])
    w = rng.standard_normal(shape)
    return (lambda: _weighted(gc.layernorm(x, g, b), w)), [x, g, b]


def _embedding(rng, k):
    V, d = [(5, 3), (7, 4), (3, 2)][k]
    table = _t(rng, (V, d))
    ids = rng.integers(0, V, size=(2, 6))
    w = rng.standard_normal((2, 6, d))
    return (lambda: _weighted(gc.embedding_lookup(table, ids), w)), [table]


def _conv(rng, k):
    T, C, ker, stride = [(7, 3, 3, 1), (9, 2, 3, 2), (8, 4, 2, 3)][k]
    x, wt = _t(rng, (2, T, C)), _t(rng, (C, ker))
    w = rng.standard_normal((2, T // stride, C))
    return (lambda: _weighted(gc.conv1d_causal_depthwise(x, wt, stride), w)), [x, wt]


def _mean_over_time(causal):
    def build(rng, k):
        shape = [(2, 5, 3), (4, 2), (1, 6, 2)][k]
        x = _t(rng, shape)
        out_shape = shape if causal else shape[:-2] + shape[-1:]
        w = rng.standard_normal(out_shape)
        return (lambda: _weighted(gc.mean_over_time(x, causal=causal), w)), [x]
    return build


def _take(rng, k):
    x = _t(rng, (4, 5))
    idx = [np.array([0, 2, 2]), np.array([4, 4, 1, 0]), np.array([3])][k]
    ax = [0, 1, 0][k]
    w = rng.standard_normal(np.take(x.data, idx, axis=ax).shape)
    return (lambda: _weighted(gc.take(x, idx, ax), w)), [x]


def _upsample(rng, k):
    n, factor, T = [(3, 2, 6), (3, 2, 7), (2, 4, 9)][k]
    x = _t(rng, (2, n, 3))
    w = rng.standard_normal((2, T, 3))
    return (lambda: _weighted(gc.block_upsample(x, 1, factor, T), w)), [x]


def _getitem(rng, k):
    x = _t(rng, (4, 5))
    idx = [(slice(1, 3), 2), (np.array([0, 0, 3]),), (Ellipsis, slice(0, 5, 2))][k]
    w = rng.standard_normal(x.data[idx].shape)
    return (lambda: _weighted(gc.getitem(x, idx), w)), [x]


def _concat(rng, k):
    a, b = _t(rng, (2, 3)), _t(rng, (2, [1, 4, 2][k]))
    w = rng.standard_normal((2, 3 + b.shape[1]))
    return (lambda: _weighted(gc.concat([a, b], axis=1), w)), [a, b]


def _reshape_ops(rng, k):
    x = _t(rng, (2, 3, 4))
    w = rng.standard_normal((4, 3, 2))
    if k == 0:
        return (lambda: _weighted(gc.reshape(x, (4, 3, 2)), w)), [x]
    if k == 1:
        return (lambda: _weighted(gc.transpose(x, (2, 1, 0)), w)), [x]
    return (lambda: _weighted(gc.swapaxes(x, 0, 2), w)), [x]


def _reductions(rng, k):
    x = _t(rng, (3, 4))
    if k == 0:
        return (lambda: gc.sum(gc.square(x))), [x]
    if k == 1:
        w = rng.standard_normal(4)
        return (lambda: _weighted(gc.mean(x, axis=0), w)), [x]
    w = rng.standard_normal((3, 1))
    return (lambda: _weighted(gc.sum(x, axis=1, keepdims=True), w)), [x]


def _hier_probs(rng, k):
    T, s, L = [(4, 2, 2), (8, 2, 3), (7, 3, 2)][k]
    scores = [_t(rng, (2, 1, T // s ** l, T // s ** l)) for l in range(L)]
    lam = Tensor(np.abs(rng.standard_normal(L)) + 0.2, requires_grad=True)
    mask = causal_mask(T) if k != 1 else None
    w = rng.standard_normal((2, 1, T, T))
    return (lambda: _weighted(hierarchical_probs(scores, lam, T, s, mask)[0], w)), scores + [lam]


PRIMITIVES: dict[str, Builder] = {
    "add": _binary(gc.add), "sub": _binary(gc.sub), "mul": _binary(gc.mul),
    "div": _binary(gc.div, positive_b=True),
    "exp": _unary(gc.exp), "log": _unary(gc.log, positive=True), "sigmoid": _unary(gc.sigmoid),
    "gelu": _unary(gc.gelu), "square": _unary(gc.square),
    "log_softmax": _unary(gc.log_softmax), "matmul": _matmul, "linear": _linear,
    "softmax_rows": _softmax, "cross_entropy_logits": _cross_entropy, "layernorm": _layernorm,
    "embedding_lookup": _embedding, "conv1d_causal_depthwise": _conv,
    "mean_over_time": _mean_over_time(False), "causal_mean": _mean_over_time(True),
    "take": _take, "block_upsample": _upsample, "getitem": _getitem, "concat": _concat,
    "reshape/transpose": _reshape_ops, "sum/mean": _reductions,
    "hierarchical_probs": _hier_probs,
}


def primitive_errors(seed: int = 0) -> dict[str, float]:
    """Worst relative error over the three shape variants of each primitive."""
    rng = np.random.default_rng(seed)
    out = {}
    for name, build in PRIMITIVES.items():
        worst = 0.0
        for k in range(3):
            fn, params = build(rng, k)
            errs = gc.check_gradients(fn, params, eps=1e-6)
            worst = max(worst, max(errs.values()))
        out[name] = worst
    return out


def model_errors(cfg: ModelConfig | None = None, seed: int = 0, T: int = 32, batch: int = 2,
                 entries: int = 4, perturb: float = 0.2) -> dict[str, float]:
    """Relative error per parameter tensor of the full model's cross-entropy loss.

    Parameters are perturbed away from their (partly zero) initial values so
    every gate and bias carries a generic gradient; ``entries`` coordinates are
    probed per tensor.
    """
    cfg = cfg if cfg is not None else ModelConfig(max_seq_len=max(T, 128))
    model = HktModel(cfg, seed=seed)
    rng = np.random.default_rng(seed)
    for p in model.parameters():
        p.data = p.data + perturb * rng.standard_normal(p.shape)
    tokens = rng.integers(0, cfg.vocab_size, size=(batch, T))
    labels = rng.integers(0, cfg.n_classes, size=batch)
    names, params = zip(*model.named_parameters())
    errs = gc.check_gradients(lambda: gc.cross_entropy_logits(model(tokens), labels), list(params),
                              eps=1e-5, max_entries=entries, rng=rng)
    return {names[i]: e for i, e in errs.items()}
