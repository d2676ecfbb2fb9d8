"""Inference-mode traces of a model on a probe batch."""

from __future__ import annotations

import numpy as np

from .. import gradcore as gc
from ..model import HktModel


def collect_traces(model: HktModel, tokens) -> tuple[np.ndarray, list[dict]]:
    """Run ``model`` in eval mode without recording; return (logits, per-layer traces).

    Trace tensors are converted to arrays: ``stack`` (list of (B, T_l, d_l)),
    ``scores`` (list of (B, H, T_l, T_l)), ``lam`` (L,), ``alpha``, ``beta``, ``s_hier``, ``probs``.
    """
    was_training = model.training
    model.eval()
    traces: list[dict] = []
    try:
        with gc.no_grad():
            logits = model(np.asarray(tokens), traces=traces)
    finally:
        model.train(was_training)
    out = []
    for tr in traces:
        conv = {}
        for key, val in tr.items():
            if isinstance(val, list):
                conv[key] = [v.data if isinstance(v, gc.Tensor) else np.asarray(v) for v in val]
            elif isinstance(val, gc.Tensor):
                conv[key] = val.data
            else:
                conv[key] = np.asarray(val)
        out.append(conv)
    return logits.data, out


def head_matrices(model: HktModel, layer: int, level: int) -> tuple[np.ndarray, np.ndarray]:
    """Per-head query/key weights (H, d_k^(l), d_l) of one layer and level."""
    attn = model.blocks[layer].attn
    return attn.wq[level].data, attn.wk[level].data
