"""Independent numpy forward passes used as reduction oracles.

These re-derive the single-level encoder with plain loops and library
calls (no gradcore), so agreement certifies the reductions rather than the
shared code path.
"""

from __future__ import annotations

import numpy as np
from scipy.special import erf

from ..model import HktModel


def _ln(x, g, b, eps):
    mu = x.mean(-1, keepdims=True)
    var = ((x - mu) ** 2).mean(-1, keepdims=True)
    return (x - mu) / np.sqrt(var + eps) * g + b


def _gelu(x):
    return 0.5 * x * (1.0 + erf(x / np.sqrt(2.0)))


def flat_mha(h: np.ndarray, wq: np.ndarray, wk: np.ndarray, wv: np.ndarray, wo: np.ndarray,
             causal: bool) -> np.ndarray:
    """Standard multi-head self-attention on one sequence h (T, d).

    wq, wk are (H, d_k, d); value head j owns channels j*d/H .. (j+1)*d/H - 1.
    """
    T, d = h.shape
    H, dk, _ = wq.shape
    dh = d // H
    v = h @ wv.T
    out = np.zeros((T, d))
    for j in range(H):
        q = h @ wq[j].T
        k = h @ wk[j].T
        s = q @ k.T / np.sqrt(dk)
        if causal:
            s = s + np.where(np.tri(T, dtype=bool), 0.0, -np.inf)
        p = np.exp(s - s.max(axis=1, keepdims=True))
        p /= p.sum(axis=1, keepdims=True)
        out[:, j * dh:(j + 1) * dh] = p @ v[:, j * dh:(j + 1) * dh]
    return out @ wo.T


def causal_conv(h: np.ndarray, wv: np.ndarray, conv: np.ndarray, wo: np.ndarray) -> np.ndarray:
    """Depthwise causal convolution of the values: y[t, c] = sum_j conv[c, j] v[t - j, c]."""
    v = h @ wv.T
    T, d = v.shape
    y = np.zeros_like(v)
    for t in range(T):
        for j in range(conv.shape[1]):
            if t - j >= 0:
                y[t] += conv[:, j] * v[t - j]
    return y @ wo.T


def single_level_forward(model: HktModel, tokens: np.ndarray, mixer: str,
                         transpose_scores: bool = False) -> np.ndarray:
    """Pooled logits (B, C) of a one-level model whose heads are pure attention
    (``mixer="mha"``) or pure convolution (``mixer="conv"``).

    ``transpose_scores`` swaps query and key roles; it is a negative control.
    """
    cfg = model.cfg
    p = {k: v.data for k, v in model.named_parameters()}
    out = []
    for seq in np.atleast_2d(tokens):
        x = p["embed"][seq]
        for i in range(cfg.n_layers):
            pre = f"blocks.{i}."
            h = _ln(x, p[pre + "ln1_g"], p[pre + "ln1_b"], cfg.ln_eps)
            a = pre + "attn."
            if mixer == "mha":
                wq, wk = p[a + "wq.0"], p[a + "wk.0"]
                if transpose_scores:
                    wq, wk = wk, wq
                mix = flat_mha(h, wq, wk, p[a + "wv.0"], p[a + "wo.0"], cfg.causal)
            elif mixer == "conv":
                mix = causal_conv(h, p[a + "wv.0"], p[a + "conv.0"], p[a + "wo.0"])
            else:
                raise ValueError(f"unknown mixer {mixer!r}")
            x = x + mix
            h = _ln(x, p[pre + "ln2_g"], p[pre + "ln2_b"], cfg.ln_eps)
            f = _gelu(h @ p[pre + "ffn_w1"].T + p[pre + "ffn_b1"]) @ p[pre + "ffn_w2"].T + p[pre + "ffn_b2"]
            x = x + f
        z = _ln(x, p["lnf_g"], p["lnf_b"], cfg.ln_eps)
        logits = z @ p["cls_w"].T + p["cls_b"]
        out.append(logits.mean(axis=0))
    return np.stack(out)
