"""Hierarchical attention layer: downsampling cascade, per-level scores, score fusion,
hybrid attention/convolution heads and input-dependent output fusion.

Activations are batched as (B, T, d); per-head tensors as (B, H, T, .).
"""

from __future__ import annotations

import math
from typing import Iterator

import numpy as np

from .. import gradcore as gc
from ..gradcore import ConfigError, Tensor
from ..numkit import Prng
from .config import ModelConfig


class Module:
    """Parameter container; parameters are requires_grad Tensors held as attributes."""

    training: bool = False

    def named_parameters(self, prefix: str = "") -> Iterator[tuple[str, Tensor]]:
        for key, val in vars(self).items():
            if key.startswith("_"):
                continue
            name = f"{prefix}{key}"
            if isinstance(val, Tensor) and val.requires_grad:
                yield name, val
            elif isinstance(val, Module):
                yield from val.named_parameters(name + ".")
            elif isinstance(val, list):
                for i, item in enumerate(val):
                    if isinstance(item, Module):
                        yield from item.named_parameters(f"{name}.{i}.")
                    elif isinstance(item, Tensor) and item.requires_grad:
                        yield f"{name}.{i}", item

    def parameters(self) -> list[Tensor]:
        return [p for _, p in self.named_parameters()]

    def modules(self) -> Iterator["Module"]:
        yield self
        for key, val in vars(self).items():
            if key.startswith("_"):
                continue
            if isinstance(val, Module):
                yield from val.modules()
            elif isinstance(val, list):
                for item in val:
                    if isinstance(item, Module):
                        yield from item.modules()

    def train(self, mode: bool = True):
        for m in self.modules():
            m.training = mode
        return self

    def eval(self):
        return self.train(False)


def _param(rng: Prng, shape, fan_in: int | None) -> Tensor:
    """Normal(0, 1/fan_in) weights; zeros when fan_in is None."""
    if fan_in is None:
        return Tensor(np.zeros(shape), requires_grad=True)
    return Tensor(rng.normal_array(shape, scale=1.0 / math.sqrt(fan_in)), requires_grad=True)


def _ones(shape) -> Tensor:
    return Tensor(np.ones(shape), requires_grad=True)


def upsample_index(T: int, level: int, stride: int, T_level: int) -> np.ndarray:
    """Row of the level sequence feeding each full-resolution position.

    Position i reads row floor(i / s^l); trailing positions beyond the last
    complete block (T not divisible by s^l) reuse the last row.
    """
    return np.minimum(np.arange(T) // stride ** level, T_level - 1)


def causal_mask(T: int) -> np.ndarray:
    """True strictly above the diagonal (key j > query i)."""
    return np.triu(np.ones((T, T), dtype=bool), k=1)


# --- downsampling -------------------------------------------------------------

class Downsampler(Module):
    """Depthwise causal strided conv, pointwise projection, LayerNorm, GELU."""

    def __init__(self, d_in: int, d_out: int, kernel: int, stride: int, rng: Prng, eps: float):
        self.dw = _param(rng, (d_in, kernel), kernel)
        self.pw = _param(rng, (d_out, d_in), d_in)
        self.pb = _param(rng, (d_out,), None)
        self.ln_g = _ones((d_out,))
        self.ln_b = _param(rng, (d_out,), None)
        self._stride = stride
        self._eps = eps

    def __call__(self, x: Tensor) -> Tensor:
        y = gc.conv1d_causal_depthwise(x, self.dw, self._stride)
        y = gc.linear(y, self.pw, self.pb)
        return gc.gelu(gc.layernorm(y, self.ln_g, self.ln_b, eps=self._eps))


def downsample_cascade(x0: Tensor, downsamplers: list[Downsampler], n_levels: int,
                       stride: int) -> list[Tensor]:
    """[X^(0), ..., X^(L-1)] with X^(l) = phi_l(X^(l-1)); lengths floor(T / s^l)."""
    T = x0.shape[-2]
    if n_levels > 1 and T < stride ** (n_levels - 1):
        raise ConfigError(f"sequence length {T} too short for {n_levels} levels at stride {stride}")
    stack = [x0]
    for phi in downsamplers[: n_levels - 1]:
        stack.append(phi(stack[-1]))
    return stack


# --- scoring --------------------------------------------------------------------

def level_scores(stack: list[Tensor], wq: list[Tensor], wk: list[Tensor]) -> list[Tensor]:
    """Per-level scaled bilinear scores <W_Q x_i, W_K x_j> / sqrt(d_k^(l)), shape (B, H, T_l, T_l).

    Query/key weights are (H, d_k^(l), d_l). No masking is applied here.
    """
    out = []
    for x, q_w, k_w in zip(stack, wq, wk):
        H, dk, dl = q_w.shape
        q = split_heads(gc.linear(x, gc.reshape(q_w, (H * dk, dl))), H)
        k = split_heads(gc.linear(x, gc.reshape(k_w, (H * dk, dl))), H)
        s = gc.matmul(q, gc.swapaxes(k, -1, -2))
        out.append(gc.mul(s, 1.0 / math.sqrt(q_w.shape[-2])))
    return out


def fuse_scores(scores: list[Tensor], lam, T: int, stride: int) -> Tensor:
    """S_hier[i, j] = sum_l lam_l * S^(l)[floor(i/s^l), floor(j/s^l)] on raw scores.

    Causal masking is applied afterwards by the caller: every coarse entry a
    per-level mask would remove lies at j > i, which the full-resolution mask
    already removes, so masking once after fusion gives the same softmax.
    """
    lam_t = gc.as_tensor(lam)
    total = None
    for l, s in enumerate(scores):
        term = gc.mul(s, gc.getitem(lam_t, l))
        if l > 0:
            f = stride ** l
            term = gc.block_upsample(gc.block_upsample(term, -2, f, T), -1, f, T)
        total = term if total is None else gc.add(total, term)
    return total


def _upsample_2d(s: np.ndarray, factor: int, T: int) -> np.ndarray:
    """Block-repeat the last two axes of ``s`` to (T, T) with tail reuse."""
    n = s.shape[-1]
    if factor == 1:
        return s
    if n * factor == T:
        lead = s.shape[:-2]
        view = np.broadcast_to(s[..., :, None, :, None], lead + (n, factor, n, factor))
        return view.reshape(lead + (T, T))
    idx = np.minimum(np.arange(T) // factor, n - 1)
    return s[..., idx[:, None], idx[None, :]]


def _blocksum(g: np.ndarray, axis: int, factor: int, n: int) -> np.ndarray:
    """Sum consecutive blocks of ``factor`` along ``axis``; entries past n*factor join the last block."""
    gm = np.moveaxis(g, axis, -1)
    body = gm[..., : n * factor].reshape(gm.shape[:-1] + (n, factor))
    acc = body[..., 0].copy()
    for k in range(1, factor):
        acc += body[..., k]
    if gm.shape[-1] > n * factor:
        acc[..., n - 1] += gm[..., n * factor:].sum(axis=-1)
    return np.moveaxis(acc, -1, axis)


def _downsum_2d(g: np.ndarray, factor: int, n: int) -> np.ndarray:
    """Adjoint of ``_upsample_2d``."""
    if factor == 1:
        return g
    return _blocksum(_blocksum(g, -1, factor, n), -2, factor, n)


def hierarchical_probs(scores: list[Tensor], lam, T: int, stride: int,
                       mask: np.ndarray | None = None) -> tuple[Tensor, np.ndarray]:
    """Row softmax of the fused score ``fuse_scores(scores, lam)`` as one primitive.

    Equivalent to ``softmax_rows(fuse_scores(...), mask)`` but avoids the
    full-resolution intermediates of the composed form. Returns the
    probabilities and the (non-differentiable) fused score array.
    """
    lam = gc.as_tensor(lam)
    lam_v = lam.data
    s_hier = None
    for l, sc in enumerate(scores):
        term = _upsample_2d(sc.data, stride ** l, T) * lam_v[l]
        s_hier = term if s_hier is None else s_hier + term
    if mask is not None:
        mask = np.asarray(mask, dtype=bool)
        if mask.all(axis=-1).any():
            raise gc.DegenerateRowError("softmax row is fully masked")
        probs = np.where(mask, -np.inf, s_hier)
    else:
        probs = s_hier.copy()
    probs -= probs.max(axis=-1, keepdims=True)
    np.exp(probs, out=probs)
    probs /= probs.sum(axis=-1, keepdims=True)

    def bw(g):
        inner = np.matmul(g[..., None, :], probs[..., :, None])[..., 0]
        ds = g - inner
        ds *= probs
        grads = []
        glam = np.zeros_like(lam_v)
        for l, sc in enumerate(scores):
            coarse = np.ascontiguousarray(_downsum_2d(ds, stride ** l, sc.shape[-1]))
            glam[l] = np.vdot(coarse.ravel(), np.ascontiguousarray(sc.data).ravel())
            grads.append(coarse * lam_v[l] if sc.requires_grad else None)
        return (*grads, glam if lam.requires_grad else None)

    out = gc.make_result(probs, "hierarchical_softmax", (*scores, lam), bw)
    return out, s_hier


# --- hybrid heads and fusion ---------------------------------------------------

def split_heads(v: Tensor, n_heads: int) -> Tensor:
    B, T, d = v.shape
    return gc.transpose(gc.reshape(v, (B, T, n_heads, d // n_heads)), (0, 2, 1, 3))


def merge_heads(v: Tensor) -> Tensor:
    B, H, T, dh = v.shape
    return gc.reshape(gc.transpose(v, (0, 2, 1, 3)), (B, T, H * dh))


def hybrid_head_forward(values_up: Tensor, probs: Tensor, conv_w: Tensor, beta, n_heads: int,
                        parts: dict | None = None, attn: Tensor | None = None) -> Tensor:
    """Blend attention and causal depthwise convolution per head on upsampled level values.

    ``values_up`` is (B, T, d), ``probs`` (B, H, T, T), ``beta`` (H,). Head h owns
    channels h*d/H .. (h+1)*d/H - 1 of both branches. A precomputed attention
    branch may be passed as ``attn``.
    """
    d = values_up.shape[-1]
    if attn is None:
        attn = merge_heads(gc.matmul(probs, split_heads(values_up, n_heads)))
    conv = gc.conv1d_causal_depthwise(values_up, conv_w, 1)
    head_of_channel = np.arange(d) // (d // n_heads)
    bc = gc.take(gc.as_tensor(beta), head_of_channel, 0)
    if parts is not None:
        parts["attn"], parts["conv"] = attn, conv
    return gc.add(gc.mul(attn, bc), gc.mul(conv, gc.sub(1.0, bc)))


def dynamic_fusion(level_outputs: list[Tensor], alpha: Tensor) -> Tensor:
    """sum_l alpha_l * O^(l); ``alpha`` is (B, L) or (B, T, L) for per-position weights."""
    if alpha.ndim == 2:
        alpha = gc.reshape(alpha, (alpha.shape[0], 1, alpha.shape[1]))
    total = None
    for l, o in enumerate(level_outputs):
        term = gc.mul(o, gc.getitem(alpha, (Ellipsis, slice(l, l + 1))))
        total = term if total is None else gc.add(total, term)
    return total


class HierarchicalAttention(Module):
    def __init__(self, cfg: ModelConfig, rng: Prng):
        L, H, d, k = cfg.n_levels, cfg.n_heads, cfg.d_model, cfg.conv_kernel
        self._cfg = cfg
        self.down = [Downsampler(cfg.level_dim(l - 1), cfg.level_dim(l), k, cfg.stride, rng, cfg.ln_eps)
                     for l in range(1, L)]
        self.wq = [_param(rng, (H, cfg.level_key_dim(l), cfg.level_dim(l)), cfg.level_dim(l)) for l in range(L)]
        self.wk = [_param(rng, (H, cfg.level_key_dim(l), cfg.level_dim(l)), cfg.level_dim(l)) for l in range(L)]
        self.wv = [_param(rng, (d, cfg.level_dim(l)), cfg.level_dim(l)) for l in range(L)]
        self.wo = [_param(rng, (d, d), d) for _ in range(L)]
        self.conv = [_param(rng, (d, k), k) for _ in range(L)]
        self.gamma = _param(rng, (L,), None)
        self.gamma_tilde = _param(rng, (H, L), None)
        self.f1_w = _param(rng, (d, d), d)
        self.f1_b = _param(rng, (d,), None)
        self.f2_w = _param(rng, (L, d), d)
        self.f2_b = _param(rng, (L,), None)
        self._sabotage_mask = False

    # gates
    def level_weights(self):
        if self._cfg.lambda_fixed is not None:
            return Tensor(np.asarray(self._cfg.lambda_fixed))
        return gc.softmax_rows(self.gamma)

    def head_gates(self, level: int):
        if self._cfg.beta_fixed is not None:
            return Tensor(np.full(self._cfg.n_heads, float(self._cfg.beta_fixed)))
        return gc.sigmoid(gc.getitem(self.gamma_tilde, (slice(None), level)))

    def fusion_weights(self, x0: Tensor) -> Tensor:
        L = self._cfg.n_levels
        causal = self._cfg.causal
        if self._cfg.alpha_uniform or L == 1:
            shape = (x0.shape[0], x0.shape[1], L) if causal else (x0.shape[0], L)
            return Tensor(np.full(shape, 1.0 / L))
        m = gc.mean_over_time(x0, causal=causal)
        h = gc.gelu(gc.linear(m, self.f1_w, self.f1_b))
        return gc.softmax_rows(gc.linear(h, self.f2_w, self.f2_b))

    def __call__(self, x0: Tensor, trace: dict | None = None) -> Tensor:
        cfg = self._cfg
        T = x0.shape[-2]
        stack = downsample_cascade(x0, self.down, cfg.n_levels, cfg.stride)
        scores = level_scores(stack, self.wq, self.wk)
        lam = self.level_weights()
        mask = causal_mask(T) if (cfg.causal and not self._sabotage_mask) else None
        probs, s_hier = hierarchical_probs(scores, lam, T, cfg.stride, mask)
        alpha = self.fusion_weights(x0)
        values = []
        for l, x in enumerate(stack):
            v = gc.linear(x, self.wv[l])
            if l > 0:
                v = gc.block_upsample(v, -2, cfg.stride ** l, T)
            values.append(v)
        # one attention product for all levels: heads share P across levels
        dh = cfg.head_dim
        attn_all = gc.matmul(probs, gc.concat([split_heads(v, cfg.n_heads) for v in values], axis=-1))
        outs, betas = [], []
        for l, v in enumerate(values):
            beta = self.head_gates(l)
            betas.append(beta)
            attn = merge_heads(gc.getitem(attn_all, (Ellipsis, slice(l * dh, (l + 1) * dh))))
            a = hybrid_head_forward(v, probs, self.conv[l], beta, cfg.n_heads, attn=attn)
            outs.append(gc.linear(a, self.wo[l]))
        out = dynamic_fusion(outs, alpha)
        if trace is not None:
            trace.update(stack=stack, scores=scores, lam=lam, s_hier=s_hier, probs=probs,
                         alpha=alpha, beta=betas, level_outputs=outs)
        return out


class EncoderBlock(Module):
    """Pre-LayerNorm block: x + Attn(LN(x)), then x + FFN(LN(x))."""

    def __init__(self, cfg: ModelConfig, rng: Prng):
        d = cfg.d_model
        self._cfg = cfg
        self.ln1_g = _ones((d,))
        self.ln1_b = _param(rng, (d,), None)
        self.attn = HierarchicalAttention(cfg, rng)
        self.ln2_g = _ones((d,))
        self.ln2_b = _param(rng, (d,), None)
        self.ffn_w1 = _param(rng, (cfg.ffn_mult * d, d), d)
        self.ffn_b1 = _param(rng, (cfg.ffn_mult * d,), None)
        self.ffn_w2 = _param(rng, (d, cfg.ffn_mult * d), cfg.ffn_mult * d)
        self.ffn_b2 = _param(rng, (d,), None)

    def __call__(self, x: Tensor, drop_rng=None, trace: dict | None = None) -> Tensor:
        cfg = self._cfg
        h = gc.layernorm(x, self.ln1_g, self.ln1_b, eps=cfg.ln_eps)
        a = self.attn(h, trace=trace)
        x = gc.add(x, gc.dropout(a, cfg.dropout, drop_rng, self.training))
        h = gc.layernorm(x, self.ln2_g, self.ln2_b, eps=cfg.ln_eps)
        f = gc.linear(gc.gelu(gc.linear(h, self.ffn_w1, self.ffn_b1)), self.ffn_w2, self.ffn_b2)
        return gc.add(x, gc.dropout(f, cfg.dropout, drop_rng, self.training))
