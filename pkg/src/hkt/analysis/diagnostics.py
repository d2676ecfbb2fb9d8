"""Numeric diagnostics: scale separation of fused scores, downsampler operator norms,
kernel Lipschitz estimates and the future-leakage bound they imply."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .. import gradcore as gc
from ..model import HktModel
from ..model.layers import Downsampler
from .decomposition import symmetrised_form
from .probe import collect_traces, head_matrices


@dataclass
class ScaleSeparation:
    residual: float          # relative residual of fused scores outside {X M X^T}
    control_residual: float  # same projection applied to the level-0 term alone
    lam: list


def bilinear_residual(s, x) -> float:
    """min over M of ||S - X M X^T||_F / ||S||_F, via the projector onto col(X)."""
    s = np.asarray(s, dtype=np.float64)
    x = np.asarray(x, dtype=np.float64)
    q, _ = np.linalg.qr(x)
    p = q @ q.T
    fit = p @ s @ p
    norm = float(np.linalg.norm(s))
    return float(np.linalg.norm(s - fit)) / norm if norm > 0 else 0.0


def scale_separation(model: HktModel, tokens, layer: int = 0, head: int = 0,
                     sample: int = 0) -> ScaleSeparation:
    """How far the fused score of one head lies from every level-0 bilinear form."""
    tokens = np.asarray(tokens)
    if tokens.ndim == 1:
        tokens = tokens[None]
    _, traces = collect_traces(model, tokens)
    tr = traces[layer]
    x0 = tr["stack"][0][sample]
    if x0.shape[0] <= x0.shape[1]:
        raise ValueError(f"need T > d_0 for a non-trivial test (T={x0.shape[0]}, d_0={x0.shape[1]})")
    s_hier = tr["s_hier"][sample, head]
    s0 = tr["scores"][0][sample, head] * tr["lam"][0]
    return ScaleSeparation(bilinear_residual(s_hier, x0), bilinear_residual(s0, x0),
                           [float(v) for v in tr["lam"]])


def _linear_part(down: Downsampler, x: gc.Tensor) -> gc.Tensor:
    y = gc.conv1d_causal_depthwise(x, gc.Tensor(down.dw.data), down._stride)
    return gc.linear(y, gc.Tensor(down.pw.data))


def downsampler_operator_norm(down: Downsampler, T: int = 64, iters: int = 200,
                              seed: int = 0, tol: float = 1e-10) -> float:
    """Largest singular value of the strided depthwise + pointwise linear map on length-T inputs.

    Power iteration on A^T A; the adjoint comes from the reverse pass.
    """
    rng = np.random.default_rng(seed)
    d_in = down.dw.shape[0]
    v = rng.standard_normal((1, T, d_in))
    v /= np.linalg.norm(v)
    sigma = 0.0
    for _ in range(iters):
        x = gc.Tensor(v, requires_grad=True)
        with gc.graph_scope():
            y = _linear_part(down, x)
            gc.backward(gc.sum(gc.mul(y, y.data)))
        w = x.grad  # A^T A v
        nrm = float(np.linalg.norm(w))
        if nrm == 0.0:
            return 0.0
        new_sigma = math.sqrt(nrm)
        v = w / nrm
        if abs(new_sigma - sigma) <= tol * new_sigma:
            sigma = new_sigma
            break
        sigma = new_sigma
    return sigma


@dataclass
class LipschitzConstants:
    layer: int
    op_norms: list       # per level; level 0 has no downsampler and counts as 1
    kernel_lipschitz: list
    lam: list
    c_beta: float
    c_l: float


def kernel_lipschitz(points, m) -> float:
    """max over probe pairs of ||d/dx exp(x^T M y)|| = exp(x^T M y) ||M y||."""
    x = np.asarray(points, dtype=np.float64)
    k = np.exp(np.clip(x @ m @ x.T, None, 700.0))
    my = np.linalg.norm(x @ m.T, axis=1)
    return float(np.max(k * my[None, :]))


def lipschitz_constants(model: HktModel, tokens, layer: int = 0, head: int = 0,
                        T_norm: int = 64) -> LipschitzConstants:
    """C_beta = sqrt(sum_l lam_l ||W_down^(l)||^2), C_L = sqrt(sum_l lam_l L_l^2)."""
    tokens = np.asarray(tokens)
    if tokens.ndim == 1:
        tokens = tokens[None]
    _, traces = collect_traces(model, tokens)
    tr = traces[layer]
    attn = model.blocks[layer].attn
    lam = [float(v) for v in tr["lam"]]
    norms = [1.0] + [downsampler_operator_norm(d, T=T_norm) for d in attn.down[: len(lam) - 1]]
    lips = []
    for l, x in enumerate(tr["stack"]):
        q, k = head_matrices(model, layer, l)
        lips.append(kernel_lipschitz(x.reshape(-1, x.shape[-1]), symmetrised_form(q[head], k[head])))
    c_beta = math.sqrt(sum(w * n * n for w, n in zip(lam, norms)))
    c_l = math.sqrt(sum(w * v * v for w, v in zip(lam, lips)))
    return LipschitzConstants(layer, norms, lips, lam, c_beta, c_l)


def causality_bound(c_phi: float, stride: int, n_levels: int) -> float:
    """C^L / (s^L - C^L); infinite when C >= s."""
    a = c_phi ** n_levels
    b = stride ** n_levels
    return a / (b - a) if a < b else math.inf


def max_downsampler_norm(model: HktModel, T: int = 64) -> float:
    norms = [downsampler_operator_norm(d, T=T) for b in model.blocks for d in b.attn.down]
    return max(norms) if norms else 0.0
