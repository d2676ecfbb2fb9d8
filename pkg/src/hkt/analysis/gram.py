"""Gram matrices of the symmetrised exponential kernels and their low-rank linearisation."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..model import HktModel
from ..model.layers import upsample_index
from ..numkit import eigh_symmetric
from .decomposition import symmetrised_form
from .probe import collect_traces, head_matrices

_EXP_LIMIT = 700.0


def project_psd(m) -> tuple[np.ndarray, int]:
    """Nearest PSD matrix in Frobenius norm (negative eigenvalues clipped to 0)."""
    eig = eigh_symmetric(m)
    w = eig.eigenvalues
    clipped = int((w < 0).sum())
    v = eig.eigenvectors
    p = (v * np.clip(w, 0.0, None)) @ v.T
    return 0.5 * (p + p.T), clipped


def numeric_rank(sym, rel_tol: float = 1e-8) -> int:
    w = eigh_symmetric(sym).eigenvalues
    top = float(np.max(np.abs(w))) if w.size else 0.0
    return int((w > rel_tol * top).sum()) if top > 0 else 0


@dataclass
class GramReport:
    k_hier: np.ndarray
    k_levels: list[np.ndarray]
    min_eigenvalues: list[float]
    min_eigenvalue_hier: float
    frob_hier: float
    linear_rank: int
    rank_bound: int
    input_scales: list[float] = field(default_factory=list)
    clipped_eigenvalues: list[int] = field(default_factory=list)

    @property
    def relative_min_eigenvalue(self) -> float:
        return self.min_eigenvalue_hier / self.frob_hier if self.frob_hier > 0 else 0.0


def gram_factorisation(points: list, wq: list, wk: list, lam, psd: bool = True) -> GramReport:
    """K^(l)_ij = exp(x_i^T M^(l) x_j) on level-l points and K_hier = sum_l lam_l K^(l).

    ``points[l]`` is (N, d_l): row i is the level-l representation feeding
    sample i. ``wq[l]``/``wk[l]`` are single-head (d_k^(l), d_l) projections; M^(l)
    is their symmetrised form, projected to the PSD cone when ``psd``. If an
    exponent would overflow, that level's points are scaled down and the
    scale is recorded. The linearised check uses features [W_Q x, W_K x].
    """
    lam = np.asarray(lam, dtype=np.float64)
    n = np.asarray(points[0]).shape[0]
    k_levels, mins, scales, clipped = [], [], [], []
    lin = np.zeros((n, n))
    bound = 0
    for l, x in enumerate(points):
        x = np.asarray(x, dtype=np.float64)
        m = symmetrised_form(wq[l], wk[l])
        c = 0
        if psd:
            m, c = project_psd(m)
        expo = x @ m @ x.T
        peak = float(np.max(np.abs(expo))) if expo.size else 0.0
        scale = 1.0
        if peak > _EXP_LIMIT:
            scale = float(np.sqrt(_EXP_LIMIT / peak))
            expo = expo * scale * scale
        k = np.exp(0.5 * (expo + expo.T))
        k_levels.append(k)
        mins.append(float(eigh_symmetric(k).eigenvalues[0]))
        scales.append(scale)
        clipped.append(c)
        phi = np.concatenate([x @ wq[l].T, x @ wk[l].T], axis=1)
        lin += lam[l] * (phi @ phi.T)
        bound += min(n, phi.shape[1])
    k_hier = sum(w * k for w, k in zip(lam, k_levels))
    return GramReport(k_hier, k_levels, mins, float(eigh_symmetric(k_hier).eigenvalues[0]),
                      float(np.linalg.norm(k_hier)), numeric_rank(lin), bound, scales, clipped)


def model_gram(model: HktModel, tokens, n: int = 20, layer: int = 0, head: int = 0,
               psd: bool = True) -> GramReport:
    """Gram study over the first ``n`` positions of one sequence.

    Position i reads level-l row floor(i / s^l), so positions sharing a coarse
    block share that level's representation.
    """
    tokens = np.asarray(tokens)
    if tokens.ndim == 1:
        tokens = tokens[None]
    _, traces = collect_traces(model, tokens[:1])
    tr = traces[layer]
    cfg = model.cfg
    T = tokens.shape[1]
    if n > T:
        raise ValueError(f"n={n} exceeds sequence length {T}")
    points, wq, wk = [], [], []
    for l, x in enumerate(tr["stack"]):
        idx = upsample_index(T, l, cfg.stride, x.shape[1])[:n]
        points.append(x[0][idx])
        q, k = head_matrices(model, layer, l)
        wq.append(q[head])
        wk.append(k[head])
    return gram_factorisation(points, wq, wk, tr["lam"], psd=psd)
