"""Symmetric/antisymmetric split of query-key forms, directional energy and the PSD audit."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import numpy as np

from ..model import HktModel
from ..numkit import eigh_symmetric
from .probe import collect_traces, head_matrices


@dataclass
class SplitForm:
    m: np.ndarray
    m_s: np.ndarray
    m_a: np.ndarray


def split_form(m) -> SplitForm:
    """M = M_s + M_a with M_s = (M + M^T)/2 and M_a = (M - M^T)/2.

    M is first snapped to a grid of 2^-50 times its largest power-of-two
    magnitude (a relative change below 1e-15). On that grid every sum,
    difference and halving is exact, so M_s is exactly symmetric, M_a exactly
    antisymmetric, and M_s + M_a reproduces the stored M bit for bit.
    """
    m = np.asarray(m, dtype=np.float64)
    peak = float(np.max(np.abs(m))) if m.size else 0.0
    if peak > 0.0:
        grid = 2.0 ** (math.floor(math.log2(peak)) - 50)
        m = np.round(m / grid) * grid
    m_s = (m + m.T) / 2.0
    m_a = (m - m.T) / 2.0
    return SplitForm(m, m_s, m_a)


@dataclass
class EigenSummary:
    eigenvalues: np.ndarray
    fraction_negative: float
    fraction_negative_all: float
    min_eigenvalue: float
    n_nonzero: int


def eigen_summary(sym, rel_tol: float = 1e-10) -> EigenSummary:
    """Eigenvalues of a symmetric matrix with the share of negative ones.

    ``fraction_negative`` counts eigenvalues below -tol among those with
    |lambda| > tol (tol = rel_tol * max|lambda|); low-rank forms carry many exact
    zeros that are neither sign. ``fraction_negative_all`` divides by the full size.
    """
    w = eigh_symmetric(sym).eigenvalues
    scale = float(np.max(np.abs(w))) if w.size else 0.0
    tol = rel_tol * scale
    nonzero = np.abs(w) > tol
    neg = w < -tol
    n_nz = int(nonzero.sum())
    return EigenSummary(w, float(neg.sum()) / n_nz if n_nz else 0.0,
                        float(neg.sum()) / w.size if w.size else 0.0, float(w.min()), n_nz)


def symmetrised_form(wq, wk) -> np.ndarray:
    """(W_Q^T W_K + W_K^T W_Q) / (2 sqrt(d_k)) for one head."""
    dk = wq.shape[0]
    m = wq.T @ wk
    return (m + m.T) / (2.0 * math.sqrt(dk))


@dataclass
class DecompositionEntry:
    layer: int
    level: int
    frob_ms: float
    frob_ma: float
    ratio: float
    fraction_negative: float
    min_eigenvalue: float
    energy_scores: float
    energy_form: float
    identity_sym_dev: float
    identity_anti_dev: float
    head_ratios: list = field(default_factory=list)
    ms_eigenvalues: list = field(default_factory=list)

    def row(self) -> dict:
        d = asdict(self)
        d.pop("head_ratios")
        d.pop("ms_eigenvalues")
        return d


@dataclass
class DecompositionReport:
    entries: list[DecompositionEntry]

    def table(self) -> list[dict]:
        return [e.row() for e in self.entries]

    def max_identity_deviation(self) -> float:
        return max((max(e.identity_sym_dev, e.identity_anti_dev) for e in self.entries), default=0.0)


def directional_energy_scores(s) -> float:
    """sum over i != j of (S_ij - S_ji)^2 for the trailing two axes, summed over leading axes."""
    s = np.asarray(s, dtype=np.float64)
    d = s - np.swapaxes(s, -1, -2)
    return float(np.sum(d * d))  # diagonal terms are exactly zero


def directional_energy_form(x, m_a, dk: int) -> float:
    """(4 / d_k) * sum over i != j of (x_i^T M_a x_j)^2; ``x`` is (..., n, d)."""
    g = np.asarray(x) @ m_a @ np.swapaxes(np.asarray(x), -1, -2)
    diag = np.diagonal(g, axis1=-2, axis2=-1)
    return 4.0 / dk * float(np.sum(g * g) - np.sum(diag * diag))


def _identity_deviation(s, x, m_part, dk, sign) -> float:
    lhs = s + sign * np.swapaxes(s, -1, -2)
    rhs = 2.0 * (x @ m_part @ np.swapaxes(x, -1, -2)) / math.sqrt(dk)
    scale = max(float(np.max(np.abs(s))), 1e-300)
    return float(np.max(np.abs(lhs - rhs))) / scale


def decompose_scores(model: HktModel, probe_batch) -> DecompositionReport:
    """Per (layer, level): norms of M_s and M_a (head mean), eigen summary of the
    symmetrised form (eigenvalues pooled over heads), directional energy computed
    from the recorded scores and from the M_a form, and the worst deviation of the
    reciprocity/directionality identities on the probe."""
    _, traces = collect_traces(model, probe_batch)
    entries = []
    for li, tr in enumerate(traces):
        for l, (x, s) in enumerate(zip(tr["stack"], tr["scores"])):
            wq, wk = head_matrices(model, li, l)
            H, dk, _ = wq.shape
            ratios, frob_s, frob_a, eigs = [], [], [], []
            e_scores = e_form = dev_s = dev_a = 0.0
            for h in range(H):
                sf = split_form(wq[h].T @ wk[h])
                fs, fa = float(np.linalg.norm(sf.m_s)), float(np.linalg.norm(sf.m_a))
                frob_s.append(fs)
                frob_a.append(fa)
                ratios.append(fs / fa if fa > 0 else math.inf)
                eigs.append(eigen_summary(symmetrised_form(wq[h], wk[h])).eigenvalues)
                sh = s[:, h]
                e_scores += directional_energy_scores(sh)
                e_form += directional_energy_form(x, sf.m_a, dk)
                dev_s = max(dev_s, _identity_deviation(sh, x, sf.m_s, dk, +1.0))
                dev_a = max(dev_a, _identity_deviation(sh, x, sf.m_a, dk, -1.0))
            pooled = np.concatenate(eigs)
            tol = 1e-10 * float(np.max(np.abs(pooled)))
            nz = np.abs(pooled) > tol
            B = x.shape[0]
            entries.append(DecompositionEntry(
                layer=li, level=l, frob_ms=float(np.mean(frob_s)), frob_ma=float(np.mean(frob_a)),
                ratio=float(np.mean(ratios)),
                fraction_negative=float((pooled < -tol).sum()) / max(int(nz.sum()), 1),
                min_eigenvalue=float(pooled.min()),
                energy_scores=e_scores / B, energy_form=e_form / B,
                identity_sym_dev=dev_s, identity_anti_dev=dev_a,
                head_ratios=[float(r) for r in ratios], ms_eigenvalues=pooled.tolist()))
    return DecompositionReport(entries)


@dataclass
class PsdEntry:
    layer: int
    level: int
    head: int
    fraction_negative: float
    fraction_negative_all: float
    min_eigenvalue: float
    n_nonzero: int
    dim: int


def psd_audit(model: HktModel) -> list[PsdEntry]:
    """Eigen summary of the symmetrised query-key form of every (layer, level, head)."""
    out = []
    for li, block in enumerate(model.blocks):
        for l in range(len(block.attn.wq)):
            wq, wk = head_matrices(model, li, l)
            for h in range(wq.shape[0]):
                es = eigen_summary(symmetrised_form(wq[h], wk[h]))
                out.append(PsdEntry(li, l, h, es.fraction_negative, es.fraction_negative_all,
                                    es.min_eigenvalue, es.n_nonzero, wq.shape[2]))
    return out


def psd_audit_summary(entries: list[PsdEntry]) -> list[dict]:
    """Head-averaged fraction and worst eigenvalue per (layer, level)."""
    groups: dict[tuple[int, int], list[PsdEntry]] = {}
    for e in entries:
        groups.setdefault((e.layer, e.level), []).append(e)
    rows = []
    for (li, l), es in sorted(groups.items()):
        rows.append({"layer": li, "level": l,
                     "fraction_negative": float(np.mean([e.fraction_negative for e in es])),
                     "min_eigenvalue": float(min(e.min_eigenvalue for e in es))})
    return rows
