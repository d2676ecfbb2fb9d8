"""Score-feature information diagnostics: squared multiple correlation, Mardia kurtosis,
Gaussian and kurtosis-corrected mutual information bounds, net per-level gains and
cost-weighted level weights."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import numpy as np

from ..model import HktModel
from ..numkit import (
    DegenerateTargetError, mardia_classical, mardia_pairwise, normalised_kurtosis, pca_fit,
    ridge_r2,
)
from .probe import collect_traces


def information_bounds(rho2: float, kappa: float) -> tuple[float, float, float]:
    """(gaussian, corrected, correction) with gaussian = -log(1 - rho2)/2 and
    correction = (kappa - 1) * rho2 / 2."""
    if not 0.0 <= rho2 < 1.0:
        raise ValueError(f"rho2 must lie in [0, 1), got {rho2}")
    gaussian = -0.5 * math.log1p(-rho2)
    correction = 0.5 * (kappa - 1.0) * rho2
    return gaussian, gaussian + correction, correction


@dataclass
class LevelInfo:
    level: int
    rho2: float
    kappa: float
    kappa_pairwise: float
    gaussian_bound: float
    nongaussian_bound: float
    n: int
    p: int


def _standardise(a: np.ndarray) -> np.ndarray:
    a = a - a.mean(axis=0)
    sd = a.std(axis=0)
    keep = sd > 1e-12 * max(float(sd.max()), 1e-300)
    return a[:, keep] / sd[keep]


def level_information(features, target, p: int, penalty: float | None = None,
                      level: int = 0) -> LevelInfo:
    """rho^2 of ``target`` on the p-dim PCA of ``features``; kappa of the joint
    (standardised features, target) cloud projected to p principal components."""
    X = np.asarray(features, dtype=np.float64)
    y = np.asarray(target, dtype=np.float64).ravel()
    if X.ndim == 1:
        X = X[:, None]
    n = X.shape[0]
    if np.var(y) <= 0.0:
        raise DegenerateTargetError("target has zero variance")
    p_feat = min(p, X.shape[1])
    Z = pca_fit(X, p_feat).transform(X)
    rho2 = ridge_r2(Z, y, penalty)
    joint = _standardise(np.column_stack([X, y]))
    p_joint = min(p, joint.shape[1])
    J = pca_fit(joint, p_joint).transform(joint)
    kappa = normalised_kurtosis(mardia_classical(J), p_joint)
    kappa_pw = normalised_kurtosis(mardia_pairwise(J), p_joint)
    g, ng, _ = information_bounds(rho2, kappa)
    return LevelInfo(level, rho2, kappa, kappa_pw, g, ng, n, p_joint)


@dataclass
class InfoReport:
    levels: list[LevelInfo]
    sigma_f2: float
    eps0: float
    eps0_assumed: bool
    delta_ng: list[float]
    lambda_star: list[float]
    lambda_uniform_fallback: bool
    target: str = "true-class logit"
    feature_block: str = "trailing"
    notes: list[str] = field(default_factory=list)

    def table(self) -> list[dict]:
        rows = []
        for li, d, lam in zip(self.levels, self.delta_ng, self.lambda_star):
            row = asdict(li)
            row.update(delta_ng=d, lambda_star=lam)
            rows.append(row)
        return rows


def net_gains(rho2: list[float], kappa: list[float], sigma_f2: float, eps0: float) -> list[float]:
    """[sigma_f^2 (rho_l^2 - rho_{l-1}^2) - (kappa_l - 1) rho_l^2] / (2 eps0), rho_{-1}^2 = 0."""
    out, prev = [], 0.0
    for r, k in zip(rho2, kappa):
        out.append((sigma_f2 * (r - prev) - (k - 1.0) * r) / (2.0 * eps0))
        prev = r
    return out


def optimal_level_weights(rho2: list[float], kappa: list[float], costs: list[float]) -> tuple[list[float], bool]:
    """lambda*_l proportional to max(0, rho_l^2 - rho_{l-1}^2 - (kappa_l - 1) rho_l^2) / C_l.

    Falls back to uniform weights (flag True) when no level has positive merit.
    """
    merit, prev = [], 0.0
    for r, k, c in zip(rho2, kappa, costs):
        merit.append(max(0.0, r - prev - (k - 1.0) * r) / c)
        prev = r
    total = sum(merit)
    if total <= 0.0:
        return [1.0 / len(merit)] * len(merit), True
    return [m / total for m in merit], False


def score_features(scores: np.ndarray, q: int, block: str = "trailing") -> np.ndarray:
    """Flatten a q x q corner of head-averaged score matrices (B, H, n, n) to (B, q*q).

    ``block="leading"`` takes the upper-left corner; ``"trailing"`` the
    lower-right one, which holds real tokens under left padding.
    """
    s = scores.mean(axis=1)
    n = s.shape[-1]
    q = min(q, n)
    if block == "leading":
        c = s[:, :q, :q]
    elif block == "trailing":
        c = s[:, n - q:, n - q:]
    else:
        raise ValueError(f"unknown block {block!r}")
    return c.reshape(s.shape[0], q * q)


def info_bounds(model: HktModel, tokens, labels, p: int = 10, penalty: float | None = None,
                q: int = 8, layer: int = 0, eps0: float | None = None, batch_size: int = 64,
                block: str = "trailing") -> InfoReport:
    """Per-level information diagnostics of ``model`` on a labelled sample.

    The scalar target is the model's logit for the true class. ``eps0`` is the
    error of the flat single-level model; without it gains are reported with
    eps0 = 1 and flagged.
    """
    tokens = np.asarray(tokens)
    labels = np.asarray(labels, dtype=np.int64)
    feats: list[list[np.ndarray]] = []
    target = []
    for start in range(0, len(tokens), batch_size):
        tb = tokens[start:start + batch_size]
        logits, traces = collect_traces(model, tb)
        target.append(logits[np.arange(len(tb)), labels[start:start + batch_size]])
        per_level = [score_features(s, q, block) for s in traces[layer]["scores"]]
        if not feats:
            feats = [[] for _ in per_level]
        for acc, f in zip(feats, per_level):
            acc.append(f)
    y = np.concatenate(target)
    sigma_f2 = float(np.var(y, ddof=1))
    if sigma_f2 <= 0.0:
        raise DegenerateTargetError("target logit has zero variance on this sample")
    levels = [level_information(np.concatenate(f), y, p, penalty, level=l) for l, f in enumerate(feats)]
    rho2 = [li.rho2 for li in levels]
    kappa = [li.kappa for li in levels]
    assumed = eps0 is None
    e0 = 1.0 if assumed else float(eps0)
    T = tokens.shape[1]
    costs = [float(n * n) for n in model.cfg.level_lengths(T)]
    lam, fallback = optimal_level_weights(rho2, kappa, costs)
    notes = []
    if assumed:
        notes.append("eps0 not supplied; gains computed with eps0 = 1")
    if fallback:
        notes.append("no level has positive merit; lambda* set uniform")
    return InfoReport(levels, sigma_f2, e0, assumed, net_gains(rho2, kappa, sigma_f2, e0), lam,
                      fallback, feature_block=block, notes=notes)


def gaussian_pair(n: int, rho2: float, q: int, seed: int) -> tuple[np.ndarray, np.ndarray]:
    """Jointly Gaussian (features, target) with population R^2 = rho2.

    Target = feature_0 + noise with noise variance (1 - rho2) / rho2, so the
    signal share of the target variance is rho2.
    """
    rng = np.random.default_rng(seed)
    X = rng.standard_normal((n, q))
    if rho2 <= 0.0:
        return X, rng.standard_normal(n)
    y = X[:, 0] + math.sqrt((1.0 - rho2) / rho2) * rng.standard_normal(n)
    return X, y
