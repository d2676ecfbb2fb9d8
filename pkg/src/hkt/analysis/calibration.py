"""Per-level decay rate fitted to accuracies measured at several hierarchy depths."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np


@dataclass
class DecayFit:
    delta: float
    levels: list[int]
    gains: list[float]
    used: list[bool]
    fitted_gains: list[float]
    fit_residual: float
    warning: bool
    notes: list[str] = field(default_factory=list)


def decay_calibration(accuracy_by_L: dict) -> DecayFit:
    """Fit a geometric per-level decay rate to accuracy gains.

    Accuracy is taken as linear in minus the residual error, so the gain
    from depth L_{i-1} to L_i measures the error removed by the added
    level(s). Under a constant relative reduction delta these gains shrink
    by (1 - delta) per level; log-gains are fitted linearly in L and
    delta = 1 - exp(slope). Non-positive gains cannot enter a log fit: they
    are dropped and the fit is flagged. With fewer than two positive gains
    delta = 0 and the fit is flagged.
    """
    if len(accuracy_by_L) < 3:
        raise ValueError("decay_calibration needs accuracies for at least 3 depths")
    items = sorted((int(k), float(v)) for k, v in accuracy_by_L.items())
    levels = [k for k, _ in items]
    acc = [v for _, v in items]
    gains = [acc[i] - acc[i - 1] for i in range(1, len(acc))]
    at = levels[1:]
    used = [g > 0.0 for g in gains]
    notes = []
    warning = not all(used)
    if warning:
        notes.append("non-positive gains dropped from the fit")
    xs = np.array([x for x, u in zip(at, used) if u], dtype=np.float64)
    ys = np.array([math.log(g) for g, u in zip(gains, used) if u])
    if xs.size < 2:
        notes.append("fewer than two positive gains; no decay measurable")
        return DecayFit(0.0, levels, gains, used, [0.0] * len(gains), 0.0, True, notes)
    slope, intercept = np.polyfit(xs, ys, 1)
    fitted = [math.exp(intercept + slope * x) for x in at]
    resid = ys - (intercept + slope * xs)
    rms = float(np.sqrt(np.mean(resid ** 2)))
    delta = 1.0 - math.exp(slope)
    if delta < 0.0:
        warning = True
        notes.append("gains increase with depth; negative decay rate")
    return DecayFit(float(delta), levels, gains, used, fitted, rms, warning, notes)
