"""Gradient-based measurement of information flow from future positions."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .. import gradcore as gc
from ..gradcore import ConfigError, Tensor
from ..model import HktModel
from ..numkit import Prng


@dataclass
class LeakageReport:
    T: int
    trials: int
    max_leakage: float
    per_trial: list[float] = field(default_factory=list)
    worst_pair: tuple[int, int] = (0, 0)  # (t, t') of the largest entry


def leakage_matrix(model: HktModel, x: np.ndarray) -> np.ndarray:
    """N[t, t'] = ||d f_t / d X_t'||_2 for one input X of shape (T, d).

    f_t is the sum of position-t logits before pooling. The input is
    replicated over the batch and row b backpropagates only f_b, so a single
    backward pass yields every row of the Jacobian block norms.
    """
    T, d = x.shape
    xb = Tensor(np.broadcast_to(x, (T, T, d)).copy(), requires_grad=True)
    select = np.zeros((T, T, model.cfg.n_classes))
    select[np.arange(T), np.arange(T), :] = 1.0
    with gc.graph_scope():
        logits = model.position_logits(xb)
        gc.backward(gc.sum(gc.mul(logits, select)))
    return np.linalg.norm(xb.grad, axis=-1)


def measure_leakage(model: HktModel, T: int = 32, trials: int = 50, seed: int = 0) -> LeakageReport:
    """Largest future-to-past gradient norm over random inputs."""
    if not model.cfg.causal:
        raise ConfigError("leakage measurement needs a model built with causal=True")
    if trials < 1:
        raise ValueError("trials must be >= 1")
    was_training = model.training
    model.eval()
    rng = Prng(seed)
    future = np.triu(np.ones((T, T), dtype=bool), k=1)
    per_trial, best, pair = [], -1.0, (0, 0)
    try:
        for _ in range(trials):
            x = rng.spawn().numpy_generator().standard_normal((T, model.cfg.d_model))
            n = leakage_matrix(model, x)
            vals = np.where(future, n, 0.0)
            per_trial.append(float(vals.max()))
            if vals.max() > best:
                best = float(vals.max())
                pair = tuple(int(i) for i in np.unravel_index(np.argmax(vals), vals.shape))
    finally:
        model.train(was_training)
    return LeakageReport(T=T, trials=trials, max_leakage=max(per_trial), per_trial=per_trial,
                         worst_pair=pair)
