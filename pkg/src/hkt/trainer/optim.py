"""AdamW with decoupled weight decay, one-cycle schedule and global-norm clipping."""

from __future__ import annotations

import math

import numpy as np

from ..gradcore import Tensor


class AdamW:
    """Adam moments on the gradient; weight decay shrinks parameters directly.

    Decay applies to matrices (ndim >= 2) only; gains, biases and gate
    logits are left undecayed.
    """

    def __init__(self, params: list[Tensor], lr: float = 1e-3, betas=(0.9, 0.999), eps: float = 1e-8,
                 weight_decay: float = 0.01):
        self.params = list(params)
        self.lr = lr
        self.b1, self.b2 = betas
        self.eps = eps
        self.weight_decay = weight_decay
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]
        self.t = 0

    def decays(self, p: Tensor) -> bool:
        return p.ndim >= 2

    def step(self, grads: list[np.ndarray] | None = None):
        grads = grads if grads is not None else [p.grad for p in self.params]
        self.t += 1
        c1 = 1.0 - self.b1 ** self.t
        c2 = 1.0 - self.b2 ** self.t
        for p, g, m, v in zip(self.params, grads, self.m, self.v):
            if g is None:
                g = np.zeros_like(p.data)
            if self.weight_decay and self.decays(p):
                p.data *= 1.0 - self.lr * self.weight_decay
            m *= self.b1
            m += (1.0 - self.b1) * g
            v *= self.b2
            v += (1.0 - self.b2) * g * g
            p.data -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)

    def state_dict(self) -> dict:
        return {"t": self.t, "m": [a.copy() for a in self.m], "v": [a.copy() for a in self.v]}


class OneCycle:
    """Linear warmup from peak/div_factor to peak, then cosine decay to
    peak/(div_factor * final_div)."""

    def __init__(self, peak_lr: float, total_steps: int, warmup_steps: int, div_factor: float = 25.0,
                 final_div: float = 1e4):
        if total_steps < 1 or not 0 <= warmup_steps < total_steps:
            raise ValueError(f"need 0 <= warmup_steps < total_steps, got {warmup_steps}, {total_steps}")
        self.peak = peak_lr
        self.total = total_steps
        self.warmup = warmup_steps
        self.start = peak_lr / div_factor
        self.final = self.start / final_div

    def __call__(self, step: int) -> float:
        step = min(max(step, 0), self.total - 1)
        if step < self.warmup:
            return self.start + (self.peak - self.start) * step / self.warmup
        span = self.total - 1 - self.warmup
        frac = (step - self.warmup) / span if span > 0 else 1.0
        return self.final + 0.5 * (self.peak - self.final) * (1.0 + math.cos(math.pi * frac))


def global_norm(grads) -> float:
    return math.sqrt(sum(float(np.vdot(g, g)) for g in grads if g is not None))


def clip_global_norm(grads: list[np.ndarray], max_norm: float) -> float:
    """Scale ``grads`` in place so their joint norm is at most ``max_norm``; returns the norm before clipping."""
    norm = global_norm(grads)
    if norm > max_norm:
        scale = max_norm / norm
        for g in grads:
            if g is not None:
                g *= scale
    return norm
