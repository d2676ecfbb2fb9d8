"""Central finite-difference checks for reverse-mode gradients."""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from .tensor import Tensor, backward, graph_scope, no_grad


def relative_error(a: np.ndarray, b: np.ndarray, floor: float = 1e-10) -> float:
    """||a - b|| / max(||a||, ||b||, floor)."""
    num = float(np.linalg.norm(np.ravel(a) - np.ravel(b)))
    den = max(float(np.linalg.norm(a)), float(np.linalg.norm(b)), floor)
    return num / den


def numerical_grad(f: Callable[[], float], x: np.ndarray, eps: float = 1e-5,
                   indices: Sequence[tuple[int, ...]] | None = None) -> np.ndarray:
    """Central differences of scalar ``f()`` w.r.t. entries of ``x`` (perturbed in place).

    When ``indices`` is given only those entries are probed; the rest stay 0.
    """
    g = np.zeros_like(x)
    it = indices if indices is not None else list(np.ndindex(x.shape))
    for idx in it:
        orig = x[idx]
        x[idx] = orig + eps
        fp = f()
        x[idx] = orig - eps
        fm = f()
        x[idx] = orig
        g[idx] = (fp - fm) / (2.0 * eps)
    return g


def check_gradients(fn: Callable[[], Tensor], params: Sequence[Tensor], eps: float = 1e-5,
                    max_entries: int | None = None, rng: np.random.Generator | None = None
                    ) -> dict[int, float]:
    """Compare reverse-mode and central-difference gradients of scalar ``fn()``.

    Returns the relative error per parameter position. With ``max_entries``
    only a random subset of coordinates per tensor is probed and the error is
    computed on that subset.
    """
    with graph_scope():
        loss = fn()
        backward(loss)
    analytic = [p.grad.copy() for p in params]

    def f():
        with no_grad():
            return float(fn().data)

    errors = {}
    for i, p in enumerate(params):
        idx = list(np.ndindex(p.shape))
        if max_entries is not None and len(idx) > max_entries:
            r = rng if rng is not None else np.random.default_rng(0)
            pick = r.choice(len(idx), size=max_entries, replace=False)
            idx = [idx[j] for j in sorted(pick)]
        num = numerical_grad(f, p.data, eps=eps, indices=idx)
        sel = tuple(np.array(idx).T)
        errors[i] = relative_error(analytic[i][sel], num[sel])
    return errors
