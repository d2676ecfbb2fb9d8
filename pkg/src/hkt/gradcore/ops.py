"""Differentiable primitives.

Every primitive computes its forward value with numpy and registers a
closure returning one cotangent per input. Shapes broadcast like numpy;
cotangents are summed back onto the original input shapes.
"""

from __future__ import annotations

import numpy as np
from scipy.special import erf

from .tensor import ConfigError, DegenerateRowError, ShapeError, Tensor, as_tensor, make_result

_SQRT2 = np.sqrt(2.0)
_INV_SQRT_2PI = 1.0 / np.sqrt(2.0 * np.pi)


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.reshape((-1,) + g.shape[extra:]).sum(axis=0)
    axes = tuple(ax for ax, n in enumerate(shape) if n == 1 and g.shape[ax] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


def _binary(a, b, out, op, grad_a, grad_b) -> Tensor:
    """Elementwise result whose backward only computes cotangents that are needed."""

    def bw(g):
        ga = _unbroadcast(grad_a(g), a.shape) if a.requires_grad else None
        gb = _unbroadcast(grad_b(g), b.shape) if b.requires_grad else None
        return ga, gb

    return make_result(out, op, (a, b), bw)


# --- elementwise -----------------------------------------------------------

def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return _binary(a, b, a.data + b.data, "add", lambda g: g, lambda g: g)


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return _binary(a, b, a.data - b.data, "sub", lambda g: g, lambda g: -g)


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return _binary(a, b, a.data * b.data, "mul", lambda g: g * b.data, lambda g: g * a.data)


def div(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = a.data / b.data
    return _binary(a, b, out, "div", lambda g: g / b.data, lambda g: -g * out / b.data)


def exp(x: Tensor) -> Tensor:
    out = np.exp(x.data)
    return make_result(out, "exp", (x,), lambda g: (g * out,))


def log(x: Tensor) -> Tensor:
    return make_result(np.log(x.data), "log", (x,), lambda g: (g / x.data,))


def sigmoid(x: Tensor) -> Tensor:
    out = 0.5 * (1.0 + np.tanh(0.5 * x.data))
    return make_result(out, "sigmoid", (x,), lambda g: (g * out * (1.0 - out),))


def gelu(x: Tensor) -> Tensor:
    """Exact GELU, x * Phi(x)."""
    cdf = 0.5 * (1.0 + erf(x.data / _SQRT2))

    def bw(g):
        pdf = _INV_SQRT_2PI * np.exp(-0.5 * x.data * x.data)
        return (g * (cdf + x.data * pdf),)

    return make_result(x.data * cdf, "gelu", (x,), bw)


def relu(x: Tensor) -> Tensor:
    mask = x.data > 0
    return make_result(x.data * mask, "relu", (x,), lambda g: (g * mask,))


def square(x: Tensor) -> Tensor:
    return make_result(x.data * x.data, "square", (x,), lambda g: (2.0 * g * x.data,))


# --- shape ---------------------------------------------------------------

def reshape(x: Tensor, shape) -> Tensor:
    return make_result(x.data.reshape(shape), "reshape", (x,), lambda g: (g.reshape(x.shape),))


def swapaxes(x: Tensor, a: int, b: int) -> Tensor:
    return make_result(np.swapaxes(x.data, a, b), "swapaxes", (x,), lambda g: (np.swapaxes(g, a, b),))


def transpose(x: Tensor, axes) -> Tensor:
    inv = np.argsort(axes)
    return make_result(np.transpose(x.data, axes), "transpose", (x,), lambda g: (np.transpose(g, inv),))


def concat(xs, axis: int = -1) -> Tensor:
    xs = [as_tensor(x) for x in xs]
    sizes = [x.shape[axis] for x in xs]
    splits = np.cumsum(sizes)[:-1]

    def bw(g):
        return tuple(np.split(g, splits, axis=axis))

    return make_result(np.concatenate([x.data for x in xs], axis=axis), "concat", xs, bw)


def _is_basic_index(idx) -> bool:
    parts = idx if isinstance(idx, tuple) else (idx,)
    return all(isinstance(p, (int, np.integer, slice)) or p is Ellipsis or p is None for p in parts)


def getitem(x: Tensor, idx) -> Tensor:
    basic = _is_basic_index(idx)

    def bw(g):
        out = np.zeros_like(x.data)
        if basic:
            out[idx] = g
        else:
            np.add.at(out, idx, g)
        return (out,)

    return make_result(x.data[idx], "getitem", (x,), bw)


def _scatter_add_rows(index: np.ndarray, rows: np.ndarray, n: int) -> np.ndarray:
    """out[i] = sum of rows[k] over k with index[k] == i (sort + reduceat; avoids ufunc.at)."""
    out = np.zeros((n,) + rows.shape[1:])
    if index.size == 0:
        return out
    order = np.argsort(index, kind="stable")
    idx = index[order]
    starts = np.flatnonzero(np.r_[True, idx[1:] != idx[:-1]])
    out[idx[starts]] = np.add.reduceat(rows[order], starts, axis=0)
    return out


def take(x: Tensor, index: np.ndarray, axis: int) -> Tensor:
    """Gather along ``axis`` with an integer index vector (repeats allowed)."""
    index = np.asarray(index, dtype=np.intp)
    ax = axis % x.ndim

    def bw(g):
        moved = np.moveaxis(g, ax, 0)
        acc = _scatter_add_rows(index, moved, x.shape[ax])
        return (np.moveaxis(acc, 0, ax),)

    return make_result(np.take(x.data, index, axis=ax), "take", (x,), bw)


def block_upsample(x: Tensor, axis: int, factor: int, out_len: int) -> Tensor:
    """Repeat each entry ``factor`` times along ``axis`` to length ``out_len``.

    Output position i reads input row min(i // factor, n - 1), so positions past
    the last full block reuse the final row.
    """
    ax = axis % x.ndim
    n = x.shape[ax]
    full = min(n, out_len // factor)
    xm = np.moveaxis(x.data, ax, 0)
    body = np.repeat(xm[:full], factor, axis=0)
    tail = out_len - full * factor
    if tail:
        body = np.concatenate([body, np.repeat(xm[n - 1:n], tail, axis=0)], axis=0)
    out = np.moveaxis(body, 0, ax)

    def bw(g):
        gm = np.moveaxis(g, ax, 0)
        acc = np.zeros(xm.shape)
        acc[:full] = gm[: full * factor].reshape((full, factor) + gm.shape[1:]).sum(axis=1)
        if tail:
            acc[n - 1] += gm[full * factor:].sum(axis=0)
        return (np.moveaxis(acc, 0, ax),)

    return make_result(out, "block_upsample", (x,), bw)


def sum(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:  # noqa: A001
    def bw(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, x.shape).copy(),)

    return make_result(np.sum(x.data, axis=axis, keepdims=keepdims), "sum", (x,), bw)


def mean(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    n = x.size if axis is None else np.prod([x.shape[a] for a in np.atleast_1d(axis)])
    return mul(sum(x, axis=axis, keepdims=keepdims), 1.0 / n)


def mean_over_time(x: Tensor, causal: bool = False) -> Tensor:
    """Average over the time axis (-2).

    With ``causal`` the result keeps the time axis and row t is the mean of
    rows 0..t, so it never looks ahead.
    """
    if not causal:
        return mean(x, axis=-2)
    T = x.shape[-2]
    counts = np.arange(1, T + 1, dtype=np.float64)[:, None]
    out = np.cumsum(x.data, axis=-2) / counts

    def bw(g):
        gs = g / counts
        return (np.flip(np.cumsum(np.flip(gs, axis=-2), axis=-2), axis=-2),)

    return make_result(out, "causal_mean", (x,), bw)


# --- linear algebra --------------------------------------------------------

def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2:
        raise ShapeError(f"matmul needs operands of rank >= 2, got {a.shape} and {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul inner dimensions disagree: {a.shape} @ {b.shape}")
    try:
        out = np.matmul(a.data, b.data)
    except ValueError as exc:
        raise ShapeError(f"matmul batch dimensions do not broadcast: {a.shape} @ {b.shape}") from exc

    def bw(g):
        ga = np.matmul(g, np.swapaxes(b.data, -1, -2)) if a.requires_grad else None
        gb = np.matmul(np.swapaxes(a.data, -1, -2), g) if b.requires_grad else None
        return (None if ga is None else _unbroadcast(ga, a.shape),
                None if gb is None else _unbroadcast(gb, b.shape))

    return make_result(out, "matmul", (a, b), bw)


def linear(x: Tensor, weight: Tensor, bias: Tensor | None = None) -> Tensor:
    """x @ weight.T (+ bias), weight stored (out_features, in_features).

    Leading axes of ``x`` are flattened so both passes run as single 2-D products.
    """
    x, weight = as_tensor(x), as_tensor(weight)
    if weight.ndim != 2 or x.ndim < 1 or x.shape[-1] != weight.shape[1]:
        raise ShapeError(f"linear: input {x.shape} incompatible with weight {weight.shape}")
    lead = x.shape[:-1]
    x2 = x.data.reshape(-1, x.shape[-1])
    out = x2 @ weight.data.T
    inputs = (x, weight)
    if bias is not None:
        bias = as_tensor(bias)
        if bias.shape != (weight.shape[0],):
            raise ShapeError(f"linear: bias {bias.shape} does not match weight {weight.shape}")
        out += bias.data
        inputs = (x, weight, bias)

    def bw(g):
        g2 = g.reshape(-1, weight.shape[0])
        gx = (g2 @ weight.data).reshape(x.shape) if x.requires_grad else None
        gw = g2.T @ x2 if weight.requires_grad else None
        if bias is None:
            return gx, gw
        return gx, gw, g2.sum(axis=0)

    return make_result(out.reshape(lead + (weight.shape[0],)), "linear", inputs, bw)


# --- normalisation / probability ------------------------------------------

def softmax_rows(s, mask: np.ndarray | None = None) -> Tensor:
    """Softmax over the last axis; ``mask`` True marks entries that are excluded.

    Excluded entries come out exactly 0 and receive exactly zero cotangent.
    """
    s = as_tensor(s)
    x = s.data
    if mask is not None:
        mask = np.broadcast_to(np.asarray(mask, dtype=bool), x.shape)
        full = mask.all(axis=-1)
        if full.any():
            bad = np.argwhere(full)[0]
            raise DegenerateRowError(f"softmax row {tuple(int(i) for i in bad)} is fully masked")
        x = np.where(mask, -np.inf, x)
    m = np.max(x, axis=-1, keepdims=True)
    e = np.exp(x - m)
    out = e / np.sum(e, axis=-1, keepdims=True)

    def bw(g):
        return (out * (g - np.sum(g * out, axis=-1, keepdims=True)),)

    return make_result(out, "softmax", (s,), bw)


def log_softmax(s: Tensor) -> Tensor:
    x = s.data
    m = np.max(x, axis=-1, keepdims=True)
    lse = m + np.log(np.sum(np.exp(x - m), axis=-1, keepdims=True))
    out = x - lse
    p = np.exp(out)
    return make_result(out, "log_softmax", (s,), lambda g: (g - p * np.sum(g, axis=-1, keepdims=True),))


def cross_entropy_logits(logits: Tensor, labels) -> Tensor:
    """Mean negative log-likelihood of integer ``labels`` under row-softmax(logits)."""
    labels = np.asarray(labels, dtype=np.intp)
    if logits.ndim != 2 or labels.shape != (logits.shape[0],):
        raise ShapeError(f"cross_entropy expects (B, C) logits and (B,) labels, got {logits.shape}, {labels.shape}")
    x = logits.data
    m = np.max(x, axis=-1, keepdims=True)
    z = np.exp(x - m)
    p = z / z.sum(axis=-1, keepdims=True)
    B = x.shape[0]
    rows = np.arange(B)
    loss = -np.mean(np.log(p[rows, labels]))

    def bw(g):
        d = p.copy()
        d[rows, labels] -= 1.0
        return (g * d / B,)

    return make_result(np.asarray(loss), "cross_entropy", (logits,), bw)


def layernorm(x: Tensor, gamma: Tensor | None = None, beta: Tensor | None = None,
              eps: float = 1e-5) -> Tensor:
    xd = x.data
    mu = xd.mean(axis=-1, keepdims=True)
    xc = xd - mu
    var = np.mean(xc * xc, axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    inputs = [x]
    out = xhat
    if gamma is not None:
        inputs.append(gamma)
        out = out * gamma.data
    if beta is not None:
        inputs.append(beta)
        out = out + beta.data
    def bw(g):
        gh = g * gamma.data if gamma is not None else g
        gx = inv * (gh - gh.mean(axis=-1, keepdims=True)
                    - xhat * np.mean(gh * xhat, axis=-1, keepdims=True))
        res = [gx]
        if gamma is not None:
            res.append(_unbroadcast(g * xhat, gamma.shape))
        if beta is not None:
            res.append(_unbroadcast(g, beta.shape))
        return tuple(res)

    return make_result(out, "layernorm", inputs, bw)


def dropout(x: Tensor, p: float, rng: np.random.Generator | None, training: bool) -> Tensor:
    """Inverted dropout; identity when not training or p == 0."""
    if not training or p <= 0.0:
        return x
    if rng is None:
        raise ConfigError("dropout in training mode needs a generator")
    keep = (rng.random(x.shape) >= p) / (1.0 - p)
    return make_result(x.data * keep, "dropout", (x,), lambda g: (g * keep,))


def embedding_lookup(table: Tensor, ids) -> Tensor:
    ids = np.asarray(ids, dtype=np.intp)
    V = table.shape[0]
    if ids.size and (ids.min() < 0 or ids.max() >= V):
        bad = ids[(ids < 0) | (ids >= V)].ravel()[0]
        raise IndexError(f"token id {int(bad)} outside vocabulary of size {V}")

    def bw(g):
        return (_scatter_add_rows(ids.reshape(-1), g.reshape(-1, table.shape[1]), V),)

    return make_result(table.data[ids], "embedding", (table,), bw)


# --- convolution ------------------------------------------------------------

def conv1d_causal_depthwise(x: Tensor, weight: Tensor, stride: int = 1) -> Tensor:
    """Depthwise causal 1-D convolution over the time axis.

    ``x`` is (..., T, C) and ``weight`` is (C, k); tap j multiplies the input
    j steps in the past. The input is left-padded with k-1 zeros, so output m
    reads inputs m*stride-(k-1) .. m*stride only. Output length is T // stride.
    """
    if stride < 1:
        raise ConfigError(f"stride must be >= 1, got {stride}")
    if weight.ndim != 2 or weight.shape[1] < 1:
        raise ConfigError(f"depthwise kernel must be (C, k) with k >= 1, got {weight.shape}")
    C, k = weight.shape
    if x.shape[-1] != C:
        raise ConfigError(f"channel mismatch: input has {x.shape[-1]} channels, kernel has {C}")
    T = x.shape[-2]
    T_out = T // stride
    if T_out < 1:
        raise ConfigError(f"sequence of length {T} too short for stride {stride}")
    lead = x.shape[:-2]
    xp = np.zeros(lead + (T + k - 1, C))
    xp[..., k - 1:, :] = x.data
    w = weight.data
    last = (T_out - 1) * stride
    out = np.zeros(lead + (T_out, C))
    for j in range(k):
        start = k - 1 - j
        out += xp[..., start:start + last + 1:stride, :] * w[:, j]

    def bw(g):
        gxp = np.zeros_like(xp) if x.requires_grad else None
        gw = np.zeros_like(w) if weight.requires_grad else None
        for j in range(k):
            start = k - 1 - j
            sl = (Ellipsis, slice(start, start + last + 1, stride), slice(None))
            if gxp is not None:
                gxp[sl] += g * w[:, j]
            if gw is not None:
                gw[:, j] = np.sum((g * xp[sl]).reshape(-1, C), axis=0)
        return (None if gxp is None else gxp[..., k - 1:, :], gw)

    return make_result(out, "conv1d_causal_depthwise", (x, weight), bw)
