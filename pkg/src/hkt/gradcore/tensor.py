"""Dense float64 tensor with tape-based reverse-mode differentiation."""

from __future__ import annotations

import threading
from contextlib import contextmanager
from typing import Callable, Sequence

import numpy as np


class GradError(RuntimeError):
    """Misuse of the differentiation machinery (non-scalar loss, replayed tape, ...)."""


class ShapeError(ValueError):
    pass


class ConfigError(ValueError):
    pass


class DegenerateRowError(ValueError):
    """A softmax row with every entry masked."""


class Node:
    __slots__ = ("index", "op", "inputs", "output", "backward_fn")

    def __init__(self, index, op, inputs, output, backward_fn):
        self.index = index
        self.op = op
        self.inputs = inputs
        self.output = output
        self.backward_fn = backward_fn


class Graph:
    """Ordered tape of recorded primitive calls.

    Nodes are appended as operations execute, so the tape is topologically
    ordered by construction. A graph can be consumed by exactly one
    ``backward`` call; ``reset`` clears it for the next step.
    """

    def __init__(self):
        self.nodes: list[Node] = []
        self.consumed = False

    def record(self, op, inputs, output, backward_fn):
        if self.consumed:
            raise GradError("graph already consumed by backward(); call reset() first")
        node = Node(len(self.nodes), op, inputs, output, backward_fn)
        self.nodes.append(node)
        output._node = node
        output._graph = self

    def reset(self):
        for node in self.nodes:
            node.output._node = None
            node.output._graph = None
        self.nodes = []
        self.consumed = False

    def __len__(self):
        return len(self.nodes)


_state = threading.local()


def _current() -> Graph:
    g = getattr(_state, "graph", None)
    if g is None:
        g = _state.graph = Graph()
    return g


def default_graph() -> Graph:
    return _current()


def _grad_enabled() -> bool:
    return getattr(_state, "enabled", True)


@contextmanager
def no_grad():
    prev = _grad_enabled()
    _state.enabled = False
    try:
        yield
    finally:
        _state.enabled = prev


@contextmanager
def graph_scope(graph: Graph | None = None):
    """Record into ``graph`` (a fresh one by default) inside the block.

    A fresh graph is reset on exit, which breaks the tensor/node reference
    cycles and frees the step's intermediates at once; call ``backward``
    inside the block.
    """
    prev = getattr(_state, "graph", None)
    g = graph if graph is not None else Graph()
    _state.graph = g
    try:
        yield g
    finally:
        _state.graph = prev
        if graph is None:
            g.reset()


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "name", "_node", "_graph", "__weakref__")

    __array_priority__ = 1000

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None
        self.name = name
        self._node = None
        self._graph = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data)

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def zero_grad(self):
        self.grad = None

    def __repr__(self):
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    # operator sugar; definitions live in ops
    def __add__(self, other):
        from . import ops
        return ops.add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        from . import ops
        return ops.sub(self, other)

    def __rsub__(self, other):
        from . import ops
        return ops.sub(other, self)

    def __mul__(self, other):
        from . import ops
        return ops.mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        from . import ops
        return ops.div(self, other)

    def __neg__(self):
        from . import ops
        return ops.mul(self, -1.0)

    def __matmul__(self, other):
        from . import ops
        return ops.matmul(self, other)

    def __getitem__(self, idx):
        from . import ops
        return ops.getitem(self, idx)

    @property
    def T(self):
        from . import ops
        return ops.swapaxes(self, -1, -2)

    def reshape(self, *shape):
        from . import ops
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return ops.reshape(self, shape)

    def sum(self, axis=None, keepdims=False):
        from . import ops
        return ops.sum(self, axis=axis, keepdims=keepdims)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def make_result(data: np.ndarray, op: str, inputs: Sequence[Tensor],
                backward_fn: Callable[[np.ndarray], Sequence[np.ndarray | None]]) -> Tensor:
    """Wrap a primitive's output and record it on the active tape when needed.

    ``backward_fn`` maps the output cotangent to one cotangent (or None) per input.
    """
    needs = _grad_enabled() and any(t.requires_grad for t in inputs)
    out = Tensor(data, requires_grad=needs)
    if needs:
        _current().record(op, tuple(inputs), out, backward_fn)
    return out


def backward(loss: Tensor) -> None:
    """Populate ``.grad`` on every requires_grad leaf feeding ``loss``.

    Leaf gradients are overwritten, never accumulated. The graph that produced
    ``loss`` is marked consumed; reusing it without ``reset`` raises.
    """
    if loss.size != 1:
        raise GradError(f"backward needs a scalar loss, got shape {loss.shape}")
    node = loss._node
    graph = loss._graph
    if node is None or graph is None:
        raise GradError("loss is detached: it was not produced by a recorded operation")
    if graph.consumed:
        raise GradError("graph already consumed by backward(); call reset() first")
    if node.index >= len(graph.nodes) or graph.nodes[node.index] is not node:
        raise GradError("loss node does not belong to its graph (graph was reset)")

    grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    leaves: dict[int, Tensor] = {}
    for n in reversed(graph.nodes[: node.index + 1]):
        g = grads.pop(id(n.output), None)
        if g is None:
            continue
        in_grads = n.backward_fn(g)
        for t, gi in zip(n.inputs, in_grads):
            if not t.requires_grad:
                continue
            if t._node is None:
                leaves[id(t)] = t
            if gi is None:
                continue
            prev = grads.get(id(t))
            grads[id(t)] = gi if prev is None else prev + gi
    # leaves that appear as inputs anywhere on the tape get a buffer even if unreached
    for n in graph.nodes[: node.index + 1]:
        for t in n.inputs:
            if t.requires_grad and t._node is None:
                leaves.setdefault(id(t), t)
    for key, leaf in leaves.items():
        g = grads.get(key)
        leaf.grad = np.zeros_like(leaf.data) if g is None else np.asarray(g, dtype=np.float64).reshape(leaf.shape)
    graph.consumed = True
