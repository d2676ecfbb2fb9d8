"""Synthetic ListOps: nested MAX/MIN/MED/SM expressions over the digits 0-9."""

from __future__ import annotations

from dataclasses import asdict, dataclass
from typing import Sequence, Union

import numpy as np

from ..numkit import Prng
from .dataset import Dataset

# vocabulary layout
DIGITS = tuple(range(10))
OP_MAX, OP_MIN, OP_MED, OP_SM = 10, 11, 12, 13
CLOSE = 14
PAD = 15
CLS = 16
VOCAB_SIZE = 17
N_CLASSES = 10

OPERATORS = (OP_MAX, OP_MIN, OP_MED, OP_SM)
OP_NAMES = {OP_MAX: "MAX", OP_MIN: "MIN", OP_MED: "MED", OP_SM: "SM"}
_NAME_TO_ID = {f"[{v}": k for k, v in OP_NAMES.items()}
_NAME_TO_ID.update({str(d): d for d in DIGITS})
_NAME_TO_ID["]"] = CLOSE
_NAME_TO_ID["<pad>"] = PAD
_NAME_TO_ID["<cls>"] = CLS

VOCAB_LAYOUT = {
    "digits": "0-9",
    "[MAX": OP_MAX, "[MIN": OP_MIN, "[MED": OP_MED, "[SM": OP_SM,
    "]": CLOSE, "pad": PAD, "cls": CLS,
}

Tree = Union[int, tuple]  # digit, or (op_id, [children])


class ListOpsParseError(ValueError):
    """Malformed expression; ``position`` is the offending token index."""

    def __init__(self, message: str, position: int):
        super().__init__(f"{message} at token {position}")
        self.position = position


class GenerationError(ValueError):
    pass


@dataclass
class ListOpsSpec:
    max_depth: int = 3
    max_arity: int = 5
    seq_len: int = 128
    n_train: int = 2000
    n_val: int = 500
    n_test: int = 500
    seed: int = 0
    subtree_prob: float = 0.5
    max_attempts_factor: int = 200

    def validate(self):
        if self.max_depth < 1:
            raise GenerationError(f"max_depth must be >= 1, got {self.max_depth}")
        if self.max_arity < 2:
            raise GenerationError(f"max_arity must be >= 2, got {self.max_arity}")
        if self.seq_len < min_sequence_length():
            raise GenerationError(
                f"seq_len={self.seq_len} cannot hold the shortest expression "
                f"({min_sequence_length()} tokens including the begin token)")
        if min(self.n_train, self.n_val, self.n_test) < 0:
            raise GenerationError("split sizes must be non-negative")

    def to_dict(self) -> dict:
        return asdict(self)


def min_sequence_length() -> int:
    """Begin token plus the smallest expression "[OP d d ]"."""
    return 5


def max_expression_length(max_depth: int, max_arity: int) -> int:
    """Token count of the largest tree the sampler can produce (without the begin token)."""
    n = 2 + max_arity
    for _ in range(max_depth - 1):
        n = 2 + max_arity * n
    return n


# --- semantics ----------------------------------------------------------------

def apply_op(op: int, values: Sequence[int]) -> int:
    if not values:
        raise ValueError("operator applied to no arguments")
    if op == OP_MAX:
        return max(values)
    if op == OP_MIN:
        return min(values)
    if op == OP_MED:
        return sorted(values)[(len(values) - 1) // 2]  # lower median
    if op == OP_SM:
        return sum(values) % 10
    raise ValueError(f"unknown operator id {op}")


def evaluate_tree(tree: Tree) -> int:
    if isinstance(tree, (int, np.integer)):
        return int(tree)
    op, children = tree
    return apply_op(op, [evaluate_tree(c) for c in children])


def render(tree: Tree) -> list[int]:
    if isinstance(tree, (int, np.integer)):
        return [int(tree)]
    op, children = tree
    out = [op]
    for c in children:
        out.extend(render(c))
    out.append(CLOSE)
    return out


def to_text(tokens: Sequence[int]) -> str:
    inv = {v: k for k, v in _NAME_TO_ID.items()}
    return " ".join(inv[int(t)] for t in tokens if int(t) not in (PAD, CLS))


def tokenize(text: str) -> list[int]:
    out = []
    for i, piece in enumerate(text.split()):
        if piece not in _NAME_TO_ID:
            raise ListOpsParseError(f"unknown symbol {piece!r}", i)
        out.append(_NAME_TO_ID[piece])
    return out


def evaluate_listops(tokens) -> int:
    """Evaluate an expression given as text or token ids.

    Leading PAD and begin tokens are skipped. Raises ListOpsParseError with
    the token position on malformed input.
    """
    ids = tokenize(tokens) if isinstance(tokens, str) else [int(t) for t in tokens]
    pos = 0
    while pos < len(ids) and ids[pos] in (PAD, CLS):
        pos += 1
    if pos == len(ids):
        raise ListOpsParseError("empty expression", pos)

    # explicit stack avoids recursion limits on adversarial input
    stack: list[tuple[int, list[int]]] = []
    result = None
    for i in range(pos, len(ids)):
        t = ids[i]
        if result is not None:
            raise ListOpsParseError("trailing tokens after complete expression", i)
        if t in OPERATORS:
            stack.append((t, []))
        elif 0 <= t <= 9:
            if not stack:
                if i == len(ids) - 1:
                    result = t
                    continue
                raise ListOpsParseError("digit outside any operator", i)
            stack[-1][1].append(t)
        elif t == CLOSE:
            if not stack:
                raise ListOpsParseError("unmatched ']'", i)
            op, args = stack.pop()
            if not args:
                raise ListOpsParseError("operator with no arguments", i)
            v = apply_op(op, args)
            if stack:
                stack[-1][1].append(v)
            else:
                result = v
        else:
            raise ListOpsParseError(f"unexpected token id {t}", i)
    if stack:
        raise ListOpsParseError("unclosed operator", len(ids))
    return int(result)


# --- sampling ----------------------------------------------------------------

def sample_tree(rng: Prng, max_depth: int, max_arity: int, subtree_prob: float = 0.5,
                depth: int = 1) -> Tree:
    """Root is always an operator; a child becomes a sub-expression with
    probability ``subtree_prob`` while the depth budget lasts."""
    op = OPERATORS[rng.integers(0, len(OPERATORS))]
    arity = rng.integers(2, max_arity + 1)
    children: list[Tree] = []
    for _ in range(arity):
        if depth < max_depth and rng.random() < subtree_prob:
            children.append(sample_tree(rng, max_depth, max_arity, subtree_prob, depth + 1))
        else:
            children.append(rng.integers(0, 10))
    return (op, children)


def tree_depth(tree: Tree) -> int:
    if isinstance(tree, (int, np.integer)):
        return 0
    return 1 + max(tree_depth(c) for c in tree[1])


def encode_sequence(expr: Sequence[int], T: int) -> np.ndarray:
    """Begin token + expression, left-padded with PAD to length T."""
    body = [CLS] + list(expr)
    if len(body) > T:
        raise GenerationError(f"expression of {len(body)} tokens exceeds T={T}")
    return np.array([PAD] * (T - len(body)) + body, dtype=np.int64)


def generate_listops(spec: ListOpsSpec) -> dict[str, Dataset]:
    """Train/val/test splits of distinct sequences with exact sizes.

    Trees longer than the sequence budget are rejected and redrawn.
    """
    spec.validate()
    rng = Prng(spec.seed)
    sizes = {"train": spec.n_train, "val": spec.n_val, "test": spec.n_test}
    total = sum(sizes.values())
    cap = spec.max_attempts_factor * max(total, 1)
    seen: set[tuple[int, ...]] = set()
    seqs, labels = [], []
    attempts = 0
    while len(seqs) < total:
        attempts += 1
        if attempts > cap:
            raise GenerationError(
                f"only {len(seqs)} of {total} distinct sequences after {cap} draws; "
                f"seq_len={spec.seq_len} is too small or the tree space is exhausted")
        tree = sample_tree(rng, spec.max_depth, spec.max_arity, spec.subtree_prob)
        expr = render(tree)
        if len(expr) + 1 > spec.seq_len:
            continue
        key = tuple(expr)
        if key in seen:
            continue
        seen.add(key)
        seqs.append(encode_sequence(expr, spec.seq_len))
        labels.append(evaluate_tree(tree))
    tokens = np.stack(seqs) if seqs else np.zeros((0, spec.seq_len), dtype=np.int64)
    labels_arr = np.asarray(labels, dtype=np.int64)
    meta = {"kind": "listops", "spec": spec.to_dict(), "vocab": VOCAB_LAYOUT,
            "vocab_size": VOCAB_SIZE, "n_classes": N_CLASSES, "draws": attempts}
    out = {}
    start = 0
    for name, n in sizes.items():
        out[name] = Dataset(tokens[start:start + n].copy(), labels_arr[start:start + n].copy(),
                            vocab_size=VOCAB_SIZE, n_classes=N_CLASSES,
                            meta=dict(meta, split=name))
        start += n
    return out
