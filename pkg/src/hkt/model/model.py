from __future__ import annotations

import numpy as np

from .. import gradcore as gc
from ..gradcore import Tensor
from ..numkit import Prng
from .config import ModelConfig
from .layers import EncoderBlock, Module, _ones, _param


class HktModel(Module):
    """Token embedding, stacked hierarchical encoder blocks, final LayerNorm,
    per-position classifier and mean pooling over time."""

    def __init__(self, cfg: ModelConfig, seed: int = 0):
        self.cfg = cfg
        rng = Prng(seed)
        d = cfg.d_model
        self.embed = _param(rng, (cfg.vocab_size, d), 1)
        self.blocks = [EncoderBlock(cfg, rng) for _ in range(cfg.n_layers)]
        self.lnf_g = _ones((d,))
        self.lnf_b = _param(rng, (d,), None)
        self.cls_w = _param(rng, (cfg.n_classes, d), d)
        self.cls_b = _param(rng, (cfg.n_classes,), None)
        self._drop_rng: np.random.Generator | None = None

    def set_dropout_rng(self, rng: np.random.Generator | None):
        self._drop_rng = rng

    def embed_tokens(self, tokens) -> Tensor:
        tokens = np.asarray(tokens)
        if tokens.ndim == 1:
            tokens = tokens[None, :]
        return gc.embedding_lookup(self.embed, tokens)

    def encode(self, x: Tensor, traces: list | None = None) -> Tensor:
        """Run the blocks on continuous inputs (B, T, d); returns final-normalised states."""
        for block in self.blocks:
            tr = {} if traces is not None else None
            x = block(x, drop_rng=self._drop_rng, trace=tr)
            if traces is not None:
                traces.append(tr)
        return gc.layernorm(x, self.lnf_g, self.lnf_b, eps=self.cfg.ln_eps)

    def position_logits(self, x: Tensor, traces: list | None = None) -> Tensor:
        """Per-position class logits (B, T, C) before pooling."""
        return gc.linear(self.encode(x, traces), self.cls_w, self.cls_b)

    def forward(self, tokens, traces: list | None = None) -> Tensor:
        """Class logits (B, C) for a batch (or single sequence) of token ids."""
        return gc.mean_over_time(self.position_logits(self.embed_tokens(tokens), traces))

    __call__ = forward

    def state_dict(self) -> dict[str, np.ndarray]:
        return {name: p.data.copy() for name, p in self.named_parameters()}

    def load_state_dict(self, state: dict[str, np.ndarray]):
        params = dict(self.named_parameters())
        missing = set(params) - set(state)
        extra = set(state) - set(params)
        if missing or extra:
            raise KeyError(f"state mismatch; missing={sorted(missing)[:5]} unexpected={sorted(extra)[:5]}")
        for name, p in params.items():
            arr = np.asarray(state[name], dtype=np.float64)
            if arr.shape != p.shape:
                raise ValueError(f"shape mismatch for {name}: {arr.shape} vs {p.shape}")
            p.data = arr.copy()

    def n_parameters(self) -> int:
        return sum(p.size for p in self.parameters())

    def sabotage_mask(self, on: bool = True):
        """Leave the causal mask off in every block (negative control for leakage tests)."""
        for b in self.blocks:
            b.attn._sabotage_mask = on
