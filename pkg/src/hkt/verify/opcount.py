"""Exact counting of attention score computations."""

from __future__ import annotations

from dataclasses import dataclass, field
from fractions import Fraction

from ..model.config import ModelConfig


@dataclass
class OpCount:
    T: int
    stride: int
    n_levels: int
    lengths: list[int]
    score_entries: list[int]  # T_l^2 per level
    score_macs: list[int]  # H * T_l^2 * d_k^(l) per level
    flat_entries: int
    flat_macs: int
    ratio_measured: Fraction
    ratio_theory: Fraction
    mac_ratio: Fraction
    exact: bool  # T divisible by s^(L-1)
    notes: list[str] = field(default_factory=list)

    @property
    def total_entries(self) -> int:
        return sum(self.score_entries)

    @property
    def total_macs(self) -> int:
        return sum(self.score_macs)

    def row(self) -> dict:
        return {"T": self.T, "stride": self.stride, "levels": self.n_levels,
                "lengths": " ".join(map(str, self.lengths)),
                "score_entries": self.total_entries, "flat_entries": self.flat_entries,
                "ratio_measured": float(self.ratio_measured), "ratio_theory": float(self.ratio_theory),
                "ratio_exact": str(self.ratio_measured), "mac_ratio": float(self.mac_ratio),
                "exact": self.exact}


def theory_ratio(n_levels: int, stride: int) -> Fraction:
    """sum_l s^(-2l), i.e. (4/3)(1 - 4^-L) for s = 2."""
    return sum((Fraction(1, stride ** (2 * l)) for l in range(n_levels)), Fraction(0))


def count_ops(cfg: ModelConfig, T: int | None = None) -> OpCount:
    """Count score entries and multiply-adds of every level's Q K^T product.

    Level lengths come from the same floor rule the cascade uses. When T is
    not divisible by s^(L-1) the measured ratio falls below the closed form;
    the shortfall is reported in ``notes``.
    """
    T = cfg.max_seq_len if T is None else T
    L, s, H = cfg.n_levels, cfg.stride, cfg.n_heads
    lengths = cfg.level_lengths(T)
    entries = [n * n for n in lengths]
    macs = [H * n * n * cfg.level_key_dim(l) for l, n in enumerate(lengths)]
    flat_entries = T * T
    flat_macs = H * T * T * cfg.level_key_dim(0)
    measured = Fraction(sum(entries), flat_entries)
    theory = theory_ratio(L, s)
    exact = T % s ** (L - 1) == 0
    notes = []
    if not exact:
        for l, n in enumerate(lengths):
            ideal = Fraction(T, s ** l) ** 2
            if ideal != n * n:
                notes.append(f"level {l}: floor({T}/{s ** l})^2 = {n * n} instead of {ideal}")
        notes.append(f"floor deficit {float(theory - measured):.6g}")
    return OpCount(T=T, stride=s, n_levels=L, lengths=lengths, score_entries=entries, score_macs=macs,
                   flat_entries=flat_entries, flat_macs=flat_macs, ratio_measured=measured,
                   ratio_theory=theory, mac_ratio=Fraction(sum(macs), flat_macs), exact=exact,
                   notes=notes)
