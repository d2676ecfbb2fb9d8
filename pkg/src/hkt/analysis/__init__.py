"""Post-hoc diagnostics of query-key forms, kernels and score information."""

from .calibration import DecayFit, decay_calibration
from .decomposition import (
    DecompositionEntry, DecompositionReport, EigenSummary, PsdEntry, SplitForm, decompose_scores,
    directional_energy_form, directional_energy_scores, eigen_summary, psd_audit, psd_audit_summary,
    split_form, symmetrised_form,
)
from .diagnostics import (
    LipschitzConstants, ScaleSeparation, bilinear_residual, causality_bound,
    downsampler_operator_norm, kernel_lipschitz, lipschitz_constants, max_downsampler_norm,
    scale_separation,
)
from .gram import GramReport, gram_factorisation, model_gram, numeric_rank, project_psd
from .information import (
    InfoReport, LevelInfo, gaussian_pair, info_bounds, information_bounds, level_information,
    net_gains, optimal_level_weights, score_features,
)
from .probe import collect_traces, head_matrices
from .reports import read_jsonl, write_csv, write_jsonl

__all__ = [
    "decay_calibration", "DecayFit",
    "split_form", "SplitForm", "eigen_summary", "EigenSummary", "symmetrised_form",
    "decompose_scores", "DecompositionReport", "DecompositionEntry",
    "directional_energy_scores", "directional_energy_form",
    "psd_audit", "psd_audit_summary", "PsdEntry",
    "gram_factorisation", "model_gram", "GramReport", "project_psd", "numeric_rank",
    "info_bounds", "InfoReport", "LevelInfo", "level_information", "information_bounds",
    "net_gains", "optimal_level_weights", "score_features", "gaussian_pair",
    "scale_separation", "ScaleSeparation", "bilinear_residual",
    "downsampler_operator_norm", "lipschitz_constants", "LipschitzConstants",
    "kernel_lipschitz", "causality_bound", "max_downsampler_norm",
    "collect_traces", "head_matrices", "write_csv", "write_jsonl", "read_jsonl",
]
