"""Certificate suites: each check yields a named pass/fail record."""

from __future__ import annotations

import time
from dataclasses import asdict, dataclass, field

import numpy as np

from .. import gradcore as gc
from ..analysis.diagnostics import causality_bound, max_downsampler_norm
from ..model import HktModel, ModelConfig
from ..numkit import Prng
from .gradients import model_errors, primitive_errors
from .leakage import measure_leakage
from .opcount import count_ops
from .oracles import single_level_forward

SUITES = ("ops", "causal", "reduction", "gradients")

LEAKAGE_TOL = 1e-12
SABOTAGE_MIN = 1e-3
ORACLE_TOL = 1e-9
PRIMITIVE_TOL = 1e-5
MODEL_TOL = 1e-4


@dataclass
class Certificate:
    suite: str
    name: str
    passed: bool
    value: float
    threshold: float
    detail: dict = field(default_factory=dict)
    seconds: float = 0.0

    def to_dict(self) -> dict:
        return asdict(self)


def _cert(suite, name, passed, value, threshold, start, **detail) -> Certificate:
    return Certificate(suite, name, bool(passed), float(value), float(threshold), detail,
                       time.perf_counter() - start)


# --- ops ----------------------------------------------------------------------

EXPECTED_RATIOS = {1: "1", 2: "5/4", 3: "21/16", 4: "85/64"}


def ops_suite(T: int = 128, stride: int = 2) -> list[Certificate]:
    out = []
    for L, want in EXPECTED_RATIOS.items():
        start = time.perf_counter()
        oc = count_ops(ModelConfig(n_levels=L, stride=stride, max_seq_len=T))
        ok = oc.exact and str(oc.ratio_measured) == want and oc.ratio_measured == oc.ratio_theory
        out.append(_cert("ops", f"overhead L={L} s={stride}", ok, float(oc.ratio_measured),
                         float(oc.ratio_theory), start, exact=str(oc.ratio_measured),
                         lengths=oc.lengths))
    return out


# --- causal -------------------------------------------------------------------

def causal_config(T: int = 32, **overrides) -> ModelConfig:
    base = dict(causal=True, max_seq_len=T)
    base.update(overrides)
    return ModelConfig(**base)


def causal_suite(seed: int = 0, T: int = 32, trials: int = 50,
                 cfg: ModelConfig | None = None) -> list[Certificate]:
    cfg = cfg if cfg is not None else causal_config(T)
    out = []

    start = time.perf_counter()
    flat = HktModel(causal_config(8, n_levels=1, beta_fixed=1.0), seed=seed)
    rep = measure_leakage(flat, T=8, trials=5, seed=seed)
    out.append(_cert("causal", "flat MHA leakage T=8", rep.max_leakage <= LEAKAGE_TOL,
                     rep.max_leakage, LEAKAGE_TOL, start))

    start = time.perf_counter()
    model = HktModel(cfg, seed=seed)
    rep = measure_leakage(model, T=T, trials=trials, seed=seed)
    out.append(_cert("causal", f"HKT leakage T={T} trials={trials}", rep.max_leakage <= LEAKAGE_TOL,
                     rep.max_leakage, LEAKAGE_TOL, start, worst_pair=list(rep.worst_pair)))
    measured = rep.max_leakage

    start = time.perf_counter()
    model.sabotage_mask(True)
    try:
        bad = measure_leakage(model, T=T, trials=3, seed=seed)
    finally:
        model.sabotage_mask(False)
    out.append(_cert("causal", "sabotaged mask leaks (negative control)", bad.max_leakage > SABOTAGE_MIN,
                     bad.max_leakage, SABOTAGE_MIN, start))

    start = time.perf_counter()
    c_phi = max_downsampler_norm(model)
    bound = causality_bound(c_phi, cfg.stride, cfg.n_levels)
    out.append(_cert("causal", "leakage within epsilon-causality bound", measured <= bound,
                     measured, bound, start, c_phi=c_phi,
                     bound_finite=bool(np.isfinite(bound))))
    return out


# --- reductions -----------------------------------------------------------------

def _random_draw(cfg: ModelConfig, rng: Prng, T: int, batch: int):
    model = HktModel(cfg, seed=rng.next_u64() >> 1)
    g = rng.numpy_generator()
    for p in model.parameters():
        p.data = p.data + 0.3 * g.standard_normal(p.shape)
    tokens = g.integers(0, cfg.vocab_size, size=(batch, T))
    return model, tokens


def _logits(model, tokens):
    with gc.no_grad():
        return model(tokens).data


def reduction_suite(seed: int = 0, draws: int = 10, T: int = 12) -> list[Certificate]:
    """Reduction oracles on random weight/input draws.

    beta = 1 with a single level (lambda = one-hot on level 0) must equal an
    independent flat multi-head attention encoder; beta = 0 must equal an
    independent causal depthwise-convolution encoder. Swapping query and key
    roles in the oracle must break agreement (negative control).
    """
    rng = Prng(seed)
    small = dict(d_model=32, n_heads=2, n_layers=2, max_seq_len=T)
    cases = [
        ("beta=1 lambda=onehot(0) == flat MHA (causal)", dict(small, n_levels=1, beta_fixed=1.0, causal=True), "mha"),
        ("beta=1 lambda=onehot(0) == flat MHA (bidirectional)", dict(small, n_levels=1, beta_fixed=1.0), "mha"),
        ("beta=0 == causal depthwise conv", dict(small, n_levels=1, beta_fixed=0.0, causal=True), "conv"),
    ]
    out = []
    for name, kw, mixer in cases:
        start = time.perf_counter()
        cfg = ModelConfig(**kw)
        worst = 0.0
        for _ in range(draws):
            model, tokens = _random_draw(cfg, rng, T, batch=3)
            ref = single_level_forward(model, tokens, mixer)
            worst = max(worst, float(np.max(np.abs(_logits(model, tokens) - ref))))
        out.append(_cert("reduction", name, worst <= ORACLE_TOL, worst, ORACLE_TOL, start, draws=draws))

    start = time.perf_counter()
    cfg = ModelConfig(**dict(small, n_levels=1, beta_fixed=1.0, causal=True))
    model, tokens = _random_draw(cfg, rng, T, batch=3)
    gap = float(np.max(np.abs(_logits(model, tokens)
                              - single_level_forward(model, tokens, "mha", transpose_scores=True))))
    out.append(_cert("reduction", "transposed scores disagree (negative control)", gap > SABOTAGE_MIN,
                     gap, SABOTAGE_MIN, start))

    # multi-level: one-hot lambda makes the fused attention pattern the level-0 softmax
    start = time.perf_counter()
    cfg = ModelConfig(**dict(small, n_levels=3, lambda_fixed=[1.0, 0.0, 0.0], causal=True, max_seq_len=16))
    worst = 0.0
    for _ in range(draws):
        model, tokens = _random_draw(cfg, rng, 16, batch=2)
        traces: list = []
        with gc.no_grad():
            model(tokens, traces=traces)
        for tr in traces:
            s0 = tr["scores"][0].data
            s0 = np.where(np.triu(np.ones(s0.shape[-2:], dtype=bool), 1), -np.inf, s0)
            p = np.exp(s0 - s0.max(-1, keepdims=True))
            p /= p.sum(-1, keepdims=True)
            worst = max(worst, float(np.max(np.abs(tr["probs"].data - p))))
    out.append(_cert("reduction", "lambda=onehot(0) fused pattern == level-0 softmax (L=3)",
                     worst <= ORACLE_TOL, worst, ORACLE_TOL, start))
    return out


# --- gradients ----------------------------------------------------------------------

def gradient_suite(seed: int = 0) -> list[Certificate]:
    out = []
    start = time.perf_counter()
    prim = primitive_errors(seed)
    for name, err in prim.items():
        out.append(_cert("gradients", f"primitive {name}", err < PRIMITIVE_TOL, err, PRIMITIVE_TOL, start))
        start = time.perf_counter()
    for label, cfg in [("desk model", ModelConfig()), ("desk model, causal", ModelConfig(causal=True))]:
        start = time.perf_counter()
        errs = model_errors(cfg, seed=seed)
        worst_name = max(errs, key=errs.get)
        out.append(_cert("gradients", label, errs[worst_name] < MODEL_TOL, errs[worst_name], MODEL_TOL,
                         start, worst_parameter=worst_name, tensors=len(errs)))
    return out


def run_suites(names, seed: int = 0) -> list[Certificate]:
    names = list(SUITES) if names in ("all", None) else list(names)
    unknown = set(names) - set(SUITES)
    if unknown:
        raise ValueError(f"unknown suite(s) {sorted(unknown)}; choose from {SUITES}")
    table = {"ops": lambda: ops_suite(), "causal": lambda: causal_suite(seed),
             "reduction": lambda: reduction_suite(seed), "gradients": lambda: gradient_suite(seed)}
    out = []
    for n in names:
        out.extend(table[n]())
    return out


def format_table(certs: list[Certificate]) -> str:
    lines = [f"{'suite':<10} {'result':<6} {'value':>16} {'threshold':>16}  name"]
    for c in certs:
        lines.append(f"{c.suite:<10} {'PASS' if c.passed else 'FAIL':<6} {c.value:>16.10g} "
                     f"{c.threshold:>16.10g}  {c.name}")
    return "\n".join(lines)
