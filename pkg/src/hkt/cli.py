"""Command-line entry point: ``hkt <subcommand> [flags]``.

Exit codes: 0 success, 1 verification failure, 2 usage or configuration
error, 3 I/O error. Output directories default to $HKT_OUT (or ./hkt_out).
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys

import yaml

from . import analysis
from .data import DatasetFormatError, GenerationError, ListOpsSpec, generate_listops, read_dataset, write_dataset
from .gradcore import ConfigError
from .model import CheckpointError, HktModel, ModelConfig, load_checkpoint
from .trainer import TrainConfig, ablation_sweep, apply_ablations, check_compatible, evaluate, train
from .verify import benchmark, format_table, run_suites
from .verify.suites import causal_suite

EXIT_OK, EXIT_FAIL, EXIT_USAGE, EXIT_IO = 0, 1, 2, 3
SPLITS = ("train", "val", "test")


class UsageError(Exception):
    pass


# --- configuration ------------------------------------------------------------

def load_config(path: str | None) -> dict:
    """YAML file with optional ``model``, ``train`` and ``data`` sections."""
    if path is None:
        return {}
    with open(path, encoding="utf-8") as fh:
        raw = yaml.safe_load(fh) or {}
    if not isinstance(raw, dict):
        raise ConfigError(f"{path}: top level must be a mapping")
    unknown = set(raw) - {"model", "train", "data"}
    if unknown:
        raise ConfigError(f"{path}: unknown sections {sorted(unknown)}")
    return raw


def build_configs(raw: dict, args) -> tuple[ModelConfig, TrainConfig, ListOpsSpec]:
    model = dict(raw.get("model") or {})
    tr = dict(raw.get("train") or {})
    data = dict(raw.get("data") or {})
    # flag overrides win over file values
    for flag, key in (("levels", "n_levels"), ("stride", "stride"), ("d_model", "d_model"),
                      ("layers", "n_layers")):
        if getattr(args, flag, None) is not None:
            model[key] = getattr(args, flag)
    if getattr(args, "causal", False):
        model["causal"] = True
    for flag in ("epochs", "batch_size", "peak_lr", "seed"):
        if getattr(args, flag, None) is not None:
            tr[flag] = getattr(args, flag)
    if getattr(args, "seed", None) is not None:
        data["seed"] = args.seed
    spec = ListOpsSpec(**data)
    model.setdefault("max_seq_len", spec.seq_len)
    return ModelConfig.from_dict(model), TrainConfig.from_dict(tr), spec


def out_root(path: str | None, name: str) -> str:
    if path:
        return path
    return os.path.join(os.environ.get("HKT_OUT", "hkt_out"), name)


def load_splits(data_dir: str, names=SPLITS) -> dict:
    out = {}
    for name in names:
        path = os.path.join(data_dir, f"{name}.tsv")
        if os.path.exists(path):
            out[name] = read_dataset(path)
    if "train" not in out and "train" in names:
        raise DatasetFormatError(f"no train.tsv under {data_dir}")
    return out


def _print_rows(rows: list[dict]):
    if not rows:
        return
    cols = list(rows[0])
    print("  ".join(cols))
    for r in rows:
        print("  ".join(f"{r[c]:.6g}" if isinstance(r[c], float) else str(r[c]) for c in cols))


# --- subcommands ----------------------------------------------------------------

def cmd_generate_data(args) -> int:
    raw = load_config(args.spec)
    _, _, spec = build_configs(raw, args)
    out = out_root(args.out, "data")
    existing = [s for s in SPLITS if os.path.exists(os.path.join(out, f"{s}.tsv"))]
    if existing and not args.force:
        raise FileExistsError(f"{out} already holds {existing}; pass --force to overwrite")
    splits = generate_listops(spec)
    for name, ds in splits.items():
        digest = write_dataset(ds, os.path.join(out, f"{name}.tsv"))
        print(f"{name}: {len(ds)} samples  sha256 {digest}")
    return EXIT_OK


def cmd_train(args) -> int:
    mc, tc, _ = build_configs(load_config(args.config), args)
    data = load_splits(args.data)
    out = out_root(args.out, "run")
    model = HktModel(apply_ablations(mc, tc), seed=tc.seed)
    rec = train(model, data, tc, out_dir=out, log=None if args.quiet else print)
    print(f"best val {rec.best_val_acc:.4f} at epoch {rec.best_epoch}; test {rec.test_acc}")
    print(f"wrote {out}")
    return EXIT_OK


def cmd_eval(args) -> int:
    model, _ = load_checkpoint(args.checkpoint)
    data = load_splits(args.data, names=(args.split,))
    if args.split not in data:
        raise DatasetFormatError(f"no {args.split}.tsv under {args.data}")
    check_compatible(model, data[args.split])
    loss, acc = evaluate(model, data[args.split])
    print(json.dumps({"split": args.split, "loss": loss, "accuracy": acc}, sort_keys=True))
    return EXIT_OK


def cmd_analyze(args) -> int:
    model, _ = load_checkpoint(args.checkpoint)
    data = load_splits(args.data, names=(args.split,))
    if args.split not in data:
        raise DatasetFormatError(f"no {args.split}.tsv under {args.data}")
    ds = data[args.split]
    check_compatible(model, ds)
    out = out_root(args.out, "analysis")
    n = min(len(ds), args.samples)
    dec = analysis.decompose_scores(model, ds.tokens[: min(n, 16)])
    analysis.write_csv(os.path.join(out, "decomposition.csv"), dec.table())
    analysis.write_jsonl(os.path.join(out, "decomposition.jsonl"), [e.row() for e in dec.entries],
                         "decomposition")
    psd = analysis.psd_audit_summary(analysis.psd_audit(model))
    analysis.write_csv(os.path.join(out, "psd.csv"), psd)
    gram = analysis.model_gram(model, ds.tokens[0], n=20)
    gram_rec = {"min_eigenvalues": gram.min_eigenvalues, "min_eigenvalue_hier": gram.min_eigenvalue_hier,
                "frob_hier": gram.frob_hier, "relative_min_eigenvalue": gram.relative_min_eigenvalue,
                "linear_rank": gram.linear_rank, "rank_bound": gram.rank_bound,
                "input_scales": gram.input_scales, "clipped_eigenvalues": gram.clipped_eigenvalues}
    analysis.write_jsonl(os.path.join(out, "gram.jsonl"), [gram_rec], "gram")
    info = analysis.info_bounds(model, ds.tokens[:n], ds.labels[:n], p=args.pca_dims, eps0=args.eps0)
    analysis.write_csv(os.path.join(out, "info.csv"), info.table())
    analysis.write_jsonl(os.path.join(out, "info.jsonl"), info.table(), "info")
    print("decomposition")
    _print_rows([{k: r[k] for k in ("layer", "level", "ratio", "fraction_negative", "energy_scores")}
                 for r in dec.table()])
    print("information (target: true-class logit)")
    _print_rows([{k: r[k] for k in ("level", "rho2", "kappa", "gaussian_bound", "nongaussian_bound",
                                    "delta_ng", "lambda_star")} for r in info.table()])
    print(f"wrote {out}")
    return EXIT_OK


def cmd_verify(args) -> int:
    raw = load_config(args.config)
    suites = ["ops", "causal", "reduction", "gradients"] if args.suite == "all" else [args.suite]
    certs = []
    if "causal" in suites and raw.get("model"):
        mc = ModelConfig.from_dict(dict(raw["model"]))
        if not mc.causal:
            raise ConfigError("causal suite refuses a non-causal model config (set model.causal: true)")
        suites.remove("causal")
        certs.extend(causal_suite(args.seed, T=mc.max_seq_len, cfg=mc))
    certs.extend(run_suites(suites, seed=args.seed))
    print(format_table(certs))
    if args.out:
        analysis.write_jsonl(args.out, [c.to_dict() for c in certs], "certificate")
    failed = [c for c in certs if not c.passed]
    for c in failed:
        print(f"FAILED {c.suite}/{c.name}: value {c.value!r} threshold {c.threshold!r} {c.detail}",
              file=sys.stderr)
    return EXIT_FAIL if failed else EXIT_OK


def cmd_bench(args) -> int:
    lengths = parse_grid(args.grid)
    kinds = ["hkt", "mha"] if args.model == "both" else [args.model]
    mc, _, _ = build_configs(load_config(args.config), args)
    rows = benchmark(kinds, lengths, base=mc, batch=args.batch, repeats=args.repeats, warmup=args.warmup)
    table = [r.row() for r in rows]
    _print_rows(table)
    if args.out:
        analysis.write_csv(args.out, table)
    return EXIT_OK


def parse_grid(text: str) -> list[int]:
    key, _, vals = text.partition("=")
    if key.strip() != "T" or not vals:
        raise UsageError(f"--grid expects T=<n>[,<n>...], got {text!r}")
    try:
        return [int(v) for v in vals.split(",")]
    except ValueError as exc:
        raise UsageError(f"--grid values must be integers: {text!r}") from exc


def cmd_sweep(args) -> int:
    mc, tc, _ = build_configs(load_config(args.config), args)
    data = load_splits(args.data)
    out = out_root(args.out, "sweep")
    ablations = None if args.ablations is None else [a.strip() for a in args.ablations.split(";") if a.strip()]
    rows = ablation_sweep(mc, tc, data, ablations=ablations, grid=not args.no_grid, out_dir=out,
                          log=None if args.quiet else print)
    table = [r.row() for r in rows]
    analysis.write_csv(os.path.join(out, "sweep.csv"), table)
    _print_rows(table)
    return EXIT_OK


def cmd_report(args) -> int:
    rows = []
    for d in args.runs:
        with open(os.path.join(d, "summary.json"), encoding="utf-8") as fh:
            s = json.load(fh)
        if s.get("format") != "hkt-run/1":
            raise DatasetFormatError(f"{d}: unsupported summary format {s.get('format')!r}")
        m = s["model_config"]
        rows.append({"run": d, "levels": m["n_levels"], "stride": m["stride"], "seed": s["seed"],
                     "best_val_acc": s["best_val_acc"], "test_acc": s["test_acc"],
                     "simplex_ok": s["simplex_ok"]})
    if args.sweep:
        with open(args.sweep, newline="") as fh:
            grid = [r for r in csv.DictReader(fh) if r["kind"] == "grid" and r["status"] == "ok"]
        by_level = {int(r["levels"]): 100.0 * float(r["val_acc"]) for r in grid if int(r["stride"]) == 2}
        if len(by_level) >= 3:
            fit = analysis.decay_calibration(by_level)
            print(f"decay calibration: delta = {fit.delta:.4f}  warning={fit.warning}  {fit.notes}")
    _print_rows(rows)
    if args.out:
        analysis.write_csv(args.out, rows)
    return EXIT_OK


# --- parser ---------------------------------------------------------------------

def _add_model_flags(p):
    p.add_argument("--config", help="YAML file with model/train/data sections")
    p.add_argument("--levels", type=int)
    p.add_argument("--stride", type=int)
    p.add_argument("--d-model", dest="d_model", type=int)
    p.add_argument("--layers", type=int)


def _add_train_flags(p):
    p.add_argument("--epochs", type=int)
    p.add_argument("--batch-size", dest="batch_size", type=int)
    p.add_argument("--peak-lr", dest="peak_lr", type=float)
    p.add_argument("--seed", type=int)
    p.add_argument("--quiet", action="store_true")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="hkt", description="Hierarchical kernel transformer lab")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate-data", help="write ListOps train/val/test files")
    p.add_argument("--spec", help="YAML file; its data section holds the generator fields")
    p.add_argument("--out")
    p.add_argument("--seed", type=int)
    p.add_argument("--force", action="store_true")
    p.set_defaults(func=cmd_generate_data)

    p = sub.add_parser("train", help="train one model")
    _add_model_flags(p)
    _add_train_flags(p)
    p.add_argument("--data", required=True)
    p.add_argument("--out")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="accuracy of a checkpoint on one split")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--split", default="test", choices=SPLITS)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("analyze", help="decomposition, PSD, Gram and information reports")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--split", default="val", choices=SPLITS)
    p.add_argument("--out")
    p.add_argument("--samples", type=int, default=300)
    p.add_argument("--pca-dims", dest="pca_dims", type=int, default=10)
    p.add_argument("--eps0", type=float, help="flat-model validation error for the net-gain scale")
    p.set_defaults(func=cmd_analyze)

    p = sub.add_parser("verify", help="run certificate suites")
    p.add_argument("--suite", default="all", choices=("all", "causal", "reduction", "ops", "gradients"))
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--config", help="YAML whose model section configures the causal suite")
    p.add_argument("--out", help="write certificates as JSON lines")
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("bench", help="training-step wall clock and score-op counts")
    p.add_argument("--grid", default="T=64,128,256")
    p.add_argument("--model", default="both", choices=("hkt", "mha", "both"))
    _add_model_flags(p)
    p.add_argument("--batch", type=int, default=16)
    p.add_argument("--repeats", type=int, default=20)
    p.add_argument("--warmup", type=int, default=3)
    p.add_argument("--out", help="CSV path")
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("sweep", help="ablation rows and the levels/stride grid")
    _add_model_flags(p)
    _add_train_flags(p)
    p.add_argument("--data", required=True)
    p.add_argument("--out")
    p.add_argument("--ablations", help="';'-separated ablation names (default: all)")
    p.add_argument("--no-grid", dest="no_grid", action="store_true")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("report", help="tabulate run summaries")
    p.add_argument("runs", nargs="*", help="run directories holding summary.json")
    p.add_argument("--sweep", help="sweep.csv to calibrate the decay rate from")
    p.add_argument("--out", help="CSV path")
    p.set_defaults(func=cmd_report)
    return ap


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:  # argparse exits 2 on usage errors, 0 on --help
        return int(exc.code or 0)
    try:
        return args.func(args)
    except (UsageError, ConfigError, GenerationError, KeyError, TypeError) as exc:
        print(f"hkt: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (OSError, DatasetFormatError, CheckpointError) as exc:
        print(f"hkt: I/O error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
