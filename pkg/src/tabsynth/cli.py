"""Command-line interface: train / sample / evaluate / benchmark / project.

Every command reads an optional JSON config file (``--config``); explicit
flags override config keys.  Exit codes: 0 success, 1 configuration or
domain error, 2 unreadable or corrupt input.  All outputs are UTF-8 and
byte-reproducible for a fixed seed.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
from pathlib import Path

from . import benchmark as bench
from .errors import (BundleError, ConfigError, DegenerateDataError, ParseError,
                     PrivacyError, SchemaError, TabsynthError)
from .encoding import encode
from .metrics import DEFAULT_BINS, evaluate, pca_projection_histogram
from .models import (MODEL_KINDS, load_bundle, make_config, sample_table,
                     save_bundle, train_model)
from .privacy import PrivacyParams, gaussian_sigma
from .schema import load_schema, load_table, write_table

_DOMAIN_ERRORS = (ConfigError, SchemaError, PrivacyError)
_INPUT_ERRORS = (ParseError, BundleError, DegenerateDataError, OSError,
                 json.JSONDecodeError)
_GOOD_BATCHES = {2 ** k for k in range(6, 12)}  # the tuned search space

LOG_COLUMNS = ("epoch", "batch", "kind", "loss", "epsilon")


def _merge_config(args: argparse.Namespace, keys: tuple[str, ...]) -> dict:
    """Config-file values first, explicit flags on top."""
    merged: dict = {}
    if args.config:
        payload = json.loads(Path(args.config).read_text(encoding="utf-8"))
        if not isinstance(payload, dict):
            raise ConfigError("config file must hold a JSON object")
        merged.update(payload)
    for key in keys:
        value = getattr(args, key, None)
        if value is not None:
            merged[key] = value
    return merged


def _require(cfg: dict, key: str):
    if key not in cfg or cfg[key] is None:
        raise ConfigError(f"missing required option {key!r} (flag or config file)")
    return cfg[key]


_TRAIN_KEYS = ("data", "schema", "model", "epsilon", "delta", "sigma", "clip",
               "batch", "epochs", "steps", "lr", "seed")


def cmd_train(args: argparse.Namespace) -> int:
    cfg = _merge_config(args, _TRAIN_KEYS)
    kind = _require(cfg, "model")
    if kind not in MODEL_KINDS:
        raise ConfigError(f"unknown model {kind!r}; choose one of {', '.join(MODEL_KINDS)}")
    if cfg.get("epsilon") is not None and float(cfg["epsilon"]) <= 0.0:
        raise PrivacyError(f"epsilon target must be positive, got {cfg['epsilon']}")
    schema = load_schema(cfg["schema"]) if cfg.get("schema") else None
    table = load_table(_require(cfg, "data"), schema)
    seed = int(cfg.get("seed", 0))

    batch = int(cfg.get("batch", 512))
    if batch not in _GOOD_BATCHES:
        print(f"warning: batch size {batch} is outside the tuned range 2^6..2^11",
              file=sys.stderr)
    delta = float(cfg.get("delta", 1e-5))
    privacy = None
    if cfg.get("epsilon") is not None:
        epsilon = float(cfg["epsilon"])
        sigma = float(cfg["sigma"]) if cfg.get("sigma") is not None else gaussian_sigma(epsilon, delta)
        privacy = PrivacyParams(
            epsilon_target=epsilon, delta=delta, sigma=sigma,
            clip_norm=float(cfg.get("clip", 1.0)),
            sample_rate=min(1.0, batch / len(table.rows)))

    options: dict = {"batch_target": batch}
    if cfg.get("epochs") is not None:
        options["epochs"] = int(cfg["epochs"])
    if cfg.get("lr") is not None:
        lr = float(cfg["lr"])
        if kind == "dpwgan":
            options["generator_lr"] = lr
            options["critic_lr"] = lr
        else:
            options["lr"] = lr
    if cfg.get("steps") is not None:
        if kind == "dpwgan":
            raise ConfigError("--steps-T only applies to the diffusion models")
        options["steps"] = int(cfg["steps"])
    for key in ("width", "blocks", "critic_steps", "latent_dim", "weight_clamp",
                "generator_lr", "critic_lr"):
        if key in cfg:
            options[key] = cfg[key]

    model = train_model(encode(table), make_config(kind, privacy=privacy, **options), seed)
    out = Path(args.out or cfg.get("out") or "model.json")
    save_bundle(model, out)
    log_path = Path(str(out) + ".log.csv")
    with open(log_path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=LOG_COLUMNS, lineterminator="\n")
        writer.writeheader()
        for entry in model.log:
            writer.writerow({k: entry.get(k, "") for k in LOG_COLUMNS})
    eps = "-" if model.epsilon_spent is None else f"{model.epsilon_spent:.4f}"
    print(f"trained {kind}: {model.ledger.steps_taken} steps, epsilon spent {eps}; "
          f"bundle {out}, log {log_path}")
    return 0


def cmd_sample(args: argparse.Namespace) -> int:
    cfg = _merge_config(args, ("model", "rows", "seed"))
    rows = int(_require(cfg, "rows"))
    if rows < 1:
        raise ConfigError(f"rows must be >= 1, got {rows}")
    model = load_bundle(_require(cfg, "model"))
    table = sample_table(model, rows, seed=int(cfg.get("seed", 0)))
    out = args.out or "synthetic.csv"
    write_table(table, out)
    print(f"wrote {rows} synthetic rows to {out}")
    return 0


def cmd_evaluate(args: argparse.Namespace) -> int:
    real = load_table(args.real)
    synth = load_table(args.synth, real.schema)
    report = evaluate(real, synth)
    if args.out:
        Path(args.out).write_text(
            json.dumps(report.to_json_dict(), indent=2) + "\n", encoding="utf-8")
    print(f"pMSE {report.pmse_ratio:.4f}  MD {report.marginal_distance:.4f}  "
          f"P {report.alpha_precision_integral:.4f}  R {report.beta_recall_integral:.4f}  "
          f"AUPRC {report.auprc:.4f}")
    return 0


def cmd_benchmark(args: argparse.Namespace) -> int:
    plan = bench.load_plan(args.plan)
    out_dir = args.out or "benchmark_out"
    rows, failures = bench.run_benchmark(plan, out_dir)
    for row in rows:
        print(f"{row['dataset']} {row['model']} eps={row['epsilon']}: "
              f"pMSE {row['pmse_ratio_mean']:.4f} MD {row['marginal_distance_mean']:.4f} "
              f"AUPRC {row['auprc_mean']:.4f} ({row['n_seeds']} seeds)")
    for fail in failures:
        print(f"FAILED {fail['dataset']} {fail['model']} eps={fail['epsilon']} "
              f"seed={fail['seed']}: {fail['error']}", file=sys.stderr)
    print(f"results in {Path(out_dir) / 'results.csv'}")
    return 0


def cmd_project(args: argparse.Namespace) -> int:
    real = load_table(args.real)
    other = load_table(args.synth, real.schema)
    result = pca_projection_histogram(encode(real), encode(other), bins=args.bins)
    out = Path(args.out or "projection.csv")
    with open(out, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["row", "col", "real_count", "other_count"])
        for i in range(result.bins):
            for j in range(result.bins):
                writer.writerow([i, j, int(result.real_grid[i, j]),
                                 int(result.other_grid[i, j])])
    sidecar = Path(str(out) + ".basis.json")
    sidecar.write_text(json.dumps({
        "eigenvalues": [float(v) for v in result.eigenvalues],
        "components": [[float(v) for v in row] for row in result.components],
        "center": [float(v) for v in result.center],
        "box_min": [float(v) for v in result.box_min],
        "box_max": [float(v) for v in result.box_max],
        "bins": result.bins,
    }, indent=2) + "\n", encoding="utf-8")
    print(f"wrote projection grid {out} and basis {sidecar}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="tabsynth",
        description="Differentially private synthetic tabular data: train, sample, evaluate.")
    sub = parser.add_subparsers(dest="command", required=True)

    def shared(p: argparse.ArgumentParser) -> None:
        p.add_argument("--config", help="JSON config file; flags override its keys")
        p.add_argument("--seed", type=int, default=None, help="random seed (default 0)")
        p.add_argument("--out", help="output path")

    train = sub.add_parser("train", help="fit a generative model on a table")
    shared(train)
    train.add_argument("--data", help="CSV file with a header row")
    train.add_argument("--schema", help="optional schema JSON (else inferred)")
    train.add_argument("--model", choices=MODEL_KINDS, help="model kind")
    train.add_argument("--epsilon", type=float, help="privacy budget (omit for unprivatized)")
    train.add_argument("--delta", type=float, default=None, help="privacy delta (default 1e-5)")
    train.add_argument("--sigma", type=float, help="noise multiplier (default: calibrated)")
    train.add_argument("--clip", type=float, default=None, help="gradient clip norm (default 1.0)")
    train.add_argument("--batch", type=int, default=None, help="Poisson batch target (default 512)")
    train.add_argument("--epochs", type=int, default=None, help="epoch cap (default 300)")
    train.add_argument("--steps-T", dest="steps", type=int, default=None,
                       help="diffusion steps T (default 5)")
    train.add_argument("--lr", type=float, default=None, help="learning rate")
    train.set_defaults(fn=cmd_train)

    sample = sub.add_parser("sample", help="draw synthetic rows from a saved bundle")
    shared(sample)
    sample.add_argument("--model", help="path to a model bundle")
    sample.add_argument("--rows", type=int, help="number of rows to draw")
    sample.set_defaults(fn=cmd_sample)

    ev = sub.add_parser("evaluate", help="score a synthetic table against the real one")
    shared(ev)
    ev.add_argument("--real", required=True)
    ev.add_argument("--synth", required=True)
    ev.set_defaults(fn=cmd_evaluate)

    bm = sub.add_parser("benchmark", help="run a plan of datasets x models x budgets x seeds")
    shared(bm)
    bm.add_argument("--plan", required=True, help="benchmark plan JSON")
    bm.set_defaults(fn=cmd_benchmark)

    proj = sub.add_parser("project", help="export PCA projection histograms")
    shared(proj)
    proj.add_argument("--real", required=True)
    proj.add_argument("--synth", required=True)
    proj.add_argument("--bins", type=int, default=DEFAULT_BINS)
    proj.set_defaults(fn=cmd_project)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except _DOMAIN_ERRORS as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except _INPUT_ERRORS as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except TabsynthError as exc:  # anything else from the package is a domain error
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
