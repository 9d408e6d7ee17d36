"""Benchmark sweeps over datasets x models x privacy budgets x seeds.

A JSON plan file declares the grid; every cell trains one model, samples as
many rows as the real table holds, and scores the output with the fidelity
suite.  Cells run in a thread pool (``TABSYNTH_THREADS`` caps the width);
failed cells are recorded and the sweep keeps going.  Aggregates are plain
means/stds over the per-seed reports, so they can always be recomputed from
the report files on disk.
"""

from __future__ import annotations

import csv
import json
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .diffusion import DiffusionConfig
from .encoding import encode
from .errors import ConfigError
from .gan import DPWGAN, GanConfig
from .metrics import FidelityReport, evaluate
from .models import MODEL_KINDS, make_config, sample_table, train_model
from .privacy import PrivacyParams, gaussian_sigma
from .schema import RawTable, load_schema, load_table

REPORT_FIELDS = ("pmse_ratio", "marginal_distance", "alpha_precision_integral",
                 "beta_recall_integral", "auprc")
_SUBSAMPLE_SEED = 12345  # fixed so every seed sees the same subsample


@dataclass(frozen=True)
class DatasetSpec:
    name: str
    path: str
    schema_path: str | None = None
    subsample: int | None = None


@dataclass(frozen=True)
class BenchmarkPlan:
    datasets: tuple[DatasetSpec, ...]
    models: tuple[str, ...]
    epsilons: tuple  # floats, or None for an unprivatized run
    repeats: int
    seeds: tuple[int, ...]
    delta: float = 1e-5
    options: dict = field(default_factory=dict)

    def __post_init__(self) -> None:
        if self.repeats < 1:
            raise ConfigError(f"repeats must be >= 1, got {self.repeats}")
        if len(self.seeds) != self.repeats:
            raise ConfigError(
                f"seed list length {len(self.seeds)} must equal repeats {self.repeats}")
        if not self.datasets or not self.models or not self.epsilons:
            raise ConfigError("plan needs at least one dataset, model and epsilon")
        for kind in self.models:
            if kind not in MODEL_KINDS:
                raise ConfigError(f"unknown model kind {kind!r} in plan")
        for eps in self.epsilons:
            if eps is not None and eps <= 0:
                raise ConfigError(f"epsilon budgets must be positive, got {eps}")


def load_plan(path: str | Path) -> BenchmarkPlan:
    payload = json.loads(Path(path).read_text(encoding="utf-8"))
    try:
        datasets = tuple(
            DatasetSpec(d["name"], d["path"], d.get("schema"), d.get("subsample"))
            for d in payload["datasets"])
        return BenchmarkPlan(
            datasets=datasets,
            models=tuple(payload["models"]),
            epsilons=tuple(payload["epsilons"]),
            repeats=int(payload["repeats"]),
            seeds=tuple(int(s) for s in payload["seeds"]),
            delta=float(payload.get("delta", 1e-5)),
            options=dict(payload.get("options", {})),
        )
    except KeyError as exc:
        raise ConfigError(f"benchmark plan is missing key {exc}") from exc


def load_plan_dataset(spec: DatasetSpec) -> RawTable:
    schema = load_schema(spec.schema_path) if spec.schema_path else None
    table = load_table(spec.path, schema)
    if spec.subsample is not None and spec.subsample < len(table.rows):
        keep = np.random.default_rng(_SUBSAMPLE_SEED).choice(
            len(table.rows), size=spec.subsample, replace=False)
        table = RawTable(table.schema, [table.rows[i] for i in sorted(keep)])
    return table


def _build_privacy(epsilon, delta: float, n_rows: int, options: dict) -> PrivacyParams | None:
    if epsilon is None:
        return None
    batch = int(options.get("batch_target", 512))
    sigma = float(options.get("sigma") or gaussian_sigma(epsilon, delta))
    return PrivacyParams(
        epsilon_target=float(epsilon),
        delta=delta,
        sigma=sigma,
        clip_norm=float(options.get("clip_norm", 1.0)),
        sample_rate=min(1.0, batch / n_rows),
    )


# Options a plan may set; each cell keeps only the keys its model understands,
# so one option block can drive a sweep that mixes model families.
_DIFFUSION_OPTION_KEYS = frozenset(DiffusionConfig.__dataclass_fields__) - {"privacy", "variant"}
_GAN_OPTION_KEYS = frozenset(GanConfig.__dataclass_fields__) - {"privacy"}
_PRIVACY_OPTION_KEYS = frozenset({"sigma", "clip_norm"})


def run_cell(table: RawTable, model_kind: str, epsilon, seed: int,
             delta: float = 1e-5, options: dict | None = None) -> FidelityReport:
    """Train, sample |table| rows, evaluate: one benchmark grid cell."""
    options = dict(options or {})
    unknown = set(options) - _DIFFUSION_OPTION_KEYS - _GAN_OPTION_KEYS - _PRIVACY_OPTION_KEYS
    if unknown:
        raise ConfigError(f"unknown benchmark options: {', '.join(sorted(unknown))}")
    privacy = _build_privacy(epsilon, delta, len(table.rows), options)
    allowed = _GAN_OPTION_KEYS if model_kind == DPWGAN else _DIFFUSION_OPTION_KEYS
    config = make_config(model_kind, privacy=privacy,
                         **{k: v for k, v in options.items() if k in allowed})
    model = train_model(encode(table), config, seed)
    synth = sample_table(model, len(table.rows), seed=seed + 1)
    meta = {"model": model_kind, "epsilon_target": epsilon, "seed": seed,
            "epsilon_spent": model.epsilon_spent, "steps": model.ledger.steps_taken}
    return evaluate(table, synth, metadata=meta)


def worker_count(n_cells: int) -> int:
    limit = os.environ.get("TABSYNTH_THREADS")
    cap = int(limit) if limit else (os.cpu_count() or 1)
    return max(1, min(n_cells, cap))


def _eps_label(epsilon) -> str:
    return "none" if epsilon is None else f"{epsilon:g}"


def aggregate_reports(cells: dict) -> list[dict]:
    """One row per (dataset, model, epsilon): mean and std of every metric."""
    rows = []
    for (ds, model, eps), reports in sorted(
            cells.items(), key=lambda kv: (kv[0][0], kv[0][1], _eps_label(kv[0][2]))):
        row = {"dataset": ds, "model": model, "epsilon": _eps_label(eps),
               "n_seeds": len(reports)}
        for name in REPORT_FIELDS:
            vals = [getattr(r, name) for r in reports]
            row[f"{name}_mean"] = float(np.mean(vals)) if vals else float("nan")
            row[f"{name}_std"] = float(np.std(vals)) if vals else float("nan")
        rows.append(row)
    return rows


def run_benchmark(plan: BenchmarkPlan, out_dir: str | Path) -> tuple[list[dict], list[dict]]:
    """Run every cell of the plan; returns (aggregate rows, failure records)."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    tables = {spec.name: load_plan_dataset(spec) for spec in plan.datasets}

    jobs = [(spec.name, model, eps, seed)
            for spec in plan.datasets
            for model in plan.models
            for eps in plan.epsilons
            for seed in plan.seeds]

    def run_one(job):
        ds, model, eps, seed = job
        return run_cell(tables[ds], model, eps, seed, plan.delta, plan.options)

    failures: list[dict] = []
    cells: dict = {}
    with ThreadPoolExecutor(max_workers=worker_count(len(jobs))) as pool:
        outcomes = list(pool.map(lambda j: _guarded(run_one, j), jobs))
    for job, (report, error) in zip(jobs, outcomes):
        ds, model, eps, seed = job
        if error is not None:
            failures.append({"dataset": ds, "model": model,
                             "epsilon": _eps_label(eps), "seed": seed, "error": error})
            continue
        name = f"{ds}_{model}_eps{_eps_label(eps)}_seed{seed}.report.json"
        (out / name).write_text(
            json.dumps(report.to_json_dict(), indent=2) + "\n", encoding="utf-8")
        cells.setdefault((ds, model, eps), []).append(report)

    rows = aggregate_reports(cells)
    _write_results_csv(rows, out / "results.csv")
    if failures:
        (out / "failures.json").write_text(
            json.dumps(failures, indent=2) + "\n", encoding="utf-8")
    return rows, failures


def _guarded(fn, job):
    try:
        return fn(job), None
    except Exception as exc:  # noqa: BLE001 - cell isolation is the point
        return None, f"{type(exc).__name__}: {exc}"


def _write_results_csv(rows: list[dict], path: Path) -> None:
    header = ["dataset", "model", "epsilon", "n_seeds"]
    for name in REPORT_FIELDS:
        header += [f"{name}_mean", f"{name}_std"]
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=header, lineterminator="\n")
        writer.writeheader()
        for row in rows:
            writer.writerow(row)
