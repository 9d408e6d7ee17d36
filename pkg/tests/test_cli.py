"""End-to-end command-line runs: happy paths, exit codes, reproducibility."""

import csv
import json

import numpy as np
import pytest

from tabsynth.cli import LOG_COLUMNS, main
from tabsynth.schema import infer_schema, load_table

FAST = ["--epochs", "2", "--batch", "512"]


@pytest.fixture()
def data_csv(tmp_path):
    rng = np.random.default_rng(0)
    lines = ["c,x,y"]
    for _ in range(60):
        lines.append(f"{'uv'[rng.integers(2)]},{rng.random():.6f},{rng.random():.6f}")
    path = tmp_path / "data.csv"
    path.write_text("\n".join(lines) + "\n")
    return path


def train_args(data_csv, out, extra=()):
    return ["train", "--data", str(data_csv), "--model", "tablediffusion",
            "--out", str(out), *FAST, *extra]


def test_train_sample_evaluate_round_trip(tmp_path, data_csv, capsys):
    bundle = tmp_path / "model.json"
    assert main(train_args(data_csv, bundle)) == 0
    out = capsys.readouterr()
    assert "epsilon spent -" in out.out  # unprivatized
    assert out.err == ""
    assert bundle.exists()

    log_path = tmp_path / "model.json.log.csv"
    with open(log_path, newline="") as fh:
        entries = list(csv.DictReader(fh))
    assert tuple(entries[0].keys()) == LOG_COLUMNS
    assert len(entries) == 2  # one full batch per epoch at this size
    assert all(e["epsilon"] == "" for e in entries)

    synth = tmp_path / "synthetic.csv"
    assert main(["sample", "--model", str(bundle), "--rows", "40",
                 "--out", str(synth), "--seed", "3"]) == 0
    table = load_table(synth)
    assert len(table.rows) == 40

    report_path = tmp_path / "report.json"
    assert main(["evaluate", "--real", str(data_csv), "--synth", str(synth),
                 "--out", str(report_path)]) == 0
    printed = capsys.readouterr().out
    assert "pMSE" in printed and "AUPRC" in printed
    report = json.loads(report_path.read_text())
    assert set(report) >= {"pmse_ratio", "marginal_distance", "auprc"}


def test_training_is_byte_reproducible(tmp_path, data_csv):
    a, b = tmp_path / "a.json", tmp_path / "b.json"
    assert main(train_args(data_csv, a, extra=["--seed", "5"])) == 0
    assert main(train_args(data_csv, b, extra=["--seed", "5"])) == 0
    assert a.read_bytes() == b.read_bytes()
    assert (tmp_path / "a.json.log.csv").read_bytes() == (tmp_path / "b.json.log.csv").read_bytes()

    sa, sb = tmp_path / "sa.csv", tmp_path / "sb.csv"
    for out in (sa, sb):
        assert main(["sample", "--model", str(a), "--rows", "25",
                     "--out", str(out), "--seed", "9"]) == 0
    assert sa.read_bytes() == sb.read_bytes()


def test_default_seed_is_zero(tmp_path, data_csv):
    a, b = tmp_path / "a.json", tmp_path / "b.json"
    assert main(train_args(data_csv, a)) == 0
    assert main(train_args(data_csv, b, extra=["--seed", "0"])) == 0
    assert a.read_bytes() == b.read_bytes()


def test_privatized_training_reports_epsilon(tmp_path, data_csv, capsys):
    bundle = tmp_path / "model.json"
    assert main(train_args(
        data_csv, bundle,
        extra=["--epsilon", "1.0", "--sigma", "1.5", "--batch", "2", "--epochs", "5"],
    )) == 0
    out = capsys.readouterr()
    assert "warning: batch size 2" in out.err
    assert "epsilon spent -" not in out.out
    payload = json.loads(bundle.read_text())
    assert payload["epsilon_spent"] is not None
    assert payload["epsilon_spent"] <= 1.0


def test_config_file_with_flag_overrides(tmp_path, data_csv):
    cfg = tmp_path / "train.json"
    cfg.write_text(json.dumps({
        "data": str(data_csv), "model": "tablediffusion",
        "epochs": 1, "batch": 512, "out": str(tmp_path / "from_cfg.json"),
    }))
    assert main(["train", "--config", str(cfg), "--epochs", "3"]) == 0
    with open(tmp_path / "from_cfg.json.log.csv", newline="") as fh:
        entries = list(csv.DictReader(fh))
    assert len(entries) == 3  # the flag beat the config file


def test_batch_size_warning_only_outside_tuned_range(tmp_path, data_csv, capsys):
    assert main(train_args(data_csv, tmp_path / "m.json", extra=["--batch", "100"])) == 0
    assert "outside the tuned range" in capsys.readouterr().err
    assert main(train_args(data_csv, tmp_path / "m2.json", extra=["--batch", "64"])) == 0
    assert "outside the tuned range" not in capsys.readouterr().err


def test_exit_codes_for_bad_configuration(tmp_path, data_csv):
    # epsilon <= 0 is a domain error, and it outranks any data problem
    assert main(["train", "--data", str(tmp_path / "nope.csv"),
                 "--model", "tablediffusion", "--epsilon", "0"]) == 1
    # missing required option
    assert main(["train", "--model", "tablediffusion"]) == 1
    # unknown model via config file (argparse never sees it)
    cfg = tmp_path / "bad.json"
    cfg.write_text(json.dumps({"data": str(data_csv), "model": "copula"}))
    assert main(["train", "--config", str(cfg)]) == 1
    # diffusion-only flag on the adversarial model
    assert main(["train", "--data", str(data_csv), "--model", "dpwgan",
                 "--steps-T", "3"]) == 1
    # sampling fewer than one row
    assert main(["sample", "--model", str(tmp_path / "m.json"), "--rows", "0"]) == 1


def test_exit_codes_for_bad_input(tmp_path, data_csv):
    # unreadable training data
    assert main(["train", "--data", str(tmp_path / "missing.csv"),
                 "--model", "tablediffusion"]) == 2
    # corrupt bundle
    bundle = tmp_path / "corrupt.json"
    bundle.write_text("{ nope")
    assert main(["sample", "--model", str(bundle), "--rows", "5"]) == 2
    # config file that is not JSON
    cfg = tmp_path / "broken.json"
    cfg.write_text("not json at all")
    assert main(["train", "--config", str(cfg)]) == 2
    # config file holding a JSON array
    cfg.write_text("[1, 2]")
    assert main(["train", "--config", str(cfg)]) == 1
    # a well-formed file whose labels violate the real schema is a domain
    # error, not an I/O one
    bad_synth = tmp_path / "bad.csv"
    bad_synth.write_text("c,x,y\nzebra,0.5,0.5\n")
    assert main(["evaluate", "--real", str(data_csv), "--synth", str(bad_synth)]) == 1
    # whereas a file that cannot be parsed at all is
    bad_synth.write_text("c,x,y\nu,not-a-number,0.5\n")
    assert main(["evaluate", "--real", str(data_csv), "--synth", str(bad_synth)]) == 2


def test_project_writes_grid_and_basis(tmp_path, data_csv, capsys):
    out = tmp_path / "proj.csv"
    assert main(["project", "--real", str(data_csv), "--synth", str(data_csv),
                 "--bins", "8", "--out", str(out)]) == 0
    with open(out, newline="") as fh:
        rows = list(csv.reader(fh))
    assert rows[0] == ["row", "col", "real_count", "other_count"]
    assert len(rows) == 1 + 8 * 8
    counts = [int(r[2]) for r in rows[1:]]
    assert sum(counts) == 60
    basis = json.loads((tmp_path / "proj.csv.basis.json").read_text())
    assert basis["bins"] == 8
    assert len(basis["components"]) == 2
    assert "wrote projection grid" in capsys.readouterr().out


def test_benchmark_command(tmp_path, data_csv, capsys):
    plan = tmp_path / "plan.json"
    plan.write_text(json.dumps({
        "datasets": [{"name": "toy", "path": str(data_csv)}],
        "models": ["tablediffusion"],
        "epsilons": [None],
        "repeats": 1,
        "seeds": [0],
        "options": {"width": 8, "blocks": 1, "epochs": 1, "batch_target": 512},
    }))
    out_dir = tmp_path / "bench"
    assert main(["benchmark", "--plan", str(plan), "--out", str(out_dir)]) == 0
    assert (out_dir / "results.csv").exists()
    printed = capsys.readouterr().out
    assert "toy tablediffusion eps=none" in printed
    assert "results.csv" in printed


def test_schema_flag_is_honored(tmp_path, data_csv):
    text = data_csv.read_text()
    schema = infer_schema(text)
    from tabsynth.schema import save_schema

    schema_path = tmp_path / "s.json"
    save_schema(schema, schema_path)
    bundle = tmp_path / "m.json"
    assert main(train_args(data_csv, bundle, extra=["--schema", str(schema_path)])) == 0
    payload = json.loads(bundle.read_text())
    names = [c["name"] for c in payload["schema"]["columns"]]
    assert names == ["c", "x", "y"]
