import csv
import json
import os
from pathlib import Path

import pytest

from sparsevit.cli import main

ROOT = Path(__file__).resolve().parents[1]
SMOKE = str(ROOT / "configs" / "smoke.cfg")
REFERENCE = str(ROOT / "configs" / "reference.cfg")


def files(d):
    d = Path(d)
    return {str(p.relative_to(d)): p.read_bytes() for p in sorted(d.rglob("*"))
            if p.is_file() and p.name != "run_manifest.json"}


@pytest.fixture(scope="module")
def dataset(tmp_path_factory):
    out = tmp_path_factory.mktemp("cli") / "data"
    assert main(["synth", "--config", SMOKE, "--out", str(out)]) == 0
    return out


def test_synth_layout_and_determinism(dataset, tmp_path):
    again = tmp_path / "again"
    assert main(["--config", SMOKE, "synth", "--out", str(again)]) == 0
    assert files(dataset) == files(again)
    rows = list(csv.DictReader(open(dataset / "test_hard.csv")))
    assert rows and {r["variant"] for r in rows} == {"hard_negative"}
    assert (dataset / rows[0]["image_path"]).exists()
    man = json.loads((dataset / "run_manifest.json").read_text())
    assert man["command"] == "synth" and man["seed"] == 0


def test_synth_zero_samples(tmp_path):
    out = tmp_path / "empty"
    args = ["synth", "--config", SMOKE, "--out", str(out)]
    for k in ("n_train", "n_val", "n_test", "n_test_hard"):
        args += ["--set", f"{k}=0"]
    assert main(args) == 0
    assert (out / "train.csv").read_text() == "seed,image_path,mask_path,variant\n"


def test_refuses_non_empty_out(dataset, capsys):
    assert main(["synth", "--config", SMOKE, "--out", str(dataset)]) == 1
    assert "--force" in capsys.readouterr().err


def test_seed_flag_changes_data(dataset, tmp_path):
    out = tmp_path / "s1"
    assert main(["synth", "--config", SMOKE, "--seed", "1", "--out", str(out)]) == 0
    assert files(out)["train/0000000.ppm"] != files(dataset)["train/0000000.ppm"]


def test_train_smoke_and_determinism(dataset, tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    for out in (a, b):
        assert main(["train", "--config", SMOKE, "--data", str(dataset), "--out", str(out)]) == 0
    loss_a = (a / "loss.csv").read_bytes()
    assert loss_a == (b / "loss.csv").read_bytes()
    rows = list(csv.DictReader(open(a / "loss.csv")))
    assert len(rows) == 2 * 16 // 4
    assert float(rows[-1]["loss"]) < float(rows[0]["loss"])
    assert float(rows[0]["lr"]) == 1e-3 and float(rows[-1]["lr"]) == pytest.approx(1e-7, abs=1e-18)
    assert files(a / "checkpoint") == files(b / "checkpoint")


def test_resume_matches_uninterrupted(dataset, tmp_path):
    full, part = tmp_path / "full", tmp_path / "part"
    assert main(["train", "--config", SMOKE, "--data", str(dataset), "--out", str(full)]) == 0
    assert main(["train", "--config", SMOKE, "--data", str(dataset), "--out", str(part),
                 "--checkpoint-every", "3"]) == 0
    resumed = tmp_path / "resumed"
    os.makedirs(resumed)
    (resumed / "loss.csv").write_bytes((part / "loss.csv").read_bytes())
    assert main(["train", "--config", SMOKE, "--data", str(dataset), "--out", str(resumed),
                 "--resume", str(part / "checkpoints" / "step_000003")]) == 0
    ref = list(csv.DictReader(open(full / "loss.csv")))
    got = list(csv.DictReader(open(resumed / "loss.csv")))
    assert [r["step"] for r in got] == [r["step"] for r in ref]
    for r, g in zip(ref, got):
        assert abs(float(r["loss"]) - float(g["loss"])) <= 1e-12


def test_uniform_rate_plan_logged(dataset, tmp_path):
    out = tmp_path / "uni"
    assert main(["train", "--config", SMOKE, "--data", str(dataset), "--out", str(out),
                 "--uniform-rate", "2", "--set", "epochs=1"]) == 0
    plan = json.loads((out / "run_manifest.json").read_text())["sparsity_plan"]
    assert plan["stage3"] == [2, 2, 2, 2] and plan["stage3_taps"] == [3]
    assert plan["stage4_taps"] == [1]


def test_eval_and_hash_check(dataset, tmp_path, capsys):
    run = tmp_path / "run"
    assert main(["train", "--config", SMOKE, "--data", str(dataset), "--out", str(run),
                 "--set", "epochs=1"]) == 0
    ev = tmp_path / "ev"
    assert main(["eval", "--config", SMOKE, "--checkpoint", str(run / "checkpoint"),
                 "--data", str(dataset), "--out", str(ev), "--robustness"]) == 0
    text = (ev / "metrics.csv").read_text()
    assert text.startswith("sample,f1,auc,iou\n") and "# summary" in text
    assert len((ev / "robustness.csv").read_text().splitlines()) == 1 + 4 + 3 + 3
    bad = ["eval", "--config", SMOKE, "--set", "fuse_dim=64", "--set", "channels=8,16,32,64",
           "--checkpoint", str(run / "checkpoint"), "--data", str(dataset), "--out", str(tmp_path / "x")]
    assert main(bad) == 1
    assert "--allow-mismatch" in capsys.readouterr().err
    # non-model keys do not affect the hash
    assert main(["eval", "--config", SMOKE, "--set", "threshold=0.7", "--checkpoint",
                 str(run / "checkpoint"), "--data", str(dataset), "--out", str(tmp_path / "y")]) == 0


def test_profile_ab(tmp_path, capsys):
    out = tmp_path / "prof"
    assert main(["profile", "--config", REFERENCE, "--ab-global", "--sweep-rates", "--out", str(out)]) == 0
    lines = (out / "cost.csv").read_text().splitlines()
    ratio = float(lines[-1].split(",")[-1])
    assert lines[-1].startswith("RATIO_SPARSE_OVER_GLOBAL") and 0.78 <= ratio <= 0.88
    sweep = list(csv.DictReader(open(out / "rate_sweep.csv")))
    assert [float(r["ratio_to_global"]) for r in sweep] == [1.0, 0.25, 0.0625, 0.015625]


def test_profile_stdout(capsys):
    assert main(["profile", "--config", SMOKE]) == 0
    assert capsys.readouterr().out.splitlines()[-1].startswith("TOTAL,")


def test_empty_config_lists_missing_keys(tmp_path, capsys):
    empty = tmp_path / "empty.cfg"
    empty.write_text("# nothing here\n")
    assert main(["profile", "--config", str(empty)]) == 1
    err = capsys.readouterr().err
    assert "channels" in err and "depths" in err


def test_usage_errors(capsys):
    assert main(["profile", "--config", SMOKE, "--set", "nonsense=1"]) == 1
    with pytest.raises(SystemExit) as exc:
        main(["frobnicate"])
    assert exc.value.code == 1
    assert main(["train", "--config", SMOKE, "--out", "/nonexistent/x"]) == 1


def test_runtime_error_exit_code(tmp_path):
    assert main(["train", "--config", SMOKE, "--data", str(tmp_path / "missing"),
                 "--out", str(tmp_path / "o")]) == 2
