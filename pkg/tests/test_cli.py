import json
import subprocess
import sys

import pytest

from pointpe.cli import DEFAULTS, build_parser, main, parse_range
from pointpe.outputs import csv_body
from pointpe.pointcloud import SHAPES


def run(*argv):
    return main([str(a) for a in argv])


@pytest.fixture(scope="module")
def trained(tmp_path_factory):
    out = tmp_path_factory.mktemp("cli")
    assert run("dataset", "--synthetic", "3x6", "--points", 128, "--seed", 7, "--out", out) == 0
    assert (
        run("train", "--manifest", out / "dataset.manifest.json", "--dim", 64, "--epochs", 3, "--batch-size", 6,
            "--pool", "mean", "--out", out)
        == 0
    )
    return out


def _csv_rows(path):
    return [line for line in csv_body(path.read_text()).splitlines()[1:] if line]


def test_dataset_counts_and_determinism(tmp_path, capsys):
    assert run("dataset", "--synthetic", "6x4", "--points", 32, "--seed", 7, "--out", tmp_path / "a") == 0
    assert "24 clouds" in capsys.readouterr().out
    assert len(list((tmp_path / "a" / "dataset").glob("*.xyz"))) == 24
    assert run("dataset", "--synthetic", "6x4", "--points", 32, "--seed", 7, "--out", tmp_path / "b") == 0
    a = (tmp_path / "a" / "dataset.manifest.json").read_bytes()
    assert a == (tmp_path / "b" / "dataset.manifest.json").read_bytes()
    recs = json.loads(a)
    assert recs[0] == {"path": f"dataset/{SHAPES[0]}_00000.xyz", "label": 0}
    assert recs[-1]["label"] == 5


def test_dataset_off_dir(tmp_path):
    cls = tmp_path / "meshes" / "tri"
    cls.mkdir(parents=True)
    (cls / "a.off").write_text("OFF\n3 1 0\n0 0 0\n1 0 0\n0 1 0\n3 0 1 2\n")
    assert run("dataset", "--off-dir", tmp_path / "meshes", "--points", 16, "--out", tmp_path / "o") == 0
    assert len(json.loads((tmp_path / "o" / "dataset.manifest.json").read_text())) == 1
    empty = tmp_path / "empty"
    empty.mkdir()
    assert run("dataset", "--off-dir", empty, "--out", tmp_path / "o2") == 3


def test_dataset_needs_one_source(tmp_path):
    assert run("dataset", "--out", tmp_path) == 2


def test_train_missing_manifest_leaves_nothing(tmp_path):
    out = tmp_path / "o"
    assert run("train", "--manifest", tmp_path / "none.json", "--epochs", 1, "--out", out) == 3
    assert not out.exists() or not any(out.iterdir())


def test_train_outputs(trained):
    curve = trained / "model.curve.csv"
    text = curve.read_text()
    assert text.startswith("# ") and "config_hash" in text
    assert len(_csv_rows(curve)) == 3
    doc = json.loads((trained / "model.runconfig.json").read_text())
    assert doc["subcommand"] == "train" and doc["dim"] == 64
    assert doc["config_hash"] in text


def test_eval_row_counts(trained):
    ck, man = trained / "model.npz", trained / "dataset.manifest.json"
    assert run("eval", "--checkpoint", ck, "--manifest", man, "--corruption", "background", "--levels", "all",
               "--name", "bg", "--out", trained) == 0
    rows = _csv_rows(trained / "bg.csv")
    assert len(rows) == 10 and rows[0].startswith("background_outliers,1,mean,")
    assert run("eval", "--checkpoint", ck, "--manifest", man, "--corruption", "none", "--name", "clean",
               "--out", trained) == 0
    assert len(_csv_rows(trained / "clean.csv")) == 1


def test_eval_workers_do_not_change_output(trained):
    ck, man = trained / "model.npz", trained / "dataset.manifest.json"
    common = ["eval", "--checkpoint", ck, "--manifest", man, "--corruption", "gaussian", "--levels", "1,5",
              "--out", trained]
    assert run(*common, "--name", "w1") == 0
    assert run(*common, "--name", "w2", "--workers", 2) == 0
    assert csv_body((trained / "w1.csv").read_text()) == csv_body((trained / "w2.csv").read_text())


def test_eval_encoder_mismatch_rejected(trained):
    ck, man = trained / "model.npz", trained / "dataset.manifest.json"
    assert run("eval", "--checkpoint", ck, "--manifest", man, "--encoder-seed", 1, "--out", trained) == 2
    assert run("eval", "--checkpoint", ck, "--manifest", man, "--encoder-seed", 0, "--dim", 64,
               "--name", "ok", "--out", trained) == 0


def test_eval_bad_levels(trained):
    ck, man = trained / "model.npz", trained / "dataset.manifest.json"
    assert run("eval", "--checkpoint", ck, "--manifest", man, "--corruption", "gaussian", "--levels", "11",
               "--out", trained) == 2
    assert run("eval", "--checkpoint", ck, "--manifest", man, "--corruption", "rotation", "--out", trained) == 2


def test_register_row_count_and_rerun(tmp_path):
    args = ["register", "--sigmas", "0.01:0.1:0.01", "--pool", "mean,max", "--trials", 1, "--points", 64,
            "--dim", 32, "--max-iters", 2, "--out", tmp_path]
    assert run(*args) == 0
    csv = (tmp_path / "register.csv").read_text()
    assert len(_csv_rows(tmp_path / "register.csv")) == 20
    assert "# success: rotation error < 5.0 deg" in csv
    first = csv_body(csv)
    assert run("register", "--config", tmp_path / "register.runconfig.json", "--out", tmp_path / "again") == 0
    assert csv_body((tmp_path / "again" / "register.csv").read_text()) == first


def test_diagnose_rerun_identical(tmp_path):
    args = ["diagnose", "--what", "distance", "--dim", 64, "--scales", "0.5", "--distances", "0,0.5",
            "--draws", 3, "--out", tmp_path]
    assert run(*args) == 0
    assert (tmp_path / "diagnose.svg").read_text().startswith("<!-- config_hash")
    assert run("diagnose", "--config", tmp_path / "diagnose.runconfig.json", "--out", tmp_path / "b") == 0
    assert csv_body((tmp_path / "diagnose.csv").read_text()) == csv_body((tmp_path / "b" / "diagnose.csv").read_text())
    for what in ("frequency", "illustration"):
        assert run("diagnose", "--what", what, "--samples", 10000, "--name", what, "--out", tmp_path) == 0
    assert run("diagnose", "--what", "nothing", "--out", tmp_path) == 2


def test_config_errors(tmp_path):
    bad = tmp_path / "c.json"
    bad.write_text(json.dumps({"subcommand": "train", "epochs": 1}))
    assert run("register", "--config", bad, "--out", tmp_path) == 2
    bad.write_text(json.dumps({"bogus": 1}))
    assert run("register", "--config", bad, "--out", tmp_path) == 2
    bad.write_text("{not json")
    assert run("register", "--config", bad, "--out", tmp_path) == 2
    assert run("register", "--config", tmp_path / "missing.json", "--out", tmp_path) == 2


def test_env_output_dir(tmp_path, monkeypatch):
    monkeypatch.setenv("POINTPE_OUT", str(tmp_path / "env"))
    assert run("diagnose", "--what", "frequency", "--samples", 10000) == 0
    assert (tmp_path / "env" / "diagnose.csv").exists()


def test_unknown_flag_is_an_error():
    with pytest.raises(SystemExit) as exc:
        main(["train", "--no-such-flag"])
    assert exc.value.code == 2


def test_help_documents_every_flag():
    parser = build_parser()
    sub = parser._subparsers._group_actions[0].choices
    for cmd, defaults in DEFAULTS.items():
        text = " ".join(sub[cmd].format_help().split())
        for key, default in defaults.items():
            assert "--" + key.replace("_", "-") in text
            assert f"default: {default}" in text


def test_parse_range():
    assert parse_range("0.01:0.1:0.01") == [round(0.01 * i, 12) for i in range(1, 11)]
    assert parse_range("1,2.5") == [1.0, 2.5]


def test_module_entry_point(tmp_path):
    proc = subprocess.run(
        [sys.executable, "-m", "pointpe.cli", "diagnose", "--what", "frequency", "--samples", "10000", "--out", str(tmp_path)],
        capture_output=True,
        text=True,
    )
    assert proc.returncode == 0, proc.stderr
