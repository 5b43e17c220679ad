import json
import os
import subprocess
import sys

import numpy as np
import pytest

from textadapt import cli
from textadapt.io import load_model, read_icdar_file, read_stroke_map
from textadapt.toymodel import NumericError


@pytest.fixture(scope="module")
def data_dir(tmp_path_factory):
    d = tmp_path_factory.mktemp("data")
    assert cli.main(["datagen", "--out", str(d), "--n-source", "3", "--n-target-train", "3",
                     "--n-target-test", "2", "--size", "96", "--seed", "1"]) == 0
    return d


def test_datagen_tree(data_dir):
    assert sorted(os.listdir(data_dir)) == ["manifest.json", "source", "target_test", "target_train"]
    assert len([f for f in os.listdir(data_dir / "source") if f.endswith(".pgm")]) == 3


def test_eval_identical_dirs(data_dir, capsys):
    gt = str(data_dir / "target_test")
    assert cli.main(["eval", "--pred", gt, "--gt", gt]) == 0
    out = capsys.readouterr().out.splitlines()
    assert out[0] == "100.000 100.000 100.000"
    blob = json.loads(out[1])
    assert blob["fscore"] == 1.0 and blob["iou"] == 0.5


def test_unknown_flag_is_usage_error(capsys):
    with pytest.raises(SystemExit) as e:
        cli.main(["eval", "--bogus"])
    assert e.value.code == 1
    assert "usage" in capsys.readouterr().err


def test_missing_command_is_usage_error():
    with pytest.raises(SystemExit) as e:
        cli.main([])
    assert e.value.code == 1


def test_out_of_range_count():
    with pytest.raises(SystemExit) as e:
        cli.main(["datagen", "--out", "x", "--n-source", "-1"])
    assert e.value.code == 1


def test_missing_data_is_data_error(tmp_path, capsys):
    assert cli.main(["eval", "--pred", str(tmp_path / "nope"), "--gt", str(tmp_path)]) == 2
    assert "nope" in capsys.readouterr().err


def test_bad_box_file_is_data_error(tmp_path):
    (tmp_path / "gt_a.txt").write_text("1,2,3\n")
    assert cli.main(["eval", "--pred", str(tmp_path), "--gt", str(tmp_path)]) == 2


def test_duplicate_ids_are_data_error(tmp_path):
    (tmp_path / "gt_a.txt").write_text("")
    (tmp_path / "a.txt").write_text("")
    assert cli.main(["eval", "--pred", str(tmp_path), "--gt", str(tmp_path)]) == 2


def test_numeric_failure_exit_code(data_dir, tmp_path, monkeypatch):
    def boom(*a, **k):
        raise NumericError(7, "L_task_src")

    monkeypatch.setattr(cli, "pretrain", boom)
    assert cli.main(["pretrain", "--data", str(data_dir), "--out", str(tmp_path / "m")]) == 3


def test_swt_command(data_dir, tmp_path):
    out = tmp_path / "w.smap"
    img = data_dir / "source" / "img_00000.pgm"
    assert cli.main(["swt", "--image", str(img), "--out", str(out)]) == 0
    m = read_stroke_map(out).data
    assert m.shape == (96, 96) and np.any(m > 0) and np.all((m == -1) | (m >= 1))


def test_staged_commands_are_deterministic(data_dir, tmp_path, capsys):
    def run(tag):
        base = tmp_path / tag
        m, labels, m2 = base / "m.tadm", base / "labels", base / "m2.tadm"
        os.makedirs(base)
        flags = ["--iters", "4", "--batch-source", "2", "--batch-target", "2", "--seed", "3"]
        assert cli.main(["pretrain", "--data", str(data_dir), "--out", str(m),
                         "--diagnostics", str(base / "d.csv")] + flags) == 0
        assert cli.main(["pseudolabel", "--model", str(m), "--data", str(data_dir),
                         "--out", str(labels), "--score-threshold", "0.5"]) == 0
        assert cli.main(["finetune", "--model", str(m), "--data", str(data_dir),
                         "--labels", str(labels), "--out", str(m2)] + flags) == 0
        assert cli.main(["predict", "--model", str(m2), "--images",
                         str(data_dir / "target_test"), "--out", str(base / "pred")]) == 0
        files = [m, m2, base / "d.csv", labels / "manifest.json", labels / "rejections.csv"]
        files += sorted((labels).glob("*.smap")) + sorted((base / "pred").glob("*.txt"))
        return [f.relative_to(base) for f in files], [f.read_bytes() for f in files]

    names_a, a = run("a")
    names_b, b = run("b")
    assert names_a == names_b
    # manifests record the absolute model path, which differs between the two runs
    for n, x, y in zip(names_a, a, b):
        if n.name == "manifest.json":
            x, y = json.loads(x), json.loads(y)
            x.pop("model"), y.pop("model")
        assert x == y, n
    assert "kept" in capsys.readouterr().out
    assert load_model(tmp_path / "a" / "m2.tadm").n_features == 5
    header = (tmp_path / "a" / "d.csv").read_text().splitlines()[0]
    assert header == "iter,L_task_src,L_task_tgt,L_d,domain_acc"


def test_adapt_command(data_dir, tmp_path, capsys):
    out = tmp_path / "run"
    flags = ["adapt", "--data", str(data_dir), "--out", str(out), "--pretrain-iters", "3",
             "--finetune-iters", "2", "--batch-source", "2", "--batch-target", "2"]
    assert cli.main(flags) == 0
    line = capsys.readouterr().out.strip().splitlines()[-1]
    assert line.startswith("target_test ")
    rep = json.loads((out / "report.json").read_text())
    assert {"config", "pretrain", "finetune"} <= set(rep)
    assert sorted(os.listdir(out / "pred")) == ["img_00000.txt", "img_00001.txt"]
    for f in (out / "pred").iterdir():
        read_icdar_file(f, scored="auto")
    first = (out / "report.json").read_bytes()
    assert cli.main(flags) == 0
    assert (out / "report.json").read_bytes() == first


def test_module_entry_point(data_dir):
    gt = str(data_dir / "target_test")
    r = subprocess.run([sys.executable, "-m", "textadapt", "eval", "--pred", gt, "--gt", gt],
                       capture_output=True, text=True)
    assert r.returncode == 0 and r.stdout.startswith("100.000 100.000 100.000")
    r = subprocess.run([sys.executable, "-m", "textadapt", "frobnicate"], capture_output=True)
    assert r.returncode == 1


def test_ablate_command(data_dir, tmp_path, capsys):
    out = tmp_path / "abl.json"
    assert cli.main(["ablate", "--data", str(data_dir), "--pretrain-iters", "4",
                     "--finetune-iters", "4", "--out", str(out)]) == 0
    lines = capsys.readouterr().out.splitlines()
    assert [ln.split()[0] for ln in lines] == ["baseline", "ata", "tst", "combined"]
    blob = json.loads(out.read_text())
    assert set(blob["variants"]) == {"baseline", "ata", "tst", "combined"}
    assert blob["variants"]["baseline"]["filter"] is None
    assert blob["variants"]["tst"]["filter"]["extracted"] >= 0


def test_crop_out_of_range():
    with pytest.raises(SystemExit) as e:
        cli.main(["pretrain", "--data", "x", "--out", "y", "--crop", "2"])
    assert e.value.code == 1


def test_desk_preset(tmp_path):
    assert cli.main(["datagen", "--out", str(tmp_path), "--n-source", "1", "--n-target-train",
                     "0", "--n-target-test", "0", "--preset", "desk"]) == 0
    manifest = json.loads((tmp_path / "manifest.json").read_text())
    assert manifest["config"]["size"] == 128
