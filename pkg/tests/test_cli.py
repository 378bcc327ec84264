import csv
import json
import subprocess
import sys

import pytest

from pppkit import checkpoint as ckpt
from pppkit.cli import main
from pppkit.imageio import read_pnm

QUICK = ["--epochs", "1", "--train-size", "16", "--batch-size", "8"]


def run(capsys, *argv):
    code = main([str(a) for a in argv])
    out, err = capsys.readouterr()
    return code, out, err


@pytest.fixture(scope="module")
def trained(tmp_path_factory):
    out = tmp_path_factory.mktemp("train")
    assert main(["train", "--arch", "mini_vgg", "--scheme", "zeros", "--out", str(out)] + QUICK) == 0
    return out


def test_explain_without_checkpoint_prints_the_plan(capsys):
    code, out, _ = run(capsys, "measure", "--explain", "--arch", "mini_resnet")
    assert code == 0
    plan = json.loads(out)
    assert plan["total_shift"] == [16, 16] and plan["oversize"] == [476, 476]
    code, out, _ = run(capsys, "measure", "--explain", "--arch", "mini_vgg")
    assert json.loads(out)["total_shift"] == [0, 0]


def test_train_writes_checkpoint_with_config(trained):
    ck = ckpt.load(trained / "final.ckpt")
    assert ck.arch == "mini_vgg" and ck.epoch == 1
    assert ck.meta["config"]["scheme"] == "zeros"
    assert json.loads((trained / "config.json").read_text())["train"]["train_size"] == 16


def test_measure_writes_csv_and_heatmaps(trained, tmp_path, capsys):
    code, out, _ = run(capsys, "measure", "--checkpoint", trained / "final.ckpt", "--nominal", 48, 48,
                       "--measure-images", 2, "--out", tmp_path)
    assert code == 0
    rows = list(csv.DictReader(open(tmp_path / "metrics.csv")))
    assert [int(r["layer"]) for r in rows] == [3, 8, 11, 14]
    assert all(float(r["snr_ppp"]) > 0 and r["n"] == "2" for r in rows)
    assert read_pnm(tmp_path / "ppp_layer14.pgm").shape == (6, 6)


def test_measure_is_repeatable(trained, tmp_path, capsys):
    for d in ("a", "b"):
        assert run(capsys, "measure", "--checkpoint", trained / "final.ckpt", "--nominal", 48, 48,
                   "--measure-images", 2, "--out", tmp_path / d)[0] == 0
    assert (tmp_path / "a" / "metrics.csv").read_bytes() == (tmp_path / "b" / "metrics.csv").read_bytes()


def test_none_scheme_measures_zero(tmp_path, capsys):
    assert main(["train", "--arch", "mini_vgg", "--scheme", "none", "--out", str(tmp_path)] + QUICK) == 0
    capsys.readouterr()
    code, out, _ = run(capsys, "measure", "--checkpoint", tmp_path / "final.ckpt", "--nominal", 48, 48,
                       "--measure-images", 2, "--out", tmp_path / "m")
    assert code == 0
    for r in csv.DictReader(open(tmp_path / "m" / "metrics.csv")):
        assert r["snr_ppp"] == "0" and r["mae_ppp"] == "0"


def test_render_and_bad_layer(trained, tmp_path, capsys):
    code, out, _ = run(capsys, "render", "--checkpoint", trained / "final.ckpt", "--layer", 3,
                       "--measure-images", 1, "--out", tmp_path / "h.pgm")
    assert code == 0 and "48x48" in out
    code, _, err = run(capsys, "render", "--checkpoint", trained / "final.ckpt", "--layer", 4,
                       "--out", tmp_path / "x.pgm")
    assert code == 2 and err.startswith("error: usage:")


def test_chrono_rows_follow_every(tmp_path, capsys):
    code, out, _ = run(capsys, "chrono", "--arch", "mini_vgg", "--epochs", 2, "--every", 1, "--train-size", 16,
                       "--nominal", 48, 48, "--measure-images", 2, "--out", tmp_path)
    assert code == 0
    rows = list(csv.DictReader(open(tmp_path / "chrono.csv")))
    assert sorted({int(r["epoch"]) for r in rows}) == [0, 1, 2]
    assert len(rows) == 3 * 4
    assert (tmp_path / "epoch0002.ckpt").exists()


def test_bhv_command(tmp_path, capsys):
    code, out, err = run(capsys, "bhv", "--trials", 1, "--trajectories", 4, "--n-train", 64, "--n-test", 20,
                         "--epochs", 1, "--out", tmp_path / "b.csv")
    assert code == 0
    assert out.splitlines()[0].startswith("arch,scheme,conv_mode")
    assert "similar" in err
    assert (tmp_path / "b.csv").read_text() == out


def test_posenet_command(trained, capsys):
    code, out, _ = run(capsys, "posenet", "--checkpoint", trained / "final.ckpt", "--train-count", 8,
                       "--test-count", 4, "--trials", 1, "--epochs", 2)
    assert code == 0
    header, row = out.splitlines()
    assert header.startswith("layer,trials") and row.startswith("14,1,")


def test_gen_data_warns_on_small_images(tmp_path, capsys):
    code, out, err = run(capsys, "gen-data", "--out", tmp_path, "--count", 2, "--size", 64, "--arch", "mini_vgg")
    assert code == 0 and "warning" in err
    assert len(list(tmp_path.glob("*.ppm"))) == 2


@pytest.mark.parametrize(
    "argv,category,code",
    [
        (["frobnicate"], "usage", 2),
        (["measure"], "usage", 2),
        (["train", "--arch", "alexnet"], "config", 1),
        (["train", "--epochs", "-3"], "config", 1),
        (["measure", "--checkpoint", "/nonexistent.ckpt"], "io", 1),
    ],
)
def test_error_categories(argv, category, code, capsys):
    rc, _, err = run(capsys, *argv)
    assert rc == code
    assert err.startswith(f"error: {category}:")
    assert len(err.strip().splitlines()) == 1


def test_corrupt_checkpoint_and_empty_data_dir(trained, tmp_path, capsys):
    bad = tmp_path / "bad.ckpt"
    data = bytearray((trained / "final.ckpt").read_bytes())
    data[-20] ^= 0xFF
    bad.write_bytes(bytes(data))
    rc, _, err = run(capsys, "measure", "--checkpoint", bad)
    assert rc == 1 and err.startswith("error: checkpoint:")
    (tmp_path / "empty").mkdir()
    rc, _, err = run(capsys, "measure", "--checkpoint", trained / "final.ckpt", "--data", tmp_path / "empty",
                     "--nominal", 48, 48)
    assert rc == 1 and err.startswith("error: data:")


def test_console_entry_point_runs():
    r = subprocess.run([sys.executable, "-m", "pppkit.cli", "measure", "--explain", "--arch", "bhv_cnn"],
                       capture_output=True, text=True, check=False)
    assert r.returncode == 0 and json.loads(r.stdout)["arch"] == "bhv_cnn"
