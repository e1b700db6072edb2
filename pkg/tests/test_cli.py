from pathlib import Path

import numpy as np
import pytest

from rrlayer.checkpoint import load_checkpoint
from rrlayer.cli import feature_grid, main
from rrlayer.data import load_split, read_pnm, write_pnm

CONFIGS = Path(__file__).resolve().parents[1] / "configs"


def run(capsys, *argv):
    code = main([str(a) for a in argv])
    out = capsys.readouterr()
    return code, out.out, out.err


def test_usage_errors(capsys):
    assert run(capsys)[0] == 2
    assert run(capsys, "frobnicate")[0] == 2
    assert run(capsys, "verify", "--suite", "nope")[0] == 2
    assert run(capsys, "--help")[0] == 0


def test_missing_config_is_usage_error(capsys, tmp_path):
    code, _, err = run(capsys, "train", "--config", tmp_path / "absent.cfg", "--data", tmp_path, "--out", tmp_path / "c")
    assert code == 2 and "config not found" in err


def test_bad_config_is_usage_error(capsys, tmp_path):
    cfg = tmp_path / "bad.cfg"
    cfg.write_text("input 28 28 1\nclasses 10\nprecision 32\nlayer rrl quarter4 independent\nlayer dense 10\n")
    assert run(capsys, "verify", "--suite", "model", "--config", cfg, "--trials", 2)[0] == 2


def test_unreadable_data_is_io_error(capsys, tmp_path):
    code, _, err = run(capsys, "train", "--config", "lenet5", "--data", tmp_path / "absent", "--out", tmp_path / "c")
    assert code == 3 and "not found" in err


def test_corrupt_checkpoint_is_io_error(capsys, tmp_path, mnist_dir):
    ckpt = tmp_path / "c.ckpt"
    ckpt.write_bytes(b"nonsense")
    assert run(capsys, "eval", "--config", "lenet5", "--checkpoint", ckpt, "--data", mnist_dir)[0] == 3


def test_verify_window_suite(capsys):
    code, out, _ = run(capsys, "verify", "--suite", "window", "--trials", 200, "--seed", 7)
    assert code == 0
    lines = out.splitlines()
    assert len(lines) == 7 and all(line.startswith("PASS") for line in lines[:-1])
    assert lines[-1] == "6/6 checks passed"


def test_verify_reports_failure(capsys):
    # a network without rotation layers is not invariant, so the model suite fails
    code, out, _ = run(capsys, "verify", "--suite", "model", "--config", CONFIGS / "lenet5.cfg", "--trials", 5)
    assert code == 1 and out.splitlines()[0].startswith("FAIL model-invariance")


def test_verify_is_deterministic(capsys):
    a = run(capsys, "verify", "--suite", "layer", "--trials", 20, "--seed", 3)
    b = run(capsys, "verify", "--suite", "layer", "--trials", 20, "--seed", 3)
    assert a == b and a[0] == 0


def test_transform_boxes(capsys, tmp_path):
    boxes = tmp_path / "b.txt"
    boxes.write_text("car 10 20 30 50\n", encoding="utf-8")
    code, out, _ = run(capsys, "transform-boxes", "--boxes", boxes, "--n", 1, "--width", 100, "--height", 80)
    assert code == 0 and out == "car 20 70 50 90\n"
    dest = tmp_path / "o.txt"
    assert run(capsys, "transform-boxes", "--boxes", boxes, "--n", 2, "--width", 100, "--height", 80, "--out", dest)[0] == 0
    assert dest.read_text() == "car 70 30 90 60\n"
    # box outside the canvas
    assert run(capsys, "transform-boxes", "--boxes", boxes, "--n", 1, "--width", 20, "--height", 80)[0] == 2
    boxes.write_text("car 10 20\n", encoding="utf-8")
    assert run(capsys, "transform-boxes", "--boxes", boxes, "--n", 1, "--width", 100, "--height", 80)[0] == 3
    assert run(capsys, "transform-boxes", "--boxes", tmp_path / "none", "--n", 1, "--width", 9, "--height", 9)[0] == 3


@pytest.fixture(scope="module")
def trained(tmp_path_factory, mnist_dir):
    out = tmp_path_factory.mktemp("trained")
    ckpt = out / "rrl.ckpt"
    code = main(["train", "--config", str(CONFIGS / "lenet5-rrl.cfg"), "--data", str(mnist_dir), "--out", str(ckpt),
                 "--epochs", "1", "--n-train", "64", "--batch", "16", "--seed", "1"])
    assert code == 0
    return ckpt


def test_train_output_and_determinism(capsys, tmp_path, mnist_dir, trained):
    again = tmp_path / "again.ckpt"
    code, out, _ = run(capsys, "train", "--config", CONFIGS / "lenet5-rrl.cfg", "--data", mnist_dir, "--out", again,
                       "--epochs", 1, "--n-train", 64, "--batch", 16, "--seed", 1)
    assert code == 0
    assert out.splitlines()[0] == "epoch,loss,train_accuracy" and len(out.splitlines()) == 2
    assert again.read_bytes() == trained.read_bytes()
    params, precision = load_checkpoint(trained)
    assert precision == 32 and "1.kernels" in params


def test_train_precision_override(capsys, tmp_path, mnist_dir):
    ckpt = tmp_path / "p64.ckpt"
    assert run(capsys, "train", "--config", "lenet5", "--data", mnist_dir, "--out", ckpt, "--epochs", 1,
               "--n-train", 16, "--precision", 64)[0] == 0
    assert load_checkpoint(ckpt)[1] == 64


def test_eval_rot_matches_upright(capsys, mnist_dir, trained, tmp_path):
    base = ["eval", "--config", CONFIGS / "lenet5-rrl.cfg", "--checkpoint", trained, "--data", mnist_dir, "--n-test", 50]
    code, up, _ = run(capsys, *base)
    assert code == 0
    code, rot, _ = run(capsys, *base, "--rotate", "rot", "--seed", 2)
    assert code == 0
    assert up.splitlines()[0].split()[2:] == rot.splitlines()[0].split()[2:]
    up_pred = [row.split(",")[2] for row in up.splitlines()[2:]]
    rot_pred = [row.split(",")[2] for row in rot.splitlines()[2:]]
    assert up_pred == rot_pred and len(up_pred) == 50
    assert rot.splitlines()[1] == "index,label,prediction,angle_degrees"
    dest = tmp_path / "p.csv"
    code, out, _ = run(capsys, *base, "--rotate", "rot+", "--csv", dest)
    assert code == 0 and out.startswith("accuracy rotate=rot+") and dest.read_text().count("\n") == 51


def test_verify_with_trained_checkpoint(capsys, trained):
    code, out, _ = run(capsys, "verify", "--suite", "model", "--checkpoint", trained, "--trials", 20, "--precision", 64)
    assert code == 0 and out.splitlines()[-1] == "3/3 checks passed"


def test_sweep(capsys, mnist_dir, trained, tmp_path):
    args = ["sweep", "--config", CONFIGS / "lenet5-rrl.cfg", "--checkpoint", trained, "--data", mnist_dir,
            "--n-test", 5, "--step-degrees", 90]
    code, out, _ = run(capsys, *args)
    assert code == 0
    rows = out.splitlines()
    assert rows[0].startswith("# feature distance") and len(rows) == 6
    for row in rows[2:]:
        angle, agree, dist = row.split(",")
        assert float(agree) == 1.0 and float(dist) <= 1e-5
    dest = tmp_path / "s.csv"
    assert run(capsys, *args, "--out", dest)[0] == 0
    assert dest.read_text() == out


def test_dump_features(capsys, mnist_dir, trained, tmp_path):
    image = load_split(mnist_dir, "test").images[0]
    write_pnm(tmp_path / "x.pgm", np.round(image * 255))
    dest = tmp_path / "f.pgm"
    code, out, _ = run(capsys, "dump-features", "--config", CONFIGS / "lenet5-rrl.cfg", "--checkpoint", trained,
                       "--image", tmp_path / "x.pgm", "--layer", 1, "--out", dest)
    assert code == 0 and "(28, 28, 6)" in out
    grid = read_pnm(dest)
    assert grid.shape == (2 * 29 - 1, 3 * 29 - 1, 1)
    assert run(capsys, "dump-features", "--config", CONFIGS / "lenet5-rrl.cfg", "--checkpoint", trained,
               "--image", tmp_path / "x.pgm", "--layer", 99, "--out", dest)[0] == 2


def test_feature_grid_layout():
    t = np.zeros((2, 3, 5))
    t[:, :, 1] = [[0, 1, 2], [3, 4, 5]]
    g = feature_grid(t)
    assert g.shape == (2 * 3 - 1, 3 * 4 - 1)  # 2 rows x 3 cols of 2x3 tiles
    assert g[0, 4:7].tolist() == [0, 51, 102] and g[1, 6] == 255
    assert not g[:, 3].any()


def test_trend_tiny_run_is_deterministic(capsys, mnist_dir, tmp_path):
    args = ["trend", "--data", mnist_dir, "--epochs", 1, "--n-train", 32, "--n-test", 20, "--batch", 16]
    code, out, _ = run(capsys, *args, "--out-dir", tmp_path / "a")
    assert code == 0 and "| lenet5-rrl |" in out
    assert run(capsys, *args, "--out-dir", tmp_path / "b")[0] == 0
    for name in ("table.md", "table.csv", "lenet5.ckpt", "lenet5-rrl.ckpt"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()
