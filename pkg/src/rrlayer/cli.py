"""Command-line entry point.

Exit status: 0 success, 1 a verification/assertion failed, 2 usage or config
error, 3 I/O or data-format error.
"""

from __future__ import annotations

import argparse
import csv
import io
import logging
import math
import sys
from pathlib import Path

import numpy as np
from threadpoolctl import threadpool_limits

from . import harness
from .checkpoint import CheckpointError, load_checkpoint, save_checkpoint
from .data import DataError, load_split, make_rot_testset, make_rotplus_testset, masked, prepare_mnist_subset, read_pnm, write_pnm
from .geometry import format_boxes, read_boxes, rotate_bbox
from .lbp import ChannelPolicy, LbpMode
from .models import PRESETS, ConfigError, Conv, Rrl, build, load_config, preset
from .training import TrainConfig, train

EXIT_OK, EXIT_FAIL, EXIT_USAGE, EXIT_IO = 0, 1, 2, 3

log = logging.getLogger("rrlayer")


class UsageError(Exception):
    pass


def resolve_config(value: str, precision: int | None = None):
    """A config file path, or the name of a built-in preset."""
    path = Path(value)
    if path.is_file():
        config = load_config(path)
    elif value in PRESETS:
        config = preset(value)
    else:
        raise UsageError(f"config not found: {value} (not a file or one of {', '.join(PRESETS)})")
    return config.with_precision(precision) if precision else config


def load_network(config_arg: str, checkpoint: str, precision: int | None = None):
    config = resolve_config(config_arg, precision)
    params, _ = load_checkpoint(checkpoint)
    return build(config, params)


def _write_or_print(text: str, out: str | None) -> None:
    if out:
        Path(out).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)


# ------------------------------------------------------------------- commands


def cmd_train(args) -> int:
    config = resolve_config(args.config, args.precision)
    data = load_split(args.data, "train").subset(args.n_train)
    net = build(config, seed=args.seed)
    cfg = TrainConfig(args.epochs, args.lr, args.batch, args.seed)
    history = train(net, masked(data), cfg)
    print("epoch,loss,train_accuracy")
    for m in history:
        print(f"{m.epoch},{m.loss:.6f},{m.accuracy:.6f}")
    save_checkpoint(args.out, net.params, config.precision)
    return EXIT_OK


def _eval_set(args):
    test = load_split(args.data, "test").subset(args.n_test)
    if args.rotate == "none":
        return masked(test)
    if args.rotate == "rot":
        return make_rot_testset(test, args.seed)
    return make_rotplus_testset(test, args.seed)


def cmd_eval(args) -> int:
    net = load_network(args.config, args.checkpoint)
    data = _eval_set(args)
    pred = net.predict(data.images)
    correct = int((pred == data.labels).sum())
    print(f"accuracy rotate={args.rotate} {correct / max(len(data), 1):.6f} ({correct}/{len(data)})")
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["index", "label", "prediction", "angle_degrees"])
    angles = data.angles if data.angles is not None else np.zeros(len(data))
    for i, (label, p, a) in enumerate(zip(data.labels, pred, angles)):
        writer.writerow([i, int(label), int(p), f"{a:.6f}"])
    _write_or_print(buf.getvalue(), args.csv)
    return EXIT_OK


def _window_reports(trials, seed):
    reports = []
    for mode, size in ((LbpMode.RING8, 3), (LbpMode.QUARTER4, 3), (LbpMode.QUARTER4, 5)):
        for policy in ChannelPolicy:
            channels = 1 if policy is ChannelPolicy.INDEPENDENT else 3
            reports.append(harness.verify_window_invariance(trials, size, mode, seed, policy, channels))
    return reports


def _layer_reports(trials, seed):
    reports = []
    for mode, size in ((LbpMode.RING8, 3), (LbpMode.QUARTER4, 3), (LbpMode.QUARTER4, 5)):
        for policy in ChannelPolicy:
            prefix = (Rrl(mode, policy, 1, size // 2), Conv(size, 4, size))
            reports.append(harness.verify_layer_equivariance(prefix, trials, seed))
    sensitivity = (Rrl(LbpMode.RING8, ChannelPolicy.INDEPENDENT, 1, 1), Conv(3, 4, 3))
    reports.append(harness.verify_layer_equivariance(sensitivity, max(1, min(trials, 100)), seed, rotate=False))
    reports.append(harness.verify_conv_rotation_identity(max(1, min(trials, 100)), seed))
    return reports


def _model_reports(args):
    config = resolve_config(args.config or "lenet5-rrl", args.precision)
    params = load_checkpoint(args.checkpoint)[0] if args.checkpoint else None
    return harness.model_suite(config, args.trials, args.seed, params)


def cmd_verify(args) -> int:
    reports = []
    if args.suite in ("window", "all"):
        reports += _window_reports(args.trials, args.seed)
    if args.suite in ("layer", "all"):
        reports += _layer_reports(args.trials, args.seed)
    if args.suite in ("model", "all"):
        reports += _model_reports(args)
    for r in reports:
        print(r.line())
    failed = [r for r in reports if not r.passed]
    print(f"{len(reports) - len(failed)}/{len(reports)} checks passed")
    return EXIT_FAIL if failed else EXIT_OK


def cmd_sweep(args) -> int:
    net = load_network(args.config, args.checkpoint)
    test = load_split(args.data, "test").subset(args.n_test)
    rows = harness.angle_sweep(net, test.images, args.step_degrees)
    _write_or_print(harness.sweep_csv(rows), args.out)
    return EXIT_OK


def feature_grid(t: np.ndarray) -> np.ndarray:
    """Tile the channels of one (H, W, C) feature map into a uint8 image.

    Each channel is min-max normalized on its own; tiles are separated by a
    one-pixel black border.
    """
    h, w, c = t.shape
    cols = math.ceil(math.sqrt(c))
    rows = math.ceil(c / cols)
    out = np.zeros((rows * (h + 1) - 1, cols * (w + 1) - 1), dtype=np.uint8)
    for ch in range(c):
        plane = t[:, :, ch].astype(np.float64)
        lo, hi = plane.min(), plane.max()
        scaled = np.zeros_like(plane) if hi == lo else (plane - lo) / (hi - lo)
        r, q = divmod(ch, cols)
        out[r * (h + 1) : r * (h + 1) + h, q * (w + 1) : q * (w + 1) + w] = np.round(scaled * 255)
    return out


def cmd_dump_features(args) -> int:
    net = load_network(args.config, args.checkpoint)
    image = read_pnm(args.image)
    if image.shape != tuple(net.config.input_shape):
        raise UsageError(f"image shape {image.shape} does not match config input {net.config.input_shape}")
    acts = net.activations(image[None])
    if not 0 <= args.layer < len(acts):
        raise UsageError(f"--layer must be in [0, {len(acts) - 1}]")
    t = acts[args.layer][0]
    if t.ndim == 1:
        t = t[None, :, None]
    write_pnm(args.out, feature_grid(t))
    print(f"layer {args.layer}: shape {tuple(acts[args.layer].shape[1:])} -> {args.out}")
    return EXIT_OK


def cmd_transform_boxes(args) -> int:
    try:
        boxes = read_boxes(args.boxes)
    except ValueError as e:
        raise DataError(str(e)) from None
    try:
        out = [(label, rotate_bbox(b, args.n, args.width, args.height)) for label, b in boxes]
    except ValueError as e:
        raise UsageError(str(e)) from None
    _write_or_print(format_boxes(out), args.out)
    return EXIT_OK


def cmd_trend(args) -> int:
    train_set = load_split(args.data, "train").subset(args.n_train)
    test = load_split(args.data, "test").subset(args.n_test)
    shape = train_set.images.shape[1:]
    classes = len(train_set.class_names)
    configs = {name: preset(name, shape, classes, args.precision) for name in ("lenet5", "lenet5-rrl")}
    result = harness.trend_experiment(
        train_set,
        harness.standard_test_sets(test, args.seed),
        configs,
        TrainConfig(args.epochs, args.lr, args.batch, args.seed),
        init_seed=args.seed,
    )
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "table.md").write_text(result.to_markdown(), encoding="utf-8")
    (out / "table.csv").write_text(result.to_csv(), encoding="utf-8")
    for name, net in result.networks.items():
        save_checkpoint(out / f"{name}.ckpt", net.params, args.precision)
    sys.stdout.write(result.to_markdown())
    return EXIT_OK


def cmd_prepare_mnist(args) -> int:
    n_train, n_test = prepare_mnist_subset(args.out, args.seed)
    print(f"wrote {n_train} training and {n_test} test images to {args.out}")
    return EXIT_OK


# --------------------------------------------------------------------- parser


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="rrlayer", description=__doc__.splitlines()[0])
    parser.add_argument("--threads", type=int, default=None, help="BLAS worker threads (default: all cores)")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)
    precision = dict(type=int, choices=(32, 64), default=None)

    p = sub.add_parser("train", help="train a network on the upright training split")
    p.add_argument("--config", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--epochs", type=int, default=5)
    p.add_argument("--lr", type=float, default=0.1)
    p.add_argument("--batch", type=int, default=32)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--precision", **precision)
    p.add_argument("--n-train", type=int, default=2000)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="accuracy on the upright or rotated test split")
    p.add_argument("--config", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--rotate", choices=("none", "rot", "rot+"), default="none")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--n-test", type=int, default=1000)
    p.add_argument("--csv", default=None, help="per-image CSV path (default: stdout)")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("verify", help="run the invariance/equivariance suites")
    p.add_argument("--suite", choices=("window", "layer", "model", "all"), default="all")
    p.add_argument("--trials", type=int, default=1000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--config", default=None, help="model suite config (default: lenet5-rrl preset)")
    p.add_argument("--checkpoint", default=None)
    p.add_argument("--precision", **precision)
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("sweep", help="per-angle agreement and feature distance CSV")
    p.add_argument("--config", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--step-degrees", type=float, default=12.0)
    p.add_argument("--n-test", type=int, default=100)
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("dump-features", help="write one layer's feature maps as a PGM grid")
    p.add_argument("--config", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--image", required=True)
    p.add_argument("--layer", type=int, required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_dump_features)

    p = sub.add_parser("transform-boxes", help="rotate a box list by quarter turns")
    p.add_argument("--boxes", required=True)
    p.add_argument("--n", type=int, required=True, choices=(0, 1, 2, 3))
    p.add_argument("--width", type=int, required=True)
    p.add_argument("--height", type=int, required=True)
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_transform_boxes)

    p = sub.add_parser("trend", help="train lenet5 and lenet5-rrl upright, score upright/rot/rot+")
    p.add_argument("--data", required=True)
    p.add_argument("--out-dir", required=True)
    p.add_argument("--epochs", type=int, default=5)
    p.add_argument("--lr", type=float, default=0.1)
    p.add_argument("--batch", type=int, default=32)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--precision", type=int, choices=(32, 64), default=32)
    p.add_argument("--n-train", type=int, default=2000)
    p.add_argument("--n-test", type=int, default=1000)
    p.set_defaults(func=cmd_trend)

    p = sub.add_parser("prepare-mnist", help="write mlxtend's 5k MNIST sample as IDX files")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_prepare_mnist)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return EXIT_USAGE if e.code else EXIT_OK
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, stream=sys.stderr)
    try:
        with threadpool_limits(limits=args.threads):
            return args.func(args)
    except (UsageError, ConfigError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except (OSError, DataError, CheckpointError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
