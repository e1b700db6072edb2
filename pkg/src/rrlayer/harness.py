"""Verification suites, rotation sweeps and the upright-vs-rotated trend experiment.

Every suite returns a `Report`; nothing here raises on a failed check, so the
caller decides how to surface failures (the CLI turns them into exit status 1).
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field, replace

import numpy as np

from . import nn
from .data import Dataset, make_rot_testset, make_rotplus_testset, masked
from .geometry import inscribed_circle_mask
from .lbp import ChannelPolicy, LbpMode, canonicalize
from .models import Conv, GlobalRrl, Network, NetworkConfig, Rrl, build
from .rrl import rrl_forward
from .tensor import WindowGrid, assemble_windows, extract_windows, rot90, rotate_bilinear
from .training import TrainConfig, train

TOLERANCE = {64: 1e-12, 32: 1e-5}

FEATURE_DISTANCE_NOTE = (
    "feature distance = ||f(rotated) - f(upright)||_2 / ||f(upright)||_2 "
    "over the flattened input of the first dense layer"
)


@dataclass
class Report:
    name: str
    trials: int = 0
    failures: int = 0
    worst: float = 0.0
    tolerance: float = 0.0
    expect_invariant: bool = True
    notes: list = field(default_factory=list)

    @property
    def passed(self) -> bool:
        if self.expect_invariant:
            return self.failures == 0
        # anti-test: the property is expected to break
        return self.worst > self.tolerance

    def line(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        kind = "" if self.expect_invariant else " (expected to break)"
        return (
            f"{status} {self.name}{kind}: trials={self.trials} failures={self.failures} "
            f"worst={self.worst:.3e} tol={self.tolerance:.0e}"
        )


# ------------------------------------------------------------------ generators


def random_windows(rng: np.random.Generator, count: int, size: int, channels: int = 1) -> np.ndarray:
    """(count, F, F, C) windows mixing generic values with tie-heavy patterns.

    A quarter are continuous uniform; the rest are adversarial: few-level
    integer windows, constant windows, neighbours tied with the center, and
    windows whose binary pattern is rotation symmetric while the values are not.
    """
    shape = (count, size, size, channels)
    w = rng.random(shape)
    kind = rng.integers(0, 5, size=count)
    ints = kind == 1
    w[ints] = rng.integers(0, 3, size=(int(ints.sum()),) + shape[1:])
    const = kind == 2
    w[const] = rng.integers(0, 3, size=(int(const.sum()), 1, 1, 1))
    mid = size // 2
    ties = kind == 3
    if ties.any():
        # copy the center onto a random subset of cells
        centre = w[ties, mid : mid + 1, mid : mid + 1, :]
        pick = rng.random((int(ties.sum()),) + shape[1:]) < 0.5
        w[ties] = np.where(pick, centre, w[ties])
    sym = kind == 4
    if sym.any():
        # center below every neighbour: code 255 in every orientation
        w[sym, mid, mid, :] = -1.0
    return w


# ---------------------------------------------------------------- window suite


def verify_window_invariance(
    trials: int,
    size: int = 3,
    mode: LbpMode = LbpMode.RING8,
    seed: int = 0,
    policy: ChannelPolicy = ChannelPolicy.INDEPENDENT,
    channels: int = 1,
) -> Report:
    """Canonical forms of w and of each quarter turn of w must agree exactly."""
    mode, policy = LbpMode(mode), ChannelPolicy(policy)
    rng = np.random.default_rng(seed)
    w = random_windows(rng, trials, size, channels)
    base, _ = canonicalize(w, mode, policy)
    bad = np.zeros(trials, dtype=bool)
    worst = 0.0
    for n in range(1, 4):
        turned = np.rot90(w, n, axes=(1, 2))
        canon, _ = canonicalize(turned, mode, policy)
        diff = np.abs(canon - base).reshape(trials, -1).max(axis=1)
        bad |= diff != 0
        worst = max(worst, float(diff.max()))
    return Report(
        f"window-invariance[{mode.value} F={size} {policy.value}]",
        trials=trials,
        failures=int(bad.sum()),
        worst=worst,
        tolerance=0.0,
    )


# ----------------------------------------------------------------- layer suite


def verify_layer_equivariance(
    prefix: tuple,
    trials: int,
    seed: int = 0,
    input_size: int = 8,
    channels: int = 3,
    rotate: bool = True,
    precision: int = 64,
) -> Report:
    """conv_F(RRL(rot^n x)) must equal rot^n conv_F(RRL(x)).

    ``prefix`` is an (Rrl, Conv) pair of layer specs. With ``rotate=False``
    the windows are tiled without canonicalization, which must break the
    property (a sensitivity check of the suite itself).
    """
    rrl_spec, conv_spec = prefix
    f = conv_spec.size
    grid = WindowGrid(f, rrl_spec.stride, rrl_spec.padding)
    dtype = np.float64 if precision == 64 else np.float32
    tol = TOLERANCE[precision]
    rng = np.random.default_rng(seed)
    failures, worst = 0, 0.0
    for _ in range(trials):
        x = random_windows(rng, 1, input_size, channels).astype(dtype)
        batch = np.concatenate([rot90(x, n) for n in range(4)])
        if rotate:
            tiled, _ = rrl_forward(batch, grid, rrl_spec.mode, rrl_spec.policy)
        else:
            tiled = assemble_windows(extract_windows(batch, grid))
        params = nn.init_conv(rng, f, channels, conv_spec.channels, stride=f, dtype=dtype)
        params.bias = rng.standard_normal(conv_spec.channels).astype(dtype)
        out = nn.conv_forward(tiled, params)
        dev = max(float(np.abs(out[n] - rot90(out[:1], n)[0]).max()) for n in range(1, 4))
        worst = max(worst, dev)
        failures += dev > tol
    name = (
        f"layer-equivariance[{rrl_spec.mode.value} F={f} {rrl_spec.policy.value} "
        f"{input_size}x{input_size}x{channels}]"
    )
    if not rotate:
        name = name.replace("layer-equivariance", "layer-equivariance-without-rrl")
    return Report(name, trials, int(failures), worst, tol, expect_invariant=rotate)


def verify_conv_rotation_identity(trials: int, seed: int = 0, size: int = 6, kernel: int = 3) -> Report:
    """Plain conv: conv(x, K) == rot^-1 conv(rot x, rot K), checked in float64."""
    rng = np.random.default_rng(seed)
    worst, failures = 0.0, 0
    for _ in range(trials):
        x = rng.standard_normal((1, size, size, 2))
        p = nn.init_conv(rng, kernel, 2, 3)
        turned = nn.ConvParams(np.ascontiguousarray(np.rot90(p.kernels, 1, axes=(0, 1))), p.bias)
        lhs = nn.conv_forward(x, p)
        rhs = rot90(nn.conv_forward(rot90(x, 1), turned), -1)
        dev = float(np.abs(lhs - rhs).max())
        worst = max(worst, dev)
        failures += dev > 1e-12
    return Report("conv-rotation-identity", trials, failures, worst, 1e-12)


# ----------------------------------------------------------------- model suite


def drop_global(config: NetworkConfig) -> NetworkConfig:
    return replace(config, layers=tuple(s for s in config.layers if not isinstance(s, GlobalRrl)))


def drop_rotations(config: NetworkConfig) -> NetworkConfig:
    """The same network with every rotation layer removed.

    An (Rrl, Conv) pair becomes one conv that slides with the rotation
    layer's stride and padding, so all feature sizes are unchanged.
    """
    layers, skip = [], False
    specs = list(config.layers)
    for i, s in enumerate(specs):
        if skip:
            skip = False
            continue
        if isinstance(s, Rrl):
            conv = specs[i + 1]
            layers.append(Conv(conv.size, conv.channels, s.stride, s.padding))
            skip = True
        elif not isinstance(s, GlobalRrl):
            layers.append(s)
    return replace(config, layers=tuple(layers))


def model_inputs(rng, count: int, shape) -> np.ndarray:
    """Random images: uniform noise, sparse strokes, and one constant image."""
    h, w, c = shape
    x = rng.random((count, h, w, c))
    sparse = rng.random(count) < 0.5
    x[sparse] *= rng.random((int(sparse.sum()), h, w, c)) < 0.15
    x[0] = 0.5
    return x


def verify_model_invariance(
    config: NetworkConfig,
    trials: int,
    seed: int = 0,
    params: dict | None = None,
    expect_invariant: bool = True,
    name: str | None = None,
) -> Report:
    """Logits of x and of every quarter turn of x must agree within the precision tolerance."""
    net = build(config, params, seed=seed)
    tol = TOLERANCE[config.precision]
    x = model_inputs(np.random.default_rng(seed + 1), trials, config.input_shape).astype(net.dtype)
    base = net.forward(x)
    dev = np.zeros(trials)
    for n in range(1, 4):
        dev = np.maximum(dev, np.abs(net.forward(rot90(x, n)) - base).max(axis=1))
    return Report(
        name or f"model-invariance[{config.precision}-bit]",
        trials,
        int((dev > tol).sum()),
        float(dev.max()),
        tol,
        expect_invariant=expect_invariant,
    )


def model_suite(config: NetworkConfig, trials: int, seed: int = 0, params: dict | None = None) -> list[Report]:
    """Invariance of ``config`` plus the two anti-tests (no global layer, no rotation layers)."""
    reports = [verify_model_invariance(config, trials, seed, params)]
    if any(isinstance(s, GlobalRrl) for s in config.layers):
        reports.append(
            verify_model_invariance(drop_global(config), trials, seed, expect_invariant=False, name="model-without-global-rrl")
        )
    reports.append(
        verify_model_invariance(drop_rotations(config), trials, seed, expect_invariant=False, name="model-without-rrl")
    )
    return reports


# ---------------------------------------------------------- numerical gradients


def numeric_gradient(f, x: np.ndarray, h: float = 1e-6, indices=None) -> np.ndarray:
    """Central differences of scalar ``f`` at ``x`` for the given flat indices."""
    x = np.array(x, dtype=np.float64)
    flat = x.reshape(-1)
    idx = np.arange(flat.size) if indices is None else np.asarray(indices)
    out = np.empty(len(idx))
    for j, i in enumerate(idx):
        old = flat[i]
        flat[i] = old + h
        up = f(x)
        flat[i] = old - h
        down = f(x)
        flat[i] = old
        out[j] = (up - down) / (2 * h)
    return out


def relative_error(a, b) -> float:
    a, b = np.ravel(a), np.ravel(b)
    scale = max(np.linalg.norm(a), np.linalg.norm(b))
    return 0.0 if scale == 0 else float(np.linalg.norm(a - b) / scale)


# --------------------------------------------------------------- angle sweeps


def sweep_angles(step_degrees: float) -> np.ndarray:
    if not 0 < step_degrees <= 360:
        raise ValueError(f"step must be in (0, 360], got {step_degrees}")
    return np.arange(0.0, 360.0, step_degrees)


def rotated_features(net: Network, images: np.ndarray, angle: float):
    turned = inscribed_circle_mask(rotate_bilinear(images, angle, 0.0), 0.0)
    return net.features(turned), net.forward(turned).argmax(axis=1)


def feature_distances(net: Network, images: np.ndarray, angles) -> tuple[np.ndarray, np.ndarray]:
    """Per-image normalized feature distance and prediction agreement for each angle.

    Returns two (N, A) arrays. Images are masked to their inscribed circle
    before and after rotation.
    """
    upright = inscribed_circle_mask(images.astype(net.dtype), 0.0)
    f0 = net.features(upright).astype(np.float64)
    p0 = net.forward(upright).argmax(axis=1)
    norm = np.maximum(np.linalg.norm(f0, axis=1), np.finfo(np.float64).tiny)
    dist = np.empty((len(images), len(angles)))
    agree = np.empty((len(images), len(angles)))
    for j, theta in enumerate(angles):
        f, p = rotated_features(net, upright, theta)
        dist[:, j] = np.linalg.norm(f.astype(np.float64) - f0, axis=1) / norm
        agree[:, j] = p == p0
    return dist, agree


@dataclass
class SweepRow:
    angle: float
    agreement: float
    distance: float


def angle_sweep(net: Network, images: np.ndarray, step_degrees: float = 12.0) -> list[SweepRow]:
    angles = sweep_angles(step_degrees)
    dist, agree = feature_distances(net, images, angles)
    return [SweepRow(float(a), float(agree[:, j].mean()), float(dist[:, j].mean())) for j, a in enumerate(angles)]


def sweep_csv(rows: list[SweepRow]) -> str:
    buf = io.StringIO()
    buf.write(f"# {FEATURE_DISTANCE_NOTE}\n")
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["angle_degrees", "agreement", "mean_feature_distance"])
    for r in rows:
        writer.writerow([f"{r.angle:g}", f"{r.agreement:.6f}", f"{r.distance:.9g}"])
    return buf.getvalue()


# ------------------------------------------------------------ trend experiment


@dataclass
class TrendResult:
    test_names: list
    accuracy: dict  # config name -> {test name: accuracy}
    predictions: dict  # config name -> {test name: (N,) predictions}
    history: dict  # config name -> list of EpochMetrics
    networks: dict  # config name -> trained Network

    def to_markdown(self) -> str:
        head = "| Model | " + " | ".join(self.test_names) + " |"
        sep = "|---|" + "---|" * len(self.test_names)
        rows = [
            f"| {name} | " + " | ".join(f"{100 * acc[t]:.1f}" for t in self.test_names) + " |"
            for name, acc in self.accuracy.items()
        ]
        return "\n".join(["Accuracy (%) after training on upright images", "", head, sep, *rows]) + "\n"

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["model", *self.test_names])
        for name, acc in self.accuracy.items():
            writer.writerow([name, *(f"{acc[t]:.6f}" for t in self.test_names)])
        return buf.getvalue()


def standard_test_sets(test: Dataset, seed: int) -> dict:
    """Upright, quarter-turn and arbitrary-angle versions of ``test``, all masked."""
    return {
        "upright": masked(test),
        "rot": make_rot_testset(test, seed),
        "rot+": make_rotplus_testset(test, seed + 1),
    }


def trend_experiment(
    train_set: Dataset,
    test_sets: dict,
    configs: dict,
    train_cfg: TrainConfig = TrainConfig(),
    init_seed: int = 0,
) -> TrendResult:
    """Train every config on the (masked) upright training set and score each test set."""
    upright = masked(train_set)
    accuracy, predictions, history, networks = {}, {}, {}, {}
    for name, config in configs.items():
        net = build(config, seed=init_seed)
        history[name] = train(net, upright, train_cfg)
        predictions[name] = {t: net.predict(d.images) for t, d in test_sets.items()}
        accuracy[name] = {t: float(np.mean(predictions[name][t] == d.labels)) for t, d in test_sets.items()}
        networks[name] = net
    return TrendResult(list(test_sets), accuracy, predictions, history, networks)
