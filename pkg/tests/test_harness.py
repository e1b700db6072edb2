import numpy as np
import pytest

from rrlayer.data import Dataset
from rrlayer.harness import (
    FEATURE_DISTANCE_NOTE,
    Report,
    angle_sweep,
    drop_global,
    drop_rotations,
    feature_distances,
    model_suite,
    numeric_gradient,
    random_windows,
    relative_error,
    standard_test_sets,
    sweep_angles,
    sweep_csv,
    trend_experiment,
    verify_conv_rotation_identity,
    verify_layer_equivariance,
    verify_model_invariance,
    verify_window_invariance,
)
from rrlayer.lbp import ChannelPolicy, LbpMode, lbp_codes
from rrlayer.models import Conv, Dense, Flatten, GlobalRrl, MaxPool, NetworkConfig, Relu, Rrl, build, layer_shapes
from rrlayer.training import TrainConfig, accuracy, train


def tiny(global_layer=True, precision=64):
    layers = [Rrl(LbpMode.QUARTER4, ChannelPolicy.INDEPENDENT, 1, 1), Conv(3, 4, 3), Relu(), MaxPool()]
    if global_layer:
        layers.append(GlobalRrl())
    layers += [Flatten(), Dense(8), Relu(), Dense(3)]
    return NetworkConfig(tuple(layers), (10, 10, 1), 3, precision)


def test_report_semantics():
    ok = Report("x", trials=5, failures=0, worst=0.0, tolerance=1e-12)
    bad = Report("x", trials=5, failures=1, worst=1.0, tolerance=1e-12)
    anti = Report("y", trials=5, failures=5, worst=0.2, tolerance=1e-12, expect_invariant=False)
    dud = Report("y", trials=5, failures=0, worst=0.0, tolerance=1e-12, expect_invariant=False)
    assert ok.passed and not bad.passed and anti.passed and not dud.passed
    assert ok.line().startswith("PASS x: trials=5 failures=0")
    assert "expected to break" in anti.line()


def test_random_windows_include_hard_cases(rng):
    w = random_windows(rng, 2000, 3)
    assert w.shape == (2000, 3, 3, 1)
    codes = lbp_codes(w[..., 0].reshape(2000, 9), 3)
    assert (codes == 255).sum() > 300
    assert any(np.all(x == x[0, 0]) for x in w)


@pytest.mark.parametrize("mode,size", [("ring8", 3), ("quarter4", 3), ("quarter4", 5)])
@pytest.mark.parametrize("policy", ["independent", "shared"])
def test_window_suite(mode, size, policy):
    r = verify_window_invariance(500, size, mode, seed=1, policy=policy, channels=3 if policy == "shared" else 1)
    assert r.passed and r.worst == 0.0 and r.trials == 500


@pytest.mark.parametrize(
    "prefix",
    [
        (Rrl(LbpMode.RING8, ChannelPolicy.INDEPENDENT), Conv(3, 4, 3)),
        (Rrl(LbpMode.QUARTER4, ChannelPolicy.SHARED, 1, 2), Conv(5, 4, 5)),
        (Rrl(LbpMode.QUARTER4, ChannelPolicy.INDEPENDENT, 2, 1), Conv(3, 2, 3)),
    ],
)
def test_layer_suite(prefix):
    size = 7 if prefix[0].stride == 2 else 8
    assert verify_layer_equivariance(prefix, 20, seed=2, input_size=size).passed


def test_layer_suite_detects_missing_rotation():
    prefix = (Rrl(), Conv(3, 4, 3))
    r = verify_layer_equivariance(prefix, 10, seed=2, rotate=False)
    # the generator includes constant maps, which survive without rotation
    assert r.passed and r.worst > 1e-3 and r.failures >= 8


def test_conv_identity():
    assert verify_conv_rotation_identity(20, seed=4).passed


def test_drop_helpers_keep_shapes():
    config = tiny()
    plain = drop_rotations(config)
    assert not any(isinstance(s, (Rrl, GlobalRrl)) for s in plain.layers)
    assert layer_shapes(plain)[-1] == layer_shapes(config)[-1]
    assert layer_shapes(plain)[0] == layer_shapes(config)[1]
    assert len(drop_global(config).layers) == len(config.layers) - 1


def test_model_suite_and_precisions():
    reports = model_suite(tiny(), 30, seed=3)
    assert [r.passed for r in reports] == [True, True, True]
    assert [r.expect_invariant for r in reports] == [True, False, False]
    r32 = verify_model_invariance(tiny(precision=32), 30, seed=3)
    assert r32.passed and r32.tolerance == 1e-5


def test_numeric_gradient_and_relative_error():
    x = np.array([1.0, -2.0, 0.5])
    g = numeric_gradient(lambda z: float((z**2).sum()), x)
    assert np.allclose(g, 2 * x, atol=1e-8)
    assert numeric_gradient(lambda z: float(z.sum()), x, indices=[2]).shape == (1,)
    assert relative_error([1.0, 0.0], [1.0, 0.0]) == 0.0
    assert relative_error([0.0], [0.0]) == 0.0
    assert relative_error([1.0], [1.1]) == pytest.approx(0.1 / 1.1)


def test_sweep_angles():
    a = sweep_angles(12)
    assert len(a) == 30 and a[0] == 0 and a[-1] == 348
    with pytest.raises(ValueError):
        sweep_angles(0)


def test_feature_distance_is_zero_at_quarter_turns(rng):
    net = build(tiny(), seed=1)
    images = rng.random((6, 10, 10, 1))
    dist, agree = feature_distances(net, images, [0.0, 90.0, 180.0, 270.0, 30.0])
    assert np.all(dist[:, :4] == 0) and np.all(agree[:, :4] == 1)
    assert dist[:, 4].max() > 0


def test_sweep_csv(rng):
    net = build(tiny(), seed=1)
    rows = angle_sweep(net, rng.random((3, 10, 10, 1)), 90)
    text = sweep_csv(rows)
    lines = text.splitlines()
    assert lines[0] == f"# {FEATURE_DISTANCE_NOTE}"
    assert lines[1] == "angle_degrees,agreement,mean_feature_distance"
    assert lines[2:] == [f"{a},1.000000,0" for a in (0, 90, 180, 270)]


@pytest.fixture
def toy_data(rng):
    # class = which quadrant holds a bright blob
    n = 120
    images = rng.random((n, 10, 10, 1)) * 0.1
    labels = rng.integers(0, 3, n)
    for i, c in enumerate(labels):
        images[i, 2 + 2 * c : 4 + 2 * c, 2:8, 0] += 0.9
    return Dataset(images, labels)


def test_training_reduces_loss(toy_data):
    net = build(tiny(precision=64), seed=0)
    history = train(net, toy_data, TrainConfig(epochs=4, lr=0.1, batch=16))
    assert [m.epoch for m in history] == [1, 2, 3, 4]
    assert history[-1].loss < history[0].loss
    assert 0 <= accuracy(net, toy_data) <= 1
    with pytest.raises(ValueError):
        train(net, toy_data, TrainConfig(batch=0))


def test_training_is_deterministic(toy_data):
    a, b = build(tiny(), seed=0), build(tiny(), seed=0)
    cfg = TrainConfig(epochs=1, batch=8, seed=5)
    train(a, toy_data, cfg)
    train(b, toy_data, cfg)
    assert all(a.params[k].tobytes() == b.params[k].tobytes() for k in a.params)


def test_trend_experiment_shapes(toy_data):
    sets = standard_test_sets(toy_data.subset(30), seed=0)
    assert list(sets) == ["upright", "rot", "rot+"]
    result = trend_experiment(
        toy_data, sets, {"plain": drop_rotations(tiny()), "rrl": tiny()}, TrainConfig(epochs=1, batch=16)
    )
    assert set(result.accuracy) == {"plain", "rrl"}
    assert result.predictions["rrl"]["rot"].shape == (30,)
    md = result.to_markdown().splitlines()
    assert md[2] == "| Model | upright | rot | rot+ |"
    csv_lines = result.to_csv().splitlines()
    assert csv_lines[0] == "model,upright,rot,rot+" and len(csv_lines) == 3
    # quarter turns never change what the rotation-invariant model predicts
    assert np.array_equal(result.predictions["rrl"]["upright"], result.predictions["rrl"]["rot"])
