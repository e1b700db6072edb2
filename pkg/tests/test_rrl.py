import numpy as np
import pytest

from oracles import canonical
from rrlayer.harness import numeric_gradient, relative_error
from rrlayer.lbp import ChannelPolicy, LbpMode, canonicalize
from rrlayer.rrl import (
    center_neighbourhood,
    global_rrl,
    global_rrl_backward,
    rrl_apply,
    rrl_backward,
    rrl_forward,
)
from rrlayer.tensor import WindowGrid, assemble_windows, extract_windows, rot90, split_tiles

Q4, R8 = LbpMode.QUARTER4, LbpMode.RING8
IND, SHARED = ChannelPolicy.INDEPENDENT, ChannelPolicy.SHARED


def test_canonical_tiles_are_a_fixed_point(rng):
    raw = rng.random((4, 3, 3, 2))
    tiles, _ = canonicalize(raw, Q4)
    x = assemble_windows(tiles.reshape(1, 2, 2, 3, 3, 2))
    out, record = rrl_forward(x, WindowGrid(3, 3), Q4)
    assert np.array_equal(out, x)
    assert np.all(record.rotations == 0)


@pytest.mark.parametrize("mode", [Q4, R8])
def test_constant_input(mode):
    x = np.full((2, 5, 5, 3), 0.7)
    out, record = rrl_forward(x, WindowGrid(3), mode)
    assert out.shape == (2, 9, 9, 3)
    assert np.all(out == 0.7) and np.all(record.rotations == 0)


@pytest.mark.parametrize("mode", ["quarter4", "ring8"])
@pytest.mark.parametrize("n", [1, 2, 3])
def test_rotated_input_permutes_tiles(rng, mode, n):
    x = rng.random((1, 8, 8, 3))
    x[0, :4, :4, 1] = np.round(x[0, :4, :4, 1] * 2)  # some tied codes
    grid = WindowGrid(3)
    oh = grid.out_dim(8)
    # oracle: canonicalize every window of x by brute force
    expected = np.empty((oh, oh, 3, 3, 3))
    windows = extract_windows(x, grid)[0]
    for i in range(oh):
        for j in range(oh):
            for c in range(3):
                expected[i, j, :, :, c] = canonical(windows[i, j, :, :, c], mode)[0]
    got, _ = rrl_forward(rot90(x, n), grid, mode)
    got_tiles = split_tiles(got, 3)[0]
    # same canonical tile content, only the window grid turns
    assert np.array_equal(got_tiles, np.rot90(expected, n, axes=(0, 1)))
    base, _ = rrl_forward(x, grid, mode)
    assert np.array_equal(split_tiles(base, 3)[0], expected)


def test_tiles_are_permutations_of_windows(rng):
    x = rng.random((2, 7, 7, 2))
    grid = WindowGrid(3, 2, 1)
    out, _ = rrl_forward(x, grid, Q4, SHARED)
    tiles = split_tiles(out, 3)
    windows = extract_windows(x, grid)
    a = np.sort(tiles.reshape(*tiles.shape[:3], -1), axis=-1)
    b = np.sort(windows.reshape(*windows.shape[:3], -1), axis=-1)
    assert np.array_equal(a, b)


def test_forward_errors():
    with pytest.raises(ValueError):
        rrl_forward(np.zeros((1, 5, 6, 1)), WindowGrid(3), Q4)
    with pytest.raises(ValueError):
        rrl_forward(np.zeros((1, 6, 6, 1)), WindowGrid(4, 2), Q4)
    with pytest.raises(ValueError):
        rrl_forward(np.zeros((1, 7, 7, 1)), WindowGrid(5), R8)


def test_backward_identity_when_unrotated(rng):
    x = np.full((1, 6, 6, 2), 1.0)
    _, record = rrl_forward(x, WindowGrid(3, 3), Q4)
    g = rng.random((1, 6, 6, 2))
    assert np.array_equal(rrl_backward(g, record), g)


@pytest.mark.parametrize("k", [1, 2, 3])
def test_backward_of_a_single_rotated_window(k):
    base = np.array([[0.1, 0.9, 0.8], [0.7, 0.5, 0.6], [0.4, 0.3, 0.2]])
    canon, _ = canonicalize(base[None, :, :, None], Q4)
    # undo k clockwise turns so that the layer has to apply exactly k
    x = np.rot90(canon[0, :, :, 0], k)[None, :, :, None]
    _, record = rrl_forward(x, WindowGrid(3, 3), Q4)
    assert record.rotations.ravel().tolist() == [k]
    g = np.arange(9.0).reshape(1, 3, 3, 1)
    assert np.array_equal(rrl_backward(g, record)[0, :, :, 0], np.rot90(g[0, :, :, 0], k))


@pytest.mark.parametrize("policy", [IND, SHARED])
@pytest.mark.parametrize("grid", [WindowGrid(3), WindowGrid(3, 2, 1), WindowGrid(5, 1, 2)])
def test_backward_matches_finite_differences(rng, policy, grid):
    x = rng.random((1, 7, 7, 2))
    out, record = rrl_forward(x, grid, Q4, policy)
    weights = rng.standard_normal(out.shape)

    def f(z):
        return float((rrl_forward(z, grid, Q4, policy)[0] * weights).sum())

    numeric = numeric_gradient(f, x, h=1e-6)
    analytic = rrl_backward(weights, record)
    assert relative_error(numeric, analytic) < 1e-4


@pytest.mark.parametrize("mode,policy", [(Q4, IND), (Q4, SHARED), (R8, IND)])
def test_backward_is_the_transpose(rng, mode, policy):
    x = rng.random((2, 6, 6, 3))
    grid = WindowGrid(3, 1, 1)
    out, record = rrl_forward(x, grid, mode, policy)
    assert np.array_equal(rrl_apply(x, record), out)
    u = rng.standard_normal(x.shape)
    v = rng.standard_normal(out.shape)
    lhs = (rrl_apply(u, record) * v).sum()
    rhs = (u * rrl_backward(v, record)).sum()
    assert lhs == pytest.approx(rhs, rel=1e-12)


def test_backward_shape_mismatch(rng):
    _, record = rrl_forward(rng.random((1, 5, 5, 1)), WindowGrid(3), Q4)
    with pytest.raises(ValueError):
        rrl_backward(np.zeros((1, 8, 8, 1)), record)


@pytest.mark.parametrize("size", [1, 2, 3, 4, 5, 6, 7])
def test_global_rrl_invariant(rng, size):
    x = rng.random((5, size, size, 8))
    base, _ = global_rrl(x)
    for n in range(1, 4):
        assert np.array_equal(global_rrl(rot90(x, n))[0], base)


def test_global_rrl_symmetric_map():
    plane = np.array([[1.0, 2.0, 1.0], [2.0, 5.0, 2.0], [1.0, 2.0, 1.0]])
    x = plane[None, :, :, None]
    y, record = global_rrl(x)
    assert record.rotations.tolist() == [0]
    assert np.array_equal(y, x)


def test_global_rrl_tie_picks_lexicographic_minimum(rng):
    # a constant center neighbourhood ties every rotation on the code
    x = rng.random((1, 5, 5, 2))
    x[0, 1:4, 1:4, :] = 0.5
    y, record = global_rrl(x)
    flats = [np.rot90(x[0], -k, axes=(0, 1)).ravel().tolist() for k in range(4)]
    best = min(range(4), key=lambda k: flats[k])
    assert record.rotations.tolist() == [best]
    assert np.array_equal(y[0], np.rot90(x[0], -best, axes=(0, 1)))


def test_center_neighbourhood_commutes_with_rotation(rng):
    for size in (4, 6, 8, 10):
        p = rng.random((3, size, size))
        a = center_neighbourhood(np.rot90(p, 1, axes=(1, 2)))
        b = np.rot90(center_neighbourhood(p), 1, axes=(1, 2))
        assert np.array_equal(a, b)


def test_global_backward(rng):
    x = rng.random((4, 5, 5, 3))
    y, record = global_rrl(x)
    v = rng.standard_normal(y.shape)
    g = global_rrl_backward(v, record)
    # frozen rotation is orthogonal, so the gradient is the rotated-back v
    for i, k in enumerate(record.rotations):
        assert np.array_equal(np.rot90(g[i], -k, axes=(0, 1)), v[i])
    with pytest.raises(ValueError):
        global_rrl_backward(np.zeros((4, 4, 4, 3)), record)


def test_global_rrl_rejects_non_square():
    with pytest.raises(ValueError):
        global_rrl(np.zeros((1, 3, 4, 1)))
