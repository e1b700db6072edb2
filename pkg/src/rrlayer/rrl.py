"""Regional rotation layer.

`rrl_forward` cuts a feature map into sliding windows, rotates each window to
its canonical LBP orientation and tiles the results into a (F*OH, F*OW, C)
map meant to be consumed by a stride-F convolution. `global_rrl` treats the
whole map as a single window so that quarter-turn equivariant features become
invariant before the classifier.

Both layers only permute values. Their backward passes hold the chosen
rotations fixed, the same way max-pooling holds its argmax fixed.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .lbp import (
    ChannelPolicy,
    LbpMode,
    check_mode,
    inverse_permutations,
    lbp_codes,
    rotation_permutations,
    select_canonical,
    canonicalize,
)
from .tensor import WindowGrid, as_tensor, assemble_windows, extract_windows, fold_windows, split_tiles


@dataclass(frozen=True)
class RotationRecord:
    """Rotations chosen by one forward pass.

    ``rotations`` is (N, OH, OW, C) for the independent policy and (N, OH, OW)
    for shared. For a global layer it is (N,) and ``grid.size`` equals the map
    side.
    """

    grid: WindowGrid
    mode: LbpMode
    policy: ChannelPolicy
    rotations: np.ndarray
    input_shape: tuple

    def __post_init__(self):
        k = 8 if self.mode is LbpMode.RING8 else 4
        if self.rotations.size and (self.rotations.min() < 0 or self.rotations.max() >= k):
            raise ValueError(f"rotation index outside the {self.mode.value} candidate set")


def _check_layer_input(x: np.ndarray, grid: WindowGrid, mode: LbpMode) -> None:
    check_mode(mode, grid.size)
    _, h, w, _ = x.shape
    grid.check_quarter_symmetric(h, w)


def rrl_forward(x, grid: WindowGrid, mode=LbpMode.QUARTER4, policy=ChannelPolicy.INDEPENDENT):
    """Canonicalize every window of ``x`` and tile the result.

    Returns ``(tiled, record)``; tiled is (N, F*OH, F*OW, C).
    """
    x = as_tensor(x)
    mode, policy = LbpMode(mode), ChannelPolicy(policy)
    _check_layer_input(x, grid, mode)
    windows = extract_windows(x, grid)
    n, oh, ow, f, _, c = windows.shape
    canonical, idx = canonicalize(windows.reshape(n * oh * ow, f, f, c), mode, policy)
    rotations = idx.reshape((n, oh, ow, c) if policy is ChannelPolicy.INDEPENDENT else (n, oh, ow))
    tiled = assemble_windows(canonical.reshape(n, oh, ow, f, f, c))
    return tiled, RotationRecord(grid, mode, policy, rotations, x.shape)


def _permute_tiles(tiles: np.ndarray, table: np.ndarray, record: RotationRecord) -> np.ndarray:
    """Apply per-(window, channel) flat permutations from ``table`` to tiles."""
    n, oh, ow, f, _, c = tiles.shape
    flat = tiles.reshape(n, oh, ow, f * f, c).transpose(0, 1, 2, 4, 3)  # (N,OH,OW,C,FF)
    rot = record.rotations
    if record.policy is ChannelPolicy.SHARED:
        rot = np.broadcast_to(rot[..., None], (n, oh, ow, c))
    out = np.take_along_axis(flat, table[rot], axis=-1)
    return out.transpose(0, 1, 2, 4, 3).reshape(n, oh, ow, f, f, c)


def rrl_apply(x, record: RotationRecord) -> np.ndarray:
    """Forward pass with the rotations frozen to ``record`` (a linear map of x)."""
    x = as_tensor(x)
    if x.shape != record.input_shape:
        raise ValueError(f"input shape {x.shape} does not match record {record.input_shape}")
    windows = extract_windows(x, record.grid)
    perms = rotation_permutations(record.mode, record.grid.size)
    return assemble_windows(_permute_tiles(windows, perms, record))


def rrl_backward(grad_tiled, record: RotationRecord) -> np.ndarray:
    """Gradient of the layer input given the gradient of the tiled output."""
    grad_tiled = as_tensor(grad_tiled)
    n, h, w, c = record.input_shape
    oh, ow = record.grid.out_shape(h, w)
    f = record.grid.size
    if grad_tiled.shape != (n, oh * f, ow * f, c):
        raise ValueError(f"gradient shape {grad_tiled.shape} does not match record")
    tiles = split_tiles(grad_tiled, f)
    inv = inverse_permutations(record.mode, f)
    return fold_windows(_permute_tiles(tiles, inv, record), record.grid, record.input_shape)


def _block_bounds(n: int) -> list[tuple[int, int]]:
    """Three index ranges covering [0, n) that are mirror-symmetric."""
    if n == 1:
        return [(0, 1)] * 3
    a = max(1, (n + 1) // 3)
    mid = (a, n - a) if n - 2 * a > 0 else (0, n)
    return [(0, a), mid, (n - a, n)]


def center_neighbourhood(plane: np.ndarray) -> np.ndarray:
    """Reduce (N, H, H) planes to the (N, 3, 3) neighbourhood used for the global code.

    Odd H: the 3x3 cells around the center. Even H: means over a mirror
    symmetric 3x3 block layout. Block values are sorted before summation, so
    the reduction of a rotated map is bitwise the rotated reduction.
    """
    n, h, w = plane.shape
    if h % 2 and h >= 3:
        m = h // 2
        return plane[:, m - 1 : m + 2, m - 1 : m + 2]
    bounds = _block_bounds(h)
    out = np.empty((n, 3, 3), dtype=plane.dtype)
    for i, (r0, r1) in enumerate(bounds):
        for j, (c0, c1) in enumerate(bounds):
            block = np.sort(plane[:, r0:r1, c0:c1].reshape(n, -1), axis=1)
            out[:, i, j] = block.sum(axis=1) / block.shape[1]
    return out


def global_rrl(x):
    """Rotate each whole map (all channels together) to its canonical quarter turn.

    The deciding LBP code comes from `center_neighbourhood` of the channel-mean
    plane; ties are broken on the full flattened (H, W, C) map.
    Returns ``(y, record)`` with record.rotations of shape (N,): the number of
    clockwise quarter turns applied to each sample.
    """
    x = as_tensor(x)
    n, h, w, c = x.shape
    if h != w:
        raise ValueError(f"global rotation layer needs square maps, got {h}x{w}")
    cands = np.stack([np.rot90(x, -k, axes=(1, 2)) for k in range(4)], axis=1)  # (N,4,H,W,C)
    if h == 1:
        codes = np.zeros((n, 4), dtype=np.int64)
    else:
        hood = center_neighbourhood(x.mean(axis=3)).reshape(n, 9)
        codes = lbp_codes(hood[:, rotation_permutations(LbpMode.QUARTER4, 3)], 3)
    idx = select_canonical(codes, cands.reshape(n, 4, h * w * c))
    y = np.ascontiguousarray(cands[np.arange(n), idx])
    record = RotationRecord(WindowGrid(h), LbpMode.QUARTER4, ChannelPolicy.SHARED, idx, x.shape)
    return y, record


def global_rrl_backward(grad, record: RotationRecord) -> np.ndarray:
    grad = as_tensor(grad)
    if grad.shape != record.input_shape:
        raise ValueError(f"gradient shape {grad.shape} does not match record {record.input_shape}")
    out = np.empty_like(grad)
    for k in range(4):
        sel = record.rotations == k
        if sel.any():
            out[sel] = np.rot90(grad[sel], k, axes=(1, 2))
    return out
