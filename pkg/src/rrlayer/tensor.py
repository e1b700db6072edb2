"""Dense NHWC array substrate.

Every image and feature map in the package is a 4-D numpy array laid out as
(batch, height, width, channels). This module holds the handful of layout
operations the rest of the package is built on: exact quarter turns, bilinear
rotation, and sliding-window extraction / tiling / folding.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

DTYPES = {32: np.float32, 64: np.float64}

# coordinates closer than this to an integer are snapped before interpolation
_SNAP = 1e-9


def dtype_for(precision: int) -> type:
    try:
        return DTYPES[int(precision)]
    except (KeyError, ValueError):
        raise ValueError(f"precision must be 32 or 64, got {precision!r}") from None


def as_tensor(x, precision: int | None = None) -> np.ndarray:
    """Return `x` as a 4-D NHWC array, optionally cast to a float precision."""
    t = np.asarray(x)
    if t.ndim != 4:
        raise ValueError(f"expected a 4-D (N, H, W, C) tensor, got shape {t.shape}")
    if min(t.shape) < 1:
        raise ValueError(f"all tensor dimensions must be >= 1, got {t.shape}")
    if precision is not None:
        t = t.astype(dtype_for(precision), copy=False)
    return t


def rot90(t: np.ndarray, n: int) -> np.ndarray:
    """Rotate every (H, W) plane counterclockwise by ``n`` quarter turns.

    Pure element permutation; height and width swap for odd ``n``.
    """
    t = as_tensor(t)
    return np.ascontiguousarray(np.rot90(t, int(n) % 4, axes=(1, 2)))


def rotate_bilinear(t: np.ndarray, theta_degrees: float, fill: float = 0.0) -> np.ndarray:
    """Rotate square planes counterclockwise by an arbitrary angle.

    Rotation is about the pixel-grid center ((H-1)/2, (W-1)/2). Each output
    pixel is bilinearly sampled from the edge-extended source; samples whose
    2x2 support misses the source entirely get ``fill``. Multiples of 90 degrees reproduce `rot90`
    exactly because the trig values and sample coordinates are snapped to the
    lattice.
    """
    t = as_tensor(t)
    n, h, w, c = t.shape
    if h != w:
        raise ValueError(f"rotate_bilinear needs square planes, got {h}x{w}")
    rad = np.deg2rad(float(theta_degrees))
    cos, sin = np.cos(rad), np.sin(rad)
    cos = round(cos) if abs(cos - round(cos)) < 1e-12 else cos
    sin = round(sin) if abs(sin - round(sin)) < 1e-12 else sin

    center = (h - 1) / 2.0
    rows, cols = np.meshgrid(np.arange(h) - center, np.arange(w) - center, indexing="ij")
    # inverse map of a counterclockwise turn in (x right, y down) image coordinates
    src_c = center + cos * cols - sin * rows
    src_r = center + sin * cols + cos * rows
    src_c = np.where(np.abs(src_c - np.round(src_c)) < _SNAP, np.round(src_c), src_c)
    src_r = np.where(np.abs(src_r - np.round(src_r)) < _SNAP, np.round(src_r), src_r)
    # fill only where the 2x2 support holds no source pixel; elsewhere extend the edge
    outside = (src_r <= -1) | (src_r >= h) | (src_c <= -1) | (src_c >= w)
    src_r = np.clip(src_r, 0, h - 1)
    src_c = np.clip(src_c, 0, w - 1)

    r0 = np.floor(src_r).astype(np.int64)
    c0 = np.floor(src_c).astype(np.int64)
    fr = (src_r - r0).astype(t.dtype)
    fc = (src_c - c0).astype(t.dtype)

    # a clamped sample on the last row/column reads one padded cell with zero weight
    padded = np.pad(t, ((0, 0), (1, 1), (1, 1), (0, 0)), mode="edge")
    r0p = r0 + 1
    c0p = c0 + 1
    v00 = padded[:, r0p, c0p]
    v01 = padded[:, r0p, c0p + 1]
    v10 = padded[:, r0p + 1, c0p]
    v11 = padded[:, r0p + 1, c0p + 1]
    fr = fr[None, :, :, None]
    fc = fc[None, :, :, None]
    top = v00 * (1 - fc) + v01 * fc
    bottom = v10 * (1 - fc) + v11 * fc
    out = top * (1 - fr) + bottom * fr
    # exact-lattice samples: avoid 0 * fill arithmetic so the result is a pure copy
    exact = (fr == 0) & (fc == 0)
    out = np.where(exact, v00, out)
    out[:, outside] = fill
    return out.astype(t.dtype, copy=False)


@dataclass(frozen=True)
class WindowGrid:
    """Sliding-window geometry: window size, stride and symmetric zero padding."""

    size: int
    stride: int = 1
    padding: int = 0

    def __post_init__(self):
        if self.size < 1 or self.stride < 1 or self.padding < 0:
            raise ValueError(f"invalid window grid {self}")

    def out_dim(self, n: int) -> int:
        span = n + 2 * self.padding - self.size
        if span < 0:
            raise ValueError(f"window {self.size} does not fit input {n} with padding {self.padding}")
        if span % self.stride:
            raise ValueError(
                f"(in + 2*padding - F) = {span} is not divisible by stride {self.stride}"
            )
        return span // self.stride + 1

    def out_shape(self, h: int, w: int) -> tuple[int, int]:
        return self.out_dim(h), self.out_dim(w)

    def check_quarter_symmetric(self, h: int, w: int) -> None:
        """Quarter turns must map the set of window positions onto itself."""
        if h != w:
            raise ValueError(f"rotation layers need square inputs, got {h}x{w}")
        self.out_shape(h, w)


def extract_windows(t: np.ndarray, grid: WindowGrid) -> np.ndarray:
    """Copy out all sliding windows as an (N, OH, OW, F, F, C) array."""
    t = as_tensor(t)
    n, h, w, c = t.shape
    grid.out_shape(h, w)
    p, f, s = grid.padding, grid.size, grid.stride
    if p:
        t = np.pad(t, ((0, 0), (p, p), (p, p), (0, 0)))
    view = sliding_window_view(t, (f, f), axis=(1, 2))[:, ::s, ::s]
    # view is (N, OH, OW, C, F, F)
    return np.ascontiguousarray(view.transpose(0, 1, 2, 4, 5, 3))


def assemble_windows(windows: np.ndarray) -> np.ndarray:
    """Tile (N, OH, OW, F, F, C) windows into an (N, F*OH, F*OW, C) map.

    Window (oh, ow) lands on rows [oh*F, (oh+1)*F) and columns [ow*F, (ow+1)*F).
    """
    windows = np.asarray(windows)
    if windows.ndim != 6 or windows.shape[3] != windows.shape[4]:
        raise ValueError(f"expected (N, OH, OW, F, F, C) windows, got {windows.shape}")
    n, oh, ow, f, _, c = windows.shape
    return np.ascontiguousarray(windows.transpose(0, 1, 3, 2, 4, 5)).reshape(n, oh * f, ow * f, c)


def split_tiles(tiled: np.ndarray, size: int) -> np.ndarray:
    """Inverse of `assemble_windows`: cut a tiled map back into F x F tiles."""
    tiled = as_tensor(tiled)
    n, h, w, c = tiled.shape
    if h % size or w % size:
        raise ValueError(f"tiled map {h}x{w} is not a multiple of tile size {size}")
    t = tiled.reshape(n, h // size, size, w // size, size, c)
    return np.ascontiguousarray(t.transpose(0, 1, 3, 2, 4, 5))


def fold_windows(windows: np.ndarray, grid: WindowGrid, input_shape: tuple) -> np.ndarray:
    """Scatter-add windows back onto the input they were extracted from.

    This is the adjoint of `extract_windows`: overlapping windows accumulate.
    """
    n, h, w, c = input_shape
    oh, ow = grid.out_shape(h, w)
    if windows.shape != (n, oh, ow, grid.size, grid.size, c):
        raise ValueError(
            f"windows shape {windows.shape} does not match grid output "
            f"{(n, oh, ow, grid.size, grid.size, c)}"
        )
    p, f, s = grid.padding, grid.size, grid.stride
    out = np.zeros((n, h + 2 * p, w + 2 * p, c), dtype=windows.dtype)
    for i in range(f):
        for j in range(f):
            out[:, i : i + s * oh : s, j : j + s * ow : s, :] += windows[:, :, :, i, j, :]
    if p:
        out = out[:, p:-p, p:-p, :]
    return np.ascontiguousarray(out)
