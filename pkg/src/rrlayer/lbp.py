"""Local binary pattern codes and canonical window orientation.

A window's canonical orientation is the candidate rotation with the smallest
LBP code. Ties on the code are broken by comparing the rotated windows
themselves in row-major order, so the choice depends only on window content
and is identical for every rotated copy of the same window.

Candidate rotations are represented as index permutations of the flattened
F*F window: ``rotated.flat[j] == window.flat[perm[k, j]]``.
"""

from __future__ import annotations

from enum import Enum
from functools import lru_cache

import numpy as np

# clockwise from top-left; bit i of a code carries weight 2**i
RING_ORDER = ((-1, -1), (-1, 0), (-1, 1), (0, 1), (1, 1), (1, 0), (1, -1), (0, -1))


class LbpMode(str, Enum):
    RING8 = "ring8"
    QUARTER4 = "quarter4"


class ChannelPolicy(str, Enum):
    INDEPENDENT = "independent"
    SHARED = "shared"


def check_mode(mode: LbpMode, size: int) -> None:
    mode = LbpMode(mode)
    if size < 3 or size % 2 == 0:
        raise ValueError(f"LBP windows need odd size >= 3, got {size}")
    if mode is LbpMode.RING8 and size != 3:
        raise ValueError(f"ring8 rotations are only defined on 3x3 windows, got {size}x{size}")


@lru_cache(maxsize=None)
def ring_indices(size: int) -> tuple[np.ndarray, int]:
    """Flat indices of the 8 ring neighbours (in RING_ORDER) and of the center."""
    mid = size // 2
    ring = np.array([(mid + dr) * size + (mid + dc) for dr, dc in RING_ORDER])
    return ring, mid * size + mid


@lru_cache(maxsize=None)
def rotation_permutations(mode: LbpMode, size: int) -> np.ndarray:
    """Candidate rotations of an F x F window as a (K, F*F) permutation table.

    ring8: K=8, candidate k moves every ring cell k steps clockwise (45 degrees
    each) and leaves the center in place. quarter4: K=4, candidate k is k
    clockwise quarter turns of the whole window. Candidate 0 is the identity.
    """
    mode = LbpMode(mode)
    check_mode(mode, size)
    base = np.arange(size * size).reshape(size, size)
    if mode is LbpMode.QUARTER4:
        perms = np.stack([np.rot90(base, -k).ravel() for k in range(4)])
    else:
        ring, _ = ring_indices(size)
        perms = np.tile(base.ravel(), (8, 1))
        for k in range(8):
            for j in range(8):
                perms[k, ring[j]] = ring[(j - k) % 8]
    perms.setflags(write=False)
    return perms


@lru_cache(maxsize=None)
def inverse_permutations(mode: LbpMode, size: int) -> np.ndarray:
    perms = rotation_permutations(mode, size)
    inv = np.empty_like(perms)
    rows = np.arange(perms.shape[0])[:, None]
    inv[rows, perms] = np.arange(perms.shape[1])[None, :]
    inv.setflags(write=False)
    return inv


def candidate_rotations(mode: LbpMode, size: int = 3) -> list[np.ndarray]:
    """The candidate set of `mode` as a list of flat-index permutations."""
    return list(rotation_permutations(mode, size))


def apply_rotation(window: np.ndarray, mode: LbpMode, k: int) -> np.ndarray:
    """Rotate a 2-D F x F window (or F x F x C) by candidate ``k`` of `mode`."""
    window = np.asarray(window)
    f = window.shape[0]
    perm = rotation_permutations(mode, f)[k]
    flat = window.reshape(f * f, *window.shape[2:])
    return flat[perm].reshape(window.shape)


def lbp_codes(flat: np.ndarray, size: int) -> np.ndarray:
    """LBP codes of flattened F x F windows, vectorized over leading axes.

    Bit i is set when ring neighbour i is >= the center value.
    """
    if size < 3 or size % 2 == 0:
        raise ValueError(f"LBP windows need odd size >= 3, got {size}")
    ring, center = ring_indices(size)
    c = flat[..., center : center + 1]
    bits = (flat[..., ring] >= c).astype(np.int64)
    return bits @ (1 << np.arange(8, dtype=np.int64))


def lbp_code(window: np.ndarray) -> int:
    """LBP code in [0, 255] of a single 2-D F x F window plane."""
    window = np.asarray(window)
    if window.ndim != 2 or window.shape[0] != window.shape[1]:
        raise ValueError(f"expected a square 2-D window, got shape {window.shape}")
    f = window.shape[0]
    return int(lbp_codes(window.reshape(f * f), f))


def select_canonical(codes: np.ndarray, content: np.ndarray) -> np.ndarray:
    """Pick one candidate per row: minimal code, then row-major least content.

    codes: (M, K) integer codes; content: (M, K, L) candidate values in the
    order they are to be compared. Rows still tied after all L positions hold
    identical content; the smallest candidate index is returned for them.
    """
    alive = codes == codes.min(axis=1, keepdims=True)
    tied = np.flatnonzero(alive.sum(axis=1) > 1)
    pos = 0
    while tied.size and pos < content.shape[2]:
        sub = alive[tied]
        col = np.where(sub, content[tied, :, pos], np.inf)
        sub &= col == col.min(axis=1, keepdims=True)
        alive[tied] = sub
        tied = tied[sub.sum(axis=1) > 1]
        pos += 1
    return alive.argmax(axis=1)


def canonicalize(windows: np.ndarray, mode: LbpMode, policy: ChannelPolicy = ChannelPolicy.INDEPENDENT):
    """Canonicalize a stack of (M, F, F, C) windows.

    Returns ``(canonical, rotations)`` where canonical has the input shape and
    rotations is (M, C) for the independent policy and (M,) for shared.
    Under the shared policy the LBP code is taken from the channel-mean plane
    and ties are broken on the full F x F x C window.
    """
    windows = np.asarray(windows)
    if windows.ndim != 4 or windows.shape[1] != windows.shape[2]:
        raise ValueError(f"expected (M, F, F, C) windows, got {windows.shape}")
    m, f, _, c = windows.shape
    mode, policy = LbpMode(mode), ChannelPolicy(policy)
    perms = rotation_permutations(mode, f)
    k = perms.shape[0]

    if policy is ChannelPolicy.INDEPENDENT:
        planes = windows.transpose(0, 3, 1, 2).reshape(m * c, f * f)
        cands = planes[:, perms]  # (M*C, K, F*F)
        idx = select_canonical(lbp_codes(cands, f), cands)
        chosen = cands[np.arange(m * c), idx]
        canonical = chosen.reshape(m, c, f, f).transpose(0, 2, 3, 1)
        return np.ascontiguousarray(canonical), idx.reshape(m, c)

    mean_plane = windows.mean(axis=3).reshape(m, f * f)
    codes = lbp_codes(mean_plane[:, perms], f)
    cands = windows.reshape(m, f * f, c)[:, perms, :]  # (M, K, F*F, C)
    idx = select_canonical(codes, cands.reshape(m, k, f * f * c))
    canonical = cands[np.arange(m), idx].reshape(m, f, f, c)
    return canonical, idx


def canonical_rotation(window: np.ndarray, mode: LbpMode, policy: ChannelPolicy = ChannelPolicy.INDEPENDENT):
    """Canonical form of one window (F x F or F x F x C) and its rotation indices."""
    window = np.asarray(window)
    squeeze = window.ndim == 2
    w = window[:, :, None] if squeeze else window
    canonical, idx = canonicalize(w[None], mode, policy)
    canonical = canonical[0]
    return (canonical[:, :, 0] if squeeze else canonical), idx[0]
