"""Quarter-turn box transforms and inscribed-circle masking.

Box coordinates are pixel edges: a box (x1, y1, x2, y2) covers the pixels
[x1, x2) x [y1, y2), x to the right and y downward.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .tensor import as_tensor


@dataclass(frozen=True)
class BBox:
    x1: int
    y1: int
    x2: int
    y2: int

    def validate(self, width: int, height: int) -> None:
        if not (self.x1 < self.x2 and self.y1 < self.y2):
            raise ValueError(f"degenerate box {self}")
        if self.x1 < 0 or self.y1 < 0 or self.x2 > width or self.y2 > height:
            raise ValueError(f"box {self} outside a {width}x{height} canvas")

    @property
    def width(self):
        return self.x2 - self.x1

    @property
    def height(self):
        return self.y2 - self.y1


def rotate_point(x, y, width):
    """Image point under a counterclockwise quarter turn of a canvas `width` wide."""
    return y, width - x


def rotate_bbox(b: BBox, n: int, width: int, height: int) -> BBox:
    """Box coordinates after rotating the image counterclockwise by n quarter turns.

    Each turn maps (x, y) -> (y, W - x), which sends the upper-left and
    lower-right corners to the lower-left and upper-right ones; the result is
    re-ordered so it again stores (upper-left, lower-right). The canvas is
    H x W after an odd number of turns.
    """
    if n not in (0, 1, 2, 3):
        raise ValueError(f"n must be one of 0, 1, 2, 3, got {n!r}")
    b.validate(width, height)
    for _ in range(n):
        ax, ay = rotate_point(b.x1, b.y1, width)
        bx, by = rotate_point(b.x2, b.y2, width)
        b = BBox(min(ax, bx), min(ay, by), max(ax, bx), max(ay, by))
        width, height = height, width
    return b


def circle_mask(size: int) -> np.ndarray:
    """Boolean (size, size) array, True outside the inscribed circle."""
    c = (size - 1) / 2.0
    r, q = np.meshgrid(np.arange(size) - c, np.arange(size) - c, indexing="ij")
    return r * r + q * q > (size / 2.0) ** 2


def inscribed_circle_mask(t, fill: float = 0.0) -> np.ndarray:
    """Replace every pixel whose center lies farther than H/2 from the image center."""
    t = as_tensor(t)
    if t.shape[1] != t.shape[2]:
        raise ValueError(f"inscribed circle mask needs square images, got {t.shape[1]}x{t.shape[2]}")
    out = t.copy()
    out[:, circle_mask(t.shape[1])] = fill
    return out


def read_boxes(path) -> list[tuple[str, BBox]]:
    """Parse a box list: one ``label x1 y1 x2 y2`` per line."""
    boxes = []
    for lineno, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        parts = line.split()
        if not parts:
            continue
        if len(parts) != 5:
            raise ValueError(f"{path}:{lineno}: expected 'label x1 y1 x2 y2', got {line!r}")
        try:
            coords = [int(v) for v in parts[1:]]
        except ValueError:
            raise ValueError(f"{path}:{lineno}: box coordinates must be integers") from None
        boxes.append((parts[0], BBox(*coords)))
    return boxes


def format_boxes(boxes) -> str:
    return "".join(f"{label} {b.x1} {b.y1} {b.x2} {b.y2}\n" for label, b in boxes)
