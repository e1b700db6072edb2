"""Dataset loading and rotated test-set construction.

Two on-disk layouts are understood:

* IDX (MNIST) files, optionally gzip-compressed:
  ``train-images-idx3-ubyte`` / ``train-labels-idx1-ubyte`` and
  ``t10k-images-idx3-ubyte`` / ``t10k-labels-idx1-ubyte``.
* A directory of binary PGM (P5) / PPM (P6) images listed in a
  ``filename,label`` CSV manifest (``train.csv`` / ``test.csv``, falling back
  to ``manifest.csv``).

Pixels are scaled to [0, 1].
"""

from __future__ import annotations

import csv
import gzip
import importlib.util
import struct
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .geometry import inscribed_circle_mask
from .tensor import rot90, rotate_bilinear

IMAGE_MAGIC = 0x00000803
LABEL_MAGIC = 0x00000801

IDX_NAMES = {
    "train": ("train-images-idx3-ubyte", "train-labels-idx1-ubyte"),
    "test": ("t10k-images-idx3-ubyte", "t10k-labels-idx1-ubyte"),
}


class DataError(ValueError):
    pass


class IdxMagicError(DataError):
    pass


class IdxTruncatedError(DataError):
    pass


class IdxCountMismatchError(DataError):
    pass


class ImageFormatError(DataError):
    pass


class ManifestError(DataError):
    pass


@dataclass
class Dataset:
    images: np.ndarray  # (N, H, W, C), float in [0, 1]
    labels: np.ndarray  # (N,) int
    class_names: list = field(default_factory=list)
    angles: np.ndarray | None = None  # rotation applied to each image, degrees

    def __post_init__(self):
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if len(self.images) != len(self.labels):
            raise DataError(f"{len(self.images)} images but {len(self.labels)} labels")
        if not self.class_names and len(self.labels):
            self.class_names = [str(i) for i in range(int(self.labels.max()) + 1)]
        if len(self.labels) and (self.labels.min() < 0 or self.labels.max() >= len(self.class_names)):
            raise DataError("labels outside [0, classes)")

    def __len__(self):
        return len(self.labels)

    def subset(self, count: int | None) -> "Dataset":
        if count is None or count >= len(self):
            return self
        angles = None if self.angles is None else self.angles[:count]
        return replace(self, images=self.images[:count], labels=self.labels[:count], angles=angles)


# ------------------------------------------------------------------------ IDX


def _read_bytes(path) -> bytes:
    path = Path(path)
    raw = path.read_bytes()
    if path.suffix == ".gz" or raw[:2] == b"\x1f\x8b":
        raw = gzip.decompress(raw)
    return raw


def _parse_idx(raw: bytes, magic: int, what: str) -> np.ndarray:
    if len(raw) < 4:
        raise IdxTruncatedError(f"{what} file truncated: {len(raw)} bytes")
    (got,) = struct.unpack(">I", raw[:4])
    if got != magic:
        raise IdxMagicError(f"{what} file has magic 0x{got:08x}, expected 0x{magic:08x}")
    ndim = magic & 0xFF
    header = 4 + 4 * ndim
    if len(raw) < header:
        raise IdxTruncatedError(f"{what} file truncated in header")
    dims = struct.unpack(f">{ndim}I", raw[4:header])
    size = int(np.prod(dims, dtype=np.int64))
    if len(raw) < header + size:
        raise IdxTruncatedError(f"{what} file truncated: expected {size} data bytes, got {len(raw) - header}")
    return np.frombuffer(raw, dtype=np.uint8, count=size, offset=header).reshape(dims)


def load_idx(images_path, labels_path) -> Dataset:
    images = _parse_idx(_read_bytes(images_path), IMAGE_MAGIC, "image")
    labels = _parse_idx(_read_bytes(labels_path), LABEL_MAGIC, "label")
    if images.shape[0] != labels.shape[0]:
        raise IdxCountMismatchError(f"{images.shape[0]} images but {labels.shape[0]} labels")
    return Dataset(images[..., None].astype(np.float64) / 255.0, labels.astype(np.int64))


def write_idx(images_path, labels_path, images: np.ndarray, labels: np.ndarray) -> None:
    """Write uint8 (N, H, W) images and (N,) labels as IDX files."""
    images = np.asarray(images, dtype=np.uint8)
    labels = np.asarray(labels, dtype=np.uint8)
    n, h, w = images.shape
    Path(images_path).write_bytes(struct.pack(">IIII", IMAGE_MAGIC, n, h, w) + images.tobytes())
    Path(labels_path).write_bytes(struct.pack(">II", LABEL_MAGIC, len(labels)) + labels.tobytes())


# ------------------------------------------------------------------- PGM/PPM


def read_pnm(path) -> np.ndarray:
    """Decode a binary PGM/PPM file into an (H, W, C) float array in [0, 1]."""
    raw = Path(path).read_bytes()
    if raw[:2] not in (b"P5", b"P6"):
        raise ImageFormatError(f"{path}: not a binary PGM/PPM file (magic {raw[:2]!r})")
    channels = 1 if raw[:2] == b"P5" else 3
    tokens, pos = [], 2
    while len(tokens) < 3:
        while pos < len(raw) and raw[pos : pos + 1].isspace():
            pos += 1
        if raw[pos : pos + 1] == b"#":
            while pos < len(raw) and raw[pos : pos + 1] not in (b"\n", b"\r"):
                pos += 1
            continue
        start = pos
        while pos < len(raw) and not raw[pos : pos + 1].isspace():
            pos += 1
        if start == pos:
            raise ImageFormatError(f"{path}: truncated header")
        tokens.append(raw[start:pos])
    pos += 1  # single whitespace before the raster
    try:
        width, height, maxval = (int(t) for t in tokens)
    except ValueError:
        raise ImageFormatError(f"{path}: malformed header {tokens!r}") from None
    if width < 1 or height < 1 or not 0 < maxval < 65536:
        raise ImageFormatError(f"{path}: invalid header values {width}x{height} max {maxval}")
    dtype = np.dtype(np.uint8) if maxval < 256 else np.dtype(">u2")
    count = width * height * channels
    if len(raw) - pos < count * dtype.itemsize:
        raise ImageFormatError(f"{path}: truncated raster")
    data = np.frombuffer(raw, dtype=dtype, count=count, offset=pos)
    return data.reshape(height, width, channels).astype(np.float64) / maxval


def write_pnm(path, pixels: np.ndarray) -> None:
    """Write uint8 (H, W) or (H, W, 1) as PGM and (H, W, 3) as PPM."""
    pixels = np.asarray(pixels, dtype=np.uint8)
    if pixels.ndim == 3 and pixels.shape[2] == 1:
        pixels = pixels[:, :, 0]
    magic = b"P5" if pixels.ndim == 2 else b"P6"
    h, w = pixels.shape[:2]
    Path(path).write_bytes(magic + f"\n{w} {h}\n255\n".encode() + pixels.tobytes())


def load_image_dir(directory, manifest) -> Dataset:
    directory = Path(directory)
    rows = []
    with open(manifest, newline="", encoding="utf-8") as fh:
        for lineno, row in enumerate(csv.reader(fh), 1):
            if not row or not "".join(row).strip():
                continue
            if lineno == 1 and [c.strip().lower() for c in row] == ["filename", "label"]:
                continue
            if len(row) != 2:
                raise ManifestError(f"{manifest}:{lineno}: expected 'filename,label'")
            try:
                rows.append((row[0].strip(), int(row[1])))
            except ValueError:
                raise ManifestError(f"{manifest}:{lineno}: label {row[1]!r} is not an integer") from None
    if not rows:
        return Dataset(np.zeros((0, 0, 0, 0)), np.zeros(0, dtype=np.int64))
    images = [read_pnm(directory / name) for name, _ in rows]
    if len({im.shape for im in images}) != 1:
        raise ImageFormatError(f"images listed in {manifest} do not share one shape")
    return Dataset(np.stack(images), np.array([label for _, label in rows]))


def _find(directory: Path, name: str) -> Path | None:
    for candidate in (directory / name, directory / (name + ".gz")):
        if candidate.is_file():
            return candidate
    return None


def load_split(directory, split: str = "train") -> Dataset:
    """Load the ``train`` or ``test`` split from a data directory."""
    directory = Path(directory)
    if not directory.is_dir():
        raise FileNotFoundError(f"data directory not found: {directory}")
    images, labels = (_find(directory, n) for n in IDX_NAMES[split])
    if images and labels:
        return load_idx(images, labels)
    for name in (f"{split}.csv", "manifest.csv"):
        if (directory / name).is_file():
            return load_image_dir(directory, directory / name)
    raise FileNotFoundError(f"no {split} split (IDX files or CSV manifest) in {directory}")


def prepare_mnist_subset(out_dir, seed: int = 0, n_test: int = 1000) -> tuple[int, int]:
    """Write the 5,000-image MNIST sample bundled with mlxtend as IDX files.

    The sample is shuffled with ``seed`` and split into train (the rest) and
    test (``n_test``). Returns the split sizes.
    """
    spec = importlib.util.find_spec("mlxtend")
    if spec is None or not spec.submodule_search_locations:
        raise DataError("mlxtend is not installed; pip install mlxtend")
    source = Path(spec.submodule_search_locations[0]) / "data" / "data" / "mnist_5k.csv.gz"
    with gzip.open(source, "rt") as fh:
        table = np.loadtxt(fh, delimiter=",", dtype=np.int64)
    pixels, labels = table[:, :-1].reshape(-1, 28, 28), table[:, -1]
    order = np.random.default_rng(seed).permutation(len(labels))
    pixels, labels = pixels[order], labels[order]
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    cut = len(labels) - n_test
    write_idx(out / IDX_NAMES["train"][0], out / IDX_NAMES["train"][1], pixels[:cut], labels[:cut])
    write_idx(out / IDX_NAMES["test"][0], out / IDX_NAMES["test"][1], pixels[cut:], labels[cut:])
    return cut, n_test


# ----------------------------------------------------------- rotated test sets


def _require_square(d: Dataset) -> None:
    if len(d) and d.images.shape[1] != d.images.shape[2]:
        raise DataError(f"rotated sets need square images, got {d.images.shape[1]}x{d.images.shape[2]}")


def masked(d: Dataset, fill: float = 0.0) -> Dataset:
    """Copy of ``d`` with every image cut to its inscribed circle."""
    _require_square(d)
    if not len(d):
        return d
    return replace(d, images=inscribed_circle_mask(d.images, fill))


def make_rot_testset(d: Dataset, seed: int, fill: float = 0.0) -> Dataset:
    """Rotate each image by a seeded uniform choice of 0/90/180/270 degrees, then mask."""
    _require_square(d)
    turns = np.random.default_rng(seed).integers(0, 4, size=len(d))
    images = np.empty_like(d.images)
    for k in range(4):
        sel = turns == k
        if sel.any():
            images[sel] = rot90(d.images[sel], k)
    out = replace(d, images=images, angles=(turns * 90).astype(np.float64))
    return masked(out, fill)


def make_rotplus_testset(d: Dataset, seed: int, fill: float = 0.0) -> Dataset:
    """Rotate each image by a seeded uniform angle in [0, 360), then mask."""
    _require_square(d)
    angles = np.random.default_rng(seed).uniform(0.0, 360.0, size=len(d))
    images = np.empty_like(d.images)
    for i, theta in enumerate(angles):
        images[i : i + 1] = rotate_bilinear(d.images[i : i + 1], theta, fill)
    out = replace(d, images=images, angles=angles)
    return masked(out, fill)
