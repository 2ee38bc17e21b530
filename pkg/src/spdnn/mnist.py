"""IDX (MNIST) readers/writers and conversion to 0/1 network inputs."""
from __future__ import annotations

import gzip
import struct
from dataclasses import dataclass

import numpy as np

from .sparse import DimensionError

IMAGES_MAGIC = 0x00000803
LABELS_MAGIC = 0x00000801
DEFAULT_THRESHOLD = 128


class IdxFormatError(ValueError):
    pass


@dataclass
class Dataset:
    inputs: np.ndarray  # (n, input_dim), entries 0.0 / 1.0
    labels: np.ndarray  # (n, N) one-hot, zero padded

    def __len__(self):
        return self.inputs.shape[0]


def _open(path):
    return gzip.open(path, "rb") if str(path).endswith(".gz") else open(path, "rb")


def _read_idx(path, magic, ndim):
    with _open(path) as fh:
        data = fh.read()
    header = 4 + 4 * ndim
    if len(data) < header:
        raise IdxFormatError(f"{path}: file too short for an IDX header")
    got = struct.unpack(">I", data[:4])[0]
    if got != magic:
        raise IdxFormatError(f"{path}: bad magic 0x{got:08x}, expected 0x{magic:08x}")
    dims = struct.unpack(f">{ndim}I", data[4:header])
    size = int(np.prod(dims))
    if len(data) - header != size:
        raise IdxFormatError(
            f"{path}: payload has {len(data) - header} bytes, header declares {size}"
        )
    return np.frombuffer(data, dtype=np.uint8, offset=header).reshape(dims)


def load_idx_images(path) -> np.ndarray:
    """Images as a ``(count, rows, cols)`` uint8 array."""
    return _read_idx(path, IMAGES_MAGIC, 3)


def load_idx_labels(path) -> np.ndarray:
    return _read_idx(path, LABELS_MAGIC, 1)


def write_idx_images(path, images) -> None:
    images = np.asarray(images, dtype=np.uint8)
    with open(path, "wb") as fh:
        fh.write(struct.pack(">IIII", IMAGES_MAGIC, *images.shape))
        fh.write(images.tobytes())


def write_idx_labels(path, labels) -> None:
    labels = np.asarray(labels, dtype=np.uint8)
    with open(path, "wb") as fh:
        fh.write(struct.pack(">II", LABELS_MAGIC, labels.size))
        fh.write(labels.tobytes())


def preprocess(raw, side: int, threshold: int = DEFAULT_THRESHOLD, center: bool = False) -> np.ndarray:
    """Zero-pad images onto ``side x side``, binarise, and flatten row-major.

    By default the image sits in the top-left corner; ``center=True`` pads
    evenly on both sides instead.  A pixel becomes 1 when ``>= threshold``.
    """
    raw = np.asarray(raw)
    if raw.ndim == 2:
        raw = raw[None]
    n, h, w = raw.shape
    if side < h or side < w:
        raise DimensionError(f"side {side} is smaller than the {h}x{w} images")
    top, left = ((side - h) // 2, (side - w) // 2) if center else (0, 0)
    canvas = np.zeros((n, side, side), dtype=np.float64)
    canvas[:, top:top + h, left:left + w] = raw >= threshold
    return canvas.reshape(n, side * side)


def one_hot(labels, width: int) -> np.ndarray:
    labels = np.asarray(labels, dtype=np.int64)
    if labels.size and labels.max() >= width:
        raise ValueError(f"label {labels.max()} does not fit an output of width {width}")
    out = np.zeros((labels.size, width))
    out[np.arange(labels.size), labels] = 1.0
    return out


def load_dataset(images_path, labels_path, side: int, width: int,
                 threshold: int = DEFAULT_THRESHOLD, limit: int | None = None) -> Dataset:
    images = load_idx_images(images_path)
    labels = load_idx_labels(labels_path)
    if images.shape[0] != labels.shape[0]:
        raise IdxFormatError("image and label counts differ")
    if limit is not None:
        images, labels = images[:limit], labels[:limit]
    return Dataset(preprocess(images, side, threshold), one_hot(labels, width))


def synthetic_digits(count: int, seed: int = 0, size: int = 28) -> tuple[np.ndarray, np.ndarray]:
    """Seeded stand-in for MNIST: random strokes on a dark background."""
    rng = np.random.default_rng(seed)
    images = np.zeros((count, size, size), dtype=np.uint8)
    labels = rng.integers(0, 10, size=count).astype(np.uint8)
    for img in images:
        for _ in range(rng.integers(2, 5)):
            r0, c0 = rng.integers(4, size - 4, size=2)
            dr, dc = rng.integers(-1, 2, size=2)
            for step in range(rng.integers(6, 14)):
                r = int(np.clip(r0 + dr * step, 0, size - 1))
                c = int(np.clip(c0 + dc * step, 0, size - 1))
                img[r, c] = rng.integers(128, 256)
                if r + 1 < size:
                    img[r + 1, c] = rng.integers(0, 256)
    return images, labels
