"""Datasets: IDX files, the bundled 8x8 digits, and seeded synthetic sets.

All loaders return inputs scaled to [0, 1] as float64 rows and integer labels.
"""
from __future__ import annotations

import gzip
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Tuple

import numpy as np

IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801


class IdxFormatError(ValueError):
    pass


@dataclass
class Dataset:
    x: np.ndarray  # [n x features], values in [0, 1]
    y: np.ndarray  # [n] int labels
    n_classes: int

    def __post_init__(self):
        self.x = np.asarray(self.x, dtype=np.float64)
        self.y = np.asarray(self.y, dtype=np.int64)
        if len(self.x) != len(self.y):
            raise ValueError(f"{len(self.x)} inputs but {len(self.y)} labels")

    def __len__(self) -> int:
        return len(self.y)

    def subset(self, idx) -> "Dataset":
        return Dataset(self.x[idx], self.y[idx], self.n_classes)

    def split(self, test_fraction: float, seed: int) -> Tuple["Dataset", "Dataset"]:
        order = np.random.default_rng(seed).permutation(len(self))
        n_test = int(round(test_fraction * len(self)))
        return self.subset(np.sort(order[n_test:])), self.subset(np.sort(order[:n_test]))


def _read_bytes(path) -> bytes:
    raw = Path(path).read_bytes()
    if raw[:2] == b"\x1f\x8b":
        raw = gzip.decompress(raw)
    return raw


def load_idx(images_path, labels_path) -> Dataset:
    """Read an IDX image/label pair (optionally gzipped); pixels are divided by 255."""
    img = _read_bytes(images_path)
    lab = _read_bytes(labels_path)
    if len(img) < 16:
        raise IdxFormatError(f"{images_path}: truncated header ({len(img)} bytes)")
    magic, n, rows, cols = struct.unpack(">IIII", img[:16])
    if magic != IDX_IMAGES_MAGIC:
        raise IdxFormatError(f"{images_path}: bad image magic 0x{magic:08x}, expected 0x{IDX_IMAGES_MAGIC:08x}")
    if len(lab) < 8:
        raise IdxFormatError(f"{labels_path}: truncated header ({len(lab)} bytes)")
    lmagic, n_labels = struct.unpack(">II", lab[:8])
    if lmagic != IDX_LABELS_MAGIC:
        raise IdxFormatError(f"{labels_path}: bad label magic 0x{lmagic:08x}, expected 0x{IDX_LABELS_MAGIC:08x}")
    if n_labels != n:
        raise IdxFormatError(f"{n} images but {n_labels} labels")
    need = 16 + n * rows * cols
    if len(img) < need:
        raise IdxFormatError(f"{images_path}: truncated payload ({len(img)} of {need} bytes)")
    if len(lab) < 8 + n:
        raise IdxFormatError(f"{labels_path}: truncated payload ({len(lab)} of {8 + n} bytes)")
    pixels = np.frombuffer(img, dtype=np.uint8, count=n * rows * cols, offset=16)
    labels = np.frombuffer(lab, dtype=np.uint8, count=n, offset=8)
    x = pixels.reshape(n, rows * cols).astype(np.float64) / 255.0
    n_classes = int(labels.max()) + 1 if n else 0
    return Dataset(x, labels.astype(np.int64), max(n_classes, 10))


def write_idx(images: np.ndarray, labels: np.ndarray, images_path, labels_path) -> None:
    """Write uint8 images [n x rows x cols] and labels as an uncompressed IDX pair."""
    images = np.asarray(images, dtype=np.uint8)
    if images.ndim != 3:
        raise ValueError(f"images must be [n x rows x cols], got shape {images.shape}")
    n, rows, cols = images.shape
    Path(images_path).write_bytes(struct.pack(">IIII", IDX_IMAGES_MAGIC, n, rows, cols) + images.tobytes())
    Path(labels_path).write_bytes(struct.pack(">II", IDX_LABELS_MAGIC, n)
                                  + np.asarray(labels, dtype=np.uint8).tobytes())


def load_digits() -> Dataset:
    """The 1797-sample 8x8 handwritten digits set shipped with scikit-learn (pixels 0..16)."""
    try:
        from sklearn.datasets import load_digits as _sk_digits
    except ImportError as exc:  # pragma: no cover - optional dependency
        raise ImportError("the digits dataset needs scikit-learn (pip install 'artifact[digits]')") from exc
    d = _sk_digits()
    return Dataset(d.data / 16.0, d.target, 10)


def digits_as_idx(images_path, labels_path) -> None:
    """Export the digits set in IDX format (pixels rescaled to 0..255)."""
    d = load_digits()
    write_idx(np.round(d.x * 255).astype(np.uint8).reshape(-1, 8, 8), d.y, images_path, labels_path)


def synth_dataset(kind: str, n: int, classes: int = 2, seed: int = 0, dim: int = 2,
                  spread: float = 0.05, noise: float = 0.02) -> Dataset:
    """Seeded toy data in [0, 1]^dim.

    ``gaussians``: isotropic blobs with std ``spread`` around centres drawn in
    [0.2, 0.8]^dim, clipped to the unit box. ``spirals``: the two-spiral
    problem in 2-D (classes is forced to 2). Labels are assigned round-robin.
    """
    if n <= 0:
        raise ValueError(f"n must be > 0, got {n}")
    rng = np.random.default_rng(seed)
    y = np.arange(n) % classes
    if kind == "gaussians":
        centres = rng.uniform(0.2, 0.8, size=(classes, dim))
        x = centres[y] + rng.normal(0.0, spread, size=(n, dim))
        return Dataset(np.clip(x, 0.0, 1.0), y, classes)
    if kind == "spirals":
        y = np.arange(n) % 2
        r = rng.uniform(0.05, 1.0, size=n)
        theta = 3.0 * np.pi * r + np.pi * y
        pts = np.stack([r * np.cos(theta), r * np.sin(theta)], axis=1)
        pts += rng.normal(0.0, noise, size=pts.shape)
        return Dataset(np.clip(0.5 + 0.45 * pts, 0.0, 1.0), y, 2)
    raise ValueError(f"unknown synthetic dataset kind {kind!r}")


def batches(n: int, batch_size: int, rng: np.random.Generator):
    order = rng.permutation(n)
    for start in range(0, n, batch_size):
        yield order[start:start + batch_size]
