"""IMGB image datasets and the seeded synthetic generator.

IMGB layout (little-endian)::

    magic  b"IMGB"
    u32    version (= 1)
    u32    count
    u16    channels, height, width, num_classes
    u8     pixels   count * channels * height * width   (sample-major, then C, H, W)
    u8     labels   count
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .nn_core import named_rng

MAGIC = b"IMGB"
VERSION = 1
_HEADER = struct.Struct("<4sIIHHHH")


class DatasetError(ValueError):
    pass


class BadMagic(DatasetError):
    pass


class Truncated(DatasetError):
    pass


class Malformed(DatasetError):
    pass


class LabelOutOfRange(DatasetError):
    pass


@dataclass
class Dataset:
    images: np.ndarray  # uint8 [N, C, H, W]
    labels: np.ndarray  # uint8 [N]
    num_classes: int
    split: str = "train"

    def __post_init__(self):
        self.images = np.ascontiguousarray(self.images, dtype=np.uint8)
        self.labels = np.ascontiguousarray(self.labels, dtype=np.uint8)
        if self.images.ndim != 4:
            raise Malformed(f"images must be [N, C, H, W], got {self.images.shape}")
        if len(self.images) != len(self.labels):
            raise Malformed("image count differs from label count")
        if self.labels.size and int(self.labels.max()) >= self.num_classes:
            raise LabelOutOfRange(f"label {int(self.labels.max())} >= num_classes {self.num_classes}")

    def __len__(self) -> int:
        return len(self.labels)

    @property
    def dims(self) -> tuple[int, int, int]:
        return tuple(self.images.shape[1:])

    def normalization_stats(self) -> tuple[np.ndarray, np.ndarray]:
        """Per-channel mean and std of pixels scaled to [0, 1]."""
        x = self.images.astype(np.float64) / 255.0
        m = x.mean(axis=(0, 2, 3))
        s = x.std(axis=(0, 2, 3))
        return m, np.where(s > 0, s, 1.0)

    def subset(self, idx) -> "Dataset":
        return Dataset(self.images[idx], self.labels[idx], self.num_classes, self.split)


def save_dataset(ds: Dataset, path) -> None:
    n, c, h, w = ds.images.shape
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(MAGIC, VERSION, n, c, h, w, ds.num_classes))
        fh.write(ds.images.tobytes())
        fh.write(ds.labels.tobytes())


def load_dataset(path, split: str | None = None) -> Dataset:
    raw = Path(path).read_bytes()
    if len(raw) < 4 or raw[:4] != MAGIC:
        raise BadMagic(f"{path}: not an IMGB file")
    if len(raw) < _HEADER.size:
        raise Truncated(f"{path}: header cut short ({len(raw)} bytes)")
    _, version, n, c, h, w, k = _HEADER.unpack_from(raw)
    if version != VERSION:
        raise Malformed(f"{path}: unsupported version {version}")
    if min(c, h, w) == 0 or k == 0:
        raise Malformed(f"{path}: zero dimension in header")
    pix = n * c * h * w
    need = _HEADER.size + pix + n
    if len(raw) < need:
        raise Truncated(f"{path}: expected {need} bytes, found {len(raw)}")
    if len(raw) > need:
        raise Malformed(f"{path}: {len(raw) - need} bytes beyond the declared payload")
    images = np.frombuffer(raw, np.uint8, pix, _HEADER.size).reshape(n, c, h, w)
    labels = np.frombuffer(raw, np.uint8, n, _HEADER.size + pix)
    if n and int(labels.max()) >= k:
        raise LabelOutOfRange(f"{path}: label {int(labels.max())} >= num_classes {k}")
    return Dataset(images.copy(), labels.copy(), k, split or Path(path).stem)


def class_templates(classes: int, dims: tuple[int, int, int], seed: int) -> np.ndarray:
    return named_rng(seed, "templates").random((classes,) + tuple(dims))


def gen_synthetic(classes: int, per_class: int, dims=(1, 16, 16), noise: float = 0.15,
                  seed: int = 0, split: str = "train") -> Dataset:
    """Noisy copies of ``classes`` random template images in [0, 1].

    Templates depend only on ``seed``; the noise stream also depends on
    ``split`` so train and validation sets share templates.
    """
    if classes < 2:
        raise ValueError("need at least two classes")
    if classes > 256:
        raise ValueError("labels are stored as u8")
    templates = class_templates(classes, dims, seed)
    rng = named_rng(seed, f"noise.{split}")
    labels = np.repeat(np.arange(classes), per_class)
    x = templates[labels] + noise * rng.standard_normal((labels.size,) + tuple(dims))
    pixels = np.rint(np.clip(x, 0.0, 1.0) * 255.0).astype(np.uint8)
    return Dataset(pixels, labels.astype(np.uint8), classes, split)
