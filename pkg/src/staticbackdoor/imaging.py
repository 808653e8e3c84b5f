"""Images, labelled datasets, dataset readers and bilinear resizing.

Pixels are stored as 8-bit integers in channel-major (C, H, W) order. All
arithmetic happens on unit-interval floats (value / 255) and is re-quantized
with round-half-up.
"""
from __future__ import annotations

import os
from dataclasses import dataclass
from typing import Iterator, Sequence

import numpy as np

from . import kernels
from .errors import ConsistencyError, FormatError

IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801
CIFAR_RECORD_BYTES = 3073


def quantize(unit: np.ndarray) -> np.ndarray:
    """Map unit-interval floats back to uint8, rounding half up."""
    return np.clip(np.floor(np.asarray(unit, dtype=np.float64) * 255.0 + 0.5), 0, 255).astype(np.uint8)


class Image:
    """Immutable C x H x W 8-bit image."""

    __slots__ = ("_pixels",)

    def __init__(self, pixels):
        arr = np.asarray(pixels)
        if arr.ndim == 2:
            arr = arr[None]
        if arr.ndim != 3:
            raise ValueError(f"image must be (C, H, W), got shape {arr.shape}")
        c, h, w = arr.shape
        if c not in (1, 3) or h < 1 or w < 1:
            raise ValueError(f"invalid image shape {arr.shape}")
        if arr.dtype != np.uint8:
            if np.any(arr < 0) or np.any(arr > 255) or np.any(arr != np.round(arr)):
                raise ValueError("pixel values must be integers in 0..255")
            arr = arr.astype(np.uint8)
        arr = np.array(arr, dtype=np.uint8, copy=True)
        arr.setflags(write=False)
        self._pixels = arr

    @classmethod
    def from_unit(cls, unit) -> "Image":
        return cls(quantize(unit))

    @property
    def pixels(self) -> np.ndarray:
        return self._pixels

    @property
    def shape(self) -> tuple[int, int, int]:
        return self._pixels.shape

    @property
    def channels(self) -> int:
        return self._pixels.shape[0]

    @property
    def height(self) -> int:
        return self._pixels.shape[1]

    @property
    def width(self) -> int:
        return self._pixels.shape[2]

    def to_unit(self) -> np.ndarray:
        return self._pixels.astype(np.float64) / 255.0

    def __eq__(self, other):
        if not isinstance(other, Image):
            return NotImplemented
        return self.shape == other.shape and bool(np.array_equal(self._pixels, other._pixels))

    def __hash__(self):
        return hash((self.shape, self._pixels.tobytes()))

    def __repr__(self):
        return f"Image(shape={self.shape})"


@dataclass(frozen=True, eq=False)
class LabeledDataset:
    """A homogeneous set of images with integer class labels.

    Images are held as one ``(N, C, H, W)`` uint8 array; indexing yields
    ``(Image, label)`` pairs.
    """

    images: np.ndarray
    labels: np.ndarray
    num_classes: int

    def __post_init__(self):
        images = np.asarray(self.images)
        labels = np.asarray(self.labels)
        if images.ndim != 4 or images.dtype != np.uint8:
            raise ValueError("images must be a uint8 array of shape (N, C, H, W)")
        if images.shape[1] not in (1, 3):
            raise ValueError(f"unsupported channel count {images.shape[1]}")
        if labels.shape != (images.shape[0],):
            raise ConsistencyError(f"{images.shape[0]} images but {labels.shape} labels")
        if images.shape[0] == 0:
            raise ValueError("dataset must be non-empty")
        labels = labels.astype(np.int64)
        if labels.min() < 0 or labels.max() >= self.num_classes:
            raise ValueError(f"labels must lie in [0, {self.num_classes})")
        images = np.ascontiguousarray(images)
        images.setflags(write=False)
        labels.setflags(write=False)
        object.__setattr__(self, "images", images)
        object.__setattr__(self, "labels", labels)

    @classmethod
    def from_items(cls, items: Sequence[tuple[Image, int]], num_classes: int) -> "LabeledDataset":
        items = list(items)
        if not items:
            raise ValueError("dataset must be non-empty")
        shapes = {img.shape for img, _ in items}
        if len(shapes) != 1:
            raise ValueError(f"heterogeneous image shapes {sorted(shapes)}")
        return cls(np.stack([img.pixels for img, _ in items]), np.array([y for _, y in items]), num_classes)

    @property
    def image_shape(self) -> tuple[int, int, int]:
        return tuple(self.images.shape[1:])

    def __len__(self) -> int:
        return self.images.shape[0]

    def __getitem__(self, i) -> tuple[Image, int]:
        return Image(self.images[i]), int(self.labels[i])

    def __iter__(self) -> Iterator[tuple[Image, int]]:
        for i in range(len(self)):
            yield self[i]

    def subset(self, indices) -> "LabeledDataset":
        indices = np.asarray(indices, dtype=np.intp)
        return LabeledDataset(self.images[indices], self.labels[indices], self.num_classes)

    def __eq__(self, other):
        if not isinstance(other, LabeledDataset):
            return NotImplemented
        return (
            self.num_classes == other.num_classes
            and np.array_equal(self.images, other.images)
            and np.array_equal(self.labels, other.labels)
        )


def concat(first: LabeledDataset, second: LabeledDataset) -> LabeledDataset:
    if first.image_shape != second.image_shape or first.num_classes != second.num_classes:
        raise ConsistencyError("datasets disagree on image shape or class count")
    return LabeledDataset(
        np.concatenate([first.images, second.images]),
        np.concatenate([first.labels, second.labels]),
        first.num_classes,
    )


def _read_idx(path, magic: int, ndim: int) -> np.ndarray:
    with open(path, "rb") as fh:
        raw = fh.read()
    header = 4 + 4 * ndim
    if len(raw) < header:
        raise FormatError(f"{path}: file too short for an IDX header")
    found = int.from_bytes(raw[:4], "big")
    if found != magic:
        raise FormatError(f"{path}: bad magic number 0x{found:08x}, expected 0x{magic:08x}")
    dims = [int.from_bytes(raw[4 + 4 * i:8 + 4 * i], "big") for i in range(ndim)]
    expected = int(np.prod(dims))
    if len(raw) - header != expected:
        raise FormatError(f"{path}: expected {expected} data bytes for dims {dims}, found {len(raw) - header}")
    return np.frombuffer(raw, dtype=np.uint8, offset=header).reshape(dims)


def load_mnist(images_path, labels_path) -> LabeledDataset:
    """Read an MNIST image/label pair in IDX format."""
    images = _read_idx(images_path, IDX_IMAGES_MAGIC, 3)
    labels = _read_idx(labels_path, IDX_LABELS_MAGIC, 1)
    if images.shape[0] != labels.shape[0]:
        raise ConsistencyError(
            f"{images_path} holds {images.shape[0]} images but {labels_path} holds {labels.shape[0]} labels"
        )
    return LabeledDataset(images[:, None, :, :], labels, 10)


def load_cifar10(batch_paths) -> LabeledDataset:
    """Read one or more CIFAR-10 binary batch files (1 label byte + 3072 pixel bytes per record)."""
    if isinstance(batch_paths, (str, os.PathLike)):
        batch_paths = [batch_paths]
    images, labels = [], []
    for path in batch_paths:
        with open(path, "rb") as fh:
            raw = fh.read()
        if len(raw) == 0 or len(raw) % CIFAR_RECORD_BYTES:
            raise FormatError(f"{path}: length {len(raw)} is not a positive multiple of {CIFAR_RECORD_BYTES}")
        records = np.frombuffer(raw, dtype=np.uint8).reshape(-1, CIFAR_RECORD_BYTES)
        labels.append(records[:, 0])
        images.append(records[:, 1:].reshape(-1, 3, 32, 32))
    if not images:
        raise FormatError("no CIFAR-10 batch files given")
    return LabeledDataset(np.concatenate(images), np.concatenate(labels), 10)


def resize_unit(unit: np.ndarray, out_height: int, out_width: int) -> np.ndarray:
    """Bilinear resize of a (C, H, W) float array; no quantization."""
    if out_height < 1 or out_width < 1:
        raise ValueError(f"target size must be positive, got {out_height}x{out_width}")
    return kernels.bilinear_resize(np.ascontiguousarray(unit, dtype=np.float64), int(out_height), int(out_width))


def bilinear_resize(img: Image, out_height: int, out_width: int) -> Image:
    """Resize with half-pixel-centre (align_corners=False) sampling and edge clamping."""
    return Image(quantize(resize_unit(img.to_unit(), out_height, out_width)))
