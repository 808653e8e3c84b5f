"""Left-right flip, ShrinkPad, bounded parameter domains and sampling."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .imaging import Image, quantize, resize_unit


@dataclass(frozen=True)
class TransformParam:
    """One configuration: optional flip, then shrink by ``shrink_size`` and zero-pad at ``pad_offset``."""

    flip: bool = False
    shrink_size: int = 0
    pad_offset: tuple[int, int] = (0, 0)

    def __post_init__(self):
        k = int(self.shrink_size)
        top, left = (int(v) for v in self.pad_offset)
        if k < 0:
            raise ValueError(f"shrink_size must be >= 0, got {k}")
        if not (0 <= top <= k and 0 <= left <= k):
            raise ValueError(f"pad_offset {(top, left)} must lie in [0, {k}]")
        object.__setattr__(self, "flip", bool(self.flip))
        object.__setattr__(self, "shrink_size", k)
        object.__setattr__(self, "pad_offset", (top, left))

    @property
    def is_identity(self) -> bool:
        return not self.flip and self.shrink_size == 0


IDENTITY = TransformParam()


@dataclass(frozen=True)
class TransformDomain:
    """Parameters within ``max_shrink`` pixels of the identity; flip only if ``allow_flip``."""

    max_shrink: int = 0
    allow_flip: bool = False

    def __post_init__(self):
        if self.max_shrink < 0:
            raise ValueError(f"max_shrink must be >= 0, got {self.max_shrink}")

    def check_shape(self, image_shape) -> None:
        h, w = image_shape[-2:]
        if self.max_shrink >= min(h, w):
            raise ValueError(f"max_shrink {self.max_shrink} must be below min(H, W) = {min(h, w)}")

    def contains(self, param: TransformParam) -> bool:
        return param.shrink_size <= self.max_shrink and (self.allow_flip or not param.flip)


def distance_to_identity(param: TransformParam) -> tuple[int, int]:
    """(flip distance, shrink distance): discrete 0/1 metric and pixel count."""
    return int(param.flip), param.shrink_size


def flip_lr(x: Image) -> Image:
    return Image(x.pixels[:, :, ::-1])


def _shrink_pad_array(pixels: np.ndarray, k: int, top: int, left: int) -> np.ndarray:
    c, h, w = pixels.shape
    if k == 0:
        return pixels
    shrunk = quantize(resize_unit(pixels.astype(np.float64) / 255.0, h - k, w - k))
    out = np.zeros_like(pixels)
    out[:, top:top + h - k, left:left + w - k] = shrunk
    return out


def shrink_pad(x: Image, k: int, pad_offset=(0, 0)) -> Image:
    """Bilinearly shrink to (H - k, W - k) and place on a zero canvas with top-left at ``pad_offset``."""
    top, left = (int(v) for v in pad_offset)
    if not 0 <= k < min(x.height, x.width):
        raise ValueError(f"shrink size {k} must lie in [0, {min(x.height, x.width)})")
    if not (0 <= top <= k and 0 <= left <= k):
        raise ValueError(f"pad_offset {(top, left)} must lie in [0, {k}]")
    return Image(_shrink_pad_array(x.pixels, int(k), top, left))


def sample_param(domain: TransformDomain, rng: np.random.Generator) -> TransformParam:
    """Draw flip, shrink size and offsets independently and uniformly."""
    flip = bool(rng.integers(2)) if domain.allow_flip else False
    k = int(rng.integers(domain.max_shrink + 1))
    top = int(rng.integers(k + 1))
    left = int(rng.integers(k + 1))
    return TransformParam(flip, k, (top, left))


def apply_array(param: TransformParam, pixels: np.ndarray) -> np.ndarray:
    """``apply`` on a raw (C, H, W) uint8 array."""
    if param.flip:
        pixels = pixels[:, :, ::-1]
    if param.shrink_size:
        pixels = _shrink_pad_array(pixels, param.shrink_size, *param.pad_offset)
    return np.ascontiguousarray(pixels)


def apply(param: TransformParam, x: Image) -> Image:
    """Flip first (if set), then ShrinkPad."""
    if param.shrink_size >= min(x.height, x.width):
        raise ValueError(f"shrink size {param.shrink_size} too large for a {x.height}x{x.width} image")
    return Image(apply_array(param, x.pixels))
