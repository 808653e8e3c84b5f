"""Trigger description, stamping and poisoned-set construction.

A trigger is a box-sized pattern plus a per-pixel blend mask. Its location is
the (row, col) of the bottom-right pixel of its covering box in the host image.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import ConfigurationError, PlacementError
from .imaging import Image, LabeledDataset, quantize

BADNETS_GRAY = 128
BADNETS_PATTERN = np.array(
    [[BADNETS_GRAY, 0, BADNETS_GRAY],
     [0, BADNETS_GRAY, 0],
     [BADNETS_GRAY, 0, BADNETS_GRAY]],
    dtype=np.uint8,
)
BLEND_ALPHA = 0.2


class AlphaMask:
    """Per-pixel blend weights in [0, 1], shared across channels."""

    __slots__ = ("_weights",)

    def __init__(self, weights):
        w = np.array(weights, dtype=np.float64, copy=True)
        if w.ndim != 2 or min(w.shape) < 1:
            raise ValueError(f"mask must be a non-empty 2-D array, got shape {w.shape}")
        if not np.all(np.isfinite(w)) or w.min() < 0.0 or w.max() > 1.0:
            raise ValueError("mask weights must lie in [0, 1]")
        if not np.any(w > 0):
            raise ValueError("mask needs at least one positive weight")
        w.setflags(write=False)
        self._weights = w

    @classmethod
    def unchecked(cls, weights) -> "AlphaMask":
        """Build a mask without the positivity rule (used to probe the alpha=0 limit)."""
        obj = cls.__new__(cls)
        w = np.array(weights, dtype=np.float64, copy=True)
        w.setflags(write=False)
        obj._weights = w
        return obj

    @property
    def weights(self) -> np.ndarray:
        return self._weights

    @property
    def height(self) -> int:
        return self._weights.shape[0]

    @property
    def width(self) -> int:
        return self._weights.shape[1]

    def __eq__(self, other):
        if not isinstance(other, AlphaMask):
            return NotImplemented
        return bool(np.array_equal(self._weights, other._weights))

    def __repr__(self):
        return f"AlphaMask({self.height}x{self.width})"


@dataclass(frozen=True)
class CoveringBox:
    top: int
    left: int
    height: int
    width: int

    @property
    def bottom_right(self) -> tuple[int, int]:
        return self.top + self.height - 1, self.left + self.width - 1


@dataclass(frozen=True)
class Trigger:
    pattern: Image
    mask: AlphaMask
    location: tuple[int, int]

    def __post_init__(self):
        if (self.pattern.height, self.pattern.width) != (self.mask.height, self.mask.width):
            raise ValueError("pattern and mask must have the same height and width")
        object.__setattr__(self, "location", (int(self.location[0]), int(self.location[1])))

    @property
    def box(self) -> CoveringBox:
        """Box occupied in the host image (the pattern-sized box anchored at ``location``)."""
        h, w = self.mask.height, self.mask.width
        return CoveringBox(self.location[0] - h + 1, self.location[1] - w + 1, h, w)

    def check_fits(self, image_shape) -> None:
        _, height, width = _chw(image_shape)
        box = self.box
        if box.top < 0 or box.left < 0 or self.location[0] >= height or self.location[1] >= width:
            raise PlacementError(
                f"trigger box rows {box.top}..{self.location[0]}, cols {box.left}..{self.location[1]} "
                f"does not fit a {height}x{width} image"
            )
        if self.pattern.channels not in (1, _chw(image_shape)[0]):
            raise PlacementError(f"{self.pattern.channels}-channel pattern cannot stamp a {image_shape} image")

    def to_dict(self) -> dict:
        return {
            "pattern": self.pattern.pixels.astype(int).tolist(),
            "mask": self.mask.weights.tolist(),
            "location": list(self.location),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Trigger":
        try:
            pattern, mask, location = d["pattern"], d["mask"], d["location"]
        except KeyError as exc:
            raise ConfigurationError(f"trigger is missing field {exc.args[0]!r}") from None
        try:
            return cls(Image(np.array(pattern)), AlphaMask(mask), tuple(location))
        except (ValueError, TypeError) as exc:
            raise ConfigurationError(f"invalid trigger: {exc}") from None


def _chw(image_shape) -> tuple[int, int, int]:
    shape = tuple(int(s) for s in image_shape)
    if len(shape) == 2:
        return (1,) + shape
    if len(shape) != 3:
        raise ValueError(f"image shape must be (H, W) or (C, H, W), got {shape}")
    return shape


def minimum_covering_box(mask) -> CoveringBox:
    """Tightest axis-aligned box containing every nonzero weight of a full-image mask."""
    w = mask.weights if isinstance(mask, AlphaMask) else np.asarray(mask)
    rows = np.flatnonzero(np.any(w != 0, axis=1))
    cols = np.flatnonzero(np.any(w != 0, axis=0))
    if rows.size == 0:
        raise ValueError("mask has no nonzero weight")
    return CoveringBox(int(rows[0]), int(cols[0]), int(rows[-1] - rows[0] + 1), int(cols[-1] - cols[0] + 1))


def default_badnets_trigger(image_shape) -> Trigger:
    """3x3 black-gray checkerboard (gray at corners and centre) at the image's bottom-right pixel."""
    c, h, w = _chw(image_shape)
    if h < 3 or w < 3:
        raise PlacementError(f"image {h}x{w} is smaller than the 3x3 trigger")
    pattern = Image(np.repeat(BADNETS_PATTERN[None], c, axis=0))
    return Trigger(pattern, AlphaMask(np.ones((3, 3))), (h - 1, w - 1))


def blended_trigger(image_shape, alpha: float = BLEND_ALPHA, seed: int = 0) -> Trigger:
    """Full-image uniform-noise pattern mixed in with a constant weight ``alpha``."""
    c, h, w = _chw(image_shape)
    rng = np.random.default_rng(seed)
    pattern = Image(rng.integers(0, 256, size=(c, h, w), dtype=np.uint8))
    return Trigger(pattern, AlphaMask(np.full((h, w), float(alpha))), (h - 1, w - 1))


def stamp_array(images: np.ndarray, trigger: Trigger) -> np.ndarray:
    """Blend ``trigger`` into a (N, C, H, W) uint8 batch; returns a new array."""
    trigger.check_fits(images.shape[1:])
    box = trigger.box
    out = np.array(images, dtype=np.uint8, copy=True)
    rows = slice(box.top, box.top + box.height)
    cols = slice(box.left, box.left + box.width)
    region = out[:, :, rows, cols].astype(np.float64) / 255.0
    alpha = trigger.mask.weights
    pattern = trigger.pattern.pixels.astype(np.float64) / 255.0
    out[:, :, rows, cols] = quantize((1.0 - alpha) * region + alpha * pattern)
    return out


def generate_poisoned(x: Image, trigger: Trigger) -> Image:
    """Return ``(1 - alpha) * x + alpha * pattern`` inside the trigger box, ``x`` elsewhere."""
    return Image(stamp_array(x.pixels[None], trigger)[0])


def relocate_trigger(trigger: Trigger, new_location, image_shape=None) -> Trigger:
    moved = Trigger(trigger.pattern, trigger.mask, tuple(new_location))
    box = moved.box
    if box.top < 0 or box.left < 0:
        raise PlacementError(f"location {tuple(new_location)} puts the box at ({box.top}, {box.left})")
    if image_shape is not None:
        moved.check_fits(image_shape)
    return moved


def recolor_trigger(trigger: Trigger, old_value: int, new_value: int) -> Trigger:
    """Replace every pattern pixel equal to ``old_value`` by ``new_value``."""
    for v in (old_value, new_value):
        if not 0 <= int(v) <= 255:
            raise ValueError(f"intensity {v} outside 0..255")
    pixels = trigger.pattern.pixels.copy()
    pixels[pixels == old_value] = new_value
    return Trigger(Image(pixels), trigger.mask, trigger.location)


@dataclass(frozen=True)
class PoisonSpec:
    target_label: int
    poison_rate: float = 0.1
    seed: int = 0

    def __post_init__(self):
        if not 0.0 < self.poison_rate <= 1.0:
            raise ConfigurationError(f"poison_rate must lie in (0, 1], got {self.poison_rate}")
        if self.target_label < 0:
            raise ConfigurationError(f"target_label must be a class index, got {self.target_label}")


def select_poison_indices(n_items: int, spec: PoisonSpec) -> np.ndarray:
    """Sorted indices of the items to poison: floor(rate * n) drawn without replacement."""
    count = int(np.floor(spec.poison_rate * n_items))
    if count == 0:
        raise ConfigurationError(f"poison_rate {spec.poison_rate} selects no item out of {n_items}")
    rng = np.random.default_rng(spec.seed)
    return np.sort(rng.choice(n_items, size=count, replace=False))


def make_poisoned_dataset(
    train: LabeledDataset, trigger: Trigger, spec: PoisonSpec
) -> tuple[LabeledDataset | None, LabeledDataset | None]:
    """Split ``train`` into (poisoned, benign).

    Selected items are stamped and relabelled to the target class; the rest are
    returned unchanged. A part that would be empty is returned as ``None``.
    """
    if spec.target_label >= train.num_classes:
        raise ConfigurationError(f"target_label {spec.target_label} >= num_classes {train.num_classes}")
    trigger.check_fits(train.image_shape)
    chosen = select_poison_indices(len(train), spec)
    keep = np.ones(len(train), dtype=bool)
    keep[chosen] = False
    poisoned = LabeledDataset(
        stamp_array(train.images[chosen], trigger),
        np.full(chosen.size, spec.target_label),
        train.num_classes,
    )
    benign = train.subset(np.flatnonzero(keep)) if keep.any() else None
    return poisoned, benign


def stamp_dataset(data: LabeledDataset, trigger: Trigger) -> LabeledDataset:
    """Stamp every image, keeping the true labels."""
    return LabeledDataset(stamp_array(data.images, trigger), data.labels, data.num_classes)


def pattern_from_rows(rows: Sequence, channels: int) -> Image:
    """Build a pattern image from a 2-D (broadcast over channels) or 3-D nested list."""
    arr = np.array(rows)
    if arr.ndim == 2:
        arr = np.repeat(arr[None], channels, axis=0)
    return Image(arr)
