"""Test-time preprocessing defense: predict on T(x) instead of x."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .imaging import Image
from .model import ClassifierModel, logits_batch
from .transforms import TransformParam, apply_array

KINDS = ("none", "flip", "shrinkpad", "flip_then_shrinkpad")
OFFSET_MODES = ("random", "center")


@dataclass(frozen=True)
class DefensePolicy:
    kind: str = "none"
    shrink: int = 0
    offset_mode: str = "random"
    seed: int = 0

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown defense kind {self.kind!r}; expected one of {KINDS}")
        if self.offset_mode not in OFFSET_MODES:
            raise ValueError(f"unknown offset mode {self.offset_mode!r}")
        if self.shrink < 0:
            raise ValueError(f"shrink size must be >= 0, got {self.shrink}")
        if self.kind in ("none", "flip") and self.shrink:
            raise ValueError(f"{self.kind!r} takes no shrink size")

    @property
    def uses_shrinkpad(self) -> bool:
        return self.kind in ("shrinkpad", "flip_then_shrinkpad")

    def rng(self) -> np.random.Generator:
        """Fresh offset stream; every evaluation pass starts from the same state."""
        return np.random.default_rng(self.seed)

    def sample(self, rng: np.random.Generator | None) -> TransformParam:
        flip = self.kind in ("flip", "flip_then_shrinkpad")
        if not self.uses_shrinkpad or self.shrink == 0:
            return TransformParam(flip, 0, (0, 0))
        k = self.shrink
        if self.offset_mode == "center":
            c = math.ceil(k / 2)
            return TransformParam(flip, k, (c, c))
        if rng is None:
            rng = self.rng()
        return TransformParam(flip, k, (int(rng.integers(k + 1)), int(rng.integers(k + 1))))

    def check_shape(self, image_shape) -> None:
        h, w = image_shape[-2:]
        if self.shrink >= min(h, w):
            raise ValueError(f"shrink size {self.shrink} too large for a {h}x{w} image")


NO_DEFENSE = DefensePolicy()


def flip_policy() -> DefensePolicy:
    return DefensePolicy("flip")


def shrinkpad_policy(k: int, offset_mode: str = "random", seed: int = 0) -> DefensePolicy:
    return DefensePolicy("shrinkpad", k, offset_mode, seed)


def transform_batch(policy: DefensePolicy, images: np.ndarray, rng: np.random.Generator | None = None) -> np.ndarray:
    """Apply the policy to every image of a (N, C, H, W) batch, offsets drawn in item order."""
    if policy.kind == "none":
        return images
    policy.check_shape(images.shape)
    if rng is None:
        rng = policy.rng()
    return np.stack([apply_array(policy.sample(rng), img) for img in images])


def defended_predict(model: ClassifierModel, policy: DefensePolicy, x: Image,
                     rng: np.random.Generator | None = None) -> tuple[int, np.ndarray]:
    """Label and logits for the transformed image. Ties go to the lowest class index."""
    if x.shape != model.arch.input_shape:
        raise ValueError(f"image shape {x.shape} does not match model input {model.arch.input_shape}")
    batch = transform_batch(policy, x.pixels[None], rng)
    logits = logits_batch(model, batch)[0]
    return int(np.argmax(logits)), logits


def defended_labels(model: ClassifierModel, policy: DefensePolicy, images: np.ndarray) -> np.ndarray:
    """Batch version of ``defended_predict``; random offsets restart from ``policy.seed``."""
    if len(images) == 0:
        return np.zeros(0, dtype=np.intp)
    return np.argmax(logits_batch(model, transform_batch(policy, images)), axis=1)
