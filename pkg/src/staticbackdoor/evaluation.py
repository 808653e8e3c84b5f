"""Clean accuracy, attack success rate, characteristic sweeps and comparison tables."""
from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .defense import NO_DEFENSE, DefensePolicy, defended_labels
from .errors import EvaluationError
from .imaging import LabeledDataset
from .model import ClassifierModel
from .trigger import BADNETS_GRAY, Trigger, recolor_trigger, relocate_trigger, stamp_array

DEFAULT_SUBSAMPLE = 1000
DEFAULT_VALUES = tuple(range(0, 256, 8))


def clean_accuracy(model: ClassifierModel, testset: LabeledDataset, policy: DefensePolicy = NO_DEFENSE) -> float:
    labels = defended_labels(model, policy, testset.images)
    return float(np.mean(labels == testset.labels))


def eligible(testset: LabeledDataset, target_label: int) -> np.ndarray:
    """Indices of items whose true label differs from the target."""
    return np.flatnonzero(testset.labels != target_label)


def _attack(model, testset, trigger, target_label, policy) -> tuple[float, int]:
    idx = eligible(testset, target_label)
    if idx.size == 0:
        raise EvaluationError(f"no test item with a label other than the target {target_label}")
    stamped = stamp_array(testset.images[idx], trigger)
    hits = defended_labels(model, policy, stamped) == target_label
    return float(np.mean(hits)), int(idx.size)


def attack_success_rate(model: ClassifierModel, testset: LabeledDataset, trigger: Trigger, target_label: int,
                        policy: DefensePolicy = NO_DEFENSE) -> float:
    """Fraction of stamped non-target items predicted as the target label."""
    return _attack(model, testset, trigger, target_label, policy)[0]


def subsample(testset: LabeledDataset, size: int = DEFAULT_SUBSAMPLE, seed: int = 0) -> LabeledDataset:
    """Seeded subset of ``size`` items (the whole set if it is smaller), original order kept."""
    if size >= len(testset):
        return testset
    rng = np.random.default_rng(seed)
    return testset.subset(np.sort(rng.choice(len(testset), size=size, replace=False)))


@dataclass(frozen=True)
class LocationGrid:
    """ASR per trigger location; ``asr[i, j]`` is the trigger anchored at ``(rows[i], cols[j])``."""

    rows: np.ndarray
    cols: np.ndarray
    asr: np.ndarray

    def at(self, location) -> float:
        i = int(np.flatnonzero(self.rows == location[0])[0])
        j = int(np.flatnonzero(self.cols == location[1])[0])
        return float(self.asr[i, j])

    def cells(self):
        for i, r in enumerate(self.rows):
            for j, c in enumerate(self.cols):
                yield int(r), int(c), float(self.asr[i, j])


def valid_locations(image_shape, trigger: Trigger, stride: int = 1) -> tuple[np.ndarray, np.ndarray]:
    """Bottom-right anchors that keep the whole box inside the image, on a ``stride`` lattice."""
    if stride < 1:
        raise ValueError("stride must be >= 1")
    h, w = image_shape[-2:]
    return (np.arange(trigger.mask.height - 1, h, stride),
            np.arange(trigger.mask.width - 1, w, stride))


def sweep_location(model: ClassifierModel, testset: LabeledDataset, trigger: Trigger, target_label: int,
                   stride: int = 1, subsample_size: int = DEFAULT_SUBSAMPLE, seed: int = 0) -> LocationGrid:
    """Undefended ASR with the trigger moved to every valid location."""
    data = subsample(testset, subsample_size, seed)
    rows, cols = valid_locations(data.image_shape, trigger, stride)
    grid = np.zeros((rows.size, cols.size))
    for i, r in enumerate(rows):
        for j, c in enumerate(cols):
            moved = relocate_trigger(trigger, (r, c), data.image_shape)
            grid[i, j] = attack_success_rate(model, data, moved, target_label)
    return LocationGrid(rows, cols, grid)


def sweep_appearance(model: ClassifierModel, testset: LabeledDataset, trigger: Trigger, target_label: int,
                     values: Sequence[int] = DEFAULT_VALUES, old_value: int = BADNETS_GRAY,
                     subsample_size: int = DEFAULT_SUBSAMPLE, seed: int = 0) -> list[tuple[int, float]]:
    """Undefended ASR after recolouring the ``old_value`` pattern pixels to each of ``values``."""
    if not np.any(trigger.pattern.pixels == old_value):
        raise ValueError(f"trigger pattern has no pixel equal to {old_value}")
    data = subsample(testset, subsample_size, seed)
    return [(int(v), attack_success_rate(model, data, recolor_trigger(trigger, old_value, v), target_label))
            for v in values]


@dataclass(frozen=True)
class ComparisonRow:
    model: str
    defense: str
    clean_acc: float
    asr: float
    n_clean: int
    n_attacked: int


def compare(models: Mapping[str, ClassifierModel], defenses: Mapping[str, DefensePolicy],
            testset: LabeledDataset, trigger: Trigger, target_label: int) -> list[ComparisonRow]:
    """One row per (model, defense) pair, models outermost."""
    shapes = {m.arch.input_shape for m in models.values()}
    if len(shapes) > 1:
        raise ValueError(f"models disagree on input shape: {sorted(shapes)}")
    rows = []
    for mname, model in models.items():
        for dname, policy in defenses.items():
            clean = clean_accuracy(model, testset, policy)
            asr, n_attacked = _attack(model, testset, trigger, target_label, policy)
            rows.append(ComparisonRow(mname, dname, clean, asr, len(testset), n_attacked))
    return rows


@dataclass
class EvalReport:
    clean_accuracy: float
    asr: float
    n_clean: int
    n_attacked: int
    location_grid: LocationGrid | None = None
    appearance_curve: list[tuple[int, float]] | None = None
    comparison_rows: list[ComparisonRow] = field(default_factory=list)

    def __post_init__(self):
        for name in ("clean_accuracy", "asr"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1], got {v}")


def evaluate(model: ClassifierModel, testset: LabeledDataset, trigger: Trigger, target_label: int,
             policy: DefensePolicy = NO_DEFENSE) -> EvalReport:
    clean = clean_accuracy(model, testset, policy)
    asr, n_attacked = _attack(model, testset, trigger, target_label, policy)
    return EvalReport(clean, asr, len(testset), n_attacked)


# ---- report files -------------------------------------------------------------

COMPARISON_HEADER = ("model", "defense", "clean_acc", "asr", "n_clean", "n_attacked")


def _csv_text(header, rows) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    writer.writerows(rows)
    return buf.getvalue()


def comparison_csv(rows: Sequence[ComparisonRow]) -> str:
    return _csv_text(COMPARISON_HEADER, [
        (r.model, r.defense, f"{r.clean_acc:.4f}", f"{r.asr:.4f}", r.n_clean, r.n_attacked) for r in rows
    ])


def location_csv(grid: LocationGrid) -> str:
    return _csv_text(("row", "col", "asr"), [(r, c, f"{a:.4f}") for r, c, a in grid.cells()])


def appearance_csv(curve: Sequence[tuple[int, float]]) -> str:
    return _csv_text(("value", "asr"), [(v, f"{a:.4f}") for v, a in curve])


def heatmap_pgm(asr: np.ndarray) -> bytes:
    """Binary greyscale PGM (P5) with intensity round(255 * ASR)."""
    asr = np.asarray(asr, dtype=np.float64)
    pixels = np.floor(np.clip(asr, 0.0, 1.0) * 255.0 + 0.5).astype(np.uint8)
    h, w = pixels.shape
    return f"P5\n{w} {h}\n255\n".encode("ascii") + pixels.tobytes()


def read_pgm(data: bytes) -> np.ndarray:
    """Parse a binary P5 file as written by ``heatmap_pgm``."""
    parts = data.split(b"\n", 3)
    if len(parts) < 4 or parts[0] != b"P5":
        raise ValueError("not a binary PGM")
    w, h = (int(v) for v in parts[1].split())
    if int(parts[2]) != 255:
        raise ValueError("only 8-bit PGM is supported")
    return np.frombuffer(parts[3], dtype=np.uint8, count=w * h).reshape(h, w)
