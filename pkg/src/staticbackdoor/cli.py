"""Command-line front end: ``train``, ``eval`` and ``sweep``.

Experiments are described by one YAML document; see README.md for the schema.
Every component seed is derived from the master seed with :func:`derive_seed`.
"""
from __future__ import annotations

import argparse
import hashlib
import logging
import os
import sys
import tempfile
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Sequence

import numpy as np
import yaml

from . import kernels
from .defense import DefensePolicy
from .errors import BackdoorError, ConfigurationError
from .evaluation import (DEFAULT_SUBSAMPLE, DEFAULT_VALUES, appearance_csv, compare, comparison_csv,
                         heatmap_pgm, location_csv, sweep_appearance, sweep_location)
from .imaging import LabeledDataset, concat, load_cifar10, load_mnist
from .model import (Architecture, ClassifierModel, TrainConfig, load_checkpoint, new_model, save_checkpoint,
                    train, train_enhanced)
from .transforms import TransformDomain
from .trigger import PoisonSpec, Trigger, blended_trigger, default_badnets_trigger, make_poisoned_dataset

log = logging.getLogger("staticbackdoor")

CHECKPOINT_NAME = "model.ckpt"
TRAIN_LOG_NAME = "train.log"


def derive_seed(master: int, component: str) -> int:
    """First 8 bytes (big-endian) of SHA-256("<master>:<component>"), masked to 63 bits."""
    digest = hashlib.sha256(f"{int(master)}:{component}".encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "big") & ((1 << 63) - 1)


@dataclass
class DatasetConfig:
    name: str
    train: Any
    test: Any
    train_limit: int | None = None
    test_limit: int | None = None


@dataclass
class ExperimentConfig:
    dataset: DatasetConfig
    trigger: Any = "default_badnets"
    target_label: int = 0
    poison_rate: float = 0.1
    arch: str = "smallcnn"
    train: TrainConfig = field(default_factory=TrainConfig)
    enhance: TransformDomain | None = None
    defenses: dict[str, DefensePolicy] = field(default_factory=lambda: {"none": DefensePolicy()})
    subsample: int = DEFAULT_SUBSAMPLE
    stride: int = 1
    values: tuple[int, ...] = DEFAULT_VALUES
    output_dir: Path = Path("out")
    seed: int = 0

    def seed_for(self, component: str) -> int:
        return derive_seed(self.seed, component)


def _get(d: dict, key: str, path: str, kind, default=None, required=False):
    if not isinstance(d, dict):
        raise ConfigurationError(f"{path}: expected a mapping")
    if key not in d or d[key] is None:
        if required:
            raise ConfigurationError(f"{path}.{key}: missing required field".lstrip("."))
        return default
    value = d[key]
    name = f"{path}.{key}".lstrip(".")
    if kind is int and (isinstance(value, bool) or not isinstance(value, int)):
        raise ConfigurationError(f"{name}: expected an integer, got {value!r}")
    if kind is float and (isinstance(value, bool) or not isinstance(value, (int, float))):
        raise ConfigurationError(f"{name}: expected a number, got {value!r}")
    if kind is bool and not isinstance(value, bool):
        raise ConfigurationError(f"{name}: expected true/false, got {value!r}")
    if kind is str and not isinstance(value, str):
        raise ConfigurationError(f"{name}: expected a string, got {value!r}")
    return value


def _resolve(base: Path, p) -> Path:
    p = Path(os.path.expanduser(str(p)))
    return p if p.is_absolute() else base / p


def _dataset_paths(name: str, part, base: Path, path: str):
    if name == "mnist":
        images = _resolve(base, _get(part, "images", path, str, required=True))
        labels = _resolve(base, _get(part, "labels", path, str, required=True))
        paths = [images, labels]
        value = (images, labels)
    else:
        if isinstance(part, str):
            part = [part]
        if not isinstance(part, list) or not part:
            raise ConfigurationError(f"{path}: expected a list of CIFAR-10 batch files")
        paths = [_resolve(base, p) for p in part]
        value = paths
    for p in paths:
        if not p.is_file():
            raise ConfigurationError(f"{path}: file not found: {p}")
    return value


def parse_config(raw: dict, base_dir: Path = Path(".")) -> ExperimentConfig:
    """Validate a config mapping; raises ConfigurationError naming the offending field."""
    if not isinstance(raw, dict):
        raise ConfigurationError("config: expected a mapping at top level")
    known = {"seed", "dataset", "trigger", "attack", "train", "enhance", "defenses", "eval", "output_dir"}
    unknown = set(raw) - known
    if unknown:
        raise ConfigurationError(f"{sorted(unknown)[0]}: unknown field")
    seed = _get(raw, "seed", "", int, 0)

    ds = _get(raw, "dataset", "", dict, required=True)
    name = _get(ds, "name", "dataset", str, required=True)
    if name not in ("mnist", "cifar10"):
        raise ConfigurationError(f"dataset.name: unsupported dataset {name!r}")
    dataset = DatasetConfig(
        name,
        _dataset_paths(name, _get(ds, "train", "dataset", object, required=True), base_dir, "dataset.train"),
        _dataset_paths(name, _get(ds, "test", "dataset", object, required=True), base_dir, "dataset.test"),
        _get(ds, "train_limit", "dataset", int),
        _get(ds, "test_limit", "dataset", int),
    )
    for key in ("train_limit", "test_limit"):
        v = getattr(dataset, key)
        if v is not None and v < 1:
            raise ConfigurationError(f"dataset.{key}: must be >= 1")

    trig = raw.get("trigger", "default_badnets")
    if isinstance(trig, str):
        if trig != "default_badnets":
            raise ConfigurationError(f"trigger: unknown trigger {trig!r}")
    elif isinstance(trig, dict):
        if trig.get("kind") == "blended":
            alpha = _get(trig, "alpha", "trigger", float, 0.2)
            if not 0 < alpha <= 1:
                raise ConfigurationError("trigger.alpha: must lie in (0, 1]")
        else:
            Trigger.from_dict(trig)  # schema check only; shape is checked once data is loaded
    else:
        raise ConfigurationError("trigger: expected 'default_badnets' or a mapping")

    attack = _get(raw, "attack", "", dict, {})
    target = _get(attack, "target_label", "attack", int, 0)
    rate = _get(attack, "poison_rate", "attack", float, 0.1)
    if not 0 < rate <= 1:
        raise ConfigurationError(f"attack.poison_rate: must lie in (0, 1], got {rate}")
    if not 0 <= target < 10:
        raise ConfigurationError(f"attack.target_label: must be a class index in [0, 10), got {target}")

    tr = _get(raw, "train", "", dict, {})
    arch = _get(tr, "arch", "train", str, "smallcnn")
    if arch.lower() != "smallcnn":
        raise ConfigurationError(f"train.arch: unknown architecture {arch!r}")
    try:
        tconf = TrainConfig(
            learning_rate=float(_get(tr, "learning_rate", "train", float, 0.01)),
            momentum=float(_get(tr, "momentum", "train", float, 0.9)),
            epochs=_get(tr, "epochs", "train", int, 10),
            batch_size=_get(tr, "batch_size", "train", int, 64),
            seed=derive_seed(seed, "train"),
        )
    except ConfigurationError as exc:
        raise ConfigurationError(f"train.{exc}") from None

    enhance = None
    en = raw.get("enhance")
    if en is not None:
        max_shrink = _get(en, "max_shrink", "enhance", int, 4)
        if max_shrink < 0:
            raise ConfigurationError("enhance.max_shrink: must be >= 0")
        enhance = TransformDomain(max_shrink, _get(en, "allow_flip", "enhance", bool, True))

    defenses: dict[str, DefensePolicy] = {}
    dlist = raw.get("defenses", [{"name": "none", "kind": "none"}])
    if not isinstance(dlist, list) or not dlist:
        raise ConfigurationError("defenses: expected a non-empty list")
    for i, d in enumerate(dlist):
        path = f"defenses[{i}]"
        dname = _get(d, "name", path, str, required=True)
        if dname in defenses:
            raise ConfigurationError(f"{path}.name: duplicate defense {dname!r}")
        try:
            defenses[dname] = DefensePolicy(
                _get(d, "kind", path, str, "none"),
                _get(d, "shrink", path, int, 0),
                _get(d, "offset_mode", path, str, "random"),
                derive_seed(seed, f"defense/{dname}"),
            )
        except ValueError as exc:
            raise ConfigurationError(f"{path}: {exc}") from None

    ev = _get(raw, "eval", "", dict, {})
    sub = _get(ev, "subsample", "eval", int, DEFAULT_SUBSAMPLE)
    stride = _get(ev, "stride", "eval", int, 1)
    values = ev.get("values", list(DEFAULT_VALUES))
    if sub < 1:
        raise ConfigurationError("eval.subsample: must be >= 1")
    if stride < 1:
        raise ConfigurationError("eval.stride: must be >= 1")
    if (not isinstance(values, list) or not values
            or any(isinstance(v, bool) or not isinstance(v, int) or not 0 <= v <= 255 for v in values)):
        raise ConfigurationError("eval.values: expected a non-empty list of intensities in 0..255")

    out = _resolve(base_dir, _get(raw, "output_dir", "", str, "out"))
    return ExperimentConfig(dataset, trig, target, float(rate), arch, tconf, enhance, defenses,
                            sub, stride, tuple(values), out, seed)


def load_config(path) -> ExperimentConfig:
    path = Path(path)
    try:
        with open(path, encoding="utf-8") as fh:
            raw = yaml.safe_load(fh)
    except OSError as exc:
        raise ConfigurationError(f"config: cannot read {path}: {exc.strerror}") from None
    except yaml.YAMLError as exc:
        raise ConfigurationError(f"config: invalid YAML in {path}: {exc}") from None
    return parse_config(raw, path.parent)


def _limit(data: LabeledDataset, limit: int | None, seed: int) -> LabeledDataset:
    if limit is None or limit >= len(data):
        return data
    rng = np.random.default_rng(seed)
    return data.subset(np.sort(rng.choice(len(data), size=limit, replace=False)))


def load_split(cfg: ExperimentConfig, part: str) -> LabeledDataset:
    paths = getattr(cfg.dataset, part)
    data = load_mnist(*paths) if cfg.dataset.name == "mnist" else load_cifar10(paths)
    return _limit(data, getattr(cfg.dataset, f"{part}_limit"), cfg.seed_for(f"{part}_limit"))


def build_trigger(cfg: ExperimentConfig, image_shape) -> Trigger:
    spec = cfg.trigger
    if spec == "default_badnets":
        trig = default_badnets_trigger(image_shape)
    elif spec.get("kind") == "blended":
        trig = blended_trigger(image_shape, float(spec.get("alpha", 0.2)), cfg.seed_for("blend_pattern"))
    else:
        trig = Trigger.from_dict(spec)
        if trig.pattern.channels == 1 and image_shape[0] == 3:
            trig = Trigger.from_dict({**spec, "pattern": [spec["pattern"]] * 3})
    try:
        trig.check_fits(image_shape)
    except BackdoorError as exc:
        raise ConfigurationError(f"trigger: {exc}") from None
    return trig


def run_training(cfg: ExperimentConfig, train_set: LabeledDataset, on_epoch=None) -> ClassifierModel:
    trig = build_trigger(cfg, train_set.image_shape)
    spec = PoisonSpec(cfg.target_label, cfg.poison_rate, cfg.seed_for("poison"))
    poisoned, benign = make_poisoned_dataset(train_set, trig, spec)
    model = new_model(cfg.arch, train_set.num_classes, cfg.seed_for("init"), train_set.image_shape)
    if cfg.enhance is None:
        data = poisoned if benign is None else concat(poisoned, benign)
        return train(model, data, cfg.train, on_epoch)
    return train_enhanced(model, poisoned, benign, cfg.enhance, cfg.train, on_epoch)


def _write_atomic(path: Path, data: bytes) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        os.unlink(tmp)
        raise


def _load_models(cfg: ExperimentConfig, checkpoints: Sequence[str], image_shape) -> dict[str, ClassifierModel]:
    models: dict[str, ClassifierModel] = {}
    for ck in checkpoints:
        p = Path(ck)
        if not p.is_file():
            raise ConfigurationError(f"--checkpoint: file not found: {p}")
        model = load_checkpoint(p)
        expected = Architecture.named(cfg.arch, image_shape, 10)
        if model.arch != expected:
            raise ConfigurationError(f"--checkpoint: {p} architecture does not match the configured {cfg.arch}")
        name = p.stem
        k = 2
        while name in models:
            name = f"{p.stem}-{k}"
            k += 1
        models[name] = model
    return models


def cmd_train(cfg: ExperimentConfig, out_dir: Path, checkpoint: Path | None = None) -> Path:
    train_set = load_split(cfg, "train")
    if cfg.train.batch_size > len(train_set):
        raise ConfigurationError(f"train.batch_size: {cfg.train.batch_size} exceeds {len(train_set)} training items")
    lines: list[str] = []

    def on_epoch(epoch, loss):
        lines.append(f"epoch {epoch} loss {loss:.6f}")
        log.info(lines[-1])

    model = run_training(cfg, train_set, on_epoch)
    ck = checkpoint or out_dir / CHECKPOINT_NAME
    with tempfile.TemporaryDirectory() as tmp:
        tmp_ck = Path(tmp) / "model.ckpt"
        save_checkpoint(model, tmp_ck)
        _write_atomic(ck, tmp_ck.read_bytes())
    _write_atomic(out_dir / TRAIN_LOG_NAME, ("\n".join(lines) + "\n").encode("utf-8"))
    return ck


def cmd_eval(cfg: ExperimentConfig, checkpoints: Sequence[str], out_dir: Path) -> Path:
    test_set = load_split(cfg, "test")
    models = _load_models(cfg, checkpoints, test_set.image_shape)
    trig = build_trigger(cfg, test_set.image_shape)
    rows = compare(models, cfg.defenses, test_set, trig, cfg.target_label)
    path = out_dir / "comparison.csv"
    _write_atomic(path, comparison_csv(rows).encode("utf-8"))
    return path


def cmd_sweep(cfg: ExperimentConfig, checkpoint: str, kind: str, out_dir: Path) -> list[Path]:
    test_set = load_split(cfg, "test")
    model = next(iter(_load_models(cfg, [checkpoint], test_set.image_shape).values()))
    trig = build_trigger(cfg, test_set.image_shape)
    seed = cfg.seed_for("subsample")
    if kind == "location":
        grid = sweep_location(model, test_set, trig, cfg.target_label, cfg.stride, cfg.subsample, seed)
        csv_path, pgm_path = out_dir / "location.csv", out_dir / "location.pgm"
        csv_text, pgm = location_csv(grid).encode("utf-8"), heatmap_pgm(grid.asr)
        _write_atomic(csv_path, csv_text)
        _write_atomic(pgm_path, pgm)
        return [csv_path, pgm_path]
    curve = sweep_appearance(model, test_set, trig, cfg.target_label, cfg.values,
                             subsample_size=cfg.subsample, seed=seed)
    path = out_dir / "appearance.csv"
    _write_atomic(path, appearance_csv(curve).encode("utf-8"))
    return [path]


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="staticbackdoor", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true", help="log per-epoch progress")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="poison the training set and train a model")
    p.add_argument("--config", required=True)
    p.add_argument("--out", help="output directory (overrides output_dir)")
    p.add_argument("--checkpoint", help="checkpoint path to write (default <out>/model.ckpt)")

    p = sub.add_parser("eval", help="clean accuracy and ASR for every model x defense")
    p.add_argument("--config", required=True)
    p.add_argument("--checkpoint", required=True, action="append", help="repeat to compare several models")
    p.add_argument("--out")

    p = sub.add_parser("sweep", help="ASR as a function of trigger location or appearance")
    p.add_argument("--config", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--kind", required=True, choices=("location", "appearance"))
    p.add_argument("--out")
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(levelname)s %(message)s")
    log.info("kernel backend: %s", kernels.BACKEND)
    try:
        cfg = load_config(args.config)
        out_dir = Path(args.out) if args.out else cfg.output_dir
        if args.command == "train":
            written = [cmd_train(cfg, out_dir, Path(args.checkpoint) if args.checkpoint else None)]
        elif args.command == "eval":
            written = [cmd_eval(cfg, args.checkpoint, out_dir)]
        else:
            written = cmd_sweep(cfg, args.checkpoint, args.kind, out_dir)
    except BackdoorError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2 if isinstance(exc, ConfigurationError) else 1
    except (OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    for path in written:
        print(path)
    return 0


if __name__ == "__main__":
    sys.exit(main())
