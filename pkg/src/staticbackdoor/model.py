"""Small convolutional classifier trained from scratch with SGD + momentum.

Layers operate on NHWC float batches. Convolutions are 3x3, stride 1, zero
padding 1, lowered to a GEMM through ``kernels.im2col3x3``.
"""
from __future__ import annotations

import json
import logging
import struct
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from . import kernels
from .errors import ConfigurationError, FormatError, TrainingError
from .imaging import Image, LabeledDataset, concat
from .transforms import TransformDomain, apply_array, sample_param

log = logging.getLogger(__name__)

CHECKPOINT_MAGIC = b"SBDCKPT\x00"
CHECKPOINT_VERSION = 1
EVAL_BATCH = 256


def smallcnn_layers(num_classes: int) -> tuple[str, ...]:
    return ("conv:32", "relu", "maxpool", "conv:64", "relu", "maxpool",
            "flatten", "dense:128", "relu", f"dense:{num_classes}")


@dataclass(frozen=True)
class Architecture:
    """Layer list plus the (C, H, W) input shape it accepts."""

    input_shape: tuple[int, int, int]
    layers: tuple[str, ...]

    def __post_init__(self):
        object.__setattr__(self, "input_shape", tuple(int(v) for v in self.input_shape))
        object.__setattr__(self, "layers", tuple(self.layers))
        self.param_shapes()  # validates

    @classmethod
    def named(cls, name: str, input_shape, num_classes: int) -> "Architecture":
        if name.lower() != "smallcnn":
            raise ConfigurationError(f"unknown architecture {name!r}")
        return cls(tuple(input_shape), smallcnn_layers(num_classes))

    @property
    def num_classes(self) -> int:
        return self.output_shape()[0]

    def output_shape(self) -> tuple[int, ...]:
        return self._walk()[1]

    def param_shapes(self) -> list[tuple[int, ...]]:
        return self._walk()[0]

    def _walk(self):
        c, h, w = self.input_shape
        if len(self.input_shape) != 3 or min(self.input_shape) < 1:
            raise ConfigurationError(f"bad input shape {self.input_shape}")
        shape: tuple[int, ...] = (h, w, c)
        shapes: list[tuple[int, ...]] = []
        for token in self.layers:
            kind, _, arg = token.partition(":")
            if kind == "conv":
                if len(shape) != 3:
                    raise ConfigurationError("conv after flatten")
                filters = _positive(arg, token)
                shapes += [(3, 3, shape[2], filters), (filters,)]
                shape = (shape[0], shape[1], filters)
            elif kind == "relu":
                pass
            elif kind == "maxpool":
                if len(shape) != 3 or shape[0] < 2 or shape[1] < 2:
                    raise ConfigurationError(f"maxpool on shape {shape}")
                shape = (shape[0] // 2, shape[1] // 2, shape[2])
            elif kind == "flatten":
                shape = (int(np.prod(shape)),)
            elif kind == "dense":
                if len(shape) != 1:
                    raise ConfigurationError("dense layer needs a flatten first")
                units = _positive(arg, token)
                shapes += [(shape[0], units), (units,)]
                shape = (units,)
            else:
                raise ConfigurationError(f"unknown layer {token!r}")
        if len(shape) != 1:
            raise ConfigurationError("architecture must end in a dense layer")
        return shapes, shape

    def to_json(self) -> str:
        return json.dumps({"input_shape": list(self.input_shape), "layers": list(self.layers)},
                          sort_keys=True, separators=(",", ":"))

    @classmethod
    def from_json(cls, text: str) -> "Architecture":
        d = json.loads(text)
        return cls(tuple(d["input_shape"]), tuple(d["layers"]))


def _positive(arg: str, token: str) -> int:
    try:
        n = int(arg)
    except ValueError:
        raise ConfigurationError(f"layer {token!r} needs an integer size") from None
    if n < 1:
        raise ConfigurationError(f"layer {token!r} needs a positive size")
    return n


@dataclass(eq=False)
class ClassifierModel:
    arch: Architecture
    params: list[np.ndarray]

    @property
    def num_classes(self) -> int:
        return self.arch.num_classes

    @property
    def dtype(self):
        return self.params[0].dtype

    @property
    def weights(self) -> np.ndarray:
        """All parameters as one flat vector, in layer order."""
        return np.concatenate([p.ravel() for p in self.params])

    def copy(self) -> "ClassifierModel":
        return ClassifierModel(self.arch, [p.copy() for p in self.params])

    def astype(self, dtype) -> "ClassifierModel":
        return ClassifierModel(self.arch, [p.astype(dtype) for p in self.params])

    def same_weights(self, other: "ClassifierModel") -> bool:
        return (self.arch == other.arch and len(self.params) == len(other.params)
                and all(a.dtype == b.dtype and np.array_equal(a, b) for a, b in zip(self.params, other.params)))


def new_model(arch="smallcnn", num_classes: int = 10, seed: int = 0,
              input_shape=(1, 28, 28), dtype=np.float32) -> ClassifierModel:
    """Fresh model: He-uniform weights (bound sqrt(6 / fan_in)), zero biases."""
    if isinstance(arch, str):
        arch = Architecture.named(arch, input_shape, num_classes)
    elif arch.num_classes != num_classes:
        raise ConfigurationError(f"architecture emits {arch.num_classes} classes, expected {num_classes}")
    rng = np.random.default_rng(seed)
    params = []
    for shape in arch.param_shapes():
        if len(shape) == 1:
            params.append(np.zeros(shape, dtype=dtype))
        else:
            fan_in = int(np.prod(shape[:-1]))
            bound = np.sqrt(6.0 / fan_in)
            params.append(rng.uniform(-bound, bound, size=shape).astype(dtype))
    return ClassifierModel(arch, params)


def _to_batch(model: ClassifierModel, images: np.ndarray) -> np.ndarray:
    """(N, C, H, W) uint8 -> NHWC unit-interval floats in the model's dtype."""
    images = np.asarray(images)
    if images.shape[1:] != model.arch.input_shape:
        raise ValueError(f"input shape {images.shape[1:]} does not match model input {model.arch.input_shape}")
    x = images.transpose(0, 2, 3, 1).astype(model.dtype)
    if images.dtype == np.uint8:
        x /= model.dtype.type(255.0)
    return np.ascontiguousarray(x)


def _forward(model: ClassifierModel, x: np.ndarray, keep: bool):
    caches = []
    pi = 0
    for token in model.arch.layers:
        kind = token.partition(":")[0]
        if kind == "conv":
            w, b = model.params[pi], model.params[pi + 1]
            pi += 2
            n, h, wd, c = x.shape
            cols = kernels.im2col3x3(x).reshape(n * h * wd, 9 * c)
            out = (cols @ w.reshape(9 * c, -1)).reshape(n, h, wd, -1)
            out += b
            caches.append((cols, x.shape) if keep else None)
            x = out
        elif kind == "relu":
            caches.append(x > 0 if keep else None)
            x = np.maximum(x, 0)
        elif kind == "maxpool":
            out, arg = kernels.maxpool2_forward(x)
            caches.append((arg, x.shape) if keep else None)
            x = out
        elif kind == "flatten":
            caches.append(x.shape if keep else None)
            x = x.reshape(x.shape[0], -1)
        else:  # dense
            w, b = model.params[pi], model.params[pi + 1]
            pi += 2
            caches.append(x if keep else None)
            x = x @ w + b
    return x, caches


def _backward(model: ClassifierModel, dout: np.ndarray, caches) -> list[np.ndarray]:
    grads: list[np.ndarray] = [None] * len(model.params)  # type: ignore[list-item]
    pi = len(model.params)
    layers = model.arch.layers
    for li in range(len(layers) - 1, -1, -1):
        kind = layers[li].partition(":")[0]
        cache = caches[li]
        first = li == 0
        if kind == "dense":
            pi -= 2
            w = model.params[pi]
            grads[pi] = cache.T @ dout
            grads[pi + 1] = dout.sum(axis=0)
            if not first:
                dout = dout @ w.T
        elif kind == "conv":
            pi -= 2
            w = model.params[pi]
            cols, shape = cache
            n, h, wd, c = shape
            d2 = dout.reshape(n * h * wd, -1)
            grads[pi] = (cols.T @ d2).reshape(w.shape)
            grads[pi + 1] = d2.sum(axis=0)
            if not first:
                dcols = (d2 @ w.reshape(9 * c, -1).T).reshape(n, h, wd, 3, 3, c)
                dout = kernels.col2im3x3(dcols)
        elif kind == "relu":
            dout = dout * cache
        elif kind == "maxpool":
            arg, shape = cache
            dout = kernels.maxpool2_backward(np.ascontiguousarray(dout), arg, shape[1], shape[2])
        else:  # flatten
            dout = dout.reshape(cache)
    return grads


def softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def _cross_entropy(logits: np.ndarray, labels: np.ndarray):
    """Mean cross-entropy and its gradient w.r.t. the logits."""
    n = logits.shape[0]
    z = logits - logits.max(axis=1, keepdims=True)
    logsum = np.log(np.exp(z).sum(axis=1))
    loss = float(np.mean(logsum - z[np.arange(n), labels]))
    d = np.exp(z - logsum[:, None])
    d[np.arange(n), labels] -= 1.0
    d /= n
    return loss, d


def logits_batch(model: ClassifierModel, images: np.ndarray, batch_size: int = EVAL_BATCH) -> np.ndarray:
    """Logits for a (N, C, H, W) array, evaluated in chunks."""
    out = []
    for s in range(0, len(images), batch_size):
        logits, _ = _forward(model, _to_batch(model, images[s:s + batch_size]), keep=False)
        out.append(logits)
    return np.concatenate(out) if out else np.zeros((0, model.num_classes), dtype=model.dtype)


def predict_batch(model: ClassifierModel, images: np.ndarray) -> np.ndarray:
    # np.argmax returns the first maximum: ties go to the lowest class index
    return np.argmax(logits_batch(model, images), axis=1)


def forward(model: ClassifierModel, x: Image) -> np.ndarray:
    if x.shape != model.arch.input_shape:
        raise ValueError(f"image shape {x.shape} does not match model input {model.arch.input_shape}")
    return logits_batch(model, x.pixels[None])[0]


def _batch_arrays(batch) -> tuple[np.ndarray, np.ndarray]:
    if isinstance(batch, LabeledDataset):
        return batch.images, batch.labels
    batch = list(batch)
    if not batch:
        raise ValueError("batch must be non-empty")
    return np.stack([img.pixels for img, _ in batch]), np.array([y for _, y in batch])


def loss_and_grads(model: ClassifierModel, batch) -> tuple[float, list[np.ndarray]]:
    """Mean cross-entropy over ``batch`` and its gradient for every parameter array."""
    images, labels = _batch_arrays(batch)
    return _loss_and_grads_arrays(model, images, labels)


def _loss_and_grads_arrays(model, images, labels):
    labels = np.asarray(labels, dtype=np.intp)
    if labels.min() < 0 or labels.max() >= model.num_classes:
        raise ValueError(f"labels must lie in [0, {model.num_classes})")
    logits, caches = _forward(model, _to_batch(model, images), keep=True)
    loss, dlogits = _cross_entropy(logits, labels)
    return loss, _backward(model, dlogits.astype(model.dtype, copy=False), caches)


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 0.01
    momentum: float = 0.9
    epochs: int = 10
    batch_size: int = 64
    seed: int = 0
    loss: str = field(default="cross_entropy")

    def __post_init__(self):
        if not self.learning_rate > 0:
            raise ConfigurationError(f"learning_rate must be > 0, got {self.learning_rate}")
        if not 0 <= self.momentum < 1:
            raise ConfigurationError(f"momentum must lie in [0, 1), got {self.momentum}")
        if int(self.epochs) < 1:
            raise ConfigurationError(f"epochs must be >= 1, got {self.epochs}")
        if int(self.batch_size) < 1:
            raise ConfigurationError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.loss != "cross_entropy":
            raise ConfigurationError(f"unsupported loss {self.loss!r}")


EpochCallback = Callable[[int, float], None]


def _fit(model, images, labels, config, n_transformed=0, domain=None, on_epoch=None):
    n = len(images)
    if config.batch_size > n:
        raise ConfigurationError(f"batch_size {config.batch_size} exceeds dataset size {n}")
    if images.shape[1:] != model.arch.input_shape:
        raise ValueError(f"data shape {images.shape[1:]} does not match model input {model.arch.input_shape}")
    model = model.copy()
    velocity = [np.zeros_like(p) for p in model.params]
    lr = model.dtype.type(config.learning_rate)
    mu = model.dtype.type(config.momentum)
    order_rng = np.random.default_rng(config.seed)
    # separate stream: an identity-only domain must leave the shuffling untouched
    theta_rng = np.random.default_rng([config.seed, 0x5EED])
    history = []
    for epoch in range(1, config.epochs + 1):
        perm = order_rng.permutation(n)
        total, count = 0.0, 0
        for bi, s in enumerate(range(0, n, config.batch_size)):
            idx = perm[s:s + config.batch_size]
            x = images[idx]
            if n_transformed:
                for p in np.flatnonzero(idx < n_transformed):
                    x[p] = apply_array(sample_param(domain, theta_rng), x[p])
            loss, grads = _loss_and_grads_arrays(model, x, labels[idx])
            if not np.isfinite(loss):
                raise TrainingError(f"non-finite loss at epoch {epoch}, batch {bi}", epoch, bi)
            for p, v, g in zip(model.params, velocity, grads):
                v *= mu
                v += g
                p -= lr * v
            total += loss * len(idx)
            count += len(idx)
        mean_loss = total / count
        history.append(mean_loss)
        log.info("epoch %d mean loss %.6f", epoch, mean_loss)
        if on_epoch is not None:
            on_epoch(epoch, mean_loss)
    return model, history


def train(model: ClassifierModel, data: LabeledDataset, config: TrainConfig,
          on_epoch: EpochCallback | None = None) -> ClassifierModel:
    """Minimise mean cross-entropy over ``data`` with seeded mini-batch SGD."""
    trained, _ = _fit(model, data.images, data.labels, config, on_epoch=on_epoch)
    return trained


def train_enhanced(model: ClassifierModel, poisoned: LabeledDataset | None, benign: LabeledDataset | None,
                   domain: TransformDomain, config: TrainConfig,
                   on_epoch: EpochCallback | None = None) -> ClassifierModel:
    """Like ``train`` on poisoned + benign, but every time a poisoned image enters a batch
    it is transformed by a freshly sampled parameter from ``domain``."""
    if poisoned is None and benign is None:
        raise ValueError("nothing to train on")
    if poisoned is None:
        return train(model, benign, config, on_epoch)
    domain.check_shape(poisoned.image_shape)
    data = poisoned if benign is None else concat(poisoned, benign)
    trained, _ = _fit(model, data.images, data.labels, config, len(poisoned), domain, on_epoch)
    return trained


def save_checkpoint(model: ClassifierModel, path) -> None:
    """Magic, version, architecture JSON, then little-endian float32 weights in layer order."""
    desc = model.arch.to_json().encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<II", CHECKPOINT_VERSION, len(desc)))
        fh.write(desc)
        for p in model.params:
            fh.write(np.ascontiguousarray(p, dtype="<f4").tobytes())


def load_checkpoint(path) -> ClassifierModel:
    with open(path, "rb") as fh:
        raw = fh.read()
    if raw[:8] != CHECKPOINT_MAGIC:
        raise FormatError(f"{path}: not a checkpoint (bad magic)")
    if len(raw) < 16:
        raise FormatError(f"{path}: truncated header")
    version, dlen = struct.unpack("<II", raw[8:16])
    if version != CHECKPOINT_VERSION:
        raise FormatError(f"{path}: unsupported checkpoint version {version}")
    try:
        arch = Architecture.from_json(raw[16:16 + dlen].decode("utf-8"))
    except (ValueError, KeyError, ConfigurationError) as exc:
        raise FormatError(f"{path}: bad architecture descriptor ({exc})") from None
    shapes = arch.param_shapes()
    offset = 16 + dlen
    expected = offset + 4 * sum(int(np.prod(s)) for s in shapes)
    if len(raw) != expected:
        raise FormatError(f"{path}: expected {expected} bytes, found {len(raw)}")
    params = []
    for shape in shapes:
        count = int(np.prod(shape))
        params.append(np.frombuffer(raw, dtype="<f4", count=count, offset=offset).astype(np.float32).reshape(shape))
        offset += 4 * count
    return ClassifierModel(arch, params)


def accuracy(model: ClassifierModel, data: LabeledDataset) -> float:
    return float(np.mean(predict_batch(model, data.images) == data.labels))
