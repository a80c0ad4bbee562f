"""Classical conv baseline, the shared softmax head, and input gradients.

Both backends (``ConvFilter`` here, ``QuanvFilter`` in :mod:`quanv`) expose
``features(images)``, ``vjp(images, dJ/dF)``, ``describe()`` and
``digest()``; a :class:`Model` is a frozen backend plus a trainable
:class:`ModelHead`.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .circuits import _as_rng, parse_circuit
from .errors import ArgumentError, ConfigError
from .quanv import CODE_VERSION, QuanvConfig, QuanvFilter, _check_pixels, _patches_batch, _scatter_patches

N_CLASSES = 10
PROB_FLOOR = 1e-12
CHECKPOINT_FORMAT = "qunnbench-checkpoint"


def glorot_uniform(rng, shape, fan_in: int, fan_out: int) -> np.ndarray:
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return _as_rng(rng).uniform(-limit, limit, shape)


@dataclass(frozen=True, eq=False)
class ConvConfig:
    """Fixed conv filters: ``weights`` has shape ``(n_filters, kernel, kernel)``."""

    weights: np.ndarray
    biases: np.ndarray
    kernel: int = 2
    stride: int = 2

    def __post_init__(self):
        w = np.array(self.weights, dtype=float)
        b = np.array(self.biases, dtype=float).reshape(-1)
        if w.ndim != 3 or w.shape[1:] != (self.kernel, self.kernel):
            raise ConfigError(f"weights must have shape (n_filters, {self.kernel}, {self.kernel})")
        if b.shape != (w.shape[0],):
            raise ConfigError("one bias per filter required")
        w.flags.writeable = False
        b.flags.writeable = False
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "biases", b)

    @property
    def n_filters(self) -> int:
        return self.weights.shape[0]

    @classmethod
    def glorot(cls, rng, n_filters: int = 4, kernel: int = 2, stride: int = 2) -> "ConvConfig":
        # Keras-style fans for a (k, k, 1, n_filters) kernel
        w = glorot_uniform(rng, (kernel, kernel, n_filters), kernel * kernel, kernel * kernel * n_filters)
        return cls(np.moveaxis(w, -1, 0), np.zeros(n_filters), kernel, stride)

    def describe(self) -> dict:
        return {
            "kind": "conv",
            "weights": self.weights.tolist(),
            "biases": self.biases.tolist(),
            "kernel": self.kernel,
            "stride": self.stride,
        }

    def digest(self) -> str:
        text = json.dumps(self.describe(), sort_keys=True)
        return hashlib.sha256(f"{CODE_VERSION}\n{text}".encode()).hexdigest()


class ConvFilter:
    """ReLU(conv2d) with stride, no padding; one output channel per filter."""

    def __init__(self, cfg: ConvConfig):
        self.cfg = cfg
        self._w = cfg.weights.reshape(cfg.n_filters, -1).T.copy()
        self.n_channels = cfg.n_filters

    def describe(self) -> dict:
        return self.cfg.describe()

    def digest(self) -> str:
        return self.cfg.digest()

    def _pre(self, images):
        patches = _patches_batch(np.asarray(images, dtype=float), self.cfg.kernel, self.cfg.stride)
        pre = np.einsum("brcp,pf->brcf", patches, self._w, optimize=False) + self.cfg.biases
        return patches, pre

    def features(self, images: np.ndarray) -> np.ndarray:
        images = np.asarray(images, dtype=float)
        if images.ndim != 3:
            raise ArgumentError("images must have shape (B, H, W)")
        _, pre = self._pre(images)
        return np.maximum(pre, 0.0)

    def vjp(self, images: np.ndarray, grad_features: np.ndarray) -> np.ndarray:
        images = np.asarray(images, dtype=float)
        patches, pre = self._pre(images)
        g = np.asarray(grad_features, dtype=float).reshape(pre.shape) * (pre > 0)
        gp = np.einsum("brcf,pf->brcp", g, self._w, optimize=False)
        return _scatter_patches(gp, images.shape[1:], self.cfg.kernel, self.cfg.stride)


def conv_features(image, cfg: ConvConfig) -> np.ndarray:
    """Feature tensor ``(rows, cols, n_filters)`` for one image."""
    img = np.asarray(image, dtype=float)
    if img.ndim != 2:
        raise ArgumentError("image must be 2-D")
    return ConvFilter(cfg).features(img[None])[0]


def make_backend(descriptor: dict):
    """Rebuild a backend from its ``describe()`` output."""
    kind = descriptor.get("kind")
    if kind == "quanv":
        cfg = QuanvConfig(
            parse_circuit(descriptor["ansatz"]),
            np.array(descriptor["ansatz_params"], dtype=float),
            kernel=descriptor["kernel"],
            stride=descriptor["stride"],
            encode_scale=descriptor["encode_scale"],
            layers=descriptor["layers"],
        )
        return QuanvFilter(cfg)
    if kind == "conv":
        cfg = ConvConfig(
            np.array(descriptor["weights"], dtype=float),
            np.array(descriptor["biases"], dtype=float),
            kernel=descriptor["kernel"],
            stride=descriptor["stride"],
        )
        return ConvFilter(cfg)
    raise ConfigError(f"unknown backend kind {kind!r}")


def softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - np.max(logits, axis=-1, keepdims=True)
    e = np.exp(z)
    return e / np.sum(e, axis=-1, keepdims=True)


def cross_entropy(probs, label) -> float | np.ndarray:
    """``-log p[label]`` with ``p`` floored at 1e-12. Vectorised over rows."""
    probs = np.asarray(probs, dtype=float)
    label = np.asarray(label)
    if np.any((label < 0) | (label >= probs.shape[-1])):
        raise ArgumentError("label out of range")
    p = np.take_along_axis(np.atleast_2d(probs), np.atleast_1d(label).reshape(-1, 1), axis=-1)[:, 0]
    loss = -np.log(np.maximum(p, PROB_FLOOR))
    return float(loss[0]) if probs.ndim == 1 else loss


@dataclass
class TrainConfig:
    epochs: int = 30
    batch_size: int = 4
    learning_rate: float = 0.001
    seed: int = 0
    n_train: int = 1000
    shuffle: bool = True
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-7

    def __post_init__(self):
        for name in ("epochs", "batch_size", "n_train"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be positive")
        if self.learning_rate <= 0:
            raise ConfigError("learning_rate must be positive")


@dataclass
class ModelHead:
    """Dense layer ``features (flattened) -> 10 logits`` with Adam moments."""

    W: np.ndarray
    b: np.ndarray
    m: list = field(default_factory=list)
    v: list = field(default_factory=list)
    step: int = 0

    @classmethod
    def glorot(cls, n_features: int, rng, n_classes: int = N_CLASSES) -> "ModelHead":
        return cls(glorot_uniform(rng, (n_features, n_classes), n_features, n_classes), np.zeros(n_classes))

    @classmethod
    def zeros(cls, n_features: int, n_classes: int = N_CLASSES) -> "ModelHead":
        return cls(np.zeros((n_features, n_classes)), np.zeros(n_classes))

    def logits(self, flat_features: np.ndarray) -> np.ndarray:
        # no BLAS: each row's result must not depend on the batch it sits in
        return np.einsum("bf,fc->bc", flat_features, self.W, optimize=False) + self.b

    def adam_update(self, grads, cfg: TrainConfig):
        if not self.m:
            self.m = [np.zeros_like(self.W), np.zeros_like(self.b)]
            self.v = [np.zeros_like(self.W), np.zeros_like(self.b)]
        self.step += 1
        b1, b2 = cfg.beta1, cfg.beta2
        c1 = 1.0 - b1**self.step
        c2 = 1.0 - b2**self.step
        for i, (param, g) in enumerate(zip((self.W, self.b), grads)):
            self.m[i] = b1 * self.m[i] + (1.0 - b1) * g
            self.v[i] = b2 * self.v[i] + (1.0 - b2) * g * g
            param -= cfg.learning_rate * (self.m[i] / c1) / (np.sqrt(self.v[i] / c2) + cfg.adam_eps)


def _flatten(features) -> np.ndarray:
    f = np.asarray(features, dtype=float)
    return f.reshape(f.shape[0], int(np.prod(f.shape[1:])))


def train_head(features, labels, cfg: TrainConfig, head: ModelHead | None = None) -> ModelHead:
    """Mini-batch Adam on mean cross-entropy; returns the trained head.

    Initial weights and the per-epoch shuffles come from independent streams
    spawned from ``cfg.seed``.
    """
    x = _flatten(features)
    y = np.asarray(labels, dtype=int)
    if x.shape[0] == 0:
        raise ArgumentError("empty training set")
    if x.shape[0] != y.shape[0]:
        raise ArgumentError("features and labels differ in length")
    init_seq, shuffle_seq = np.random.SeedSequence(cfg.seed).spawn(2)
    if head is None:
        head = ModelHead.glorot(x.shape[1], np.random.default_rng(init_seq))
    shuffle_rng = np.random.default_rng(shuffle_seq)
    n = x.shape[0]
    for _ in range(cfg.epochs):
        order = shuffle_rng.permutation(n) if cfg.shuffle else np.arange(n)
        for start in range(0, n, cfg.batch_size):
            idx = order[start : start + cfg.batch_size]
            delta = softmax(head.logits(x[idx]))
            delta[np.arange(len(idx)), y[idx]] -= 1.0
            delta /= len(idx)
            head.adam_update((x[idx].T @ delta, delta.sum(axis=0)), cfg)
    return head


class Model:
    """Frozen feature backend + dense softmax head."""

    def __init__(self, backend, head: ModelHead):
        self.backend = backend
        self.head = head

    def _batch(self, images):
        images = np.asarray(images, dtype=float)
        single = images.ndim == 2
        return (images[None] if single else images), single

    def logits(self, images) -> np.ndarray:
        images, single = self._batch(images)
        out = self.head.logits(_flatten(self.backend.features(images)))
        return out[0] if single else out

    def predict_proba(self, images) -> np.ndarray:
        return softmax(self.logits(images))

    def predict(self, images) -> np.ndarray:
        return np.argmax(self.logits(images), axis=-1)

    def loss(self, images, labels):
        return cross_entropy(self.predict_proba(images), labels)

    def input_gradient(self, images, labels) -> np.ndarray:
        """``dJ/dx`` per image (J = cross-entropy of that image)."""
        images, single = self._batch(images)
        labels = np.atleast_1d(np.asarray(labels, dtype=int))
        feats = self.backend.features(images)
        delta = softmax(self.head.logits(_flatten(feats)))
        delta[np.arange(len(labels)), labels] -= 1.0
        grad_f = np.einsum("bc,fc->bf", delta, self.head.W, optimize=False).reshape(feats.shape)
        grad = self.backend.vjp(images, grad_f)
        return grad[0] if single else grad


def forward(model: Model, image) -> np.ndarray:
    """Class probabilities (10,) for one image, or (B, 10) for a batch."""
    return model.predict_proba(image)


def loss_input_gradient(model: Model, image, label) -> np.ndarray:
    return model.input_gradient(image, label)


def save_checkpoint(path, model: Model, train_cfg: TrainConfig | None = None, seed: int | None = None):
    doc = {
        "format": CHECKPOINT_FORMAT,
        "version": 1,
        "backend": model.backend.describe(),
        "backend_digest": model.backend.digest(),
        "head": {"W": model.head.W.tolist(), "b": model.head.b.tolist()},
        "train": asdict(train_cfg) if train_cfg is not None else None,
        "seed": seed,
    }
    Path(path).write_text(json.dumps(doc))


def load_checkpoint(path):
    """Returns ``(model, train_cfg or None, seed)``."""
    doc = json.loads(Path(path).read_text())
    if doc.get("format") != CHECKPOINT_FORMAT:
        raise ConfigError(f"{path}: not a checkpoint file")
    backend = make_backend(doc["backend"])
    if backend.digest() != doc["backend_digest"]:
        raise ConfigError(f"{path}: backend digest mismatch")
    head = ModelHead(np.array(doc["head"]["W"], dtype=float), np.array(doc["head"]["b"], dtype=float))
    train = TrainConfig(**doc["train"]) if doc.get("train") else None
    return Model(backend, head), train, doc.get("seed")

