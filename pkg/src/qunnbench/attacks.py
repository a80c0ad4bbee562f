"""White-box FGSM / PGD attacks and gradient diagnostics.

All attacks work on batches ``(B, H, W)`` (a single 2-D image is also
accepted) and are deterministic: no random start, ``sign(0) = 0``, and the
result is always clipped to ``[0, 1]``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .classical import Model
from .errors import ArgumentError, ConfigError

FGSM = "FGSM"
PGD = "PGD"
EVAL_CHUNK = 100


def _grid(stop: float, step: float) -> tuple[float, ...]:
    n = int(round(stop / step))
    return tuple(round(i * step, 10) for i in range(n + 1))


DEFAULT_EPSILONS = {FGSM: _grid(1.0, 0.05), PGD: _grid(0.1, 0.01)}


@dataclass(frozen=True)
class AttackConfig:
    method: str
    epsilon: float
    pgd_alpha: float | None = None
    pgd_iters: int = 10

    def __post_init__(self):
        if self.method not in (FGSM, PGD):
            raise ConfigError(f"unknown attack method {self.method!r}")
        if not self.epsilon >= 0:
            raise ConfigError("epsilon must be >= 0")
        if self.pgd_alpha is not None and not self.pgd_alpha > 0:
            raise ConfigError("pgd_alpha must be > 0")
        if self.pgd_iters < 1:
            raise ConfigError("pgd_iters must be >= 1")

    @property
    def alpha(self) -> float:
        if self.pgd_alpha is not None:
            return self.pgd_alpha
        return max(self.epsilon / 4.0, 0.005)


@dataclass(frozen=True)
class SweepSpec:
    method: str
    epsilons: tuple[float, ...] = ()
    n_runs: int = 10
    pgd_alpha: float | None = None
    pgd_iters: int = 10
    seeds: tuple[int, ...] = field(default=())

    def __post_init__(self):
        if self.method not in (FGSM, PGD):
            raise ConfigError(f"unknown attack method {self.method!r}")
        eps = tuple(float(e) for e in (self.epsilons or DEFAULT_EPSILONS[self.method]))
        if any(e < 0 for e in eps) or list(eps) != sorted(eps):
            raise ConfigError("epsilons must be non-negative and ascending")
        object.__setattr__(self, "epsilons", eps)

    def attack(self, epsilon: float) -> AttackConfig:
        return AttackConfig(self.method, epsilon, self.pgd_alpha, self.pgd_iters)


def _as_batch(images, labels):
    x = np.asarray(images, dtype=float)
    single = x.ndim == 2
    if single:
        x = x[None]
    y = np.atleast_1d(np.asarray(labels, dtype=int))
    if x.shape[0] != y.shape[0]:
        raise ArgumentError("images and labels differ in length")
    return x, y, single


def fgsm(model: Model, image, label, epsilon: float) -> np.ndarray:
    """``clip(x + eps * sign(dJ/dx), 0, 1)``."""
    x, y, single = _as_batch(image, label)
    if epsilon == 0:
        out = x.copy()
    else:
        out = np.clip(x + epsilon * np.sign(model.input_gradient(x, y)), 0.0, 1.0)
    return out[0] if single else out


def pgd(model: Model, image, label, cfg: AttackConfig) -> np.ndarray:
    """Iterated signed-gradient ascent projected onto the eps-box and [0, 1]."""
    x0, y, single = _as_batch(image, label)
    x = x0.copy()
    if cfg.epsilon > 0:
        lo = np.clip(x0 - cfg.epsilon, 0.0, 1.0)
        hi = np.clip(x0 + cfg.epsilon, 0.0, 1.0)
        for _ in range(cfg.pgd_iters):
            step = x + cfg.alpha * np.sign(model.input_gradient(x, y))
            x = np.clip(np.clip(step, x0 - cfg.epsilon, x0 + cfg.epsilon), 0.0, 1.0)
            # guard against rounding in x0 +/- eps
            x = np.minimum(np.maximum(x, lo), hi)
    return x[0] if single else x


def attack(model: Model, images, labels, cfg: AttackConfig | None) -> np.ndarray:
    if cfg is None:
        return np.array(images, dtype=float, copy=True)
    if cfg.method == FGSM:
        return fgsm(model, images, labels, cfg.epsilon)
    return pgd(model, images, labels, cfg)


def evaluate(model: Model, images, labels, attack_cfg: AttackConfig | None = None) -> float:
    """Accuracy on (optionally attacked) inputs, processed in fixed-size chunks."""
    x, y, _ = _as_batch(images, labels)
    if x.shape[0] == 0:
        raise ArgumentError("empty evaluation set")
    correct = 0
    for start in range(0, x.shape[0], EVAL_CHUNK):
        xb, yb = x[start : start + EVAL_CHUNK], y[start : start + EVAL_CHUNK]
        adv = attack(model, xb, yb, attack_cfg)
        correct += int(np.sum(model.predict(adv) == yb))
    return correct / x.shape[0]


def avg_gradient_magnitude(model: Model, images, labels) -> float:
    """Mean over images of the L2 norm of the flattened input gradient."""
    x, y, _ = _as_batch(images, labels)
    if x.shape[0] == 0:
        raise ArgumentError("empty evaluation set")
    norms = []
    for start in range(0, x.shape[0], EVAL_CHUNK):
        g = model.input_gradient(x[start : start + EVAL_CHUNK], y[start : start + EVAL_CHUNK])
        norms.append(np.sqrt(np.sum(g.reshape(g.shape[0], -1) ** 2, axis=1)))
    return float(np.mean(np.concatenate(norms)))
