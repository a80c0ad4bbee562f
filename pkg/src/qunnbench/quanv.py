"""Quanvolutional feature extraction.

Each ``k x k`` patch is angle-encoded (``RY(scale * pixel)`` on qubit
``row * k + col``), passed through the fixed ansatz, and read out as one
``<Z>`` value per qubit, giving ``k*k`` channels.

For throughput the bound ansatz is compiled once into its unitary ``U``
and the observables ``M_k = U^dagger Z_k U``.  Angle-encoded states are
real, so each feature is the real quadratic form ``psi^T Re(M_k) psi``.
:func:`quanv_features` on a single image goes through the same compiled
path; the tests check it against the plain simulator.
"""

from __future__ import annotations

import hashlib
import json
import os
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import qsim
from .circuits import CircuitSpec, _as_rng, repeat_layers, sample_params, unitary
from .errors import ArgumentError, CacheError, ConfigError
from .qsim import StateVector

CODE_VERSION = "qunnbench-features-1"
CACHE_MAGIC = b"QNVF"
CACHE_VERSION = 1
_HEADER = struct.Struct(">4sH4I32s")


def _check_pixels(x: np.ndarray, what: str = "pixel"):
    if x.size and (np.nanmin(x) < 0.0 or np.nanmax(x) > 1.0 or np.isnan(x).any()):
        raise ArgumentError(f"{what} values must lie in [0, 1]")


def extract_patches(image, kernel: int = 2, stride: int = 2) -> np.ndarray:
    """Grid of flattened patches, shape ``(rows, cols, kernel * kernel)``.

    Patch ``(r, c)`` covers rows ``[r*stride, r*stride + kernel)`` and the
    same column range; within a patch pixels are flattened row-major.
    """
    img = np.asarray(image, dtype=float)
    if img.ndim != 2:
        raise ArgumentError("image must be 2-D")
    h, w = img.shape
    if kernel < 1 or stride < 1 or h < kernel or w < kernel:
        raise ArgumentError(f"kernel {kernel} does not fit a {h}x{w} image")
    if (h - kernel) % stride or (w - kernel) % stride:
        raise ArgumentError(f"({h}, {w}) - kernel {kernel} is not divisible by stride {stride}")
    rows = (h - kernel) // stride + 1
    cols = (w - kernel) // stride + 1
    r = np.arange(rows)[:, None, None, None] * stride + np.arange(kernel)[None, None, :, None]
    c = np.arange(cols)[None, :, None, None] * stride + np.arange(kernel)[None, None, None, :]
    return img[r, c].reshape(rows, cols, kernel * kernel)


def _patches_batch(images: np.ndarray, kernel: int, stride: int) -> np.ndarray:
    return np.stack([extract_patches(im, kernel, stride) for im in images])


def _scatter_patches(grad: np.ndarray, shape, kernel: int, stride: int) -> np.ndarray:
    """Adjoint of patch extraction: sum patch gradients back onto pixels."""
    batch, rows, cols, _ = grad.shape
    out = np.zeros((batch,) + tuple(shape))
    g = grad.reshape(batch, rows, cols, kernel, kernel)
    for i in range(kernel):
        for j in range(kernel):
            out[:, i : i + stride * rows : stride, j : j + stride * cols : stride] += g[:, :, :, i, j]
    return out


def encode_patch(patch, scale: float = np.pi) -> StateVector:
    """``RY(scale * patch[k])`` on qubit ``k`` of ``|0...0>``."""
    values = np.asarray(patch, dtype=float).reshape(-1)
    _check_pixels(values)
    state = qsim.zero_state(len(values))
    for k, v in enumerate(values):
        state = qsim.apply_gate(state, "RY", k, theta=scale * v)
    return state


def encoded_states(angles: np.ndarray) -> np.ndarray:
    """Real product states for RY angles, shape ``(B, n) -> (B, 2**n)``."""
    angles = np.asarray(angles, dtype=float)
    batch, n = angles.shape
    cos, sin = np.cos(angles / 2), np.sin(angles / 2)
    psi = np.ones((batch, 1))
    # qubit n-1 is the most significant bit, so it is the outermost factor
    for k in range(n - 1, -1, -1):
        factor = np.stack([cos[:, k], sin[:, k]], axis=1)
        psi = (psi[:, :, None] * factor[:, None, :]).reshape(batch, -1)
    return psi


@dataclass(frozen=True, eq=False)
class QuanvConfig:
    """Fixed quanvolutional filter. ``ansatz_params`` binds the layered ansatz."""

    ansatz: CircuitSpec
    ansatz_params: np.ndarray
    kernel: int = 2
    stride: int = 2
    encode_scale: float = np.pi
    layers: int = 1
    circuit: CircuitSpec = field(init=False, repr=False)

    def __post_init__(self):
        if self.kernel * self.kernel != self.ansatz.n_qubits:
            raise ConfigError(
                f"kernel {self.kernel} needs {self.kernel ** 2} qubits, ansatz has {self.ansatz.n_qubits}"
            )
        if self.stride < 1:
            raise ConfigError("stride must be >= 1")
        circuit = repeat_layers(self.ansatz, self.layers)
        params = np.array(self.ansatz_params, dtype=float).reshape(-1)
        if params.shape[0] != circuit.n_params:
            raise ConfigError(f"ansatz_params has {params.shape[0]} values, circuit needs {circuit.n_params}")
        params.flags.writeable = False
        object.__setattr__(self, "ansatz_params", params)
        object.__setattr__(self, "circuit", circuit)

    @classmethod
    def sampled(cls, ansatz: CircuitSpec, rng, **kw) -> "QuanvConfig":
        """Draw the frozen filter parameters from ``rng``."""
        layers = kw.get("layers", 1)
        params = sample_params(repeat_layers(ansatz, layers), _as_rng(rng))
        return cls(ansatz, params, **kw)

    def describe(self) -> dict:
        return {
            "kind": "quanv",
            "ansatz": self.ansatz.to_dict(),
            "ansatz_params": [float(v) for v in self.ansatz_params],
            "kernel": self.kernel,
            "stride": self.stride,
            "encode_scale": float(self.encode_scale),
            "layers": self.layers,
        }

    def digest(self) -> str:
        text = json.dumps(self.describe(), sort_keys=True)
        return hashlib.sha256(f"{CODE_VERSION}\n{text}".encode()).hexdigest()


class QuanvFilter:
    """Compiled evaluator for one :class:`QuanvConfig`."""

    def __init__(self, cfg: QuanvConfig):
        self.cfg = cfg
        n = cfg.circuit.n_qubits
        u = unitary(cfg.circuit, cfg.ansatz_params)
        obs = []
        for k in range(n):
            zk = qsim.z_signs(n, k)
            obs.append(np.real(u.conj().T @ (zk[:, None] * u)))
        self._obs = np.ascontiguousarray(np.stack(obs))
        self.n_channels = n

    def describe(self) -> dict:
        return self.cfg.describe()

    def digest(self) -> str:
        return self.cfg.digest()

    def evaluate_angles(self, angles: np.ndarray) -> np.ndarray:
        """``<Z_k>`` after encoding ``angles`` (shape ``(M, n)``), shape ``(M, n)``."""
        psi = encoded_states(angles)
        return np.einsum("bi,kij,bj->bk", psi, self._obs, psi, optimize=False)

    def patch_features(self, patches: np.ndarray) -> np.ndarray:
        return self.evaluate_angles(self.cfg.encode_scale * np.asarray(patches, dtype=float))

    def patch_jacobians(self, patches: np.ndarray) -> np.ndarray:
        """Parameter-shift Jacobians ``d<Z_k>/d pixel_p``, shape ``(M, n, n)``."""
        scale = self.cfg.encode_scale
        theta = scale * np.asarray(patches, dtype=float)
        m, n = theta.shape
        jac = np.empty((m, n, n))
        for p in range(n):
            shifted = theta.copy()
            shifted[:, p] += np.pi / 2
            plus = self.evaluate_angles(shifted)
            shifted[:, p] -= np.pi
            minus = self.evaluate_angles(shifted)
            jac[:, :, p] = scale * 0.5 * (plus - minus)
        return jac

    def features(self, images: np.ndarray) -> np.ndarray:
        """Feature maps for a batch ``(B, H, W)`` -> ``(B, rows, cols, n)``."""
        images = np.asarray(images, dtype=float)
        _check_pixels(images)
        k, s = self.cfg.kernel, self.cfg.stride
        patches = _patches_batch(images, k, s)
        flat = self.patch_features(patches.reshape(-1, k * k))
        return flat.reshape(patches.shape[:3] + (self.n_channels,))

    def vjp(self, images: np.ndarray, grad_features: np.ndarray) -> np.ndarray:
        """Pull ``dJ/dF`` back to ``dJ/dx`` through the patch Jacobians."""
        images = np.asarray(images, dtype=float)
        k, s = self.cfg.kernel, self.cfg.stride
        patches = _patches_batch(images, k, s)
        jac = self.patch_jacobians(patches.reshape(-1, k * k))
        g = np.asarray(grad_features, dtype=float).reshape(-1, self.n_channels)
        gp = np.einsum("mk,mkp->mp", g, jac, optimize=False)
        return _scatter_patches(gp.reshape(patches.shape), images.shape[1:], k, s)


def quanv_features(image, cfg: QuanvConfig) -> np.ndarray:
    """Feature tensor ``(rows, cols, channels)`` for one image."""
    return QuanvFilter(cfg).features(np.asarray(image, dtype=float)[None])[0]


def quanv_patch_jacobian(patch, cfg: QuanvConfig) -> np.ndarray:
    """4x4 (in general ``n x n``) matrix of ``d F_k / d pixel_p`` via parameter shift."""
    values = np.asarray(patch, dtype=float).reshape(1, -1)
    _check_pixels(values)
    return QuanvFilter(cfg).patch_jacobians(values)[0]


def features_digest(dataset_id: str, backend_digest: str) -> bytes:
    """32-byte cache key for one (dataset slice, backend) pair."""
    return hashlib.sha256(f"{CODE_VERSION}\n{dataset_id}\n{backend_digest}".encode()).digest()


def save_features(path, tensors: np.ndarray, digest: bytes) -> None:
    """Write a QNVF file atomically (temp file + rename)."""
    tensors = np.asarray(tensors, dtype="<f8")
    if tensors.ndim != 4:
        raise ArgumentError("feature tensors must have shape (n, h, w, c)")
    if len(digest) != 32:
        raise ArgumentError("digest must be 32 bytes")
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + f".tmp{os.getpid()}")
    with open(tmp, "wb") as f:
        f.write(_HEADER.pack(CACHE_MAGIC, CACHE_VERSION, *tensors.shape, digest))
        f.write(np.ascontiguousarray(tensors).tobytes())
    os.replace(tmp, path)


def read_features_header(path):
    with open(path, "rb") as f:
        raw = f.read(_HEADER.size)
    if len(raw) != _HEADER.size:
        raise CacheError(f"{path}: truncated header")
    magic, version, n, h, w, c, digest = _HEADER.unpack(raw)
    if magic != CACHE_MAGIC:
        raise CacheError(f"{path}: bad magic {magic!r}")
    if version != CACHE_VERSION:
        raise CacheError(f"{path}: unsupported version {version}")
    return (n, h, w, c), digest


def load_features(path, digest: bytes | None = None) -> np.ndarray | None:
    """Read a QNVF file; ``None`` if ``digest`` is given and does not match."""
    shape, stored = read_features_header(path)
    if digest is not None and stored != digest:
        return None
    count = int(np.prod(shape))
    data = np.fromfile(path, dtype="<f8", offset=_HEADER.size)
    if data.size != count:
        raise CacheError(f"{path}: expected {count} values, found {data.size}")
    return data.reshape(shape).astype(float)


class FeatureCache:
    """Directory of QNVF files keyed by (dataset slice, backend digest)."""

    def __init__(self, directory):
        self.directory = Path(directory)

    def path_for(self, dataset_id: str, backend_digest: str) -> Path:
        key = features_digest(dataset_id, backend_digest).hex()[:24]
        return self.directory / f"{key}.qnvf"

    def get(self, dataset_id: str, backend_digest: str):
        path = self.path_for(dataset_id, backend_digest)
        if not path.exists():
            return None
        return load_features(path, features_digest(dataset_id, backend_digest))

    def put(self, dataset_id: str, backend_digest: str, tensors: np.ndarray) -> Path:
        path = self.path_for(dataset_id, backend_digest)
        save_features(path, tensors, features_digest(dataset_id, backend_digest))
        return path

    def get_or_compute(self, dataset_id: str, backend, images: np.ndarray) -> np.ndarray:
        digest = backend.digest()
        cached = self.get(dataset_id, digest)
        if cached is not None:
            return cached
        tensors = backend.features(images)
        self.put(dataset_id, digest, tensors)
        return tensors
