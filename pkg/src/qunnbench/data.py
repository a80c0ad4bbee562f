"""IDX dataset ingestion (MNIST / Fashion-MNIST layout) and subsets.

Files may be raw or gzip-compressed; compression is detected from the
content, not the file name.
"""

from __future__ import annotations

import gzip
import hashlib
import json
import struct
from dataclasses import dataclass
from importlib import resources
from pathlib import Path

import numpy as np

from .errors import ArgumentError, IngestionError

IMAGES_MAGIC = 0x00000803
LABELS_MAGIC = 0x00000801

BUNDLED = {
    "mnist": "mnist-sample",
    "fmnist": "fmnist-sample",
}


@dataclass(frozen=True, eq=False)
class Dataset:
    images: np.ndarray  # (N, rows, cols) float64 in [0, 1]
    labels: np.ndarray  # (N,) int
    name: str = ""
    digest: str = ""

    def __len__(self):
        return len(self.labels)

    def __post_init__(self):
        if len(self.images) != len(self.labels):
            raise ArgumentError("images and labels differ in length")


def _read_bytes(path) -> bytes:
    raw = Path(path).read_bytes()
    if raw[:2] == b"\x1f\x8b":
        try:
            return gzip.decompress(raw)
        except (OSError, EOFError) as exc:
            raise IngestionError(f"{path}: corrupt gzip stream ({exc})") from None
    return raw


def _parse_images(raw: bytes, path) -> np.ndarray:
    if len(raw) < 16:
        raise IngestionError(f"{path}: truncated header", "header")
    magic, count, rows, cols = struct.unpack(">4I", raw[:16])
    if magic != IMAGES_MAGIC:
        raise IngestionError(f"{path}: expected 0x{IMAGES_MAGIC:08x}, got 0x{magic:08x}", "magic")
    expected = count * rows * cols
    if len(raw) - 16 != expected:
        raise IngestionError(f"{path}: {count}x{rows}x{cols} needs {expected} bytes, found {len(raw) - 16}", "pixels")
    return np.frombuffer(raw, dtype=np.uint8, offset=16).reshape(count, rows, cols)


def _parse_labels(raw: bytes, path) -> np.ndarray:
    if len(raw) < 8:
        raise IngestionError(f"{path}: truncated header", "header")
    magic, count = struct.unpack(">2I", raw[:8])
    if magic != LABELS_MAGIC:
        raise IngestionError(f"{path}: expected 0x{LABELS_MAGIC:08x}, got 0x{magic:08x}", "magic")
    if len(raw) - 8 != count:
        raise IngestionError(f"{path}: header says {count} labels, found {len(raw) - 8}", "labels")
    labels = np.frombuffer(raw, dtype=np.uint8, offset=8)
    if labels.size and labels.max() > 9:
        raise IngestionError(f"{path}: label {labels.max()} outside 0..9", "labels")
    return labels


def load_idx(images_path, labels_path, name: str = "") -> Dataset:
    """Load an IDX image/label pair; pixels are divided by 255."""
    img_raw = _read_bytes(images_path)
    lbl_raw = _read_bytes(labels_path)
    images = _parse_images(img_raw, images_path)
    labels = _parse_labels(lbl_raw, labels_path)
    if images.shape[0] != labels.shape[0]:
        raise IngestionError(f"{images.shape[0]} images vs {labels.shape[0]} labels", "count")
    digest = hashlib.sha256(img_raw + lbl_raw).hexdigest()
    return Dataset(images.astype(np.float64) / 255.0, labels.astype(np.int64), name, digest)


def write_idx(images_path, labels_path, images: np.ndarray, labels: np.ndarray, compress: bool = True):
    """Write uint8 images ``(N, rows, cols)`` and labels as an IDX pair."""
    images = np.asarray(images)
    labels = np.asarray(labels)
    if images.dtype != np.uint8 or labels.dtype != np.uint8:
        raise ArgumentError("IDX payloads must be uint8")
    n, rows, cols = images.shape
    img = struct.pack(">4I", IMAGES_MAGIC, n, rows, cols) + images.tobytes()
    lbl = struct.pack(">2I", LABELS_MAGIC, labels.shape[0]) + labels.tobytes()
    for path, payload in ((images_path, img), (labels_path, lbl)):
        Path(path).parent.mkdir(parents=True, exist_ok=True)
        # mtime=0 keeps the compressed bytes reproducible
        data = gzip.compress(payload, mtime=0) if compress else payload
        Path(path).write_bytes(data)


def subset(ds: Dataset, n: int, seed) -> Dataset:
    """First ``n`` items of a seeded uniform shuffle."""
    if not 0 < n <= len(ds):
        raise ArgumentError(f"cannot take {n} items from a dataset of {len(ds)}")
    idx = np.random.default_rng(seed).permutation(len(ds))[:n]
    tag = hashlib.sha256(f"{ds.digest}:{n}:{seed}".encode()).hexdigest()
    return Dataset(ds.images[idx], ds.labels[idx], ds.name, tag)


def bundled_paths(name: str, split: str):
    """(images, labels) paths of a bundled sample, e.g. ``("mnist", "train")``."""
    if name not in BUNDLED:
        raise ArgumentError(f"no bundled dataset {name!r}; choose from {sorted(BUNDLED)}")
    if split not in ("train", "test"):
        raise ArgumentError("split must be 'train' or 'test'")
    root = resources.files("qunnbench.datasets").joinpath(BUNDLED[name])
    prefix = "train" if split == "train" else "t10k"
    return (
        Path(str(root.joinpath(f"{prefix}-images-idx3-ubyte.gz"))),
        Path(str(root.joinpath(f"{prefix}-labels-idx1-ubyte.gz"))),
    )


def load_bundled(name: str, split: str) -> Dataset:
    images, labels = bundled_paths(name, split)
    return load_idx(images, labels, f"{name}-{split}")


def read_npm_json(directory, scale: float) -> tuple[np.ndarray, np.ndarray]:
    """Read ``<directory>/<digit>.json`` files holding ``{"data": [...]}``.

    Used to rebuild IDX files from the ``mnist`` (``scale=255``, values
    stored as v/255 rounded to 3 decimals) and ``fashion-mnist``
    (``scale=1``, raw bytes) npm packages.
    """
    images, labels = [], []
    for cls in range(10):
        doc = json.loads((Path(directory) / f"{cls}.json").read_text())
        records = doc["data"]
        if records and isinstance(records[0], list):
            # one list per image; the fashion bundle holds a few empty entries
            records = [r for r in records if r]
        arr = np.asarray(records, dtype=float).reshape(-1, 28, 28)
        byte = np.rint(arr * scale)
        if np.abs(byte - arr * scale).max() > 0.25 or byte.min() < 0 or byte.max() > 255:
            raise IngestionError(f"class {cls}: values do not map onto bytes", "data")
        images.append(byte.astype(np.uint8))
        labels.append(np.full(len(arr), cls, dtype=np.uint8))
    return np.concatenate(images), np.concatenate(labels)


def split_pool(images, labels, n_test_per_class: int, n_train_per_class: int | None, seed: int = 0):
    """Deterministic per-class train/test split of a labelled pool."""
    rng = np.random.default_rng(seed)
    train_idx, test_idx = [], []
    for cls in range(10):
        idx = rng.permutation(np.flatnonzero(labels == cls))
        test_idx.append(idx[:n_test_per_class])
        rest = idx[n_test_per_class:]
        train_idx.append(rest if n_train_per_class is None else rest[:n_train_per_class])
    tr = rng.permutation(np.concatenate(train_idx))
    te = rng.permutation(np.concatenate(test_idx))
    return (images[tr], labels[tr]), (images[te], labels[te])
