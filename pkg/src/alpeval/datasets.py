"""Deterministic synthetic datasets and IDX ingestion."""

from __future__ import annotations

import csv
import io
import math
import os
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .network import Example
from .rng import Xoshiro256

IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801


class IdxError(ValueError):
    """Malformed IDX file."""


class BadMagicError(IdxError):
    pass


class TruncatedPayloadError(IdxError):
    pass


class CountMismatchError(IdxError):
    pass


@dataclass(frozen=True, eq=False)
class Dataset:
    """Inputs ``X`` (one row per example, entries in [0, 1]) with integer labels ``y``."""

    X: np.ndarray
    y: np.ndarray
    num_classes: int
    name: str = ""
    seed: int = 0

    def __post_init__(self) -> None:
        X = np.array(self.X, dtype=np.float64, copy=True)
        y = np.array(self.y, dtype=np.int64, copy=True)
        if X.ndim != 2 or y.ndim != 1 or X.shape[0] != y.shape[0]:
            raise ValueError(f"inconsistent shapes X{X.shape} y{y.shape}")
        if self.num_classes < 2:
            raise ValueError("num_classes must be >= 2")
        if y.size and (y.min() < 0 or y.max() >= self.num_classes):
            raise ValueError("label out of range")
        if X.size and (X.min() < 0.0 or X.max() > 1.0 or not np.all(np.isfinite(X))):
            raise ValueError("inputs must lie in [0, 1]")
        X.setflags(write=False)
        y.setflags(write=False)
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "y", y)

    def __len__(self) -> int:
        return self.X.shape[0]

    @property
    def dim(self) -> int:
        return self.X.shape[1]

    @property
    def examples(self) -> list[Example]:
        return [Example(x, int(c)) for x, c in zip(self.X, self.y)]

    def subset(self, indices, name: str | None = None) -> "Dataset":
        idx = np.asarray(indices, dtype=np.int64)
        return Dataset(self.X[idx], self.y[idx], self.num_classes, name or self.name, self.seed)

    def head(self, n: int) -> "Dataset":
        return self.subset(np.arange(min(n, len(self))))

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["label"] + [f"x{i}" for i in range(self.dim)])
        for x, c in zip(self.X, self.y):
            w.writerow([int(c)] + [repr(float(v)) for v in x])
        return buf.getvalue()


def blob_centers(dim: int, num_classes: int) -> np.ndarray:
    """Class centers inside [0.2, 0.8]^dim.

    In one dimension the centers are evenly spaced. Otherwise class ``k`` sits
    at ``0.5 + 0.3 * cos(2*pi*k/K + pi*j/dim)`` in coordinate ``j``; the first two
    coordinates trace a circle, so the centers are distinct.
    """
    if dim == 1:
        return np.linspace(0.2, 0.8, num_classes)[:, None]
    k = np.arange(num_classes)[:, None]
    j = np.arange(dim)[None, :]
    return 0.5 + 0.3 * np.cos(2.0 * np.pi * k / num_classes + np.pi * j / dim)


def gen_gaussian_blobs(n_per_class: int, dim: int, num_classes: int, spread: float, seed: int) -> Dataset:
    """Isotropic Gaussian blobs (std ``spread``) clipped to [0, 1].

    Samples are drawn class by class, coordinate by coordinate, so example
    ``i`` of class ``k`` is row ``k * n_per_class + i``.
    """
    if n_per_class < 1 or dim < 1 or num_classes < 2:
        raise ValueError("need n_per_class >= 1, dim >= 1, num_classes >= 2")
    if not spread > 0:
        raise ValueError("spread must be positive")
    rng = Xoshiro256(seed)
    centers = blob_centers(dim, num_classes)
    noise = rng.normal_array(n_per_class * num_classes * dim, std=spread)
    X = np.repeat(centers, n_per_class, axis=0) + noise.reshape(-1, dim)
    y = np.repeat(np.arange(num_classes), n_per_class)
    return Dataset(np.clip(X, 0.0, 1.0), y, num_classes, "blobs", seed)


SPIRAL_TURNS = 1.0
SPIRAL_START_RADIUS = 0.4
SPIRAL_LOW, SPIRAL_HIGH = 0.1, 0.9


def spiral_point(t: float, cls: int) -> tuple[float, float]:
    """Noise-free point at parameter ``t`` in [0, 1] of spiral ``cls`` (0 or 1).

    Radius grows linearly with the angle from 0.4 to 1; spiral 1 is spiral 0
    rotated by pi. The unit disc is mapped affinely onto [0.1, 0.9]^2, so an
    epsilon-ball of radius 16/255 around a noise-free point never meets the
    domain boundary.
    """
    r = SPIRAL_START_RADIUS + (1.0 - SPIRAL_START_RADIUS) * t
    theta = 2.0 * math.pi * SPIRAL_TURNS * t + math.pi * cls
    half = (SPIRAL_HIGH - SPIRAL_LOW) / 2.0
    mid = (SPIRAL_HIGH + SPIRAL_LOW) / 2.0
    return mid + half * r * math.cos(theta), mid + half * r * math.sin(theta)


def gen_two_spirals(n_per_class: int, noise: float, seed: int) -> Dataset:
    """Two interleaved spirals; point ``i`` of each class uses ``t = i / (n - 1)``.

    Gaussian noise with std ``noise`` is added per coordinate and the result
    clipped to [0, 1].
    """
    if n_per_class < 1:
        raise ValueError("n_per_class must be >= 1")
    if noise < 0:
        raise ValueError("noise must be non-negative")
    rng = Xoshiro256(seed)
    rows, labels = [], []
    for cls in (0, 1):
        for i in range(n_per_class):
            t = i / (n_per_class - 1) if n_per_class > 1 else 0.0
            px, py = spiral_point(t, cls)
            if noise > 0:
                px += rng.normal(0.0, noise)
                py += rng.normal(0.0, noise)
            rows.append((px, py))
            labels.append(cls)
    X = np.clip(np.array(rows, dtype=np.float64), 0.0, 1.0)
    return Dataset(X, np.array(labels), 2, "spirals", seed)


def _read_idx(path: str | os.PathLike, magic: int, what: str) -> tuple[list[int], bytes]:
    blob = Path(path).read_bytes()
    if len(blob) < 4:
        raise TruncatedPayloadError(f"{what}: file shorter than the magic number")
    (got,) = struct.unpack(">I", blob[:4])
    if got != magic:
        raise BadMagicError(f"bad magic in {what} file: 0x{got:08x}, expected 0x{magic:08x}")
    ndim = magic & 0xFF
    if len(blob) < 4 + 4 * ndim:
        raise TruncatedPayloadError(f"{what}: truncated dimension header")
    dims = list(struct.unpack(f">{ndim}I", blob[4 : 4 + 4 * ndim]))
    payload = blob[4 + 4 * ndim :]
    expected = math.prod(dims)
    if len(payload) < expected:
        raise TruncatedPayloadError(f"{what}: payload has {len(payload)} bytes, expected {expected}")
    return dims, payload[:expected]


def load_idx(images_path: str | os.PathLike, labels_path: str | os.PathLike, num_classes: int | None = None) -> Dataset:
    """Load an IDX image/label pair (unsigned bytes), scaling pixels by 1/255.

    ``num_classes`` defaults to ``max(label) + 1`` (at least 2).
    """
    dims, pixels = _read_idx(images_path, IDX_IMAGES_MAGIC, "images")
    (n_labels,), labels = _read_idx(labels_path, IDX_LABELS_MAGIC, "labels")
    n_images = dims[0]
    if n_images != n_labels:
        raise CountMismatchError(f"{n_images} images but {n_labels} labels")
    X = np.frombuffer(pixels, dtype=np.uint8).reshape(n_images, -1).astype(np.float64) / 255.0
    y = np.frombuffer(labels, dtype=np.uint8).astype(np.int64)
    k = num_classes if num_classes is not None else max(2, int(y.max()) + 1 if y.size else 2)
    return Dataset(X, y, k, f"idx:{Path(images_path).name}", 0)


def split(ds: Dataset, train_fraction: float, seed: int) -> tuple[Dataset, Dataset]:
    """Shuffle with ``seed`` and cut at ``round(train_fraction * n)``."""
    if not 0.0 < train_fraction < 1.0:
        raise ValueError(f"train_fraction must be in (0, 1), got {train_fraction}")
    n = len(ds)
    perm = Xoshiro256(seed).permutation(n)
    cut = int(round(train_fraction * n))
    return ds.subset(perm[:cut], f"{ds.name}/train"), ds.subset(perm[cut:], f"{ds.name}/test")
