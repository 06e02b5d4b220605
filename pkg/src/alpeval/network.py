"""Minimal differentiable feed-forward classifier.

Tensors are plain float64 numpy arrays. A single input is a 1-D array of
length ``input_dim``; most internal routines also accept a 2-D batch with one
example per row. Weights are stored ``(fan_in, fan_out)`` so that
``logits = x @ W + b``.
"""

from __future__ import annotations

import json
import os
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .rng import Xoshiro256

ACTIVATIONS = ("relu",)
CHECKPOINT_MAGIC = b"ALPEVAL1"
CHECKPOINT_FORMAT = 1


class DimensionError(ValueError):
    """Input or tensor shapes do not agree with the model."""


class CheckpointError(Exception):
    """A checkpoint could not be read or does not match what was expected."""


@dataclass(frozen=True)
class ModelSpec:
    input_dim: int
    hidden_layers: tuple[tuple[int, str], ...] = ()
    num_classes: int = 2

    def __post_init__(self) -> None:
        layers = tuple((int(w), str(a)) for w, a in self.hidden_layers)
        object.__setattr__(self, "hidden_layers", layers)
        if int(self.input_dim) < 1:
            raise ValueError(f"input_dim must be positive, got {self.input_dim}")
        if int(self.num_classes) < 2:
            raise ValueError(f"num_classes must be >= 2, got {self.num_classes}")
        for width, act in layers:
            if width < 1:
                raise ValueError(f"hidden width must be positive, got {width}")
            if act not in ACTIVATIONS:
                raise ValueError(f"unsupported activation {act!r}")

    @classmethod
    def mlp(cls, input_dim: int, hidden: Sequence[int], num_classes: int) -> "ModelSpec":
        return cls(input_dim, tuple((w, "relu") for w in hidden), num_classes)

    @property
    def layer_shapes(self) -> list[tuple[int, int]]:
        dims = [self.input_dim] + [w for w, _ in self.hidden_layers] + [self.num_classes]
        return list(zip(dims[:-1], dims[1:]))

    def to_dict(self) -> dict:
        return {
            "input_dim": self.input_dim,
            "hidden_layers": [[w, a] for w, a in self.hidden_layers],
            "num_classes": self.num_classes,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ModelSpec":
        return cls(int(d["input_dim"]), tuple((int(w), a) for w, a in d["hidden_layers"]), int(d["num_classes"]))


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.array(a, dtype=np.float64, copy=True)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class Parameters:
    """Weights and biases of a :class:`ModelSpec` network.

    Instances are read-only; updates build new objects. Gradients with
    respect to the parameters are returned in this same container.
    """

    spec: ModelSpec
    weights: tuple[np.ndarray, ...]
    biases: tuple[np.ndarray, ...]
    seed: int | None = field(default=None)

    def __post_init__(self) -> None:
        shapes = self.spec.layer_shapes
        if len(self.weights) != len(shapes) or len(self.biases) != len(shapes):
            raise DimensionError(f"expected {len(shapes)} layers, got {len(self.weights)} weights / {len(self.biases)} biases")
        ws = tuple(_frozen(w) for w in self.weights)
        bs = tuple(_frozen(b) for b in self.biases)
        for i, ((fan_in, fan_out), w, b) in enumerate(zip(shapes, ws, bs)):
            if w.shape != (fan_in, fan_out) or b.shape != (fan_out,):
                raise DimensionError(f"layer {i}: weight {w.shape} / bias {b.shape} do not match ({fan_in}, {fan_out})")
            if not (np.all(np.isfinite(w)) and np.all(np.isfinite(b))):
                raise ValueError(f"layer {i} has non-finite entries")
        object.__setattr__(self, "weights", ws)
        object.__setattr__(self, "biases", bs)

    def arrays(self) -> list[np.ndarray]:
        """All arrays in checkpoint order: W0, b0, W1, b1, ..."""
        out = []
        for w, b in zip(self.weights, self.biases):
            out.extend((w, b))
        return out

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, Parameters):
            return NotImplemented
        return self.spec == other.spec and all(
            a.shape == b.shape and a.tobytes() == b.tobytes() for a, b in zip(self.arrays(), other.arrays())
        )

    __hash__ = None  # type: ignore[assignment]

    def to_bytes(self) -> bytes:
        return b"".join(a.astype("<f8").tobytes() for a in self.arrays())

    def sgd_step(self, grads: "Parameters", learning_rate: float) -> "Parameters":
        """Return ``self - learning_rate * grads``."""
        return Parameters(
            self.spec,
            tuple(w - learning_rate * g for w, g in zip(self.weights, grads.weights)),
            tuple(b - learning_rate * g for b, g in zip(self.biases, grads.biases)),
            self.seed,
        )

    def __add__(self, other: "Parameters") -> "Parameters":
        return Parameters(
            self.spec,
            tuple(a + b for a, b in zip(self.weights, other.weights)),
            tuple(a + b for a, b in zip(self.biases, other.biases)),
            self.seed,
        )

    def norm(self) -> float:
        return float(np.sqrt(sum(float(np.sum(a * a)) for a in self.arrays())))


@dataclass(frozen=True)
class Example:
    x: np.ndarray
    y: int

    def __post_init__(self) -> None:
        x = np.asarray(self.x, dtype=np.float64)
        if x.ndim != 1:
            raise DimensionError("example input must be 1-D")
        if np.any(x < 0.0) or np.any(x > 1.0) or not np.all(np.isfinite(x)):
            raise ValueError("example entries must lie in [0, 1]")
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "y", int(self.y))


def init_params(spec: ModelSpec, seed: int) -> Parameters:
    """Scaled-uniform initialisation: W ~ U(-1/sqrt(fan_in), 1/sqrt(fan_in)), b = 0.

    Weights are drawn layer by layer in row-major order from one
    :class:`~alpeval.rng.Xoshiro256` stream seeded with ``seed``.
    """
    rng = Xoshiro256(seed)
    weights, biases = [], []
    for fan_in, fan_out in spec.layer_shapes:
        scale = 1.0 / np.sqrt(fan_in)
        weights.append(rng.uniform_array(-scale, scale, fan_in * fan_out).reshape(fan_in, fan_out))
        biases.append(np.zeros(fan_out))
    return Parameters(spec, tuple(weights), tuple(biases), seed)


def _as_batch(params: Parameters, x: np.ndarray) -> tuple[np.ndarray, bool]:
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    X = x[None, :] if single else x
    if X.ndim != 2 or X.shape[1] != params.spec.input_dim:
        raise DimensionError(f"input shape {x.shape} does not match input_dim={params.spec.input_dim}")
    return X, single


def forward_cache(params: Parameters, X: np.ndarray) -> tuple[np.ndarray, list[np.ndarray]]:
    """Batched forward pass keeping the layer inputs needed by :func:`backward`.

    Returns:
        ``(logits, layer_inputs)`` where ``layer_inputs[i]`` is the input to
        layer ``i`` (post-activation of layer ``i - 1``).
    """
    h = X
    inputs = []
    last = len(params.weights) - 1
    for i, (w, b) in enumerate(zip(params.weights, params.biases)):
        inputs.append(h)
        z = h @ w + b
        h = z if i == last else np.maximum(z, 0.0)
    return h, inputs


def backward(
    params: Parameters, inputs: list[np.ndarray], dlogits: np.ndarray, need_params: bool = True
) -> tuple[Parameters | None, np.ndarray]:
    """Back-propagate ``dlogits`` (one row per example) through the network.

    Parameter gradients are summed over rows; scale ``dlogits`` beforehand to
    get a mean.
    """
    g = dlogits
    dws: list[np.ndarray] = []
    dbs: list[np.ndarray] = []
    for i in range(len(params.weights) - 1, -1, -1):
        h = inputs[i]
        if need_params:
            dws.append(h.T @ g)
            dbs.append(g.sum(axis=0))
        g = g @ params.weights[i].T
        if i > 0:
            g = g * (h > 0.0)
    grads = None
    if need_params:
        grads = Parameters(params.spec, tuple(reversed(dws)), tuple(reversed(dbs)))
    return grads, g


def forward_logits(params: Parameters, x: np.ndarray) -> np.ndarray:
    X, single = _as_batch(params, x)
    logits, _ = forward_cache(params, X)
    return logits[0] if single else logits


def log_softmax(logits: np.ndarray) -> np.ndarray:
    z = np.asarray(logits, dtype=np.float64)
    shifted = z - z.max(axis=-1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))


def softmax(logits: np.ndarray) -> np.ndarray:
    z = np.asarray(logits, dtype=np.float64)
    e = np.exp(z - z.max(axis=-1, keepdims=True))
    return e / e.sum(axis=-1, keepdims=True)


def xent_rows(logits: np.ndarray, labels: np.ndarray) -> np.ndarray:
    """Per-row cross-entropy ``-log softmax(logits)[label]``."""
    z = np.asarray(logits, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    m = z.max(axis=1)
    rows = np.arange(z.shape[0])
    # log(sum exp(z - m)) - (z_y - m): exact log(K) on uniform logits
    return np.log(np.exp(z - m[:, None]).sum(axis=1)) - (z[rows, labels] - m)


def xent_grad_rows(logits: np.ndarray, labels: np.ndarray) -> np.ndarray:
    """Gradient of each row's cross-entropy with respect to that row's logits."""
    g = softmax(logits)
    g[np.arange(g.shape[0]), np.asarray(labels, dtype=np.int64)] -= 1.0
    return g


def loss_xent(logits: np.ndarray, label: int) -> float:
    z = np.asarray(logits, dtype=np.float64)
    if z.ndim != 1:
        raise DimensionError("loss_xent takes a single logit vector")
    if not 0 <= label < z.shape[0]:
        raise ValueError(f"label {label} out of range for {z.shape[0]} classes")
    return float(xent_rows(z[None, :], np.array([label]))[0])


def input_gradients(params: Parameters, X: np.ndarray, labels: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Per-row losses and input gradients for a batch."""
    logits, inputs = forward_cache(params, X)
    _, dX = backward(params, inputs, xent_grad_rows(logits, labels), need_params=False)
    return xent_rows(logits, labels), dX


def grad_input(params: Parameters, ex: Example, label_for_loss: int) -> np.ndarray:
    """Exact gradient of ``loss_xent(forward_logits(params, x), label_for_loss)`` w.r.t. ``x``."""
    X, _ = _as_batch(params, ex.x)
    if not 0 <= label_for_loss < params.spec.num_classes:
        raise ValueError(f"label {label_for_loss} out of range")
    _, dX = input_gradients(params, X, np.array([label_for_loss]))
    return dX[0]


def mean_xent_and_grads(params: Parameters, X: np.ndarray, labels: np.ndarray) -> tuple[float, Parameters]:
    """Mean cross-entropy over the rows of ``X`` and its parameter gradient."""
    logits, inputs = forward_cache(params, X)
    n = X.shape[0]
    grads, _ = backward(params, inputs, xent_grad_rows(logits, labels) / n)
    return float(xent_rows(logits, labels).mean()), grads


def grad_params(params: Parameters, batch: Sequence[tuple[Example, int]]) -> Parameters:
    """Mean parameter gradient of the cross-entropy over ``(example, label)`` pairs."""
    if len(batch) == 0:
        raise ValueError("empty batch")
    X = np.stack([ex.x for ex, _ in batch])
    X, _ = _as_batch(params, X)
    labels = np.array([lab for _, lab in batch], dtype=np.int64)
    _, grads = mean_xent_and_grads(params, X, labels)
    return grads


def logit_distance(a: np.ndarray, b: np.ndarray, kind: str = "squared") -> float:
    """Distance between logit vectors: squared Euclidean (default) or Euclidean."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise DimensionError(f"length mismatch: {a.shape} vs {b.shape}")
    sq = float(np.sum((a - b) ** 2))
    if kind == "squared":
        return sq
    if kind == "euclidean":
        return float(np.sqrt(sq))
    raise ValueError(f"unknown distance {kind!r}")


def predict(params: Parameters, x: np.ndarray) -> int | np.ndarray:
    """Argmax class; ties go to the lowest index."""
    logits = forward_logits(params, x)
    return int(np.argmax(logits)) if logits.ndim == 1 else np.argmax(logits, axis=1)


def save_checkpoint(params: Parameters, path: str | os.PathLike) -> None:
    """Write ``params`` in the ALPEVAL1 format (atomic replace)."""
    header = json.dumps(
        {"format": CHECKPOINT_FORMAT, "spec": params.spec.to_dict(), "seed": params.seed},
        sort_keys=True,
    ).encode("utf-8")
    blob = CHECKPOINT_MAGIC + struct.pack("<I", len(header)) + header + params.to_bytes()
    path = Path(path)
    tmp = path.with_name(path.name + ".part")
    tmp.write_bytes(blob)
    os.replace(tmp, path)


def load_checkpoint(path: str | os.PathLike, expected_spec: ModelSpec | None = None) -> Parameters:
    """Read a checkpoint written by :func:`save_checkpoint`.

    Raises:
        OSError: the file cannot be read.
        CheckpointError: bad magic, corrupt header, truncated or oversized
            payload, or a spec differing from ``expected_spec``.
    """
    blob = Path(path).read_bytes()
    if blob[:8] != CHECKPOINT_MAGIC:
        raise CheckpointError("bad magic")
    if len(blob) < 12:
        raise CheckpointError("truncated header")
    (hlen,) = struct.unpack("<I", blob[8:12])
    if len(blob) < 12 + hlen:
        raise CheckpointError("truncated header")
    try:
        header = json.loads(blob[12 : 12 + hlen].decode("utf-8"))
        spec = ModelSpec.from_dict(header["spec"])
    except (ValueError, KeyError, TypeError) as exc:
        raise CheckpointError(f"corrupt header: {exc}") from exc
    if header.get("format") != CHECKPOINT_FORMAT:
        raise CheckpointError(f"unsupported format {header.get('format')!r}")
    if expected_spec is not None and spec != expected_spec:
        raise CheckpointError(f"spec mismatch: file has {spec}, expected {expected_spec}")
    payload = blob[12 + hlen :]
    sizes = [n for fi, fo in spec.layer_shapes for n in (fi * fo, fo)]
    if len(payload) != 8 * sum(sizes):
        raise CheckpointError(f"payload is {len(payload)} bytes, expected {8 * sum(sizes)}")
    flat = np.frombuffer(payload, dtype="<f8").astype(np.float64)
    arrays, off = [], 0
    for n in sizes:
        arrays.append(flat[off : off + n])
        off += n
    weights = tuple(arrays[2 * i].reshape(shape) for i, shape in enumerate(spec.layer_shapes))
    biases = tuple(arrays[2 * i + 1] for i in range(len(spec.layer_shapes)))
    try:
        return Parameters(spec, weights, biases, header.get("seed"))
    except ValueError as exc:
        raise CheckpointError(str(exc)) from exc

