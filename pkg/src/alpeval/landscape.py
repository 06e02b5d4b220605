"""Loss surfaces over the plane spanned by the gradient sign and a Rademacher vector."""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .network import Example, Parameters, forward_logits, grad_input, xent_rows
from .rng import Xoshiro256

DEFAULT_RADIUS = 16 / 255
DEFAULT_RESOLUTION = 41


@dataclass(frozen=True, eq=False)
class LandscapeGrid:
    u_values: np.ndarray
    v_values: np.ndarray
    z: np.ndarray  # z[i, j] = loss at (u_i, v_j)
    r1: np.ndarray
    r2: np.ndarray
    origin: Example
    radius: float
    resolution: int
    seed: int
    clip: bool

    def to_csv(self) -> str:
        lines = ["u,v,loss"]
        for i, u in enumerate(self.u_values):
            for j, v in enumerate(self.v_values):
                lines.append(f"{float(u)!r},{float(v)!r},{float(self.z[i, j])!r}")
        return "\n".join(lines) + "\n"

    def sidecar(self, example_index: int | None = None) -> str:
        return json.dumps(
            {
                "seed": self.seed,
                "radius": self.radius,
                "resolution": self.resolution,
                "clip": self.clip,
                "example_index": example_index,
                "label": self.origin.y,
            },
            indent=2,
            sort_keys=True,
        ) + "\n"


def rademacher(dim: int, seed: int) -> np.ndarray:
    if dim < 1:
        raise ValueError("dim must be >= 1")
    return Xoshiro256(seed).signs(dim)


def grad_sign_dir(params: Parameters, ex: Example) -> np.ndarray:
    """``sign`` of the input gradient of the true-class loss (``sign(0) == 0``)."""
    return np.sign(grad_input(params, ex, ex.y))


def grid_offsets(radius: float, resolution: int) -> np.ndarray:
    # symmetric by construction and exactly 0.0 at the middle index
    k = np.arange(resolution, dtype=np.float64)
    m = (resolution - 1) / 2
    return radius * (k - m) / m


def landscape_grid(
    params: Parameters,
    ex: Example,
    radius: float = DEFAULT_RADIUS,
    resolution: int = DEFAULT_RESOLUTION,
    seed: int = 0,
    clip: bool = True,
) -> LandscapeGrid:
    """Evaluate ``loss(clip(x + u * r1 + v * r2))`` on a square grid.

    ``r1`` is :func:`grad_sign_dir` at ``ex`` and ``r2`` a Rademacher vector
    drawn from ``seed``. Offsets run from ``-radius`` to ``radius``; the odd
    resolution puts the clean input at the center cell.
    """
    if resolution < 3 or resolution % 2 == 0:
        raise ValueError(f"resolution must be odd and >= 3, got {resolution}")
    if not radius > 0:
        raise ValueError(f"radius must be positive, got {radius}")
    r1 = grad_sign_dir(params, ex)
    r2 = rademacher(ex.x.shape[0], seed)
    offs = grid_offsets(radius, resolution)
    U, V = np.meshgrid(offs, offs, indexing="ij")
    pts = ex.x[None, :] + U.reshape(-1, 1) * r1[None, :] + V.reshape(-1, 1) * r2[None, :]
    if clip:
        pts = np.clip(pts, 0.0, 1.0)
        assert pts.min() >= 0.0 and pts.max() <= 1.0
    losses = xent_rows(forward_logits(params, pts), np.full(pts.shape[0], ex.y))
    return LandscapeGrid(offs, offs.copy(), losses.reshape(resolution, resolution), r1, r2, ex, radius, resolution, seed, clip)
