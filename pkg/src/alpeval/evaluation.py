"""Clean accuracy, warm-started epsilon sweeps, steps-to-success statistics
and a brute-force worst-case oracle for two-dimensional inputs."""

from __future__ import annotations

import math
import statistics
from dataclasses import dataclass, field
from typing import Literal, Sequence

import numpy as np

from .attacks import AttackConfig, AttackResult, run_attacks, sample_targets
from .datasets import Dataset
from .network import DimensionError, Example, Parameters, forward_logits, xent_rows

SWEEP_HEADER = "epsilon,attacker_success_rate,defense_accuracy,n_examples"


@dataclass
class SweepReport:
    """Per-epsilon attack metrics.

    ``attacker_success_rate`` is ``None`` for untargeted sweeps. The
    per-example flag matrices are indexed ``[eps_index][example_index]``.
    """

    eps_grid: list[float]
    defense_accuracy: list[float]
    attacker_success_rate: list[float] | None
    mode: Literal["targeted", "untargeted"]
    n_examples: int
    config: dict = field(default_factory=dict)
    correct: list[list[bool]] = field(default_factory=list, repr=False)
    succeeded: list[list[bool]] = field(default_factory=list, repr=False)

    def rows(self) -> list[list[str]]:
        out = []
        for i, eps in enumerate(self.eps_grid):
            sr = "" if self.attacker_success_rate is None else f"{self.attacker_success_rate[i]:.6f}"
            out.append([format_epsilon(eps), sr, f"{self.defense_accuracy[i]:.6f}", str(self.n_examples)])
        return out

    def to_csv(self) -> str:
        return "\n".join([SWEEP_HEADER] + [",".join(r) for r in self.rows()]) + "\n"


def format_epsilon(eps: float) -> str:
    return f"{eps:.10g}"


def clean_accuracy(params: Parameters, data: Dataset) -> float:
    if len(data) == 0:
        raise ValueError("empty dataset")
    return float(np.mean(np.argmax(forward_logits(params, data.X), axis=1) == data.y))


def _check_grid(eps_grid: Sequence[float]) -> list[float]:
    grid = [float(e) for e in eps_grid]
    if not grid:
        raise ValueError("empty epsilon grid")
    if any(not 0.0 <= e <= 1.0 for e in grid):
        raise ValueError("epsilon values must lie in [0, 1]")
    if any(b <= a for a, b in zip(grid, grid[1:])):
        raise ValueError("epsilon grid must be strictly increasing")
    return grid


def _sweep(params, data, eps_grid, cfg, targets, jobs):
    grid = _check_grid(eps_grid)
    if len(data) == 0:
        raise ValueError("empty dataset")
    n = len(data)
    start = None
    ever_wrong = np.zeros(n, dtype=bool)
    ever_success = np.zeros(n, dtype=bool)
    correct, succeeded = [], []
    for eps in grid:
        results = run_attacks(params, data.X, data.y, cfg.at_epsilon(eps), targets, start, jobs=jobs)
        # a point found at a smaller radius stays admissible at every larger one
        ever_wrong |= np.array([r.misclassified for r in results])
        ever_success |= np.array([r.success for r in results])
        start = np.stack([r.warm_start for r in results])
        correct.append([bool(v) for v in ~ever_wrong])
        succeeded.append([bool(v) for v in ever_success])
    return grid, correct, succeeded


def targeted_sweep(
    params: Parameters,
    data: Dataset,
    eps_grid: Sequence[float],
    cfg: AttackConfig,
    target_seed: int,
    jobs: int = 1,
) -> SweepReport:
    """Targeted PGD at each radius, warm-started from the previous radius.

    Each example gets one random target (from ``target_seed``) used across
    the whole grid. Attacker success is the fraction driven to its target;
    defense accuracy the fraction never pushed off its true class.
    """
    targets = sample_targets(data.y, data.num_classes, target_seed)
    grid, correct, succeeded = _sweep(params, data, eps_grid, cfg, targets, jobs)
    return SweepReport(
        eps_grid=grid,
        defense_accuracy=[float(np.mean(c)) for c in correct],
        attacker_success_rate=[float(np.mean(s)) for s in succeeded],
        mode="targeted",
        n_examples=len(data),
        config={"attack": cfg.to_dict(), "target_seed": target_seed},
        correct=correct,
        succeeded=succeeded,
    )


def untargeted_sweep(
    params: Parameters, data: Dataset, eps_grid: Sequence[float], cfg: AttackConfig, jobs: int = 1
) -> SweepReport:
    grid, correct, succeeded = _sweep(params, data, eps_grid, cfg, None, jobs)
    return SweepReport(
        eps_grid=grid,
        defense_accuracy=[float(np.mean(c)) for c in correct],
        attacker_success_rate=None,
        mode="untargeted",
        n_examples=len(data),
        config={"attack": cfg.to_dict()},
        correct=correct,
        succeeded=succeeded,
    )


def oracle_axis(center: float, epsilon: float, resolution: int) -> np.ndarray:
    """Grid coordinates ``center + eps * (2k/(res-1) - 1)`` clipped to [0, 1], plus ``center``."""
    k = np.arange(resolution, dtype=np.float64)
    axis = np.clip(center + epsilon * (2.0 * k / (resolution - 1) - 1.0), 0.0, 1.0)
    return np.unique(np.append(axis, center))


def exact_worst_case_2d(params: Parameters, ex: Example, epsilon: float, resolution: int) -> tuple[float, bool]:
    """Exhaustive search of the epsilon box around a 2-D input.

    Evaluates every point of a ``resolution x resolution`` lattice over the
    box intersected with [0, 1]^2 (corners and the clean point included).

    Returns:
        ``(worst true-class loss, whether any lattice point is misclassified)``.
    """
    if ex.x.shape != (2,) or params.spec.input_dim != 2:
        raise DimensionError("exact_worst_case_2d needs 2-D inputs")
    if resolution < 3:
        raise ValueError("resolution must be >= 3")
    if not 0.0 <= epsilon <= 1.0:
        raise ValueError("epsilon must lie in [0, 1]")
    ax0 = oracle_axis(ex.x[0], epsilon, resolution)
    ax1 = oracle_axis(ex.x[1], epsilon, resolution)
    g0, g1 = np.meshgrid(ax0, ax1, indexing="ij")
    pts = np.column_stack([g0.ravel(), g1.ravel()])
    logits = forward_logits(params, pts)
    losses = xent_rows(logits, np.full(pts.shape[0], ex.y))
    wrong = bool(np.any(np.argmax(logits, axis=1) != ex.y))
    return float(losses.max()), wrong


def steps_to_success_stats(results: Sequence[AttackResult]) -> tuple[float, float, int]:
    """Median and mean ``first_success_step`` over successful attacks.

    Both statistics are NaN when nothing succeeded.
    """
    if len(results) == 0:
        raise ValueError("no attack results")
    steps = [r.first_success_step for r in results if r.success and r.first_success_step is not None]
    if not steps:
        return math.nan, math.nan, 0
    return float(statistics.median(steps)), float(statistics.fmean(steps)), len(steps)


def example_losses(params: Parameters, data: Dataset) -> np.ndarray:
    return xent_rows(forward_logits(params, data.X), data.y)
