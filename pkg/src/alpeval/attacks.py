"""L-infinity PGD attacks with trajectory capture.

The engine works on a batch of examples at once (one row each); every row
keeps its own iterate, best point, success bookkeeping and convergence clock,
so results do not depend on which other rows share the batch except through
floating-point matmul rounding. Step ``t = 0`` is the starting point; each
later step is ``x <- project(x +/- alpha * sign(grad))``.
"""

from __future__ import annotations

import csv
import io
from collections import deque
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from typing import Literal, Sequence

import numpy as np

from .network import DimensionError, Example, Parameters, forward_cache, backward, xent_grad_rows, xent_rows
from .rng import Xoshiro256, derive_seed

Mode = Literal["untargeted", "targeted"]
MAX_STEPS_LIMIT = 100_000
CHUNK_SIZE = 64


class AttackConfigError(ValueError):
    pass


@dataclass(frozen=True)
class AttackConfig:
    """PGD hyperparameters.

    ``alpha=None`` means ``epsilon / 10``. The attack stops after
    ``max_steps`` updates, or earlier once the best objective has improved by
    less than ``convergence_tol`` over the last ``convergence_window`` steps.
    """

    epsilon: float = 16 / 255
    alpha: float | None = None
    max_steps: int = 1000
    random_start: bool = False
    convergence_tol: float = 1e-6
    convergence_window: int = 20
    seed: int = 0

    def __post_init__(self) -> None:
        if not 0.0 <= self.epsilon <= 1.0:
            raise AttackConfigError(f"epsilon must be in [0, 1], got {self.epsilon}")
        if self.alpha is not None and not self.alpha > 0:
            raise AttackConfigError(f"alpha must be positive, got {self.alpha}")
        if self.epsilon > 0 and self.step_size > 2 * self.epsilon:
            raise AttackConfigError(f"alpha={self.step_size} exceeds the ball diameter 2*epsilon={2 * self.epsilon}")
        if not 0 <= self.max_steps <= MAX_STEPS_LIMIT:
            raise AttackConfigError(f"max_steps must be in [0, {MAX_STEPS_LIMIT}], got {self.max_steps}")
        if self.convergence_tol < 0:
            raise AttackConfigError("convergence_tol must be >= 0")
        if self.convergence_window < 1:
            raise AttackConfigError("convergence_window must be >= 1")

    @property
    def step_size(self) -> float:
        return self.alpha if self.alpha is not None else self.epsilon / 10.0

    def at_epsilon(self, epsilon: float) -> "AttackConfig":
        """Same settings at another radius; an explicit alpha is capped at 2*epsilon."""
        alpha = self.alpha
        if alpha is not None and epsilon > 0:
            alpha = min(alpha, 2 * epsilon)
        return replace(self, epsilon=epsilon, alpha=alpha)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["step_size"] = self.step_size
        return d


@dataclass
class AttackResult:
    """Outcome of one PGD run.

    ``x_adv`` is the best iterate by the attack objective (highest true-class
    loss when untargeted, lowest target-class loss when targeted).
    ``x_success`` is the best successful iterate, if any. ``misclassified``
    records whether any iterate was predicted as something other than
    ``label``.
    """

    x_adv: np.ndarray
    success: bool
    steps_taken: int
    first_success_step: int | None
    loss_trajectory: list[float]
    success_trajectory: list[bool]
    mode: Mode
    label: int
    target: int | None = None
    x_success: np.ndarray | None = None
    misclassified: bool = False
    best_objective: float = field(default=float("nan"))

    @property
    def warm_start(self) -> np.ndarray:
        """Starting point for an attack at a larger radius."""
        return self.x_success if self.x_success is not None else self.x_adv

    def trajectory_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["step", "objective", "success"])
        for t, (obj, ok) in enumerate(zip(self.loss_trajectory, self.success_trajectory)):
            w.writerow([t, repr(float(obj)), int(ok)])
        return buf.getvalue()


def trajectory_filename(example_index: int, mode: Mode) -> str:
    return f"traj_{example_index}_{mode}.csv"


def project_linf(x_cand: np.ndarray, x_orig: np.ndarray, epsilon: float) -> np.ndarray:
    """Clamp ``x_cand`` into ``[x_orig - eps, x_orig + eps]`` intersected with [0, 1]."""
    x_cand = np.asarray(x_cand, dtype=np.float64)
    x_orig = np.asarray(x_orig, dtype=np.float64)
    if x_cand.shape != x_orig.shape:
        raise DimensionError(f"shape mismatch {x_cand.shape} vs {x_orig.shape}")
    lo = np.maximum(x_orig - epsilon, 0.0)
    hi = np.minimum(x_orig + epsilon, 1.0)
    return np.minimum(np.maximum(x_cand, lo), hi)


def sample_target(true_label: int, num_classes: int, rng: Xoshiro256) -> int:
    """Uniform class other than ``true_label``."""
    if num_classes < 2:
        raise ValueError("num_classes must be >= 2")
    r = rng.randbelow(num_classes - 1)
    return r if r < true_label else r + 1


def pgd_batch(
    params: Parameters,
    X: np.ndarray,
    labels: np.ndarray,
    cfg: AttackConfig,
    targets: np.ndarray | None = None,
    x_init: np.ndarray | None = None,
    rng: Xoshiro256 | None = None,
) -> list[AttackResult]:
    """Run PGD on every row of ``X``.

    Args:
        params: model under attack.
        X: clean inputs, shape ``(n, input_dim)``.
        labels: true classes.
        cfg: attack settings.
        targets: target classes for a targeted attack; ``None`` for untargeted.
        x_init: optional warm-start points, projected into the ball first.
        rng: source for random starts (default: seeded from ``cfg.seed``).
    """
    X0 = np.asarray(X, dtype=np.float64)
    if X0.ndim != 2 or X0.shape[1] != params.spec.input_dim:
        raise DimensionError(f"input shape {X0.shape} does not match input_dim={params.spec.input_dim}")
    n = X0.shape[0]
    labels = np.asarray(labels, dtype=np.int64)
    targeted = targets is not None
    mode: Mode = "targeted" if targeted else "untargeted"
    if targeted:
        targets = np.asarray(targets, dtype=np.int64)
        if np.any(targets == labels):
            raise ValueError("target class equals the true label")
    obj_labels = targets if targeted else labels
    eps, alpha = cfg.epsilon, cfg.step_size
    direction = -1.0 if targeted else 1.0

    cur = X0.copy() if x_init is None else project_linf(np.asarray(x_init, dtype=np.float64).reshape(X0.shape), X0, eps)
    if cfg.random_start and eps > 0:
        rng = rng if rng is not None else Xoshiro256(derive_seed(cfg.seed, 0))
        cur = project_linf(cur + rng.uniform_array(-eps, eps, cur.size).reshape(cur.shape), X0, eps)

    def evaluate(rows: np.ndarray, pts: np.ndarray):
        logits, cache = forward_cache(params, pts)
        obj = xent_rows(logits, obj_labels[rows])
        pred = np.argmax(logits, axis=1)
        return logits, cache, obj, pred

    def is_success(pred: np.ndarray, rows: np.ndarray) -> np.ndarray:
        return pred == targets[rows] if targeted else pred != labels[rows]

    all_rows = np.arange(n)
    logits, cache, obj, pred = evaluate(all_rows, cur)
    succ = is_success(pred, all_rows)
    traj: list[list[float]] = [[float(v)] for v in obj]
    straj: list[list[bool]] = [[bool(s)] for s in succ]
    best_obj = obj.copy()
    best_x = cur.copy()
    success = succ.copy()
    first_success = np.where(succ, 0, -1)
    succ_obj = np.where(succ, obj, np.nan)
    succ_x = np.where(succ[:, None], cur, np.nan)
    misclassified = pred != labels
    steps = np.zeros(n, dtype=np.int64)
    history: deque[np.ndarray] = deque([best_obj.copy()], maxlen=cfg.convergence_window + 1)

    active = all_rows if (eps > 0 and cfg.max_steps > 0) else all_rows[:0]
    for t in range(1, cfg.max_steps + 1):
        if active.size == 0:
            break
        # cache/logits always describe exactly the rows in `active`
        _, grad = backward(params, cache, xent_grad_rows(logits, obj_labels[active]), need_params=False)
        stepped = cur[active] + direction * alpha * np.sign(grad)
        cur[active] = project_linf(stepped, X0[active], eps)
        logits, cache, obj, pred = evaluate(active, cur[active])
        ok = is_success(pred, active)
        for j, i in enumerate(active):
            traj[i].append(float(obj[j]))
            straj[i].append(bool(ok[j]))
        steps[active] = t
        better = obj > best_obj[active] if not targeted else obj < best_obj[active]
        upd = active[better]
        best_obj[upd] = obj[better]
        best_x[upd] = cur[upd]
        new_first = active[ok & ~success[active]]
        first_success[new_first] = t
        success[active] |= ok
        succ_better = ok & ~(direction * obj <= direction * succ_obj[active])
        upd = active[succ_better]
        succ_obj[upd] = obj[succ_better]
        succ_x[upd] = cur[upd]
        misclassified[active] |= pred != labels[active]

        history.append(best_obj.copy())
        if t >= cfg.convergence_window:
            gain = direction * (history[-1][active] - history[0][active])
            keep = ~(gain < cfg.convergence_tol)
            if not keep.all():
                active = active[keep]
                logits = logits[keep]
                cache = [h[keep] for h in cache]

    results = []
    for i in range(n):
        results.append(
            AttackResult(
                x_adv=best_x[i].copy(),
                success=bool(success[i]),
                steps_taken=int(steps[i]),
                first_success_step=int(first_success[i]) if first_success[i] >= 0 else None,
                loss_trajectory=traj[i],
                success_trajectory=straj[i],
                mode=mode,
                label=int(labels[i]),
                target=int(targets[i]) if targeted else None,
                x_success=succ_x[i].copy() if success[i] else None,
                misclassified=bool(misclassified[i]),
                best_objective=float(best_obj[i]),
            )
        )
    return results


def run_attacks(
    params: Parameters,
    X: np.ndarray,
    labels: np.ndarray,
    cfg: AttackConfig,
    targets: np.ndarray | None = None,
    x_init: np.ndarray | None = None,
    jobs: int = 1,
    chunk_size: int = CHUNK_SIZE,
) -> list[AttackResult]:
    """PGD over many examples in fixed-size chunks, optionally on a thread pool.

    Chunk boundaries and the random-start stream of chunk ``k``
    (``derive_seed(cfg.seed, k)``) do not depend on ``jobs``, so output is
    identical for any worker count and always ordered by example index.
    """
    X = np.asarray(X, dtype=np.float64)
    n = X.shape[0]
    bounds = [(s, min(s + chunk_size, n)) for s in range(0, n, chunk_size)]

    def work(k: int) -> list[AttackResult]:
        s, e = bounds[k]
        return pgd_batch(
            params,
            X[s:e],
            np.asarray(labels)[s:e],
            cfg,
            None if targets is None else np.asarray(targets)[s:e],
            None if x_init is None else np.asarray(x_init)[s:e],
            Xoshiro256(derive_seed(cfg.seed, k)),
        )

    if jobs <= 1 or len(bounds) <= 1:
        chunks = [work(k) for k in range(len(bounds))]
    else:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            chunks = list(pool.map(work, range(len(bounds))))
    return [r for chunk in chunks for r in chunk]


def pgd_untargeted(
    params: Parameters, ex: Example, cfg: AttackConfig, x_init: np.ndarray | None = None
) -> AttackResult:
    """Ascend the true-class cross-entropy inside the epsilon ball."""
    return run_attacks(params, ex.x[None, :], np.array([ex.y]), cfg, x_init=None if x_init is None else x_init[None, :])[0]


def pgd_targeted(
    params: Parameters, ex: Example, target: int, cfg: AttackConfig, x_init: np.ndarray | None = None
) -> AttackResult:
    """Descend the cross-entropy of ``target`` inside the epsilon ball."""
    if target == ex.y:
        raise ValueError("target class equals the true label")
    if not 0 <= target < params.spec.num_classes:
        raise ValueError(f"target {target} out of range")
    return run_attacks(
        params, ex.x[None, :], np.array([ex.y]), cfg, np.array([target]), None if x_init is None else x_init[None, :]
    )[0]


def sample_targets(labels: Sequence[int], num_classes: int, seed: int) -> np.ndarray:
    """One random target per label, drawn in order from a stream seeded with ``seed``."""
    rng = Xoshiro256(seed)
    return np.array([sample_target(int(c), num_classes, rng) for c in labels], dtype=np.int64)
