"""Natural, adversarial (min-max) and Adversarial Logit Pairing training.

All three trainers share one minibatch-SGD loop, so the objective-reduction
identities hold bit-for-bit: a reduced ALP configuration executes exactly the
arithmetic of the trainer it reduces to.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field
from typing import Callable, Literal

import numpy as np

from .attacks import AttackConfig, pgd_batch, sample_target
from .datasets import Dataset
from .network import (
    ModelSpec,
    Parameters,
    backward,
    forward_cache,
    init_params,
    mean_xent_and_grads,
    xent_grad_rows,
    xent_rows,
)
from .rng import Xoshiro256, derive_seed

ORDER_STREAM = 1
ATTACK_STREAM = 2

InnerMode = Literal["targeted_random", "untargeted"]


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 30
    batch_size: int = 32
    learning_rate: float = 0.1
    seed: int = 0

    def __post_init__(self) -> None:
        if self.epochs < 1 or self.batch_size < 1:
            raise ValueError("epochs and batch_size must be >= 1")
        if self.learning_rate < 0:
            raise ValueError("learning_rate must be non-negative")


def default_inner_attack() -> AttackConfig:
    return AttackConfig(epsilon=16 / 255, max_steps=10)


@dataclass(frozen=True)
class AlpConfig:
    """Logit-pairing objective switches.

    The per-example objective is
    ``[clean] * L(x, y) + [adv] * L(x + d, y) + lam * D(f(x), f(x + d))``
    with ``d`` produced by the inner attack.
    """

    lam: float = 0.5
    inner_attack_mode: InnerMode = "targeted_random"
    include_clean_loss: bool = True
    include_adv_loss: bool = False
    inner_attack: AttackConfig = field(default_factory=default_inner_attack)
    distance: Literal["squared", "euclidean"] = "squared"

    def __post_init__(self) -> None:
        if self.lam < 0:
            raise ValueError("lambda must be >= 0")
        if self.inner_attack_mode not in ("targeted_random", "untargeted"):
            raise ValueError(f"unknown inner attack mode {self.inner_attack_mode!r}")
        if self.distance not in ("squared", "euclidean"):
            raise ValueError(f"unknown distance {self.distance!r}")
        if self.lam == 0 and not (self.include_clean_loss or self.include_adv_loss):
            raise ValueError("objective is empty: lambda is 0 and both loss terms are off")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["lambda"] = d.pop("lam")
        d["inner_attack"] = self.inner_attack.to_dict()
        return d


@dataclass(frozen=True)
class EpochRecord:
    epoch: int
    objective: float
    clean_acc: float


# (params, X, y, attack_rng) -> (batch objective, mean gradient)
BatchStep = Callable[[Parameters, np.ndarray, np.ndarray, Xoshiro256], tuple[float, Parameters]]


def batch_order(n: int, epoch: int, seed: int) -> np.ndarray:
    return Xoshiro256(derive_seed(seed, ORDER_STREAM, epoch)).permutation(n)


def _fit(
    spec: ModelSpec, train: Dataset, cfg: TrainConfig, step: BatchStep, log: list[EpochRecord] | None
) -> Parameters:
    if len(train) == 0:
        raise ValueError("empty training set")
    if train.dim != spec.input_dim or train.num_classes != spec.num_classes:
        raise ValueError(
            f"dataset ({train.dim} dims, {train.num_classes} classes) does not fit spec "
            f"({spec.input_dim} dims, {spec.num_classes} classes)"
        )
    params = init_params(spec, cfg.seed)
    attack_rng = Xoshiro256(derive_seed(cfg.seed, ATTACK_STREAM))
    n = len(train)
    for epoch in range(cfg.epochs):
        order = batch_order(n, epoch, cfg.seed)
        total, batches = 0.0, 0
        for start in range(0, n, cfg.batch_size):
            idx = order[start : start + cfg.batch_size]
            objective, grads = step(params, train.X[idx], train.y[idx], attack_rng)
            params = params.sgd_step(grads, cfg.learning_rate)
            total += objective
            batches += 1
        if log is not None:
            logits, _ = forward_cache(params, train.X)
            acc = float(np.mean(np.argmax(logits, axis=1) == train.y))
            log.append(EpochRecord(epoch, total / batches, acc))
    return params


def _natural_step(params, X, y, rng):
    return mean_xent_and_grads(params, X, y)


def _adversarial_step(inner: AttackConfig) -> BatchStep:
    def step(params, X, y, rng):
        adv = pgd_batch(params, X, y, inner, rng=rng)
        return mean_xent_and_grads(params, np.stack([r.x_adv for r in adv]), y)

    return step


def train_natural(
    spec: ModelSpec, train: Dataset, cfg: TrainConfig, log: list[EpochRecord] | None = None
) -> Parameters:
    """Minibatch SGD on the mean cross-entropy of clean inputs."""
    return _fit(spec, train, cfg, _natural_step, log)


def train_adversarial(
    spec: ModelSpec, train: Dataset, cfg: TrainConfig, inner: AttackConfig, log: list[EpochRecord] | None = None
) -> Parameters:
    """Min-max training: every batch is replaced by its untargeted PGD points.

    No clean-data term enters the update.
    """
    return _fit(spec, train, cfg, _adversarial_step(inner), log)


def inner_adversarial(
    params: Parameters, X: np.ndarray, y: np.ndarray, alp: AlpConfig, rng: Xoshiro256
) -> np.ndarray:
    """Points ``x + d`` for the pairing term, one row per example."""
    if alp.inner_attack_mode == "targeted_random":
        targets = np.array([sample_target(int(c), params.spec.num_classes, rng) for c in y])
        res = pgd_batch(params, X, y, alp.inner_attack, targets=targets, rng=rng)
    else:
        res = pgd_batch(params, X, y, alp.inner_attack, rng=rng)
    return np.stack([r.x_adv for r in res])


def alp_objective(
    params: Parameters, X: np.ndarray, y: np.ndarray, X_adv: np.ndarray, alp: AlpConfig
) -> tuple[float, Parameters]:
    """Mean ALP objective over a batch and its parameter gradient.

    ``X_adv`` is held fixed; the pairing gradient flows through both the clean
    and the adversarial logits.
    """
    n = X.shape[0]
    needs_clean = alp.include_clean_loss or alp.lam > 0
    needs_adv = alp.include_adv_loss or alp.lam > 0
    value = 0.0
    d_clean = d_adv = None
    if needs_clean:
        z_clean, cache_clean = forward_cache(params, X)
        d_clean = np.zeros_like(z_clean)
        if alp.include_clean_loss:
            value += float(xent_rows(z_clean, y).mean())
            d_clean = xent_grad_rows(z_clean, y) / n
    if needs_adv:
        z_adv, cache_adv = forward_cache(params, X_adv)
        d_adv = np.zeros_like(z_adv)
        if alp.include_adv_loss:
            value += float(xent_rows(z_adv, y).mean())
            d_adv = xent_grad_rows(z_adv, y) / n
    if alp.lam > 0:
        diff = z_clean - z_adv
        sq = np.sum(diff * diff, axis=1)
        if alp.distance == "squared":
            dist = sq
            g = 2.0 * diff
        else:
            dist = np.sqrt(sq)
            with np.errstate(invalid="ignore", divide="ignore"):
                g = np.where(dist[:, None] > 0, diff / dist[:, None], 0.0)
        value += alp.lam * float(dist.mean())
        d_clean = d_clean + (alp.lam / n) * g
        d_adv = d_adv - (alp.lam / n) * g
    grads = None
    if d_clean is not None:
        grads, _ = backward(params, cache_clean, d_clean)
    if d_adv is not None:
        g_adv, _ = backward(params, cache_adv, d_adv)
        grads = g_adv if grads is None else grads + g_adv
    return value, grads


def _alp_step(alp: AlpConfig) -> BatchStep:
    needs_attack = alp.include_adv_loss or alp.lam > 0

    def step(params, X, y, rng):
        X_adv = inner_adversarial(params, X, y, alp, rng) if needs_attack else X
        return alp_objective(params, X, y, X_adv, alp)

    return step


def train_alp(
    spec: ModelSpec, train: Dataset, cfg: TrainConfig, alp: AlpConfig, log: list[EpochRecord] | None = None
) -> Parameters:
    """Adversarial Logit Pairing.

    Each batch first runs the inner attack, then takes an SGD step on the
    configured mix of clean loss, adversarial loss and ``lam`` times the logit
    distance between clean and adversarial inputs.
    """
    return _fit(spec, train, cfg, _alp_step(alp), log)


def log_csv(log: list[EpochRecord]) -> str:
    lines = ["epoch,objective,clean_acc"]
    lines += [f"{r.epoch},{r.objective!r},{r.clean_acc:.6f}" for r in log]
    return "\n".join(lines) + "\n"
