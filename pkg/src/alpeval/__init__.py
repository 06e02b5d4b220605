"""Train small classifiers with natural, min-max or logit-pairing objectives
and stress-test them with L-infinity PGD attacks, epsilon sweeps, loss
landscapes and attack trajectories."""

__version__ = "0.1.0"

from .attacks import AttackConfig, AttackResult, pgd_targeted, pgd_untargeted, project_linf, sample_target
from .datasets import Dataset, gen_gaussian_blobs, gen_two_spirals, load_idx, split
from .evaluation import (
    SweepReport,
    clean_accuracy,
    exact_worst_case_2d,
    steps_to_success_stats,
    targeted_sweep,
    untargeted_sweep,
)
from .landscape import LandscapeGrid, grad_sign_dir, landscape_grid, rademacher
from .network import (
    Example,
    ModelSpec,
    Parameters,
    forward_logits,
    grad_input,
    grad_params,
    init_params,
    load_checkpoint,
    logit_distance,
    loss_xent,
    predict,
    save_checkpoint,
)
from .training import AlpConfig, TrainConfig, train_adversarial, train_alp, train_natural
