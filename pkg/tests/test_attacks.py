import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from alpeval.attacks import (
    AttackConfig,
    AttackConfigError,
    pgd_targeted,
    pgd_untargeted,
    project_linf,
    run_attacks,
    sample_target,
    sample_targets,
    trajectory_filename,
)
from alpeval.network import DimensionError, Example, ModelSpec, forward_logits, loss_xent
from alpeval.rng import Xoshiro256

from conftest import linear_params, random_params


# ----------------------------------------------------------------- projection


def test_project_linf_examples():
    x0 = np.array([0.5, 0.02, 0.99])
    got = project_linf(np.array([0.9, -0.3, 1.4]), x0, 0.1)
    np.testing.assert_allclose(got, [0.6, 0.0, 1.0])
    inside = np.array([0.45, 0.05, 0.95])
    np.testing.assert_array_equal(project_linf(inside, x0, 0.1), inside)
    with pytest.raises(DimensionError):
        project_linf(np.zeros(2), x0, 0.1)


unit = arrays(np.float64, 5, elements=st.floats(0, 1))


@settings(max_examples=200, deadline=None)
@given(arrays(np.float64, 5, elements=st.floats(-3, 3)), unit, st.floats(0, 1))
def test_project_linf_properties(cand, x0, eps):
    p = project_linf(cand, x0, eps)
    assert np.all(p >= 0.0) and np.all(p <= 1.0)
    assert np.all(np.abs(p - x0) <= eps + 1e-15)
    np.testing.assert_array_equal(project_linf(p, x0, eps), p)


# ----------------------------------------------------------------- config


@pytest.mark.parametrize(
    "kwargs",
    [dict(epsilon=-0.1), dict(epsilon=1.5), dict(alpha=0.0), dict(epsilon=0.01, alpha=0.5), dict(max_steps=-1)],
)
def test_config_validation(kwargs):
    with pytest.raises(AttackConfigError):
        AttackConfig(**kwargs)


def test_default_step_size_and_cap():
    assert AttackConfig(epsilon=0.2).step_size == pytest.approx(0.02)
    assert AttackConfig(epsilon=0.5, alpha=0.4).at_epsilon(0.1).step_size == pytest.approx(0.2)


# ----------------------------------------------------------------- PGD basics


def test_epsilon_zero_leaves_input(blob_model, blobs):
    _, test = blobs
    ex = test.examples[0]
    r = pgd_untargeted(blob_model, ex, AttackConfig(epsilon=0.0, max_steps=50))
    np.testing.assert_array_equal(r.x_adv, ex.x)
    assert len(r.loss_trajectory) == 1 and r.steps_taken == 0
    assert r.loss_trajectory[0] == loss_xent(forward_logits(blob_model, ex.x), ex.y)


def test_trajectory_and_ball_constraints(blob_model, blobs):
    _, test = blobs
    cfg = AttackConfig(epsilon=0.1, max_steps=40)
    for ex in test.examples[:10]:
        r = pgd_untargeted(blob_model, ex, cfg)
        assert len(r.loss_trajectory) == r.steps_taken + 1 == len(r.success_trajectory)
        assert np.all(np.abs(r.x_adv - ex.x) <= 0.1 + 1e-12)
        assert np.all((r.x_adv >= 0) & (r.x_adv <= 1))
        clean = loss_xent(forward_logits(blob_model, ex.x), ex.y)
        assert r.best_objective >= clean
        assert r.best_objective == max(r.loss_trajectory)
        assert loss_xent(forward_logits(blob_model, r.x_adv), ex.y) == pytest.approx(r.best_objective, abs=1e-12)


def test_targeted_best_iterate_lowers_target_loss(blob_model, blobs):
    _, test = blobs
    cfg = AttackConfig(epsilon=0.1, max_steps=40)
    for ex in test.examples[:10]:
        t = (ex.y + 1) % 3
        r = pgd_targeted(blob_model, ex, t, cfg)
        assert r.best_objective <= loss_xent(forward_logits(blob_model, ex.x), t)
        assert r.best_objective == min(r.loss_trajectory)
        if r.success:
            assert int(np.argmax(forward_logits(blob_model, r.x_success))) == t
            assert r.success_trajectory[r.first_success_step]
            assert not any(r.success_trajectory[: r.first_success_step])


def test_targeted_rejects_true_label(blob_model, blobs):
    ex = blobs[1].examples[0]
    with pytest.raises(ValueError):
        pgd_targeted(blob_model, ex, ex.y, AttackConfig())


def test_monotone_in_max_steps(blob_model, blobs):
    _, test = blobs
    for ex in test.examples[:8]:
        prev = -np.inf
        for steps in (0, 1, 5, 20, 100):
            r = pgd_untargeted(blob_model, ex, AttackConfig(epsilon=0.1, max_steps=steps, convergence_tol=0.0))
            assert r.best_objective >= prev
            prev = r.best_objective


def test_linear_single_step_matches_closed_form():
    # two classes: the loss depends on x only through (w_other - w_y) . x
    rng = np.random.default_rng(11)
    for _ in range(25):
        p = linear_params(rng.normal(size=(4, 2)), rng.normal(size=2))
        x = rng.uniform(0.0, 1.0, size=4)
        y = int(rng.integers(2))
        eps = float(rng.uniform(0.01, 0.3))
        d = p.weights[0][:, 1 - y] - p.weights[0][:, y]
        best = np.clip(x + eps * np.sign(d), 0.0, 1.0)
        r = pgd_untargeted(p, Example(x, y), AttackConfig(epsilon=eps, alpha=eps, max_steps=1))
        assert r.best_objective == pytest.approx(loss_xent(forward_logits(p, best), y), abs=1e-6)
        rt = pgd_targeted(p, Example(x, y), 1 - y, AttackConfig(epsilon=eps, alpha=2 * eps, max_steps=1))
        assert rt.best_objective == pytest.approx(loss_xent(forward_logits(p, best), 1 - y), abs=1e-6)


def test_warm_start_success_kept(blob_model, blobs):
    _, test = blobs
    ex = test.examples[0]
    t = (ex.y + 1) % 3
    big = pgd_targeted(blob_model, ex, t, AttackConfig(epsilon=0.45, max_steps=300))
    assert big.success
    again = pgd_targeted(blob_model, ex, t, AttackConfig(epsilon=0.45, max_steps=5), x_init=big.warm_start)
    assert again.success and again.first_success_step == 0


def test_random_start_stays_in_ball(blob_model, blobs):
    _, test = blobs
    cfg = AttackConfig(epsilon=0.05, max_steps=3, random_start=True, seed=4)
    res = run_attacks(blob_model, test.X, test.y, cfg)
    for ex, r in zip(test.examples, res):
        assert np.all(np.abs(r.x_adv - ex.x) <= 0.05 + 1e-12)
    again = run_attacks(blob_model, test.X, test.y, cfg)
    assert all(a.x_adv.tobytes() == b.x_adv.tobytes() for a, b in zip(res, again))


def test_jobs_invariance():
    rng = np.random.default_rng(12)
    p = random_params(rng, ModelSpec.mlp(3, [8], 4))
    X = rng.uniform(size=(150, 3))
    y = rng.integers(0, 4, size=150)
    cfg = AttackConfig(epsilon=0.1, max_steps=30, random_start=True, seed=9)
    t = sample_targets(y, 4, 1)
    one = run_attacks(p, X, y, cfg, t, jobs=1)
    four = run_attacks(p, X, y, cfg, t, jobs=4)
    for a, b in zip(one, four):
        assert a.x_adv.tobytes() == b.x_adv.tobytes()
        assert a.loss_trajectory == b.loss_trajectory


# ----------------------------------------------------------------- targets


def test_sample_target_excludes_true_and_is_uniform():
    rng = Xoshiro256(5)
    counts = np.zeros(10, dtype=int)
    n = 100_000
    for _ in range(n):
        counts[sample_target(3, 10, rng)] += 1
    assert counts[3] == 0
    expected = n / 9
    chi2 = float(np.sum((np.delete(counts, 3) - expected) ** 2 / expected))
    assert chi2 < 26.1  # 99.9th percentile, 8 degrees of freedom


def test_sample_targets_deterministic():
    y = np.array([0, 1, 2, 1, 0])
    t = sample_targets(y, 3, 7)
    assert np.array_equal(t, sample_targets(y, 3, 7))
    assert np.all(t != y)


def test_trajectory_csv():
    assert trajectory_filename(4, "targeted") == "traj_4_targeted.csv"
    p = linear_params(np.array([[1.0, -1.0]]), np.zeros(2))
    r = pgd_untargeted(p, Example(np.array([0.5]), 0), AttackConfig(epsilon=0.1, max_steps=2, convergence_tol=0.0))
    lines = r.trajectory_csv().splitlines()
    assert lines[0] == "step,objective,success" and len(lines) == 4
    assert lines[1].startswith("0,")
