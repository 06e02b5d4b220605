"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line.

Run with ``pytest tests/test_acceptance.py -v -s`` to see the lines inline;
they are also printed with capture disabled, so plain ``-v`` shows them.
"""

import time
from pathlib import Path

import numpy as np
import pytest

from alpeval.attacks import AttackConfig, pgd_targeted, pgd_untargeted, run_attacks, sample_targets
from alpeval.cli import EXIT_OK, main
from alpeval.datasets import gen_gaussian_blobs, gen_two_spirals, split
from alpeval.evaluation import (
    clean_accuracy,
    exact_worst_case_2d,
    steps_to_success_stats,
    targeted_sweep,
    untargeted_sweep,
)
from alpeval.landscape import landscape_grid
from alpeval.network import (
    Example,
    ModelSpec,
    Parameters,
    forward_logits,
    grad_input,
    grad_params,
    loss_xent,
)
from alpeval.training import AlpConfig, TrainConfig, train_adversarial, train_alp, train_natural

from conftest import linear_params, random_params


def report(capsys, number, ok, detail):
    with capsys.disabled():
        print(f"\n[criterion {number}] {'PASS' if ok else 'FAIL'}: {detail}")


# ----------------------------------------------------------------- shared blob models

BLOB_SPEC = ModelSpec.mlp(2, [16], 3)
BLOB_SEEDS = (0, 1, 2)
BLOB_ALP = AlpConfig(lam=1.0, inner_attack=AttackConfig(epsilon=0.2, max_steps=10))
BIG_EPS = 0.4


@pytest.fixture(scope="module")
def blob_split():
    return split(gen_gaussian_blobs(100, 2, 3, 0.05, 0), 0.8, 0)


@pytest.fixture(scope="module")
def blob_models(blob_split):
    train, _ = blob_split
    out = {}
    for s in BLOB_SEEDS:
        cfg = TrainConfig(epochs=30, seed=s)
        out[s] = (train_natural(BLOB_SPEC, train, cfg), train_alp(BLOB_SPEC, train, cfg, BLOB_ALP))
    return out


# ----------------------------------------------------------------- 1


def _fd(f, a, h=1e-6):
    g = np.zeros_like(a)
    for idx in np.ndindex(a.shape):
        a[idx] += h
        up = f()
        a[idx] -= 2 * h
        down = f()
        a[idx] += h
        g[idx] = (up - down) / (2 * h)
    return g


def _rel(a, b):
    return float(np.linalg.norm(a - b) / max(np.linalg.norm(a), np.linalg.norm(b), 1e-12))


def test_criterion_1_gradient_correctness(capsys):
    start = time.perf_counter()
    rng = np.random.default_rng(100)
    worst_in = worst_par = 0.0
    n = 0
    for trial in range(120):
        depth = trial % 4
        spec = ModelSpec.mlp(3, [int(w) for w in rng.integers(2, 6, size=depth)], int(rng.integers(2, 5)))
        p = random_params(rng, spec, bias_scale=0.3)
        x = rng.uniform(0.05, 0.95, size=3)
        y = int(rng.integers(spec.num_classes))

        xs = x.copy()
        g_in = grad_input(p, Example(x, y), y)
        fd_in = _fd(lambda: loss_xent(forward_logits(p, xs), y), xs)
        worst_in = max(worst_in, _rel(g_in, fd_in))

        arrays = [a.copy() for a in p.arrays()]

        def loss():
            q = Parameters(spec, tuple(arrays[0::2]), tuple(arrays[1::2]))
            return loss_xent(forward_logits(q, x), y)

        an = grad_params(p, [(Example(x, y), y)]).arrays()
        fd = [_fd(loss, a) for a in arrays]
        worst_par = max(worst_par, _rel(np.concatenate([a.ravel() for a in an]), np.concatenate([a.ravel() for a in fd])))
        n += 1
    elapsed = time.perf_counter() - start
    ok = worst_in < 1e-4 and worst_par < 1e-4 and elapsed < 60 and n >= 100
    report(capsys, 1, ok, f"{n} pairs, max rel err input={worst_in:.2e} params={worst_par:.2e}, {elapsed:.1f}s")
    assert ok


# ----------------------------------------------------------------- 2


def test_criterion_2_linear_oracle(capsys):
    # with two classes the loss is a monotone function of (w_other - w_true) . x,
    # so the optimum over the box is the clipped sign vertex
    rng = np.random.default_rng(200)
    worst = 0.0
    for _ in range(100):
        dim = int(rng.integers(1, 10))
        p = linear_params(rng.normal(size=(dim, 2)), rng.normal(size=2))
        x = rng.uniform(size=dim)
        y = int(rng.integers(2))
        eps = float(rng.uniform(0.01, 0.5))
        d = p.weights[0][:, 1 - y] - p.weights[0][:, y]
        vertex = np.clip(x + eps * np.sign(d), 0.0, 1.0)
        ex = Example(x, y)
        r_u = pgd_untargeted(p, ex, AttackConfig(epsilon=eps, alpha=eps, max_steps=1))
        r_t = pgd_targeted(p, ex, 1 - y, AttackConfig(epsilon=eps, alpha=eps, max_steps=1))
        worst = max(
            worst,
            abs(r_u.best_objective - loss_xent(forward_logits(p, vertex), y)),
            abs(r_t.best_objective - loss_xent(forward_logits(p, vertex), 1 - y)),
        )
    ok = worst <= 1e-6
    report(capsys, 2, ok, f"100 trials x 2 modes, max |PGD - closed form| = {worst:.2e}")
    assert ok


# ----------------------------------------------------------------- 3


def test_criterion_3_exact_oracle(capsys):
    start = time.perf_counter()
    train = gen_two_spirals(100, 0.01, 0)
    model = train_natural(ModelSpec.mlp(2, [32, 32], 2), train, TrainConfig(epochs=2000, batch_size=8, learning_rate=0.05, seed=0))
    points = gen_two_spirals(25, 0.02, 1)
    eps = 16 / 255
    cfg = AttackConfig(epsilon=eps, max_steps=1000)
    results = run_attacks(model, points.X, points.y, cfg)
    max_excess, good = -np.inf, 0
    for ex, r in zip(points.examples, results):
        worst, _ = exact_worst_case_2d(model, ex, eps, 201)
        clean = loss_xent(forward_logits(model, ex.x), ex.y)
        max_excess = max(max_excess, r.best_objective - worst)
        if worst - clean <= 0 or r.best_objective - clean >= 0.9 * (worst - clean):
            good += 1
    elapsed = time.perf_counter() - start
    dominated = max_excess <= 1e-6
    ok = dominated and good >= 45 and elapsed < 300
    report(
        capsys, 3, ok,
        f"train acc {clean_accuracy(model, train):.3f}; max(PGD - oracle) = {max_excess:.2e}; "
        f">=90% of oracle gain on {good}/50; {elapsed:.1f}s",
    )
    assert ok


# ----------------------------------------------------------------- 4


def test_criterion_4_reductions(capsys):
    data = gen_gaussian_blobs(40, 2, 3, 0.08, 4)
    spec = ModelSpec.mlp(2, [8, 8], 3)
    inner = AttackConfig(epsilon=0.05, max_steps=7)
    checks = []
    for seed in (0, 1, 2):
        cfg = TrainConfig(epochs=6, batch_size=16, seed=seed)
        nat = train_natural(spec, data, cfg).to_bytes()
        alp_nat = train_alp(spec, data, cfg, AlpConfig(lam=0.0, include_clean_loss=True, include_adv_loss=False)).to_bytes()
        adv = train_adversarial(spec, data, cfg, inner).to_bytes()
        alp_adv = train_alp(
            spec, data, cfg,
            AlpConfig(lam=0.0, inner_attack_mode="untargeted", include_clean_loss=False, include_adv_loss=True, inner_attack=inner),
        ).to_bytes()
        checks += [nat == alp_nat, adv == alp_adv]
    ok = all(checks)
    report(capsys, 4, ok, f"{sum(checks)}/{len(checks)} bit-exact checkpoint matches over 3 seeds")
    assert ok


# ----------------------------------------------------------------- 5


def test_criterion_5_sweep_contract(capsys, blob_split, blob_models):
    _, test = blob_split
    grid = [0.0, 0.05, 0.1, 0.2, 0.3, 0.4]
    cfg = AttackConfig(max_steps=200)
    reports = 0
    ok = True
    for nat, alp in blob_models.values():
        for model in (nat, alp):
            clean_pred = np.argmax(forward_logits(model, test.X), axis=1)
            tr = targeted_sweep(model, test, grid, cfg, target_seed=0)
            ur = untargeted_sweep(model, test, grid, cfg)
            targets = sample_targets(test.y, test.num_classes, 0)
            for rep in (tr, ur):
                acc = rep.defense_accuracy
                ok &= all(b <= a for a, b in zip(acc, acc[1:]))
                ok &= acc[0] == clean_accuracy(model, test)
                reports += 1
            sr = tr.attacker_success_rate
            ok &= all(b >= a for a, b in zip(sr, sr[1:]))
            ok &= sr[0] == float(np.mean(clean_pred == targets))
    report(capsys, 5, bool(ok), f"{reports} sweep reports monotone with exact clean rows at eps=0")
    assert ok


# ----------------------------------------------------------------- 6


def test_criterion_6_alp_not_robust(capsys, blob_split, blob_models):
    start = time.perf_counter()
    _, test = blob_split
    nat0, _ = blob_models[0]
    oracle_vuln = np.mean([exact_worst_case_2d(nat0, ex, BIG_EPS, 201)[1] for ex in test.examples])
    grid = [0.0, 0.1, 0.2, 0.3, BIG_EPS]
    lines, ok = [], oracle_vuln >= 0.95
    for seed, (nat, alp) in blob_models.items():
        for name, model in (("natural", nat), ("alp", alp)):
            rep = targeted_sweep(model, test, grid, AttackConfig(max_steps=1000), target_seed=0)
            sr, acc = rep.attacker_success_rate[-1], rep.defense_accuracy[-1]
            ok &= sr >= 0.95 and acc <= 0.05
            lines.append(f"seed{seed}/{name} success={sr:.3f} acc={acc:.3f}")
    elapsed = time.perf_counter() - start
    ok &= elapsed < 600
    report(capsys, 6, bool(ok), f"eps={BIG_EPS}, oracle-vulnerable fraction {oracle_vuln:.3f}; " + "; ".join(lines) + f"; {elapsed:.1f}s")
    assert ok


# ----------------------------------------------------------------- 7


def test_criterion_7_more_steps_on_alp(capsys, blob_split, blob_models):
    _, test = blob_split
    cfg = AttackConfig(epsilon=BIG_EPS, alpha=BIG_EPS / 100, max_steps=1000)
    targets = sample_targets(test.y, test.num_classes, 0)
    larger, close, lines = 0, True, []
    for seed, (nat, alp) in blob_models.items():
        stats = {}
        for name, model in (("natural", nat), ("alp", alp)):
            res = run_attacks(model, test.X, test.y, cfg, targets)
            med, _, count = steps_to_success_stats(res)
            stats[name] = (med, count / len(res))
        larger += stats["alp"][0] > stats["natural"][0]
        close &= abs(stats["alp"][1] - stats["natural"][1]) <= 0.05
        lines.append(
            f"seed{seed} median nat={stats['natural'][0]} alp={stats['alp'][0]} "
            f"success nat={stats['natural'][1]:.3f} alp={stats['alp'][1]:.3f}"
        )
    ok = larger >= 2 and close
    report(capsys, 7, bool(ok), f"ALP median larger in {larger}/3; " + "; ".join(lines))
    assert ok


# ----------------------------------------------------------------- 8


def test_criterion_8_landscape(capsys):
    rng = np.random.default_rng(800)
    worst_center, in_domain, identical = 0.0, True, True
    for i in range(20):
        dim = int(rng.integers(2, 8))
        p = random_params(rng, ModelSpec.mlp(dim, [int(rng.integers(2, 8))], int(rng.integers(2, 5))))
        # some inputs sit on the boundary so clipping is exercised
        x = np.clip(rng.uniform(-0.2, 1.2, size=dim), 0, 1)
        ex = Example(x, int(rng.integers(p.spec.num_classes)))
        g = landscape_grid(p, ex, radius=0.1, resolution=9, seed=i)
        c = g.resolution // 2
        worst_center = max(worst_center, abs(g.z[c, c] - loss_xent(forward_logits(p, x), ex.y)))
        U, V = np.meshgrid(g.u_values, g.v_values, indexing="ij")
        pts = np.clip(x + U.reshape(-1, 1) * g.r1 + V.reshape(-1, 1) * g.r2, 0, 1)
        in_domain &= bool(pts.min() >= 0 and pts.max() <= 1)
        again = landscape_grid(p, ex, radius=0.1, resolution=9, seed=i)
        identical &= again.to_csv() == g.to_csv() and again.z.tobytes() == g.z.tobytes()
    ok = worst_center <= 1e-12 and in_domain and identical
    report(capsys, 8, ok, f"20 pairs, max |z(0,0) - clean| = {worst_center:.1e}, in domain={in_domain}, byte-identical={identical}")
    assert ok


# ----------------------------------------------------------------- 9


def _files(d: Path) -> dict[str, bytes]:
    return {p.name: p.read_bytes() for p in sorted(d.iterdir()) if p.name != "manifest.json"}


def test_criterion_9_replay(capsys, tmp_path):
    data = ["--n-per-class", "20"]
    model = tmp_path / "train" / "model.ckpt"
    runs = [
        ["train", "--objective", "alp", "--epochs", "3", "--inner-steps", "3", *data, "--out", str(tmp_path / "train")],
        ["eval", "--model", str(model), *data, "--out", str(tmp_path / "eval")],
        ["sweep", "--model", str(model), "--eps-grid", "0:32:3", "--steps", "40", *data, "--out", str(tmp_path / "sweep")],
        ["compare", "--models", f"{model},{model}", "--eps-grid", "0:16:2", "--steps", "20", *data, "--out", str(tmp_path / "compare")],
        ["attack", "--model", str(model), "--eps", "32", "--steps", "30", "--n", "5", "--random-start", *data, "--out", str(tmp_path / "attack")],
        ["landscape", "--model", str(model), "--resolution", "7", *data, "--out", str(tmp_path / "landscape")],
    ]
    matched = 0
    for argv in runs:
        out = Path(argv[-1])
        assert main(argv) == EXIT_OK
        first = _files(out)
        replay_dir = tmp_path / (out.name + "_replay")
        assert main(["replay", str(out / "manifest.json"), "--out", str(replay_dir)]) == EXIT_OK
        matched += _files(replay_dir) == first
    ok = matched == len(runs)
    report(capsys, 9, ok, f"{matched}/{len(runs)} commands reproduced byte-for-byte from their manifests")
    assert ok
