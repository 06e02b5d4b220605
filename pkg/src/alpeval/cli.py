"""Command-line front end.

Radii (``--eps``, ``--eps-grid``, ``--alpha``, ``--radius``) are given in 1/255
units and converted to the [0, 1] input scale internally. Every command writes
into a staging directory next to ``--out`` and moves the files into place only
after it succeeds, together with a ``manifest.json`` from which
``alpeval replay`` can regenerate the same files.

Exit codes: 0 success, 2 usage error, 3 I/O error, 4 validation error.
"""

from __future__ import annotations

import argparse
import contextlib
import csv
import dataclasses
import io
import json
import os
import shutil
import sys
import tempfile
import time
from pathlib import Path
from typing import Iterator

import numpy as np

from . import __version__
from .attacks import AttackConfig, run_attacks, sample_targets, trajectory_filename
from .datasets import Dataset, gen_gaussian_blobs, gen_two_spirals, load_idx, split
from .evaluation import (
    SWEEP_HEADER,
    SweepReport,
    clean_accuracy,
    example_losses,
    format_epsilon,
    steps_to_success_stats,
    targeted_sweep,
    untargeted_sweep,
)
from .landscape import landscape_grid
from .network import CheckpointError, Example, ModelSpec, Parameters, forward_logits, load_checkpoint, save_checkpoint
from .training import AlpConfig, TrainConfig, log_csv, train_adversarial, train_alp, train_natural

EXIT_OK, EXIT_USAGE, EXIT_IO, EXIT_VALIDATION = 0, 2, 3, 4
UNIT = 1.0 / 255.0


class UsageError(Exception):
    pass


def to_unit(v: float | None) -> float | None:
    return None if v is None else v * UNIT


def parse_eps_grid(text: str) -> list[float]:
    """``start:end:count`` in 1/255 units -> evenly spaced radii in [0, 1]."""
    try:
        start, end, count = text.split(":")
        start_f, end_f, n = float(start), float(end), int(count)
    except ValueError as exc:
        raise UsageError(f"malformed --eps-grid {text!r}; expected start:end:count") from exc
    if n < 1 or (n == 1 and start_f != end_f) or (n > 1 and end_f <= start_f):
        raise UsageError(f"malformed --eps-grid {text!r}")
    if n == 1:
        return [start_f * UNIT]
    return [(start_f + (end_f - start_f) * i / (n - 1)) * UNIT for i in range(n)]


def on_off(text: str) -> bool:
    if text not in ("on", "off"):
        raise argparse.ArgumentTypeError("expected 'on' or 'off'")
    return text == "on"


def hidden_widths(text: str) -> list[int]:
    if text.strip() in ("", "none"):
        return []
    try:
        return [int(w) for w in text.split(",")]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"bad --hidden {text!r}") from exc


# --------------------------------------------------------------------------- data


def add_data_args(p: argparse.ArgumentParser, default_split: str) -> None:
    g = p.add_argument_group("data")
    g.add_argument("--dataset", default="blobs", help="blobs | spirals | idx:<images>,<labels>")
    g.add_argument("--data-seed", type=int, default=0)
    g.add_argument("--n-per-class", type=int, default=100)
    g.add_argument("--dim", type=int, default=2)
    g.add_argument("--classes", type=int, default=3)
    g.add_argument("--spread", type=float, default=0.05)
    g.add_argument("--noise", type=float, default=0.01)
    g.add_argument("--train-fraction", type=float, default=0.8)
    g.add_argument("--split", choices=["train", "test", "all"], default=default_split)


def load_data(args) -> Dataset:
    name = args.dataset
    if name == "blobs":
        ds = gen_gaussian_blobs(args.n_per_class, args.dim, args.classes, args.spread, args.data_seed)
    elif name == "spirals":
        ds = gen_two_spirals(args.n_per_class, args.noise, args.data_seed)
    elif name.startswith("idx:"):
        paths = name[4:].split(",")
        if len(paths) != 2:
            raise UsageError("--dataset idx:<images>,<labels>")
        ds = load_idx(paths[0], paths[1])
    else:
        raise UsageError(f"unknown dataset {name!r}")
    if args.split == "all":
        return ds
    train, test = split(ds, args.train_fraction, args.data_seed)
    return train if args.split == "train" else test


def data_record(args, data: Dataset) -> dict:
    return {
        "dataset": args.dataset,
        "data_seed": args.data_seed,
        "n_per_class": args.n_per_class,
        "dim": args.dim,
        "classes": args.classes,
        "spread": args.spread,
        "noise": args.noise,
        "train_fraction": args.train_fraction,
        "split": args.split,
        "n_examples": len(data),
    }


def load_model(path: str, data: Dataset | None = None) -> Parameters:
    params = load_checkpoint(path)
    if data is not None and (params.spec.input_dim != data.dim or params.spec.num_classes != data.num_classes):
        raise ValueError(
            f"model {path} expects {params.spec.input_dim} dims / {params.spec.num_classes} classes, "
            f"data has {data.dim} / {data.num_classes}"
        )
    return params


def first_n(data: Dataset, n: int | None) -> Dataset:
    return data if n is None else data.head(n)


# --------------------------------------------------------------------------- output


@contextlib.contextmanager
def staged_output(out: Path) -> Iterator[Path]:
    """Yield a scratch directory whose files land in ``out`` only on success."""
    out = Path(out)
    out.parent.mkdir(parents=True, exist_ok=True)
    tmp = Path(tempfile.mkdtemp(prefix=f".{out.name}.", suffix=".partial", dir=out.parent))
    try:
        yield tmp
        out.mkdir(parents=True, exist_ok=True)
        for f in sorted(tmp.iterdir()):
            os.replace(f, out / f.name)
    finally:
        shutil.rmtree(tmp, ignore_errors=True)


def write_manifest(stage: Path, args, started: float, configs: dict, seeds: dict, inputs: dict) -> None:
    outputs = sorted(f.name for f in stage.iterdir()) + ["manifest.json"]
    manifest = {
        "command": args.command,
        "argv": list(args.argv),
        "cwd": os.getcwd(),
        "toolkit_version": __version__,
        "configs": configs,
        "seeds": seeds,
        "inputs": inputs,
        "out": str(Path(args.out).resolve()),
        "outputs": outputs,
        "wall_clock_seconds": round(time.time() - started, 3),
    }
    (stage / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")


def attack_config(args, epsilon: float) -> AttackConfig:
    return AttackConfig(
        epsilon=epsilon,
        alpha=to_unit(args.alpha),
        max_steps=args.steps,
        random_start=args.random_start,
        seed=args.seed,
    )


def add_attack_args(p: argparse.ArgumentParser, default_steps: int) -> None:
    p.add_argument("--mode", choices=["targeted", "untargeted"], default="targeted")
    p.add_argument("--steps", type=int, default=default_steps)
    p.add_argument("--alpha", type=float, default=None, help="step size in 1/255 units (default eps/10)")
    p.add_argument("--random-start", action="store_true")
    p.add_argument("--n", type=int, default=None, help="attack only the first n evaluation examples")
    p.add_argument("--seed", type=int, default=0, help="target and random-start seed")
    p.add_argument("--jobs", type=int, default=1)


# --------------------------------------------------------------------------- commands


def cmd_train(args) -> None:
    started = time.time()
    data = load_data(args)
    spec = ModelSpec.mlp(data.dim, args.hidden, data.num_classes)
    cfg = TrainConfig(epochs=args.epochs, batch_size=args.batch, learning_rate=args.lr, seed=args.seed)
    inner = AttackConfig(epsilon=args.eps * UNIT, alpha=to_unit(args.inner_alpha), max_steps=args.inner_steps, seed=args.seed)
    log: list = []
    configs = {"train": dataclasses.asdict(cfg), "model": spec.to_dict(), "data": data_record(args, data)}
    if args.objective == "natural":
        params = train_natural(spec, data, cfg, log)
    elif args.objective == "adversarial":
        params = train_adversarial(spec, data, cfg, inner, log)
        configs["inner_attack"] = inner.to_dict()
    else:
        alp = AlpConfig(
            lam=args.lam,
            inner_attack_mode="targeted_random" if args.alp_inner == "targeted" else "untargeted",
            include_clean_loss=args.alp_clean_loss,
            include_adv_loss=args.alp_adv_loss,
            inner_attack=inner,
        )
        params = train_alp(spec, data, cfg, alp, log)
        configs["alp"] = alp.to_dict()
    configs["epsilon_units"] = {"eps_255": args.eps, "eps": args.eps * UNIT}
    with staged_output(Path(args.out)) as stage:
        save_checkpoint(params, stage / "model.ckpt")
        (stage / "train_log.csv").write_text(log_csv(log))
        write_manifest(stage, args, started, configs, {"train": args.seed, "data": args.data_seed}, {})
    print(f"objective={args.objective} final_objective={log[-1].objective:.6f} train_acc={log[-1].clean_acc:.4f}")


def cmd_eval(args) -> None:
    started = time.time()
    data = load_data(args)
    params = load_model(args.model, data)
    losses = example_losses(params, data)
    preds = np.argmax(forward_logits(params, data.X), axis=1)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["example", "label", "prediction", "loss"])
    for i, (c, p, l) in enumerate(zip(data.y, preds, losses)):
        w.writerow([i, int(c), int(p), repr(float(l))])
    acc = clean_accuracy(params, data)
    with staged_output(Path(args.out)) as stage:
        (stage / "eval.csv").write_text(buf.getvalue())
        write_manifest(stage, args, started, {"data": data_record(args, data)}, {"data": args.data_seed}, {"model": str(Path(args.model).resolve())})
    print(f"clean_accuracy={acc:.6f} n={len(data)}")


def run_sweep(args, params: Parameters, data: Dataset, grid: list[float]) -> SweepReport:
    cfg = attack_config(args, grid[-1])
    if args.mode == "targeted":
        return targeted_sweep(params, data, grid, cfg, target_seed=args.seed, jobs=args.jobs)
    return untargeted_sweep(params, data, grid, cfg, jobs=args.jobs)


def sweep_configs(args, data: Dataset, grid: list[float]) -> dict:
    return {
        "mode": args.mode,
        "eps_grid": [format_epsilon(e) for e in grid],
        "eps_grid_255": [round(e / UNIT, 10) for e in grid],
        "steps": args.steps,
        "alpha_255": args.alpha,
        "random_start": args.random_start,
        "data": data_record(args, data),
    }


def cmd_sweep(args) -> None:
    started = time.time()
    grid = parse_eps_grid(args.eps_grid)
    data = first_n(load_data(args), args.n)
    params = load_model(args.model, data)
    report = run_sweep(args, params, data, grid)
    with staged_output(Path(args.out)) as stage:
        (stage / "sweep.csv").write_text(report.to_csv())
        write_manifest(
            stage, args, started, sweep_configs(args, data, grid), {"target": args.seed, "data": args.data_seed},
            {"model": str(Path(args.model).resolve())},
        )
    print(report.to_csv(), end="")


def cmd_compare(args) -> None:
    started = time.time()
    models = [m for m in args.models.split(",") if m]
    if len(models) < 2:
        raise UsageError("--models needs at least two checkpoints")
    grid = parse_eps_grid(args.eps_grid)
    data = first_n(load_data(args), args.n)
    lines = ["model," + SWEEP_HEADER]
    for m in models:
        report = run_sweep(args, load_model(m, data), data, grid)
        lines += [f"{m}," + ",".join(r) for r in report.rows()]
    text = "\n".join(lines) + "\n"
    with staged_output(Path(args.out)) as stage:
        (stage / "compare.csv").write_text(text)
        write_manifest(
            stage, args, started, sweep_configs(args, data, grid), {"target": args.seed, "data": args.data_seed},
            {"models": [str(Path(m).resolve()) for m in models]},
        )
    print(text, end="")


def cmd_attack(args) -> None:
    started = time.time()
    data = first_n(load_data(args), args.n)
    params = load_model(args.model, data)
    eps = args.eps * UNIT
    cfg = attack_config(args, eps)
    targets = sample_targets(data.y, data.num_classes, args.seed) if args.mode == "targeted" else None
    results = run_attacks(params, data.X, data.y, cfg, targets, jobs=args.jobs)
    summary = ["example,success,first_success_step,steps_taken,final_objective"]
    with staged_output(Path(args.out)) as stage:
        for i, r in enumerate(results):
            (stage / trajectory_filename(i, r.mode)).write_text(r.trajectory_csv())
            fs = "" if r.first_success_step is None else str(r.first_success_step)
            summary.append(f"{i},{int(r.success)},{fs},{r.steps_taken},{r.best_objective!r}")
        (stage / "attack_summary.csv").write_text("\n".join(summary) + "\n")
        write_manifest(
            stage, args, started,
            {"attack": cfg.to_dict(), "mode": args.mode, "eps_255": args.eps, "data": data_record(args, data)},
            {"target": args.seed, "data": args.data_seed}, {"model": str(Path(args.model).resolve())},
        )
    med, mean, count = steps_to_success_stats(results)
    print(f"success={count}/{len(results)} median_first_success_step={med} mean_first_success_step={mean:.3f}")


def cmd_landscape(args) -> None:
    started = time.time()
    if args.resolution < 3 or args.resolution % 2 == 0:
        raise ValueError(f"--resolution must be odd and >= 3, got {args.resolution}")
    data = load_data(args)
    params = load_model(args.model, data)
    if not 0 <= args.example_index < len(data):
        raise ValueError(f"--example-index {args.example_index} out of range (n={len(data)})")
    ex = Example(data.X[args.example_index], int(data.y[args.example_index]))
    grid = landscape_grid(params, ex, args.radius * UNIT, args.resolution, args.seed, clip=not args.no_clip)
    with staged_output(Path(args.out)) as stage:
        (stage / "landscape.csv").write_text(grid.to_csv())
        (stage / "landscape.json").write_text(grid.sidecar(args.example_index))
        write_manifest(
            stage, args, started,
            {"radius_255": args.radius, "radius": args.radius * UNIT, "resolution": args.resolution,
             "clip": not args.no_clip, "example_index": args.example_index, "data": data_record(args, data)},
            {"rademacher": args.seed, "data": args.data_seed}, {"model": str(Path(args.model).resolve())},
        )
    c = args.resolution // 2
    print(f"center_loss={float(grid.z[c, c])!r} max_loss={float(grid.z.max())!r}")


def cmd_replay(args) -> None:
    manifest = json.loads(Path(args.manifest).read_text())
    argv = list(manifest["argv"])
    out = str(Path(args.out).resolve()) if args.out else manifest["out"]
    if "--out" in argv:
        argv[argv.index("--out") + 1] = out
    else:
        argv += ["--out", out]
    cwd = os.getcwd()
    os.chdir(manifest.get("cwd", cwd))
    try:
        code = main(argv)
    finally:
        os.chdir(cwd)
    if code != EXIT_OK:
        raise SystemExit(code)


# --------------------------------------------------------------------------- parser


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="alpeval", description=__doc__.split("\n")[0])
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train a natural, adversarial or ALP model")
    p.add_argument("--objective", choices=["natural", "adversarial", "alp"], required=True)
    add_data_args(p, "train")
    p.add_argument("--hidden", type=hidden_widths, default=[16], help="comma-separated hidden widths, or 'none'")
    p.add_argument("--epochs", type=int, default=30)
    p.add_argument("--lr", type=float, default=0.1)
    p.add_argument("--batch", type=int, default=32)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--eps", type=float, default=16.0, help="inner-attack radius in 1/255 units")
    p.add_argument("--inner-steps", type=int, default=10)
    p.add_argument("--inner-alpha", type=float, default=None, help="inner step size in 1/255 units")
    p.add_argument("--lambda", dest="lam", type=float, default=0.5)
    p.add_argument("--alp-inner", choices=["targeted", "untargeted"], default="targeted")
    p.add_argument("--alp-clean-loss", type=on_off, default=True)
    p.add_argument("--alp-adv-loss", type=on_off, default=False)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="per-example clean loss and predictions")
    p.add_argument("--model", required=True)
    add_data_args(p, "test")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("sweep", help="warm-started epsilon sweep")
    p.add_argument("--model", required=True)
    p.add_argument("--eps-grid", default="0:16:17", help="start:end:count in 1/255 units")
    add_attack_args(p, 1000)
    add_data_args(p, "test")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("compare", help="sweeps of several models in one CSV")
    p.add_argument("--models", required=True, help="comma-separated checkpoints")
    p.add_argument("--eps-grid", default="0:16:17")
    add_attack_args(p, 1000)
    add_data_args(p, "test")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_compare)

    p = sub.add_parser("attack", help="per-example PGD trajectories")
    p.add_argument("--model", required=True)
    p.add_argument("--eps", type=float, default=16.0, help="radius in 1/255 units")
    add_attack_args(p, 1000)
    add_data_args(p, "test")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_attack)

    p = sub.add_parser("landscape", help="loss surface around one example")
    p.add_argument("--model", required=True)
    p.add_argument("--example-index", type=int, default=0)
    p.add_argument("--radius", type=float, default=16.0, help="in 1/255 units")
    p.add_argument("--resolution", type=int, default=41)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--no-clip", action="store_true")
    add_data_args(p, "test")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_landscape)

    p = sub.add_parser("replay", help="re-run a command from its manifest.json")
    p.add_argument("manifest")
    p.add_argument("--out", default=None, help="write to this directory instead of the recorded one")
    p.set_defaults(func=cmd_replay)
    return parser


def main(argv: list[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    args.argv = argv
    try:
        args.func(args)
    except UsageError as exc:
        print(f"alpeval: usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except OSError as exc:
        print(f"alpeval: I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    except (ValueError, CheckpointError) as exc:
        print(f"alpeval: invalid input: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except SystemExit as exc:
        return int(exc.code or 0)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
