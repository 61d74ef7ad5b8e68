"""Command-line front end: generate, train, evaluate, shift-eval, plot.

Every subcommand is deterministic under a fixed seed and writes a manifest
with the fully resolved configuration next to its outputs.

Exit codes: 0 success, 2 configuration error, 3 data error, 4 numerical
failure.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

import numpy as np

from . import __version__
from . import models as md
from . import robustness as rb
from . import scm
from .data import DataFormatError, build_group_index, load_csv, save_csv
from .penalties import (
    DegenerateVarianceError,
    PenaltyConfig,
    conditional_penalty,
    variance_ratio,
)
from .plotting import decision_boundary_svg
from .training import (
    DivergenceError,
    OptimizerConfig,
    TrainConfig,
    train,
)

EXIT_CONFIG = 2
EXIT_DATA = 3
EXIT_NUMERIC = 4


class ConfigError(ValueError):
    pass


def _apply_thread_cap():
    cap = os.environ.get("CORE_REG_THREADS")
    if cap is None:
        return
    try:
        value = int(cap)
        if value < 1:
            raise ValueError
    except ValueError:
        raise ConfigError(f"CORE_REG_THREADS must be a positive integer, got {cap!r}") from None
    for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
        os.environ[var] = str(value)


def _write_json(path: Path, payload: dict):
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=1, sort_keys=True)
        fh.write("\n")


def _manifest(out_dir: Path, command: str, resolved: dict, outputs: list):
    _write_json(out_dir / "manifest.json", {
        "tool": "condvar",
        "version": __version__,
        "command": command,
        "config": resolved,
        "outputs": sorted(outputs),
    })


def _parse_model(text: str) -> md.ModelSpec:
    if text == "linear":
        raise ConfigError("linear models need the feature dimension: use linear:p[,out]")
    kind, _, rest = text.partition(":")
    if kind not in ("linear", "mlp") or not rest:
        raise ConfigError(f"bad model spec {text!r}; expected linear:p or mlp:p,h...,out")
    try:
        sizes = tuple(int(v) for v in rest.split(","))
    except ValueError:
        raise ConfigError(f"bad layer sizes in {text!r}") from None
    if kind == "linear" and len(sizes) == 1:
        sizes = (sizes[0], 1)
    try:
        return md.ModelSpec(kind, sizes)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None


def _parse_penalty(text: str, lam: float, gamma: float) -> PenaltyConfig:
    try:
        kind, _, nu_text = text.partition(",")
        target = {"f": "prediction", "l": "loss"}[kind]
        nu = float(nu_text) if nu_text else 1.0
        return PenaltyConfig(target, nu, lam, gamma)
    except (KeyError, ValueError):
        raise ConfigError(
            f"bad penalty spec {text!r}; expected f,1 | f,0.5 | l,1 | l,0.5"
        ) from None


# ---- gen -------------------------------------------------------------------

def _cmd_gen(args) -> int:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    if args.generator == "example1":
        shift = 4.0 if args.test_shift is None else args.test_shift
        train_ds, test_ds = scm.gen_example1(args.n, args.c, shift, args.seed)
    elif args.generator == "example2":
        shift = float(np.pi) if args.test_shift is None else args.test_shift
        train_ds, test_ds = scm.gen_example2(args.n, args.c, shift, args.seed)
    elif args.generator == "linear_scm":
        spec = scm.LinearScmSpec(
            p=args.p, q=args.q, r=args.r,
            id_count=args.id_count,
            style_class_mean=tuple([args.style_mean] * args.q),
            style_cov=tuple(tuple(row) for row in
                            (args.style_sd ** 2 * np.eye(args.q))),
            structure_seed=args.seed,
        )
        shift = 0.0 if args.test_shift is None else args.test_shift
        interv = scm.InterventionSpec("none") if shift == 0.0 else scm.InterventionSpec(
            "per_class_shift",
            delta_by_class=((0.0,) * args.q, (shift,) * args.q),
        )
        train_ds = scm.sample_linear_scm(spec, args.n, scm.InterventionSpec("none"), args.seed)
        test_ds = scm.sample_linear_scm(spec, args.n, interv, args.seed + 1)
    else:
        raise ConfigError(f"unknown generator {args.generator!r}")
    save_csv(train_ds.dataset, out / "train.csv")
    save_csv(test_ds.dataset, out / "test.csv")
    scm.save_latents(train_ds, out / "train_latents.json")
    scm.save_latents(test_ds, out / "test_latents.json")
    resolved = {
        "generator": args.generator, "n": args.n, "c": args.c,
        "seed": args.seed, "test_shift": shift,
    }
    _manifest(out, "gen", resolved,
              ["train.csv", "test.csv", "train_latents.json", "test_latents.json"])
    print(f"wrote train.csv test.csv train_latents.json test_latents.json to {out}")
    return 0


# ---- train -----------------------------------------------------------------

def _cmd_train(args) -> int:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    dataset = load_csv(args.data)
    spec = _parse_model(args.model)
    if spec.input_dim != dataset.p:
        raise DataFormatError(
            f"model expects {spec.input_dim} features but data has {dataset.p}"
        )
    penalty = _parse_penalty(args.penalty, args.lam, args.gamma)
    config = TrainConfig(
        penalty,
        OptimizerConfig(args.optimizer, args.lr),
        args.batch_size,
        args.epochs,
        args.seed,
    )
    groups = build_group_index(dataset)
    try:
        report = train(dataset, groups, spec, config)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    md.save_checkpoint(out / "checkpoint.json", spec, report.theta, args.seed,
                       args.epochs * len(groups.groups))
    report.save(out / "report.json")
    _manifest(out, "train", {"data": str(args.data), "model": args.model,
                             **config.to_dict()},
              ["checkpoint.json", "report.json"])
    last = report.history[-1]
    print(f"final loss {last['loss']:.6f} penalty {last['penalty']:.6f} "
          f"train error {last['train_error']:.4f}")
    return 0


# ---- eval ------------------------------------------------------------------

def _evaluate(spec, theta, dataset) -> dict:
    logits = md.forward(spec, theta, dataset.features)
    losses = md.per_sample_loss(spec, logits, dataset.labels)
    preds = md.predict_labels(spec, theta, dataset.features)
    groups = build_group_index(dataset)
    if spec.output_dim == 1:
        pen = conditional_penalty(logits, groups, 1.0)
        values = np.asarray(logits)
    else:
        pen = sum(conditional_penalty(logits[:, k], groups, 1.0)
                  for k in range(spec.output_dim))
        values = np.asarray(logits[:, -1])
    try:
        ratio = variance_ratio(values, groups) if groups.c > 0 else None
    except (DegenerateVarianceError, ValueError):
        ratio = None
    return {
        "n": len(dataset),
        "error_rate": float(np.mean(preds != dataset.labels)),
        "mean_loss": float(np.mean(losses)),
        "penalty_value": float(pen),
        "variance_ratio": ratio,
        "grouped_observations": int(groups.c),
    }


def _load_checkpoint_for(args, dataset):
    spec, theta, _seed, _step = md.load_checkpoint(args.checkpoint)
    if spec.input_dim != dataset.p:
        raise DataFormatError(
            f"checkpoint expects {spec.input_dim} features but data has {dataset.p}"
        )
    return spec, theta


def _cmd_eval(args) -> int:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    dataset = load_csv(args.data)
    spec, theta = _load_checkpoint_for(args, dataset)
    metrics = _evaluate(spec, theta, dataset)
    _write_json(out / "metrics.json", metrics)
    _manifest(out, "eval", {"checkpoint": str(args.checkpoint), "data": str(args.data)},
              ["metrics.json"])
    print(json.dumps(metrics, indent=1, sort_keys=True))
    return 0


# ---- shift_eval --------------------------------------------------------------

def _cmd_shift_eval(args) -> int:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    dataset = load_csv(args.data)
    if not Path(args.latents).exists():
        raise DataFormatError(f"latent sidecar {args.latents} not found")
    style_ds = scm.load_style_dataset(dataset, args.latents)
    spec, theta = _load_checkpoint_for(args, dataset)
    groups = build_group_index(dataset)
    cov = rb.estimate_conditional_covariance(style_ds, groups)
    sigma = cov.pooled
    if style_ds.scm is not None:
        sigma = np.asarray(style_ds.scm.style_cov)
    if not np.all(np.linalg.eigvalsh(sigma) > 0):
        raise DataFormatError("style covariance is not positive definite")
    unshifted = rb.loss_under_shift(spec, theta, style_ds, np.zeros(style_ds.q))
    xi_grid = [float(v) for v in args.xi]
    worst = [
        rb.worst_case_loss(spec, theta, style_ds, groups, sigma, xi,
                           method=args.method).value
        for xi in xi_grid
    ]
    fo = rb.first_order_gap(spec, theta, style_ds, groups, sigma, args.fo_xi)
    report = {
        "xi_grid": xi_grid,
        "worst_case": worst,
        "method": args.method,
        "note": "worst-case values are lower bounds on the supremum",
        "unshifted_loss": unshifted,
        "first_order": {"xi": fo.xi, "lhs": fo.lhs, "rhs": fo.rhs, "gap": fo.gap},
    }
    if style_ds.render_kind == "linear" and spec.kind == "linear" and spec.output_dim == 1:
        report["invariance_defect"] = rb.invariance_defect(theta, style_ds.style_matrix)
        direction = rb.steepest_style_direction(spec, theta, style_ds, sigma)
    else:
        direction = np.zeros(style_ds.q)
        direction[0] = 1.0
    magnitudes = [float(v) for v in args.magnitudes]
    probe = rb.divergence_probe(spec, theta, style_ds, direction, magnitudes)
    report["divergence"] = {
        "direction": [float(v) for v in probe.direction],
        "magnitudes": [float(v) for v in probe.magnitudes],
        "losses": [float(v) for v in probe.losses],
        "verdict": probe.verdict,
    }
    _write_json(out / "robustness.json", report)
    _manifest(out, "shift_eval", {
        "checkpoint": str(args.checkpoint), "data": str(args.data),
        "latents": str(args.latents), "xi_grid": xi_grid, "method": args.method,
    }, ["robustness.json"])
    print(json.dumps({"unshifted_loss": unshifted, "worst_case": worst,
                      "verdict": probe.verdict}, indent=1, sort_keys=True))
    return 0


# ---- plot ------------------------------------------------------------------

def _cmd_plot(args) -> int:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    dataset = load_csv(args.data)
    if dataset.p != 2:
        raise DataFormatError(f"plotting needs 2-d features, got p = {dataset.p}")
    checkpoints = []
    for path in args.checkpoints:
        spec, theta, _seed, _step = md.load_checkpoint(path)
        checkpoints.append((spec, theta))
    labels = args.labels if args.labels else [Path(p).stem for p in args.checkpoints]
    if len(labels) != len(checkpoints):
        raise ConfigError("need exactly one label per checkpoint")
    svg = decision_boundary_svg(dataset, checkpoints, labels)
    target = out / args.name
    with open(target, "w", encoding="utf-8") as fh:
        fh.write(svg)
    _manifest(out, "plot", {"data": str(args.data),
                            "checkpoints": [str(p) for p in args.checkpoints],
                            "labels": labels}, [args.name])
    print(f"wrote {target}")
    return 0


# ---- parser ----------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="condvar",
        description="conditional variance regularization toolkit",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen", help="generate synthetic style-aware datasets")
    g.add_argument("generator", choices=["example1", "example2", "linear_scm"])
    g.add_argument("--n", type=int, required=True)
    g.add_argument("--c", type=int, required=True, help="number of grouped sample pairs")
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--test-shift", type=float, default=None)
    g.add_argument("--p", type=int, default=10)
    g.add_argument("--q", type=int, default=2)
    g.add_argument("--r", type=int, default=4)
    g.add_argument("--id-count", type=int, default=2500)
    g.add_argument("--style-mean", type=float, default=1.0)
    g.add_argument("--style-sd", type=float, default=1.0)
    g.add_argument("--out", default=".")
    g.set_defaults(func=_cmd_gen)

    t = sub.add_parser("train", help="train a classifier")
    t.add_argument("--data", required=True)
    t.add_argument("--model", required=True, help="linear:p or mlp:p,h...,out")
    t.add_argument("--lambda", dest="lam", type=float, default=0.0)
    t.add_argument("--penalty", default="f,1", help="f,1 | f,0.5 | l,1 | l,0.5")
    t.add_argument("--gamma", type=float, default=0.0)
    t.add_argument("--optimizer", choices=["adam", "sgd"], default="adam")
    t.add_argument("--lr", type=float, default=0.01)
    t.add_argument("--batch-size", type=int, default=120)
    t.add_argument("--epochs", type=int, default=10)
    t.add_argument("--seed", type=int, default=0)
    t.add_argument("--out", default=".")
    t.set_defaults(func=_cmd_train)

    e = sub.add_parser("eval", help="evaluate a checkpoint on a dataset")
    e.add_argument("--checkpoint", required=True)
    e.add_argument("--data", required=True)
    e.add_argument("--out", default=".")
    e.set_defaults(func=_cmd_eval)

    s = sub.add_parser("shift_eval", help="robustness report under style shifts")
    s.add_argument("--checkpoint", required=True)
    s.add_argument("--data", required=True)
    s.add_argument("--latents", required=True, help="latent sidecar JSON")
    s.add_argument("--xi", type=float, nargs="+", default=[0.0, 0.01, 0.1, 1.0])
    s.add_argument("--fo-xi", type=float, default=1e-3)
    s.add_argument("--method", default="gradient_allocation",
                   choices=["uniform_ball", "gradient_allocation", "exhaustive_tiny"])
    s.add_argument("--magnitudes", type=float, nargs="+",
                   default=[0.0, 1.0, 10.0, 100.0, 1000.0])
    s.add_argument("--out", default=".")
    s.set_defaults(func=_cmd_shift_eval)

    p = sub.add_parser("plot", help="SVG scatter with decision boundaries")
    p.add_argument("--data", required=True)
    p.add_argument("--checkpoints", nargs="*", default=[])
    p.add_argument("--labels", nargs="*", default=None)
    p.add_argument("--name", default="plot.svg")
    p.add_argument("--out", default=".")
    p.set_defaults(func=_cmd_plot)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        # argparse exits 2 on bad flags, which matches the config exit code
        return int(exc.code) if exc.code else 0
    try:
        _apply_thread_cap()
        return args.func(args)
    except (ConfigError, ValueError) as exc:
        if isinstance(exc, DataFormatError):
            print(f"data error: {exc}", file=sys.stderr)
            return EXIT_DATA
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except FileNotFoundError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (DivergenceError, np.linalg.LinAlgError, ArithmeticError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
