"""Command-line entry point.

Exit codes: 0 success, 1 configuration error (including usage errors),
2 numeric failure (NaN/Inf or a failed internal check), 3 I/O or file
format error.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

import numpy as np

from .analysis import TaylorCheckConfig, taylor_check
from .config import (
    load_dataset_config,
    load_experiment_config,
    load_taylor_config,
)
from .datasets import generate, save_label_budget, subset_labels, write_binary
from .errors import ConfigurationError, ContractViolation, FormatError, NumericError
from .gradcheck import run_grad_sweep
from .harness import evaluate_checkpoint, train
from .models import LinearModel, ModelSpec, build

GRAD_TOLERANCE = 1e-4


class _Parser(argparse.ArgumentParser):
    # argparse exits 2 on bad usage; the CLI contract wants 1
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(1)


def _build_parser() -> _Parser:
    parser = _Parser(prog="tiedaug", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p_train = sub.add_parser("train", help="run a training experiment")
    p_train.add_argument("--config", required=True)
    p_train.add_argument("--out", required=True)

    p_eval = sub.add_parser("eval", help="score a checkpoint on the test split")
    p_eval.add_argument("--checkpoint", required=True)
    p_eval.add_argument("--config", required=True)
    p_eval.add_argument("--split", choices=("train", "test"), default="test")

    p_grad = sub.add_parser("grad-check", help="finite-difference gradient sweep")
    p_grad.add_argument("--trials", type=int, default=24)
    p_grad.add_argument("--step", type=float, default=1e-5)
    p_grad.add_argument("--seed", type=int, default=0)

    p_taylor = sub.add_parser("verify-taylor", help="noise-penalty vs Jacobian report")
    p_taylor.add_argument("--config", required=True)
    p_taylor.add_argument("--out", required=True)

    p_data = sub.add_parser("make-data", help="write a synthetic dataset as binary files")
    p_data.add_argument("--config", required=True)
    p_data.add_argument("--out", required=True)
    return parser


def _cmd_train(args) -> int:
    cfg = load_experiment_config(args.config)
    result = train(cfg, args.out)
    print(f"metrics: {result.metrics_path}")
    for seed in cfg.seeds:
        print(f"seed {seed}: final test accuracy {result.final_accuracy[seed]:.4f} "
              f"({result.checkpoint_paths[seed]})")
    return 0


def _cmd_eval(args) -> int:
    cfg = load_experiment_config(args.config)
    accuracy = evaluate_checkpoint(cfg, args.checkpoint, split=args.split)
    print(f"{args.split} accuracy: {accuracy:.17g}")
    return 0


def _cmd_grad_check(args) -> int:
    results = run_grad_sweep(trials=args.trials, step=args.step, seed=args.seed)
    worst_name, worst = max(results, key=lambda kv: kv[1])
    for name, err in results:
        print(f"{name}: {err:.3e}")
    print(f"max relative error: {worst:.3e} ({worst_name}) over {len(results)} draws")
    if worst > GRAD_TOLERANCE:
        raise NumericError(f"gradient check failed: {worst:.3e} > {GRAD_TOLERANCE:.0e}")
    return 0


def _taylor_model(cfg):
    if cfg.model == "linear":
        return LinearModel.random(cfg.input_dim, cfg.feature_dim, seed=cfg.seed)
    spec = ModelSpec(
        kind="mlp",
        input_dim=cfg.input_dim,
        hidden=cfg.hidden,
        feature_dim=cfg.feature_dim,
        classes=2,
        activation="tanh",
    )
    return build(spec, rng_seed=cfg.seed)


def _cmd_verify_taylor(args) -> int:
    cfg = load_taylor_config(args.config)
    probes = np.random.default_rng([cfg.seed, 7]).uniform(0.0, 1.0, size=(cfg.probes, cfg.input_dim))
    report = taylor_check(
        TaylorCheckConfig(
            model=_taylor_model(cfg),
            probes=probes,
            sigmas=cfg.sigmas,
            samples=cfg.samples,
            seed=cfg.seed,
        )
    )
    report.write_csv(args.out)
    worst = max(r.relative_gap for r in report.rows)
    print(f"wrote {len(report.rows)} rows to {args.out}; worst relative gap {worst:.3e}")
    return 0


def _cmd_make_data(args) -> int:
    spec = load_dataset_config(args.config)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    train_split, test_split = generate(spec)
    write_binary(train_split, out / "train.bin")
    write_binary(test_split, out / "test.bin")
    print(f"wrote {train_split.size} train / {test_split.size} test records to {out}")
    if spec.labels_per_class is not None:
        budget_rng = np.random.default_rng([spec.split_seed, 1])
        labeled_idx, _ = subset_labels(train_split, spec.labels_per_class, budget_rng)
        save_label_budget(out / "labels.txt", labeled_idx)
        print(f"wrote label budget of {labeled_idx.size} to {out / 'labels.txt'}")
    return 0


_COMMANDS = {
    "train": _cmd_train,
    "eval": _cmd_eval,
    "grad-check": _cmd_grad_check,
    "verify-taylor": _cmd_verify_taylor,
    "make-data": _cmd_make_data,
}


def main(argv=None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
        return _COMMANDS[args.command](args)
    except SystemExit as exc:
        return int(exc.code or 0)
    except (ConfigurationError, ContractViolation) as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return 1
    except NumericError as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return 2
    except (FormatError, OSError) as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
