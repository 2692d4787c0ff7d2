"""Command-line entry point: ``dpkan <subcommand> ...``."""

from __future__ import annotations

import argparse
import sys

from dpkan.accountant import InfeasibleTargetError, calibrate_sigma, compute_epsilon
from dpkan.config import load_config
from dpkan.data import gen_synthetic, load_csv, load_mnist_idx
from dpkan.experiment import format_sweep, run_experiment, sweep
from dpkan.metrics import accuracy, r2_score
from dpkan.serialize import load_model


class CliError(Exception):
    pass


def _widths(s):
    try:
        out = [int(w) for w in s.split(",") if w.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {s!r}") from None
    if not out or any(w < 1 for w in out):
        raise argparse.ArgumentTypeError("widths must be positive integers")
    return out


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="dpkan", description="Differentially private KAN training and accounting.")
    sub = p.add_subparsers(dest="command", required=True, metavar="COMMAND")

    t = sub.add_parser("train", help="run an experiment config")
    t.add_argument("--config", required=True)
    t.add_argument("--seed", type=int, help="override the root seed")
    t.add_argument("--out", help="override the output directory")

    e = sub.add_parser("evaluate", help="score a saved model on a dataset")
    e.add_argument("--model", required=True)
    e.add_argument("--data", required=True, nargs="+", metavar="PATH",
                   help="a CSV file, or an IDX images file followed by its labels file")
    e.add_argument("--metric", choices=("r2", "accuracy"))
    e.add_argument("--target", default="y", help="CSV target column (default: y)")

    a = sub.add_parser("accountant", help="epsilon for a noise level, or the noise level for a target epsilon")
    mode = a.add_mutually_exclusive_group(required=True)
    mode.add_argument("--sigma", type=float)
    mode.add_argument("--target-epsilon", type=float)
    a.add_argument("--batch-size", type=int, required=True)
    a.add_argument("--dataset-size", type=int, required=True)
    a.add_argument("--epochs", type=int, required=True)
    a.add_argument("--delta", type=float, required=True)
    a.add_argument("--conversion", choices=("improved", "standard"), default="improved")

    g = sub.add_parser("gen-synthetic", help="write a synthetic regression dataset as CSV")
    g.add_argument("--n", type=int, required=True)
    g.add_argument("--d", type=int, required=True)
    g.add_argument("--noise", type=float, required=True)
    g.add_argument("--seed", type=int, required=True)
    g.add_argument("--out", required=True)

    s = sub.add_parser("sweep", help="accuracy and parameter count across hidden widths")
    s.add_argument("--config", required=True, action="append", help="one template per model kind; repeatable")
    s.add_argument("--widths", required=True, type=_widths)
    s.add_argument("--modes", choices=("both", "private", "nonprivate"), default="both")
    s.add_argument("--out", help="directory for sweep.tsv and per-run outputs")
    return p


def _train(args):
    cfg = load_config(args.config)
    overrides = {}
    if args.seed is not None:
        overrides["seed"] = args.seed
    if args.out is not None:
        overrides["out_dir"] = args.out
    cfg = cfg.with_overrides(**overrides).validate()
    report = run_experiment(cfg)
    sys.stdout.write(report.to_text())


def _evaluate(args):
    model = load_model(args.model)
    if len(args.data) == 1:
        data = load_csv(args.data[0], args.target)
    elif len(args.data) == 2:
        data = load_mnist_idx(*args.data)
    else:
        raise CliError("--data takes one CSV path or two IDX paths")
    metric = args.metric or ("r2" if data.task == "regression" else "accuracy")
    preds = model.predict(data.features)
    if metric == "r2":
        if preds.shape[1] != 1:
            raise CliError(f"r2 needs a single-output model, got {preds.shape[1]} outputs")
        value = r2_score(data.targets, preds[:, 0])
    else:
        if data.task != "classification":
            raise CliError("accuracy needs class labels")
        value = accuracy(data.targets, preds)
    print(f"{metric}={value!r}")


def _accountant(args):
    if args.sigma is not None:
        spend = compute_epsilon(args.sigma, args.batch_size, args.dataset_size, args.epochs, args.delta,
                                method=args.conversion)
        print(f"epsilon={spend.epsilon!r} delta={args.delta!r} order={spend.order!r}")
    else:
        sigma = calibrate_sigma(args.target_epsilon, args.delta, args.batch_size, args.dataset_size, args.epochs,
                                method=args.conversion)
        print(f"sigma={sigma!r}")


def _gen_synthetic(args):
    gen_synthetic(args.n, args.d, args.noise, args.seed).to_csv(args.out)


def _sweep(args):
    configs = [load_config(path) for path in args.config]
    modes = {"both": (False, True), "private": (True,), "nonprivate": (False,)}[args.modes]
    rows = sweep(configs, args.widths, modes=modes, out_dir=args.out)
    sys.stdout.write(format_sweep(rows))


COMMANDS = {
    "train": _train,
    "evaluate": _evaluate,
    "accountant": _accountant,
    "gen-synthetic": _gen_synthetic,
    "sweep": _sweep,
}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        # argparse exits 2 on usage errors and 0 for --help
        return int(exc.code or 0)
    try:
        COMMANDS[args.command](args)
    except (CliError, InfeasibleTargetError, ValueError, OSError, ArithmeticError) as exc:
        msg = str(exc).splitlines()[0] if str(exc) else ""
        print(f"error: {type(exc).__name__}: {msg}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
