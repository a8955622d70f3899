"""Command-line interface.

Subcommands: ``train-flow``, ``calibrate``, ``discriminate``, ``run`` and
``plot``.  Exit codes: 0 success, 1 configuration error, 2 every experiment
cell diverged, 3 I/O failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
from pathlib import Path

import numpy as np

from . import harness, model_io, training
from .discriminators import FlowDensity
from .errors import ConfigurationError, ToolkitError
from .rng import RngStream


def _cmd_train_flow(args) -> int:
    try:
        raw = json.loads(Path(args.config).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigurationError(f"cannot read training config: {exc}") from exc
    config = training.TrainConfig.from_dict(raw)
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    if config.mode == "grid":
        model, grid_rows = training.grid_search(config)
        grid_path = out_dir / "grid_results.csv"
        with open(grid_path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["D", "W", "K", "init", "final_test_nll", "path"])
            for row in grid_rows:
                writer.writerow([row["depth"], row["width"], row["n_bins"],
                                 row["init"], format(row["final_test_nll"], ".17g"),
                                 str(out_dir / f"flow_{config.system}.json")])
        print(f"grid search done, wrote {grid_path}")
    else:
        model = training.train(config)

    model_path = out_dir / f"flow_{config.system}.json"
    model_io.save_model(model_path, model.flow, log_tau=None,
                        provenance=model.provenance)
    curve_path = out_dir / "loss_curve.csv"
    with open(curve_path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["epoch", "train_nll", "test_nll"])
        for epoch, train_nll, test_nll in model.loss_curve:
            writer.writerow([int(epoch), format(train_nll, ".17g"),
                             format(test_nll, ".17g")])
    print(f"trained {config.system} flow: test NLL {model.final_test_nll:.4f}")
    print(f"wrote {model_path} and {curve_path}")
    print("note: run `diengmf calibrate` before using the model as a discriminator")
    return 0


def _cmd_calibrate(args) -> int:
    flow, info = model_io.load_model(args.model)
    system = info.provenance.get("system")
    if system not in training.SYSTEM_DIM:
        raise ConfigurationError(
            f"model provenance lacks a known system (got {system!r})"
        )
    log_tau = training.calibrate_threshold(
        flow, system, n_samples=args.samples, quantile=args.quantile,
        rng=RngStream(args.seed),
    )
    model_io.update_log_tau(args.model, log_tau)
    print(f"calibrated {args.model}: log tau = {log_tau:.6f} "
          f"(quantile {args.quantile}, {args.samples} samples)")
    return 0


def _cmd_discriminate(args) -> int:
    flow, info = model_io.load_model(args.model)
    if info.log_tau is None:
        raise ConfigurationError("model is not calibrated; run `diengmf calibrate`")
    disc = FlowDensity(flow, info.log_tau)
    try:
        points = np.loadtxt(args.points, delimiter=",", ndmin=2)
    except (OSError, ValueError) as exc:
        raise ConfigurationError(f"cannot read points CSV: {exc}") from exc
    if points.shape[1] != flow.dim:
        raise ConfigurationError(
            f"points have dimension {points.shape[1]}, model expects {flow.dim}"
        )
    verdicts = disc.evaluate(points).astype(int)
    out = sys.stdout if args.out is None else open(args.out, "w", newline="")
    try:
        writer = csv.writer(out)
        writer.writerow([f"x{i + 1}" for i in range(flow.dim)] + ["accept"])
        for row, v in zip(points, verdicts):
            writer.writerow([format(x, ".17g") for x in row] + [int(v)])
    finally:
        if args.out is not None:
            out.close()
    return 0


def _cmd_run(args) -> int:
    config = harness.load_experiment_config(args.config)
    if args.seed is not None:
        config = harness.replace(config, seed=args.seed)
    if args.paper_scale:
        config = config.at_paper_scale()
    print(f"running {config.system}: {len(config.filters)} filters x "
          f"{len(config.ensemble_sizes)} ensemble sizes x {config.monte_carlo} seeds")
    records = harness.run_experiment(config, threads=args.threads,
                                     progress=args.progress)
    bars = "std" if config.system == "ikeda" else "sem3"
    paths = harness.emit_outputs(records, args.out_dir, error_bars=bars)
    for name, path in paths.items():
        print(f"wrote {name}: {path}")
    if all(r.diverged for r in records):
        print("error: every cell diverged", file=sys.stderr)
        return 2
    return 0


def _cmd_plot(args) -> int:
    rows = []
    try:
        with open(args.summary, newline="") as fh:
            for raw in csv.DictReader(fh):
                rows.append(harness.SummaryRow(
                    filter_label=raw["filter"],
                    n_members=int(raw["N"]),
                    mean_rmse=float(raw["mean_rmse"]),
                    stddev=float(raw["stddev"]),
                    sem=float(raw["sem"]),
                    runs=int(raw["runs"]),
                    diverged=int(raw.get("diverged", 0)),
                ))
    except (KeyError, ValueError) as exc:
        raise ConfigurationError(f"malformed summary CSV: {exc}") from exc
    if not rows:
        raise ConfigurationError("summary CSV is empty")
    harness.plot_summary(rows, args.out, error_bars=args.bars)
    print(f"wrote {args.out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="diengmf",
        description="Discriminator-informed ensemble Gaussian mixture filtering",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train-flow", help="train a normalizing-flow density model")
    p.add_argument("config", help="training config JSON")
    p.add_argument("--out-dir", default=".", help="output directory")
    p.set_defaults(func=_cmd_train_flow)

    p = sub.add_parser("calibrate", help="set the density threshold of a model")
    p.add_argument("model", help="model JSON file (rewritten in place)")
    p.add_argument("--samples", type=int, default=10_000)
    p.add_argument("--quantile", type=float, default=0.01)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=_cmd_calibrate)

    p = sub.add_parser("discriminate", help="classify states with a trained model")
    p.add_argument("model")
    p.add_argument("points", help="CSV of states, one per row")
    p.add_argument("--out", default=None, help="output CSV (default stdout)")
    p.set_defaults(func=_cmd_discriminate)

    p = sub.add_parser("run", help="run a sequential-filtering experiment")
    p.add_argument("config", help="experiment config JSON")
    p.add_argument("--seed", type=int, default=None, help="override master seed")
    p.add_argument("--paper-scale", action="store_true",
                   help="use the full Monte Carlo count and ensemble grid")
    p.add_argument("--out-dir", default="results")
    p.add_argument("--threads", type=int, default=1)
    p.add_argument("--progress", action="store_true")
    p.set_defaults(func=_cmd_run)

    p = sub.add_parser("plot", help="re-plot an existing summary.csv")
    p.add_argument("summary")
    p.add_argument("--out", default="rmse_vs_N.svg")
    p.add_argument("--bars", choices=["std", "sem3"], default="std")
    p.set_defaults(func=_cmd_plot)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigurationError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return 3
    except ToolkitError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
