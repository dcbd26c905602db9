"""Command-line interface.

Subcommands: ``simulate``, ``register``, ``stitch``, ``evaluate``,
``bootstrap`` and ``experiment {fig2, synthetic, sweep-gamma,
sweep-landmarks}``.  Every command reads an optional JSON run configuration
(``--config``), is deterministic given ``--seed``, writes its artifacts to
``--out`` and prints a one-line summary.

Exit codes: 0 success, 2 usage error, 3 data error, 4 numerical failure.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

import numpy as np

from . import io as rio
from .core import HawkesParams, PoissonBumpModel
from .errors import (DataFormatError, DescentFailure, DomainError, ImpossibleEventError,
                     StationarityError)
from .evaluate import BootstrapConfig, bootstrap_variance, distortion_error_experiment, holdout_loglik, risk_over
from .experiments import build_truth, parameter_sweep, registration_config, summarize, synthetic_experiment
from .mle import fit_model
from .register import register, relative_estimation_error
from .simulate import SyntheticDatasetSpec, make_synthetic_dataset, stitch_randomly
from .warp import PiecewiseLinearWarp, distortion

EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 2, 3, 4


class UsageError(Exception):
    pass


def _parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="JSON run configuration")
    common.add_argument("--seed", type=int, default=0, help="random seed (default 0)")
    common.add_argument("--out", type=Path, default=Path("."), help="output directory")
    common.add_argument("--threads", type=int, default=os.cpu_count() or 1, help="worker threads")
    common.add_argument("--mode", choices=("parallel", "sequential"), help="warp update mode")

    parser = argparse.ArgumentParser(prog="regpp", description="Registered point process toolkit")
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("simulate", parents=[common], help="simulate a warped synthetic dataset")
    sub.add_parser("register", parents=[common], help="jointly fit a model and per-sequence warps")
    sub.add_parser("stitch", parents=[common], help="stitch every sequence with K random partners")
    sub.add_parser("evaluate", parents=[common], help="score a registration result")
    sub.add_parser("bootstrap", parents=[common], help="parametric bootstrap variance of the fit")
    exp = sub.add_parser("experiment", help="run an experiment protocol")
    exp.add_argument("name", choices=("fig2", "synthetic", "sweep-gamma", "sweep-landmarks"))
    for action in common._actions:
        if action.dest != "help":
            exp._add_action(action)
    return parser


def _config(args) -> rio.RunConfig:
    cfg = rio.load_config(args.config) if args.config else rio.RunConfig()
    if args.mode:
        cfg = cfg.model_copy(update={"registration": cfg.registration.model_copy(update={"update_mode": args.mode})})
    return cfg


def _require(value, name):
    if value is None:
        raise UsageError(f"the configuration must set {name!r} for this command")
    return value


def _template(cfg: rio.RunConfig, seqs, horizon):
    if cfg.truth:
        return rio.load_model(cfg.truth)
    if cfg.model.family == "hawkes":
        C = cfg.model.num_types
        return HawkesParams(np.ones(C), np.zeros((C, C)), cfg.model.decay)
    return build_truth(cfg.model, horizon, 0)


def cmd_simulate(args, cfg, digest):
    d = cfg.data
    truth = build_truth(cfg.model, d.horizon, args.seed)
    spec = SyntheticDatasetSpec(truth, d.num_sequences, d.horizon, d.warp_basis, args.seed,
                                d.train_fraction, d.warp_resolution, d.identity_warps)
    ds = make_synthetic_dataset(spec, n_jobs=args.threads)
    C = truth.num_types
    rio.save_dataset(ds.train, args.out / "train.jsonl", C)
    rio.save_dataset(ds.train_raw, args.out / "train_raw.jsonl", C)
    rio.save_dataset(ds.test, args.out / "test.jsonl", C)
    rio.save_warps(ds.train_warps, args.out / "true_warps.json", [s.seq_id for s in ds.train])
    rio.save_model(truth, args.out / "truth.json",
                   {"config_sha256": digest, "seed": args.seed,
                    "note": "default ground truth generated by the toolkit" if cfg.model.mu is None else "configured"})
    events = sum(len(s) for s in ds.train)
    return f"simulated train={len(ds.train)} test={len(ds.test)} train_events={events}"


def cmd_register(args, cfg, digest):
    seqs, meta = rio.load_dataset(_require(cfg.dataset, "dataset"))
    if not seqs:
        raise DataFormatError("the dataset holds no sequences")
    template = _template(cfg, seqs, seqs[0].horizon)
    rcfg = registration_config(cfg.registration, args.seed, args.threads)
    result = register(seqs, template, rcfg)
    meta = {"config_sha256": digest, "seed": args.seed}
    rio.save_result(result, args.out / "result.json", meta)
    rio.emit_trace_csv(result, args.out / "trace.csv", digest, args.seed)
    line = f"final_loss={float(result.trace[-1])!r} iterations={result.iterations}"
    if cfg.truth:
        line += f" relative_error={relative_estimation_error(result.model, rio.load_model(cfg.truth))!r}"
    return line


def cmd_stitch(args, cfg, digest):
    seqs, meta = rio.load_dataset(_require(cfg.dataset, "dataset"))
    out = stitch_randomly(seqs, cfg.stitch_k, np.random.default_rng(args.seed))
    rio.save_dataset(out, args.out / "stitched.jsonl", meta["C"])
    return f"stitched sequences={len(out)} K={cfg.stitch_k} horizon={out[0].horizon if out else 0}"


def cmd_evaluate(args, cfg, digest):
    result = rio.load_result(_require(cfg.result, "result"))
    metrics = {"config_sha256": digest, "seed": args.seed, "final_loss": float(result.trace[-1])}
    model = result.model
    if isinstance(model, PoissonBumpModel) and model.period is not None:
        model = PoissonBumpModel(model.onsets, model.decays, model.amplitudes)
    if cfg.test_dataset:
        test, _ = rio.load_dataset(cfg.test_dataset)
        metrics["holdout_loglik"] = holdout_loglik(model, test)
    if cfg.truth:
        metrics["relative_error"] = relative_estimation_error(model, rio.load_model(cfg.truth))
    warps = result.warps
    if len(warps) >= 2 and len({w.horizon for w in warps}) == 1:
        metrics["risk_over"] = risk_over(warps)
    metrics["mean_distortion"] = float(np.mean([distortion(w) for w in warps]))
    (args.out / "metrics.json").write_text(json.dumps(metrics, indent=1) + "\n", encoding="utf-8")
    return " ".join(f"{k}={v!r}" for k, v in metrics.items() if k not in ("config_sha256", "seed"))


def cmd_bootstrap(args, cfg, digest):
    result = rio.load_result(_require(cfg.result, "result"))
    horizons = [u.horizon for u in result.unwarps]
    mle_cfg = registration_config(cfg.registration).mle
    model = result.model
    fit = lambda seqs: fit_model(model, seqs, [PiecewiseLinearWarp.identity(s.horizon) for s in seqs], mle_cfg)
    boot = bootstrap_variance(model, fit, horizons,
                              BootstrapConfig(cfg.experiment.bootstrap_replicates, args.seed), args.threads)
    rio.write_csv(args.out / "bootstrap.csv", ["parameter", "variance"], enumerate(boot.variances),
                  ["columns: parameter (index into the flattened parameter vector), variance (ddof=1)"]
                  + rio.provenance_lines(digest, args.seed), trailer=[f"risk_under={boot.risk!r}"])
    return f"risk_under={boot.risk!r} replicates={boot.estimates.shape[0]}"


def _rows_csv(path, rows, digest, seed, first="parameter"):
    rio.write_csv(path, ["seed", "train_size", "method", first, "relative_error", "holdout_loglik"],
                  [(r.seed, r.train_size, r.method, r.parameter, r.error, r.holdout) for r in rows],
                  ["columns: seed, train_size, method, parameter, relative_error, holdout_loglik"]
                  + rio.provenance_lines(digest, seed))


def cmd_experiment(args, cfg, digest):
    e = cfg.experiment
    seeds = [args.seed + k for k in range(e.seeds)]
    if args.name == "fig2":
        truth = build_truth(cfg.model, cfg.data.horizon, args.seed)
        if not isinstance(truth, HawkesParams):
            raise UsageError("the fig2 experiment needs a Hawkes model")
        table = distortion_error_experiment(truth, e.trials, e.sequences, cfg.data.horizon, e.strengths,
                                            cfg.data.warp_basis, args.seed,
                                            registration_config(cfg.registration).mle, args.threads)
        rio.emit_distortion_table_csv(table, args.out / "fig2.csv", digest, args.seed)
        return f"trials={e.trials} pearson={table.pearson!r} kendall={table.kendall!r}"
    if args.name == "synthetic":
        rows = synthetic_experiment(cfg.model, cfg.data, cfg.registration, seeds, e.train_sizes, e.stitch,
                                    args.threads)
        _rows_csv(args.out / "synthetic.csv", rows, digest, args.seed, "stitch_k")
        summary = summarize(rows)
        return " ".join(f"{m}@{n}={err:.4g}" for (m, n), (err, _) in sorted(summary.items()))
    parameter = "gamma" if args.name == "sweep-gamma" else "num_landmarks"
    values = e.gammas if parameter == "gamma" else e.landmarks
    rows = parameter_sweep(parameter, values, cfg.model, cfg.data, cfg.registration, seeds,
                           e.train_sizes[0], args.threads)
    summary = summarize(rows, key=("parameter",))
    rio.write_csv(args.out / f"{args.name}.csv", [parameter, "median_relative_error", "median_holdout_loglik"],
                  [(v, err, hold) for (v,), (err, hold) in sorted(summary.items())],
                  [f"columns: {parameter}, median relative error and holdout log-likelihood over seeds"]
                  + rio.provenance_lines(digest, args.seed))
    _rows_csv(args.out / f"{args.name}-trials.csv", rows, digest, args.seed)
    best = min(summary.items(), key=lambda kv: kv[1][0])[0][0]
    return f"{parameter}_values={len(values)} best={best!r}"


COMMANDS = {"simulate": cmd_simulate, "register": cmd_register, "stitch": cmd_stitch,
            "evaluate": cmd_evaluate, "bootstrap": cmd_bootstrap, "experiment": cmd_experiment}


def run(argv=None) -> int:
    """Parse ``argv``, execute one command and return its exit code."""
    parser = _parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code) if exc.code is not None else 0
    try:
        cfg = _config(args)
        args.out.mkdir(parents=True, exist_ok=True)
        line = COMMANDS[args.command](args, cfg, rio.config_hash(cfg))
    except UsageError as err:
        print(f"usage error: {err}", file=sys.stderr)
        return EXIT_USAGE
    except (DataFormatError, FileNotFoundError, IsADirectoryError, PermissionError) as err:
        print(f"data error: {err}", file=sys.stderr)
        return EXIT_DATA
    except (DescentFailure, ImpossibleEventError, StationarityError, FloatingPointError,
            np.linalg.LinAlgError) as err:
        print(f"numeric failure: {err}", file=sys.stderr)
        return EXIT_NUMERIC
    except DomainError as err:
        print(f"data error: {err}", file=sys.stderr)
        return EXIT_DATA
    print(line)
    return 0


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
