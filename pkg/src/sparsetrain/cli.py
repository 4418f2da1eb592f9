"""Command-line interface.

Subcommands::

    sparsetrain train         --config cfg.ini [--seed N] [--out DIR]
                              [--override sec.key=val ...] [--resume ckpt.npz]
    sparsetrain eval          --checkpoint ckpt.npz --config cfg.ini
                              [--eval-samples N]
    sparsetrain diagnose      --config cfg.ini [--override sec.key=val ...]
    sparsetrain project-check [--trials N] [--dim D] [--seed S]
                              [--budget-ratio R]

Exit codes: 0 success, 2 configuration error, 3 numeric failure (non-finite
loss), 4 I/O or file-format error, 5 self-check failure. All stdout of a
seeded command is deterministic; wall-clock data goes only to manifest.json.
"""

from __future__ import annotations

import argparse
import json
import os
import sys

import numpy as np

from . import __version__
from .checkpoint import load_checkpoint, restore_trainer
from .config import (RunManifest, diagnose_settings, read_config,
                     resolve_out_dir, train_settings, write_manifest)
from .data import dataset_from_config
from .diagnostics import (enumerate_expectation, enumerate_variances,
                          network_loss, toy_quadratic, variance_report)
from .errors import (CheckpointError, ConfigError, DataFormatError,
                     NonFiniteLossError, ParameterError)
from .models import build_model
from .structure import (StructureVector, preconditioner, project,
                        reference_projection)
from .training import Trainer

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NUMERIC = 3
EXIT_IO = 4
EXIT_CHECK = 5


def _build_parser():
    parser = argparse.ArgumentParser(
        prog="sparsetrain",
        description="Channel-sparse network training with paired stochastic structure gradients",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p_train = sub.add_parser("train", help="train a model from an INI config")
    p_train.add_argument("--config", required=True)
    p_train.add_argument("--seed", type=int, default=None, help="override train.seed")
    p_train.add_argument("--out", default=None, help="override run.out")
    p_train.add_argument("--override", action="append", default=[],
                         metavar="SECTION.KEY=VALUE")
    p_train.add_argument("--resume", default=None, metavar="CHECKPOINT")

    p_eval = sub.add_parser("eval", help="evaluate a checkpoint")
    p_eval.add_argument("--checkpoint", required=True)
    p_eval.add_argument("--config", required=True,
                        help="config supplying the [run]/[data] dataset sections")
    p_eval.add_argument("--eval-samples", type=int, default=None)

    p_diag = sub.add_parser("diagnose", help="estimator variance diagnostics")
    p_diag.add_argument("--config", required=True)
    p_diag.add_argument("--override", action="append", default=[],
                        metavar="SECTION.KEY=VALUE")

    p_proj = sub.add_parser("project-check", help="projection self-test")
    p_proj.add_argument("--trials", type=int, default=200)
    p_proj.add_argument("--dim", type=int, default=50)
    p_proj.add_argument("--seed", type=int, default=0)
    p_proj.add_argument("--budget-ratio", type=float, default=0.5)
    return parser


# ---------------------------------------------------------------------------
# train
# ---------------------------------------------------------------------------

def cmd_train(args):
    cfg = read_config(args.config)
    run, config, data_params = train_settings(cfg, args.override, args.seed, args.out)
    out_dir = run["out"]
    os.makedirs(out_dir, exist_ok=True)
    data = dataset_from_config(run["dataset"], data_params, workdir=resolve_out_dir("."))

    if args.resume:
        meta, _ = load_checkpoint(args.resume)
        if meta["dataset"] != data.provenance:
            print(f"warning: checkpoint dataset '{meta['dataset']}' != "
                  f"configured dataset '{data.provenance}'", file=sys.stderr)
        trainer = restore_trainer(args.resume, data)
        config = trainer.config
        mode = "a"
    else:
        spec = build_model(run["model"], data.input_shape, data.classes)
        trainer = Trainer(config, spec, data)
        mode = "w"
    trainer.snapshot_dir = out_dir

    metrics_path = os.path.join(out_dir, "metrics.jsonl")
    checkpoint_path = os.path.join(out_dir, "checkpoint.npz")
    report_path = os.path.join(out_dir, "final_report.json")
    write_manifest(out_dir, RunManifest(
        command="train",
        config={"run": run, "train": config.__dict__, "data": data_params,
                "dataset_provenance": data.provenance,
                "model_channels": trainer.spec.num_channels},
        artifacts={"metrics": metrics_path, "checkpoint": checkpoint_path,
                   "final_report": report_path},
        package_version=__version__,
    ))

    with open(metrics_path, mode, encoding="utf-8") as metrics:
        def sink(record):
            metrics.write(record.to_json())
            metrics.write("\n")

        every = run["checkpoint_every"]
        for epoch in range(trainer.epoch, config.epochs):
            trainer.run(sink=sink, epochs=epoch + 1)
            print(f"epoch {trainer.epoch}/{config.epochs} "
                  f"eval_accuracy={trainer.last_eval:.4f} "
                  f"s_sum={trainer.structure.values.sum():.3f}")
            if every and trainer.epoch % every == 0 and trainer.epoch < config.epochs:
                trainer.checkpoint(checkpoint_path)

    trainer.checkpoint(checkpoint_path)
    report = trainer.finalize()
    with open(report_path, "w", encoding="utf-8") as f:
        json.dump(report.to_dict(), f, indent=2, sort_keys=True)
        f.write("\n")
    print(report.table())
    return EXIT_OK


# ---------------------------------------------------------------------------
# eval
# ---------------------------------------------------------------------------

def cmd_eval(args):
    cfg = read_config(args.config)
    run = cfg.get("run", {})
    if "dataset" not in run:
        raise ConfigError("run.dataset: required key is missing")
    data = dataset_from_config(run["dataset"], dict(cfg.get("data", {})),
                               workdir=resolve_out_dir("."))
    trainer = restore_trainer(args.checkpoint, data)
    if args.eval_samples is not None:
        if args.eval_samples < 1:
            raise ConfigError(f"eval-samples: must be >= 1, got {args.eval_samples}")
        trainer.config.eval_samples = args.eval_samples
    report = trainer.finalize()
    print(report.table())
    return EXIT_OK


# ---------------------------------------------------------------------------
# diagnose
# ---------------------------------------------------------------------------

def _print_report(report):
    print(f"channels            {report.num_channels}")
    print(f"alpha               {report.alpha}")
    print(f"samples             {report.n_samples} (+{report.cond_samples} per condition)")
    print(f"total var (plain)   {report.total_var_pge:.6g}")
    print(f"total var (paired)  {report.total_var_vr:.6g}")
    ratio = report.total_var_pge / report.total_var_vr if report.total_var_vr else float("inf")
    print(f"variance ratio      {ratio:.3f}")
    print(f"V_hat               {report.v_hat:.6g}")
    print(f"Vmax_hat            {report.v_max_hat:.6g}")
    print(f"EL2_hat             {report.e_loss_sq_hat:.6g}")
    print(f"bound value         {report.bound_value:.6g}")


def cmd_diagnose(args):
    cfg = read_config(args.config)
    run, params = diagnose_settings(cfg, args.override)
    out_dir = run["out"]
    os.makedirs(out_dir, exist_ok=True)
    mode = params["mode"]
    alpha = params.get("alpha", 0.5)
    seed = params.get("seed", 0)
    n_samples = params.get("n_samples", 2000)
    payload = {"mode": mode, "alpha": alpha}

    if mode == "toy":
        n = params.get("channels", 6)
        s_values = params.get("s_values", [0.5] * n)
        if len(s_values) != n:
            raise ConfigError(
                f"diagnose.s_values: got {len(s_values)} values for {n} channels"
            )
        structure = StructureVector(np.asarray(s_values), budget=float(n))
        loss_fn = toy_quadratic(n, seed=seed, offset=params.get("offset", 2.0))
        if n <= params.get("max_enum_channels", 12):
            enum_vr = enumerate_expectation(loss_fn, structure, alpha, "vr-pge")
            enum_pge = enumerate_expectation(loss_fn, structure, alpha, "pge")
            h = preconditioner(structure, alpha)
            res_vr = float(np.abs(enum_vr.expectation - h * enum_vr.grad_phi).max())
            res_pge = float(np.abs(enum_pge.expectation - enum_pge.grad_phi).max())
            moments = enumerate_variances(loss_fn, structure, alpha)
            slack = moments.bound_value - moments.second_moment_vr
            print(f"exact unbiasedness residual (paired) {res_vr:.3e}")
            print(f"exact unbiasedness residual (plain)  {res_pge:.3e}")
            print(f"exact var totals: plain {moments.total_var_pge:.6g}, "
                  f"paired {moments.total_var_vr:.6g}, "
                  f"ratio {moments.total_var_pge / moments.total_var_vr:.3f}")
            print(f"second-moment bound slack            {slack:.6g}")
            payload["exact"] = {
                "residual_vr": res_vr,
                "residual_pge": res_pge,
                "total_var_pge": moments.total_var_pge,
                "total_var_vr": moments.total_var_vr,
                "second_moment_vr": moments.second_moment_vr,
                "bound_value": moments.bound_value,
                "pair_variance": moments.pair_variance,
                "pair_variance_max": moments.pair_variance_max,
                "e_loss_sq": moments.e_loss_sq,
            }
            if slack < 0.0 or res_vr > 1e-9 or res_pge > 1e-9:
                print("diagnose: exact self-check FAILED", file=sys.stderr)
                return EXIT_CHECK
        report = variance_report(loss_fn, structure, alpha, n_samples,
                                 params.get("cond_samples"), seed=seed)
    else:
        if "dataset" not in cfg.get("run", {}):
            raise ConfigError("run.dataset: required key is missing in checkpoint mode")
        data = dataset_from_config(cfg["run"]["dataset"], dict(cfg.get("data", {})),
                                   workdir=resolve_out_dir("."))
        trainer = restore_trainer(params["checkpoint"], data)
        xs, ys = trainer.data.eval_arrays()
        batch = params.get("batch_size", 256)
        loss_fn = network_loss(trainer.spec, trainer.params, xs[:batch], ys[:batch])
        report = variance_report(loss_fn, trainer.structure, alpha, n_samples,
                                 params.get("cond_samples"), seed=seed)

    _print_report(report)
    payload["report"] = report.to_dict()
    out_path = os.path.join(out_dir, "diagnose.json")
    with open(out_path, "w", encoding="utf-8") as f:
        json.dump(payload, f, indent=2, sort_keys=True)
        f.write("\n")
    return EXIT_OK


# ---------------------------------------------------------------------------
# project-check
# ---------------------------------------------------------------------------

def cmd_project_check(args):
    if args.trials < 1 or args.dim < 1:
        raise ConfigError("project-check: trials and dim must be >= 1")
    if not 0.0 < args.budget_ratio <= 1.0:
        raise ConfigError(
            f"project-check: budget-ratio must be in (0, 1], got {args.budget_ratio}"
        )
    rng = np.random.default_rng(args.seed)
    budget = args.budget_ratio * args.dim
    worst_dev = 0.0
    worst_excess = 0.0
    for trial in range(args.trials):
        scale = 10.0 ** rng.uniform(-1.0, 1.0)
        z = rng.normal(0.3, scale, args.dim)
        got = project(z, budget)
        want = reference_projection(z, budget)
        dev = float(np.abs(got.values - want).max())
        excess = float(got.values.sum() - budget)
        worst_dev = max(worst_dev, dev)
        worst_excess = max(worst_excess, excess)
        again = project(got.values, budget)
        if not np.array_equal(again.values, got.values):
            print(f"project-check FAILED: projection not idempotent on trial {trial}")
            return EXIT_CHECK
        if dev > 1e-6:
            print(f"project-check FAILED: deviation {dev:.3e} from the exact "
                  f"solution on trial {trial}")
            return EXIT_CHECK
        if excess > 1e-9 or got.values.min() < 0.0 or got.values.max() > 1.0:
            print(f"project-check FAILED: infeasible output on trial {trial}")
            return EXIT_CHECK
    print(f"project-check: {args.trials} trials, dim {args.dim}, "
          f"budget {budget:g}: max deviation {worst_dev:.3e}, "
          f"max budget excess {worst_excess:.3e} -- ok")
    return EXIT_OK


# ---------------------------------------------------------------------------

def main(argv=None):
    args = _build_parser().parse_args(argv)
    handlers = {
        "train": cmd_train,
        "eval": cmd_eval,
        "diagnose": cmd_diagnose,
        "project-check": cmd_project_check,
    }
    try:
        return handlers[args.command](args)
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except ParameterError as exc:
        print(f"invalid parameter: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NonFiniteLossError as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        if exc.snapshot_path:
            print(f"state snapshot written to {exc.snapshot_path}", file=sys.stderr)
        return EXIT_NUMERIC
    except (DataFormatError, CheckpointError) as exc:
        print(f"file error: {exc}", file=sys.stderr)
        return EXIT_IO
    except OSError as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
