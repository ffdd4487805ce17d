"""Command-line entry point.

Subcommands: fit, predict, select, cv, bootstrap, simulate, compare.
Every run writes its artifacts into an output directory: CSV tables (each
with a .meta.json sidecar recording version, seed, and a config digest),
JSON model files, and PNG figures for the report-style commands.

Exit codes: 0 success; 2 configuration/schema/data problems; 3 the model
fit did not converge (partial artifacts are still written and flagged);
1 any other runtime failure.  Failures leave a machine-readable
error.json in the output directory.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import os
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .baseline import BaselineError, compare
from .dataset import DataError, SchemaError, load_dataset, load_schema
from .inference import (
    InferenceError,
    bootstrap_se,
    category_contrasts,
    ellipse_summary,
    run_bootstrap,
)
from .rng import GENERATOR_NAME
from .scaling import ScalingError
from .selection import SelectionError, cross_validate, fit_null, ic_values, select_rank
from .simulation import SCENARIOS, SimScenario, SimulationError, run_study
from .solver import (
    CANONICAL_STEPS,
    FitOptions,
    SolverError,
    fit,
    load_model,
    predict,
    save_model,
)

EXIT_OK = 0
EXIT_RUNTIME = 1
EXIT_CONFIG = 2
EXIT_NO_CONVERGENCE = 3


class ConvergenceFailure(RuntimeError):
    pass


# ---------------------------------------------------------------------------
# output helpers
# ---------------------------------------------------------------------------


def _fmt(value) -> str:
    if isinstance(value, (bool, np.bool_)):
        return str(bool(value))
    if isinstance(value, (float, np.floating)):
        return format(float(value), ".6g")
    return str(value)


class Emitter:
    """Writes CSVs (+ sidecars), JSON, and figures into the output directory."""

    def __init__(self, outdir: Path, command: str, config: dict):
        self.outdir = outdir
        outdir.mkdir(parents=True, exist_ok=True)
        canon = json.dumps(config, sort_keys=True, default=str)
        self.meta = {
            "tool": "rrmix",
            "version": __version__,
            "command": command,
            "seed": config.get("seed"),
            "config_digest": hashlib.sha256(canon.encode()).hexdigest(),
            "rng": GENERATOR_NAME,
        }
        self.artifacts: list[str] = []

    def csv(self, name: str, header: list[str], rows) -> Path:
        path = self.outdir / name
        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(header)
            for row in rows:
                writer.writerow([_fmt(v) for v in row])
        sidecar = path.with_suffix(path.suffix + ".meta.json")
        sidecar.write_text(json.dumps(self.meta | {"artifact": name}, indent=1),
                           encoding="utf-8")
        self.artifacts.append(name)
        return path

    def json(self, name: str, payload: dict) -> Path:
        path = self.outdir / name
        path.write_text(json.dumps(payload, indent=1), encoding="utf-8")
        self.artifacts.append(name)
        return path

    def figure(self, name: str, fig) -> Path:
        from .figures import save_figure

        path = self.outdir / name
        save_figure(fig, path)
        self.artifacts.append(name)
        return path

    def error(self, exc: Exception, exit_code: int) -> None:
        self.json("error.json", {
            "error": type(exc).__name__,
            "message": str(exc),
            "exit_code": exit_code,
            "partial_artifacts": self.artifacts,
        })


# ---------------------------------------------------------------------------
# argument plumbing
# ---------------------------------------------------------------------------


def _parse_ranks(text: str) -> list[int]:
    text = text.strip()
    if ":" in text:
        lo, hi = text.split(":")
        ranks = list(range(int(lo), int(hi) + 1))
    else:
        ranks = [int(tok) for tok in text.split(",") if tok]
    if not ranks or any(r < 1 for r in ranks):
        raise ValueError(f"invalid rank list {text!r}")
    return ranks


def _add_common(parser, *, data=True, seed_required=False):
    if data:
        parser.add_argument("--data", required=True, help="CSV file with a header row")
        parser.add_argument("--schema", required=True,
                            help="JSON schema file ({'variables': [...]})")
    parser.add_argument("--output", default=None,
                        help="output directory (default: env RRMIX_OUTPUT or ./rrmix-out)")
    parser.add_argument("--seed", type=int, required=seed_required,
                        default=None if seed_required else 0,
                        help="random seed" + (" (required)" if seed_required else ""))
    parser.add_argument("--tolerance", type=float, default=1e-6)
    parser.add_argument("--max-iterations", type=int, default=1000)
    parser.add_argument("--threads", type=int, default=None,
                        help="worker cap (default: env RRMIX_THREADS or 1)")
    parser.add_argument("--step-order", default=",".join(CANONICAL_STEPS),
                        help="comma list permuting the canonical updates")
    parser.add_argument("--no-count-sigma2", dest="count_sigma2", action="store_false",
                        help="exclude the shared residual variance from K")
    parser.add_argument("--neutral-impute-unseen", action="store_true",
                        help="map unseen predictor categories to the neutral score 0")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="rrmix",
        description="Rank-constrained regression for mixed responses with "
                    "optimally scaled predictors",
    )
    parser.add_argument("--version", action="version", version=f"rrmix {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("fit", help="fit one model and write a model file")
    _add_common(p)
    p.add_argument("--rank", type=int, required=True)

    p = sub.add_parser("predict", help="predictions for new rows from a model file")
    _add_common(p)
    p.add_argument("--model", required=True, help="model JSON from `fit`")

    p = sub.add_parser("select", help="fit statistics across ranks (AIC/BIC/R2)")
    _add_common(p)
    p.add_argument("--ranks", required=True, help="e.g. 1:5 or 1,2,3")

    p = sub.add_parser("cv", help="repeated V-fold cross-validation across ranks")
    _add_common(p, seed_required=True)
    p.add_argument("--ranks", required=True)
    p.add_argument("--folds", type=int, default=10)
    p.add_argument("--repeats", type=int, default=10)

    p = sub.add_parser("bootstrap", help="balanced pairs bootstrap of a fitted model")
    _add_common(p, seed_required=True)
    p.add_argument("--rank", type=int, required=True)
    p.add_argument("--replicates", type=int, default=1000)
    p.add_argument("--level", type=float, default=0.95)

    p = sub.add_parser("simulate", help="synthetic-data recovery study")
    _add_common(p, data=False, seed_required=True)
    p.add_argument("--scenarios", default="all",
                   help=f"comma list from {', '.join(SCENARIOS)} or 'all'")
    p.add_argument("--reps", type=int, default=250)
    p.add_argument("--n", type=int, default=500)
    p.add_argument("--p", type=int, default=8)
    p.add_argument("--r", type=int, default=8)
    p.add_argument("--rank", type=int, default=2)

    p = sub.add_parser("compare", help="joint fit vs separate dummy-coded models")
    _add_common(p, seed_required=True)
    p.add_argument("--rank", type=int, required=True)
    p.add_argument("--replicates", type=int, default=200)

    return parser


def _options(args) -> FitOptions:
    step_order = tuple(tok.strip() for tok in args.step_order.split(","))
    return FitOptions(
        tolerance=args.tolerance,
        max_iterations=args.max_iterations,
        seed=args.seed or 0,
        step_order=step_order,
        count_sigma2=args.count_sigma2,
    )


def _threads(args) -> int:
    if args.threads is not None:
        return max(1, args.threads)
    return max(1, int(os.environ.get("RRMIX_THREADS", "1")))


def _outdir(args) -> Path:
    return Path(args.output or os.environ.get("RRMIX_OUTPUT", "rrmix-out"))


def _load(args):
    schema = load_schema(args.schema)
    return load_dataset(args.data, schema), schema


# ---------------------------------------------------------------------------
# subcommand implementations
# ---------------------------------------------------------------------------


def _cmd_fit(args, emit: Emitter) -> int:
    dataset, schema = _load(args)
    result = fit(dataset, args.rank, _options(args))
    save_model(result, schema, emit.outdir / "model.json")
    emit.artifacts.append("model.json")
    null_result = fit_null(dataset, count_sigma2=args.count_sigma2)
    aic, bic, r2a = ic_values(result.nll, result.k, dataset.n, null_result.nll)
    emit.csv("fit_summary.csv",
             ["rank", "n", "nll", "k", "aic", "bic", "r2_adjusted", "iterations",
              "converged", "warnings"],
             [[args.rank, dataset.n, result.nll, result.k, aic, bic, r2a,
               result.iterations, result.converged, " | ".join(result.warnings)]])
    from .figures import quantification_figure

    names = [v.name for v in dataset.predictors if v.level != "numeric"]
    emit.figure("quantifications.png", quantification_figure(result.params, names))
    if not result.converged:
        raise ConvergenceFailure(
            f"no convergence within {result.iterations} iterations; artifacts written"
        )
    return EXIT_OK


def _cmd_predict(args, emit: Emitter) -> int:
    dataset, schema = _load(args)
    result = load_model(args.model, expected_schema=schema)
    unseen = "neutral" if args.neutral_impute_unseen else "error"
    pred = predict(result.params, dataset, unseen=unseen)
    header = ["row"]
    for var in dataset.responses:
        header.append(f"theta_{var.name}")
        if var.level == "numeric":
            header.append(f"mean_{var.name}")
        elif var.level == "binary":
            header.append(f"prob_{var.name}")
        else:
            header.extend(f"prob_{var.name}_{c}" for c in range(1, var.n_categories + 1))
            header.append(f"class_{var.name}")
    rows = []
    for i in range(dataset.n):
        row = [i]
        for j, var in enumerate(dataset.responses):
            row.append(pred.theta[i, j])
            if var.level == "numeric":
                row.append(pred.means[var.name][i])
            elif var.level == "binary":
                row.append(pred.probabilities[var.name][i])
            else:
                row.extend(pred.probabilities[var.name][i])
                row.append(pred.classes[var.name][i])
        rows.append(row)
    emit.csv("predictions.csv", header, rows)
    return EXIT_OK


def _cmd_select(args, emit: Emitter) -> int:
    dataset, _ = _load(args)
    ranks = _parse_ranks(args.ranks)
    report, fits = select_rank(dataset, ranks, _options(args))
    emit.csv("selection.csv",
             ["S", "NLL", "K", "AIC", "BIC", "R2_adj"],
             [[row.rank, row.nll, row.k, row.aic, row.bic, row.r2_adjusted]
              for row in report.rows])
    from .figures import selection_figure

    emit.figure("selection.png", selection_figure(report))
    emit.json("selection_chosen.json", report.chosen | {"null_nll": report.null_nll})
    if not all(fits[rank].converged for rank in ranks):
        raise ConvergenceFailure("at least one candidate rank did not converge")
    return EXIT_OK


def _cmd_cv(args, emit: Emitter) -> int:
    dataset, _ = _load(args)
    ranks = _parse_ranks(args.ranks)
    report = cross_validate(dataset, ranks, v_folds=args.folds, repeats=args.repeats,
                            seed=args.seed, options=_options(args), threads=_threads(args))
    emit.csv("cv_curve.csv", ["S", "mean", "se"],
             [[s, m, se] for s, m, se in
              zip(report.ranks, report.means, report.standard_errors)])
    fold_rows = []
    cell = 0
    for rep in range(report.repeats):
        for fold in range(report.v_folds):
            for r_idx, s in enumerate(report.ranks):
                fold_rows.append([rep, fold, s, report.fold_estimates[cell, r_idx]])
            cell += 1
    emit.csv("cv_folds.csv", ["repeat", "fold", "S", "estimate"], fold_rows)
    emit.json("cv_chosen.json", {
        "min": report.chosen_rank_min, "one_se": report.chosen_rank_one_se,
        "notes": report.notes,
    })
    from .figures import cv_curve_figure

    emit.figure("cv_curve.png", cv_curve_figure(report))
    return EXIT_OK


def _cmd_bootstrap(args, emit: Emitter) -> int:
    dataset, schema = _load(args)
    opts = _options(args)
    reference = fit(dataset, args.rank, opts)
    if not reference.converged:
        raise ConvergenceFailure("reference fit did not converge")
    reps = run_bootstrap(dataset, reference, b_total=args.replicates, seed=args.seed,
                         options=opts, threads=_threads(args))
    pred_names = [v.name for v in dataset.predictors]
    resp_names = [v.name for v in dataset.responses]

    rows = []
    for b, params in enumerate(reps.params):
        for i, name in enumerate(pred_names):
            for s in range(params.rank):
                rows.append([b, "weight", name, s + 1, params.B[i, s]])
        for j, name in enumerate(resp_names):
            for s in range(params.rank):
                rows.append([b, "loading", name, s + 1, params.V[j, s]])
        for j, name in enumerate(resp_names):
            rows.append([b, "intercept", name, "", params.m[j]])
        for name, t in params.thresholds.items():
            for c, val in enumerate(t, start=1):
                rows.append([b, "threshold", name, c, val])
    emit.csv("bootstrap_replicates.csv",
             ["replicate", "kind", "name", "index", "value"], rows)

    weights, loadings = ellipse_summary(reps, pred_names, resp_names, level=args.level)
    ell_rows = []
    for kind, entries in (("weight", weights), ("loading", loadings)):
        for e in entries:
            c = e.ellipse.center
            S = e.ellipse.covariance
            ell_rows.append([kind, e.name, args.level, *c,
                             S[0, 0], S[0, 1], S[1, 1],
                             e.contains_origin, e.ellipse.degenerate])
    emit.csv("bootstrap_ellipses.csv",
             ["kind", "name", "level", "center_1", "center_2",
              "cov_11", "cov_12", "cov_22", "contains_origin", "degenerate"],
             ell_rows)

    se = bootstrap_se(reps, lambda p: p.implied_coefficients())
    emit.csv("bootstrap_se_implied.csv", ["predictor", *resp_names],
             [[name, *se[i]] for i, name in enumerate(pred_names)])
    labels, _ = category_contrasts(reference.params, dataset)
    se_contrasts = bootstrap_se(reps, lambda p: category_contrasts(p, dataset)[1])
    emit.csv("bootstrap_se_contrasts.csv", ["contrast", *resp_names],
             [[label, *se_contrasts[i]] for i, label in enumerate(labels)])
    emit.json("bootstrap_info.json", {
        "replicates_requested": int(reps.indices.shape[0]),
        "replicates_used": reps.n_replicates,
        "failed": reps.n_failed,
        "failures": reps.failures,
    })

    if args.rank == 2:
        from .figures import ellipse_figure

        emit.figure("bootstrap_ellipses.png", ellipse_figure(weights, loadings))
    return EXIT_OK


def _cmd_simulate(args, emit: Emitter) -> int:
    if args.scenarios == "all":
        names = list(SCENARIOS)
    else:
        names = [tok.strip() for tok in args.scenarios.split(",") if tok.strip()]
    scenarios = [SimScenario(name, n=args.n, p=args.p, r=args.r, rank=args.rank)
                 for name in names]
    study = run_study(scenarios, replications=args.reps, seed=args.seed,
                      options=_options(args), threads=_threads(args))
    emit.csv("simulation.csv",
             ["scenario", "rep", "rmse", "iterations", "converged", "monotone",
              "seed", "error"],
             [[r.scenario, r.rep, r.rmse, r.iterations, r.converged, r.monotone,
               r.seed, r.error or ""] for r in study.rows])
    emit.csv("simulation_summary.csv",
             ["scenario", "reps", "rmse_q25", "rmse_median", "rmse_q75"],
             [[s["scenario"], s["reps"], s["rmse_q25"], s["rmse_median"], s["rmse_q75"]]
              for s in study.summary()])
    from .figures import rmse_boxplot_figure

    emit.figure("simulation_rmse.png", rmse_boxplot_figure(study))
    return EXIT_OK


def _cmd_compare(args, emit: Emitter) -> int:
    dataset, _ = _load(args)
    opts = _options(args)
    joint = fit(dataset, args.rank, opts)
    if not joint.converged:
        raise ConvergenceFailure("joint fit did not converge")
    report = compare(dataset, joint, b_total=args.replicates, seed=args.seed,
                     options=opts, threads=_threads(args))
    emit.csv("comparison_ic.csv",
             ["model", "deviance", "k", "aic", "bic"],
             [["separate", report.separate_deviance, report.separate_k,
               report.separate_aic, report.separate_bic],
              ["joint", 2 * report.joint_nll, report.joint_k,
               report.joint_aic, report.joint_bic]])
    emit.csv("separate_coefficients.csv", ["term", *report.response_names],
             [[label, *report.separate_coefficients[i]]
              for i, label in enumerate(report.labels)])
    emit.csv("joint_contrasts.csv", ["term", *report.response_names],
             [[label, *report.joint_contrasts[i]]
              for i, label in enumerate(report.labels)])
    if report.separate_se is not None:
        emit.csv("separate_se.csv", ["term", *report.response_names],
                 [[label, *report.separate_se[i]]
                  for i, label in enumerate(report.labels)])
        emit.csv("joint_se.csv", ["term", *report.response_names],
                 [[label, *report.joint_se[i]]
                  for i, label in enumerate(report.labels)])
    emit.json("comparison_info.json", {
        "bootstrap_used": report.n_bootstrap_used, "notes": report.notes,
    })
    return EXIT_OK


_COMMANDS = {
    "fit": _cmd_fit,
    "predict": _cmd_predict,
    "select": _cmd_select,
    "cv": _cmd_cv,
    "bootstrap": _cmd_bootstrap,
    "simulate": _cmd_simulate,
    "compare": _cmd_compare,
}

_CONFIG_ERRORS = (SchemaError, DataError, FileNotFoundError, ValueError, KeyError)
_RUNTIME_ERRORS = (SolverError, ScalingError, SelectionError, InferenceError,
                   BaselineError, SimulationError)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    emit = Emitter(_outdir(args), args.command, vars(args).copy())
    try:
        return _COMMANDS[args.command](args, emit)
    except ConvergenceFailure as exc:
        emit.error(exc, EXIT_NO_CONVERGENCE)
        print(f"rrmix: {exc}", file=sys.stderr)
        return EXIT_NO_CONVERGENCE
    except _CONFIG_ERRORS as exc:
        emit.error(exc, EXIT_CONFIG)
        print(f"rrmix: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except _RUNTIME_ERRORS as exc:
        emit.error(exc, EXIT_RUNTIME)
        print(f"rrmix: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
