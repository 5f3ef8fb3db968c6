"""Command-line experiment harness.

Settings are resolved as built-in defaults, then a ``key=value`` file given
with ``--config``, then explicit flags. ``SSCL_OUT`` sets the default output
directory.
"""

from __future__ import annotations

import csv
import functools
import logging
import os
import sys
from pathlib import Path

import click
import numpy as np

from .data import DataError, apply_standardizer, fit_standardizer, load_csv
from .experiment import (
    DEFAULT_GRIDS,
    ExperimentConfig,
    emit_convergence,
    run_cv,
    run_sweep,
    timing_table,
)
from .model import Hyperparams, SsclClassifier
from .optim import ConvergenceError, IndefiniteProblemError

EXIT_CONFIG, EXIT_DATA, EXIT_SOLVER = 1, 2, 3

# config-file key -> (flag name, parser)
_FLOAT_LIST = lambda s: [float(v) for v in str(s).split(",") if v.strip()]  # noqa: E731
_STR_LIST = lambda s: tuple(v.strip() for v in str(s).split(",") if v.strip())  # noqa: E731
_BOOL = lambda s: str(s).strip().lower() in ("1", "true", "yes", "on")  # noqa: E731
SETTINGS = {
    "data": str, "label_col": str, "algos": _STR_LIST,
    "alpha": float, "beta": float, "gamma": float, "k": int, "iters": int, "tol": float,
    "delta_step": float, "folds": int, "seed": int, "out": str, "jobs": int, "stratify": _BOOL,
    "knn_k": int, "srbc_gamma": float, "tune": _STR_LIST,
    "alpha_grid": _FLOAT_LIST, "beta_grid": _FLOAT_LIST, "gamma_grid": _FLOAT_LIST, "k_grid": _FLOAT_LIST,
}


def read_config_file(path) -> dict:
    settings = {}
    for lineno, line in enumerate(Path(path).read_text().splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise click.UsageError(f"{path}:{lineno}: expected key=value")
        key, value = (part.strip() for part in line.split("=", 1))
        key = key.replace("-", "_")
        if key not in SETTINGS:
            raise click.UsageError(f"{path}:{lineno}: unknown setting {key!r}")
        settings[key] = SETTINGS[key](value)
    return settings


def resolve(flags: dict) -> dict:
    settings = {}
    if flags.get("config"):
        settings.update(read_config_file(flags["config"]))
    for key, value in flags.items():
        if key in SETTINGS and value is not None:
            settings[key] = SETTINGS[key](value) if isinstance(value, str) and key != "data" else value
    if "out" not in settings and os.environ.get("SSCL_OUT"):
        settings["out"] = os.environ["SSCL_OUT"]
    return settings


def build_config(settings: dict) -> ExperimentConfig:
    base = Hyperparams()
    hyper = Hyperparams(
        alpha=settings.get("alpha", base.alpha),
        beta=settings.get("beta", base.beta),
        gamma=settings.get("gamma", base.gamma),
        k=settings.get("k", base.k),
        max_outer_iter=settings.get("iters", base.max_outer_iter),
        outer_tol=settings.get("tol", base.outer_tol),
        seed=settings.get("seed", base.seed),
        delta_step=settings.get("delta_step", base.delta_step),
    )
    grids = {p: list(settings.get(f"{p}_grid", DEFAULT_GRIDS[p])) for p in DEFAULT_GRIDS}
    kwargs = dict(
        data=settings.get("data"),
        label_col=settings.get("label_col", -1),
        hyper=hyper,
        knn_k=settings.get("knn_k"),
        srbc_gamma=settings.get("srbc_gamma", 0.1),
        fold_count=settings.get("folds", 10),
        seed=settings.get("seed", 0),
        out=settings.get("out"),
        jobs=settings.get("jobs", 1),
        stratify=settings.get("stratify", False),
        tune=settings.get("tune", ()),
        grids=grids,
    )
    if "algos" in settings:
        kwargs["algos"] = settings["algos"]
    return ExperimentConfig(**kwargs)


def _exit_on_errors(fn):
    @functools.wraps(fn)
    def wrapper(*args, **kwargs):
        try:
            return fn(*args, **kwargs)
        except DataError as exc:
            click.echo(f"data error: {exc}", err=True)
            sys.exit(EXIT_DATA)
        except (ConvergenceError, IndefiniteProblemError) as exc:
            click.echo(f"solver failure: {exc}", err=True)
            sys.exit(EXIT_SOLVER)
        except ValueError as exc:
            click.echo(f"configuration error: {exc}", err=True)
            sys.exit(EXIT_CONFIG)
    return wrapper


def experiment_options(fn):
    options = [
        click.option("--config", type=click.Path(exists=True, dir_okay=False), help="key=value settings file."),
        click.option("--data", help="Input CSV file."),
        click.option("--label-col", help="Label column index (negative counts from the end) or header name."),
        click.option("--algos", help="Comma-separated subset of sscl,knn,srbc."),
        click.option("--alpha", type=float, help="Hinge-loss weight."),
        click.option("--beta", type=float, help="Reconstruction weight."),
        click.option("--gamma", type=float, help="Sparsity weight."),
        click.option("--k", type=int, help="Context size (nearest neighbors)."),
        click.option("--iters", type=int, help="Maximum outer iterations."),
        click.option("--tol", type=float, help="Relative dual-objective change for early stopping."),
        click.option("--delta-step", type=float, help="Damping of the multiplier update, in (0, 1]."),
        click.option("--folds", type=int, help="Number of cross-validation folds."),
        click.option("--seed", type=int, help="Seed for folds and multiplier initialization."),
        click.option("--out", help="Output directory (default: $SSCL_OUT)."),
        click.option("--jobs", type=int, help="Worker processes for folds."),
        click.option("--stratify/--no-stratify", default=None, help="Stratify folds by class."),
        click.option("--knn-k", type=int, help="Neighbors for the KNN baseline (default: --k)."),
        click.option("--srbc-gamma", type=float, help="Sparsity weight of the SRBC baseline."),
        click.option("--tune", help="Comma-separated SSCL parameters to tune by inner cross-validation."),
    ]
    for option in reversed(options):
        fn = option(fn)
    return fn


@click.group()
@click.option("-v", "--verbose", count=True, help="Repeat for more detail.")
def main(verbose):
    """Supervised sparse context learning experiments."""
    level = logging.WARNING - 10 * min(verbose, 2)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")


def _out_dir(config: ExperimentConfig) -> Path | None:
    return Path(config.out) if config.out else None


@main.command()
@experiment_options
@_exit_on_errors
def cv(**flags):
    """k-fold cross-validated accuracy of each algorithm."""
    config = build_config(resolve(flags))
    report = run_cv(config)
    click.echo(report.format_table())


@main.command()
@experiment_options
@click.option("--param", "parameter", required=True, type=click.Choice(["alpha", "beta", "gamma", "k"]))
@click.option("--grid", help="Comma-separated values (default: built-in grid).")
@_exit_on_errors
def sweep(parameter, grid, **flags):
    """Cross-validated accuracy across a grid of one parameter."""
    config = build_config(resolve(flags))
    values = _FLOAT_LIST(grid) if grid else None
    rows = run_sweep(config, parameter, values)
    click.echo(f"{parameter:>10}  {'algorithm':<8}{'mean':>8}{'std':>8}")
    for row in rows:
        click.echo(f"{row['value']:>10g}  {row['algorithm']:<8}{row['mean_accuracy']:>8.4f}{row['std']:>8.4f}")


@main.command()
@experiment_options
@click.option("--positive-class", type=int, default=0, show_default=True)
@_exit_on_errors
def converge(positive_class, **flags):
    """Per-iteration objective trace of one training run on the whole dataset."""
    config = build_config(resolve(flags))
    ds = config.load()
    out = _out_dir(config)
    rows = emit_convergence(ds, config.hyper, out / "convergence.csv" if out else None, positive_class)
    click.echo(f"{'t':>4}{'dual':>16}{'primal':>16}{'kkt':>12}")
    for r in rows:
        click.echo(f"{r['t']:>4}{r['dual_objective']:>16.8g}{r['primal_objective']:>16.8g}{r['mean_kkt_residual']:>12.2e}")


@main.command("train")
@experiment_options
@click.option("--model-out", required=True, type=click.Path(dir_okay=False), help="Where to write the model.")
@_exit_on_errors
def train_cmd(model_out, **flags):
    """Fit SSCL (one-vs-rest) on the whole dataset and save it."""
    config = build_config(resolve(flags))
    ds = config.load()
    std = fit_standardizer(ds)
    clf = SsclClassifier(config.hyper).fit(apply_standardizer(std, ds), std)
    clf.save(model_out)
    click.echo(f"saved {len(clf.models)} model(s) to {model_out}")


@main.command("predict")
@click.option("--model", "model_path", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--queries", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--label-col", help="Label column of the query file, if it has one; accuracy is reported.")
@click.option("--out", type=click.Path(dir_okay=False), help="CSV for predictions (default: stdout).")
@_exit_on_errors
def predict_cmd(model_path, queries, label_col, out):
    """Classify the rows of a CSV with a saved model."""
    clf = SsclClassifier.load(model_path)
    std = clf.models[0].standardizer
    if label_col is not None:
        ds = load_csv(queries, label_col)
        truth = [ds.class_names[c] for c in ds.labels]
    else:
        ds = load_csv(queries, None)
        truth = None
    if std is not None:
        ds = apply_standardizer(std, ds)
    pred = clf.predict_many(ds.features)
    names = clf.class_names or [str(c) for c in range(max(pred) + 1)]
    labels = [names[c] for c in pred]
    fh = open(out, "w", newline="") if out else sys.stdout
    try:
        writer = csv.writer(fh)
        writer.writerow(["row", "predicted"])
        writer.writerows(enumerate(labels))
    finally:
        if out:
            fh.close()
    if truth is not None:
        acc = float(np.mean([a == b for a, b in zip(labels, truth)]))
        click.echo(f"accuracy {acc:.4f}", err=True)


@main.command()
@experiment_options
@_exit_on_errors
def bench(**flags):
    """Fit-and-predict time per fold for each algorithm."""
    config = build_config(resolve(flags))
    report = run_cv(config)
    rows = timing_table(report)
    out = _out_dir(config)
    if out:
        out.mkdir(parents=True, exist_ok=True)
        with open(out / "timing.csv", "w", newline="") as fh:
            writer = csv.DictWriter(fh, fieldnames=list(rows[0]))
            writer.writeheader()
            writer.writerows(rows)
    click.echo(f"{'algorithm':<10}{'mean s':>10}{'median s':>10}{'total s':>10}")
    for r in rows:
        click.echo(f"{r['algorithm']:<10}{r['mean_seconds']:>10.3f}{r['median_seconds']:>10.3f}{r['total_seconds']:>10.3f}")


if __name__ == "__main__":
    main()
