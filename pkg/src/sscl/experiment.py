"""Cross-validation, parameter sweeps, convergence traces and timing tables."""

from __future__ import annotations

import csv
import itertools
import logging
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .baselines import KnnClassifier, SrbcClassifier
from .data import Dataset, apply_standardizer, binary_task, fit_standardizer, kfold, load_csv
from .model import Hyperparams, SsclClassifier, train

log = logging.getLogger(__name__)

ALGORITHMS = ("sscl", "knn", "srbc")
SWEEP_PARAMETERS = ("alpha", "beta", "gamma", "k")
DEFAULT_GRIDS = {
    "alpha": [0.1, 1.0, 10.0, 100.0],
    "beta": [1.0, 10.0, 100.0],
    "gamma": [0.01, 0.1, 1.0, 10.0],
    "k": [1, 3, 5, 10, 20],
}


@dataclass(frozen=True)
class ExperimentConfig:
    data: str | None = None
    label_col: str | int = -1
    algos: tuple[str, ...] = ALGORITHMS
    hyper: Hyperparams = field(default_factory=Hyperparams)
    knn_k: int | None = None
    srbc_gamma: float = 0.1
    fold_count: int = 10
    seed: int = 0
    out: str | None = None
    jobs: int = 1
    stratify: bool = False
    tune: tuple[str, ...] = ()
    grids: dict = field(default_factory=lambda: {p: list(v) for p, v in DEFAULT_GRIDS.items()})

    def __post_init__(self):
        if self.fold_count < 2:
            raise ValueError(f"fold_count must be >= 2, got {self.fold_count}")
        unknown = set(self.algos) - set(ALGORITHMS)
        if unknown or not self.algos:
            raise ValueError(f"unknown or empty algorithm list: {sorted(unknown) or '[]'}")
        for p in self.tune:
            if p not in SWEEP_PARAMETERS:
                raise ValueError(f"cannot tune {p!r}; choose from {SWEEP_PARAMETERS}")
        for p, grid in self.grids.items():
            if not grid:
                raise ValueError(f"empty grid for {p}")

    def load(self) -> Dataset:
        if self.data is None:
            raise ValueError("no dataset path configured")
        return load_csv(self.data, self.label_col)


@dataclass
class FoldResult:
    fold: int
    algorithm: str
    accuracy: float
    seconds: float
    test_indices: np.ndarray
    predictions: np.ndarray
    hyper: Hyperparams | None = None


@dataclass
class CvReport:
    results: list[FoldResult]
    fold_count: int
    assignments: np.ndarray
    truth: np.ndarray

    def algorithms(self) -> list[str]:
        return list(dict.fromkeys(r.algorithm for r in self.results))

    def accuracies(self, algorithm: str) -> np.ndarray:
        rows = sorted((r for r in self.results if r.algorithm == algorithm), key=lambda r: r.fold)
        return np.array([r.accuracy for r in rows])

    def seconds(self, algorithm: str) -> np.ndarray:
        rows = sorted((r for r in self.results if r.algorithm == algorithm), key=lambda r: r.fold)
        return np.array([r.seconds for r in rows])

    def summary(self, algorithm: str) -> dict:
        """Boxplot statistics of the per-fold accuracies (linear-interpolation percentiles)."""
        acc = self.accuracies(algorithm)
        secs = self.seconds(algorithm)
        q25, median, q75 = np.percentile(acc, [25, 50, 75])
        return {
            "algorithm": algorithm,
            "mean": float(acc.mean()),
            "std": float(acc.std()),
            "median": float(median),
            "q25": float(q25),
            "q75": float(q75),
            "min": float(acc.min()),
            "max": float(acc.max()),
            "mean_seconds": float(secs.mean()),
            "total_seconds": float(secs.sum()),
        }

    def write(self, out_dir) -> None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        with open(out / "cv_folds.csv", "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["fold", "algorithm", "accuracy", "seconds", "n_test"])
            for r in sorted(self.results, key=lambda r: (r.algorithm, r.fold)):
                writer.writerow([r.fold, r.algorithm, repr(r.accuracy), f"{r.seconds:.6f}", len(r.test_indices)])
        with open(out / "cv_summary.csv", "w", newline="") as fh:
            rows = [self.summary(a) for a in self.algorithms()]
            writer = csv.DictWriter(fh, fieldnames=list(rows[0]))
            writer.writeheader()
            writer.writerows(rows)
        for algo in self.algorithms():
            with open(out / f"predictions_{algo}.csv", "w", newline="") as fh:
                writer = csv.writer(fh)
                writer.writerow(["point_index", "fold", "truth", "predicted"])
                rows = []
                for r in (r for r in self.results if r.algorithm == algo):
                    rows += [(int(i), r.fold, int(self.truth[i]), int(p)) for i, p in zip(r.test_indices, r.predictions)]
                writer.writerows(sorted(rows))
        with open(out / "folds.csv", "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["point_index", "fold"])
            writer.writerows((i, int(f)) for i, f in enumerate(self.assignments))

    def format_table(self) -> str:
        lines = [f"{'algorithm':<10}{'mean':>8}{'median':>8}{'q25':>8}{'q75':>8}{'sec/fold':>10}"]
        for algo in self.algorithms():
            s = self.summary(algo)
            lines.append(
                f"{algo:<10}{s['mean']:>8.4f}{s['median']:>8.4f}{s['q25']:>8.4f}{s['q75']:>8.4f}{s['mean_seconds']:>10.3f}"
            )
        return "\n".join(lines)


def make_classifier(algorithm: str, config: ExperimentConfig, hyper: Hyperparams | None = None):
    hyper = hyper or config.hyper
    if algorithm == "sscl":
        return SsclClassifier(hyper)
    if algorithm == "knn":
        return _Knn(config.knn_k or hyper.k)
    if algorithm == "srbc":
        return _Srbc(config.srbc_gamma)
    raise ValueError(f"unknown algorithm {algorithm!r}")


class _Knn:
    def __init__(self, k):
        self.k = k

    def fit(self, ds, standardizer=None):
        self.clf = KnnClassifier(ds, self.k)
        return self

    def predict_many(self, X):
        return self.clf.predict_many(X)


class _Srbc:
    def __init__(self, gamma):
        self.gamma = gamma

    def fit(self, ds, standardizer=None):
        self.clf = SrbcClassifier(ds, self.gamma)
        return self

    def predict_many(self, X):
        return self.clf.predict_many(X)


def _valid_hyper(hyper: Hyperparams, **changes) -> Hyperparams | None:
    try:
        return hyper.replace(**changes)
    except ValueError as exc:
        log.warning("skipping %s: %s", changes, exc)
        return None


def tune_hyper(train: Dataset, config: ExperimentConfig) -> Hyperparams:
    """Inner cross-validation over the product of the grids of ``config.tune``."""
    best, best_acc = config.hyper, -np.inf
    inner_folds = min(config.fold_count - 1, train.n)
    split = kfold(train.n, max(2, inner_folds), config.seed + 1)
    for values in itertools.product(*(config.grids[p] for p in config.tune)):
        changes = dict(zip(config.tune, values))
        if "k" in changes:
            changes["k"] = int(changes["k"])
        hyper = _valid_hyper(config.hyper, **changes)
        if hyper is None:
            continue
        accs = []
        for f in range(split.fold_count):
            tr, te = train.subset(split.train_indices(f)), train.subset(split.test_indices(f))
            if hyper.k > tr.n - 1 or np.unique(tr.labels).size < 2:
                accs = None
                break
            clf = SsclClassifier(hyper).fit(tr)
            accs.append(np.mean(clf.predict_many(te.features) == te.labels))
        if accs and np.mean(accs) > best_acc:
            best, best_acc = hyper, float(np.mean(accs))
    return best


def _run_fold(args) -> list[FoldResult]:
    ds, split, fold, config = args
    train_idx, test_idx = split.train_indices(fold), split.test_indices(fold)
    raw_train = ds.subset(train_idx)
    std = fit_standardizer(raw_train)
    tr = apply_standardizer(std, raw_train)
    te = apply_standardizer(std, ds.subset(test_idx))
    results = []
    for algo in config.algos:
        start = time.perf_counter()
        hyper = None
        if algo == "sscl":
            hyper = tune_hyper(tr, config) if config.tune else config.hyper
        clf = make_classifier(algo, config, hyper).fit(tr, std)
        pred = clf.predict_many(te.features)
        seconds = time.perf_counter() - start
        acc = float(np.mean(pred == te.labels))
        log.info("fold %d %s accuracy %.4f (%.2fs)", fold, algo, acc, seconds)
        results.append(FoldResult(fold, algo, acc, seconds, test_idx, pred, hyper))
    return results


def run_cv(config: ExperimentConfig, dataset: Dataset | None = None) -> CvReport:
    """k-fold cross-validation of every configured algorithm on one dataset."""
    ds = dataset if dataset is not None else config.load()
    split = kfold(ds.n, config.fold_count, config.seed, ds.labels if config.stratify else None)
    jobs = [(ds, split, f, config) for f in range(config.fold_count)]
    if config.jobs > 1:
        with ProcessPoolExecutor(max_workers=config.jobs) as pool:
            per_fold = list(pool.map(_run_fold, jobs))
    else:
        per_fold = [_run_fold(job) for job in jobs]
    report = CvReport([r for rows in per_fold for r in rows], config.fold_count, split.assignments, ds.labels)
    if config.out:
        report.write(config.out)
    return report


def run_sweep(config: ExperimentConfig, parameter: str, grid=None, dataset: Dataset | None = None) -> list[dict]:
    """Cross-validated accuracy for each value of one hyperparameter."""
    if parameter not in SWEEP_PARAMETERS:
        raise ValueError(f"cannot sweep {parameter!r}; choose from {SWEEP_PARAMETERS}")
    grid = list(config.grids[parameter] if grid is None else grid)
    ds = dataset if dataset is not None else config.load()
    rows = []
    ran = 0
    for value in grid:
        value = int(value) if parameter == "k" else float(value)
        hyper = _valid_hyper(config.hyper, **{parameter: value})
        if hyper is None:
            continue
        if parameter == "k" and value > ds.n - int(np.ceil(ds.n / config.fold_count)) - 1:
            log.warning("skipping k=%d: larger than the smallest training fold allows", value)
            continue
        sub = replace(config, hyper=hyper, out=None, knn_k=value if parameter == "k" else config.knn_k)
        report = run_cv(sub, ds)
        ran += 1
        for algo in report.algorithms():
            acc = report.accuracies(algo)
            rows.append({"parameter": parameter, "value": value, "algorithm": algo,
                         "mean_accuracy": float(acc.mean()), "std": float(acc.std())})
    if ran == 0:
        raise ValueError(f"no valid {parameter} values left in grid {grid}")
    if config.out:
        out = Path(config.out)
        out.mkdir(parents=True, exist_ok=True)
        with open(out / f"sweep_{parameter}.csv", "w", newline="") as fh:
            writer = csv.DictWriter(fh, fieldnames=["parameter", "value", "algorithm", "mean_accuracy", "std"])
            writer.writeheader()
            writer.writerows(rows)
    return rows


CONVERGENCE_FIELDS = ["t", "dual_objective", "primal_objective", "mean_kkt_residual", "box_kkt_residual", "seconds"]


def emit_convergence(ds: Dataset, hyper: Hyperparams, path=None, positive_class: int = 0) -> list[dict]:
    """Train once on standardized ``ds`` and return (and optionally write) the per-iteration trace."""
    std = fit_standardizer(ds)
    task = binary_task(apply_standardizer(std, ds), positive_class)
    _, trace = train(task, hyper, standardizer=std)
    rows = [
        {"t": r.iteration, "dual_objective": r.dual_objective, "primal_objective": r.primal_objective,
         "mean_kkt_residual": r.mean_l1_kkt, "box_kkt_residual": r.box_kkt, "seconds": r.seconds}
        for r in trace.records
    ]
    if path is not None:
        Path(path).parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", newline="") as fh:
            writer = csv.DictWriter(fh, fieldnames=CONVERGENCE_FIELDS)
            writer.writeheader()
            for row in rows:
                writer.writerow({k: repr(v) if isinstance(v, float) else v for k, v in row.items()})
    return rows


def timing_table(report: CvReport) -> list[dict]:
    rows = []
    for algo in report.algorithms():
        secs = report.seconds(algo)
        rows.append({"algorithm": algo, "mean_seconds": float(secs.mean()), "median_seconds": float(np.median(secs)),
                     "total_seconds": float(secs.sum())})
    return rows
