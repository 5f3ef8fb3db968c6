import csv
import logging

import numpy as np
import pytest
from click.testing import CliRunner

from helpers import noisy_dataset, separable_dataset
from sscl.cli import main, read_config_file, resolve
from sscl.data import Dataset
from sscl.experiment import (
    CONVERGENCE_FIELDS,
    ExperimentConfig,
    emit_convergence,
    run_cv,
    run_sweep,
    timing_table,
)
from sscl.model import Hyperparams

FAST = Hyperparams(max_outer_iter=15)


def read_rows(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def write_dataset(path, ds):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow([f"f{j}" for j in range(ds.d)] + ["label"])
        for x, c in zip(ds.features, ds.labels):
            writer.writerow([repr(float(v)) for v in x] + [ds.class_names[c]])
    return path


@pytest.fixture(scope="module")
def sep_report():
    cfg = ExperimentConfig(hyper=FAST, fold_count=5)
    return run_cv(cfg, separable_dataset(0, per_class=15))


# --- cross-validation ------------------------------------------------------

def test_separable_cv_sscl_and_knn_perfect(sep_report):
    assert sep_report.summary("sscl")["mean"] == 1.0
    assert sep_report.summary("knn")["mean"] == 1.0


@pytest.mark.xfail(strict=True, reason="sign-free class reconstructions cannot tell antipodal "
                   "clusters apart once the data are centred")
def test_separable_cv_srbc_perfect(sep_report):
    assert sep_report.summary("srbc")["mean"] == 1.0


def test_report_aggregates_recompute(sep_report):
    for algo in sep_report.algorithms():
        acc = sep_report.accuracies(algo)
        s = sep_report.summary(algo)
        assert np.all((acc >= 0) & (acc <= 1))
        assert s["mean"] == pytest.approx(acc.mean())
        srt = np.sort(acc)
        # linear interpolation between closest ranks
        pos = 0.25 * (len(srt) - 1)
        lo = int(np.floor(pos))
        assert s["q25"] == pytest.approx(srt[lo] + (pos - lo) * (srt[min(lo + 1, len(srt) - 1)] - srt[lo]))
        assert s["median"] == pytest.approx(np.median(acc))
        assert np.all(sep_report.seconds(algo) > 0)


def test_fold_accounting():
    rng = np.random.default_rng(0)
    ds = Dataset(rng.normal(size=(100, 2)), rng.integers(0, 2, 100), "r", ())
    report = run_cv(ExperimentConfig(algos=("knn",), fold_count=10), ds)
    results = report.results
    assert len(results) == 10
    assert all(len(r.test_indices) == 10 for r in results)
    assert sorted(np.concatenate([r.test_indices for r in results]).tolist()) == list(range(100))
    for r in results:
        assert not set(r.test_indices) & set(np.flatnonzero(report.assignments != r.fold))


def test_cv_is_deterministic_and_writes_outputs(tmp_path):
    ds = noisy_dataset(1, per_class=10)
    cfg = ExperimentConfig(hyper=FAST, fold_count=4, seed=3, out=str(tmp_path / "a"))
    a = run_cv(cfg, ds)
    b = run_cv(ExperimentConfig(hyper=FAST, fold_count=4, seed=3), ds)
    for algo in a.algorithms():
        assert np.array_equal(a.accuracies(algo), b.accuracies(algo))
        pa = [r.predictions for r in a.results if r.algorithm == algo]
        pb = [r.predictions for r in b.results if r.algorithm == algo]
        assert all(np.array_equal(x, y) for x, y in zip(pa, pb))
    names = {p.name for p in (tmp_path / "a").iterdir()}
    assert {"cv_folds.csv", "cv_summary.csv", "folds.csv", "predictions_sscl.csv"} <= names
    assert len(read_rows(tmp_path / "a" / "predictions_knn.csv")) == 20


def test_timing_table(sep_report):
    rows = timing_table(sep_report)
    assert [r["algorithm"] for r in rows] == ["sscl", "knn", "srbc"]
    assert all(r["total_seconds"] >= r["mean_seconds"] > 0 for r in rows)


def test_config_validation():
    with pytest.raises(ValueError):
        ExperimentConfig(fold_count=1)
    with pytest.raises(ValueError):
        ExperimentConfig(algos=("svm",))
    with pytest.raises(ValueError):
        ExperimentConfig(tune=("delta",))


def test_multiclass_cv_with_tuning():
    rng = np.random.default_rng(1)
    X = np.vstack([rng.normal(c, 0.4, (8, 2)) for c in ((0, 0), (3, 0), (0, 3))])
    ds = Dataset(X, np.repeat([0, 1, 2], 8), "three", ())
    grids = {"alpha": [0.1, 1.0], "beta": [10.0], "gamma": [0.1], "k": [3]}
    cfg = ExperimentConfig(algos=("sscl",), hyper=Hyperparams(k=3, max_outer_iter=8), fold_count=3,
                           tune=("alpha",), grids=grids)
    report = run_cv(cfg, ds)
    assert report.summary("sscl")["mean"] >= 0.8
    assert all(r.hyper.alpha in (0.1, 1.0) for r in report.results)


# --- sweeps ----------------------------------------------------------------

def test_gamma_sweep_shape(tmp_path):
    cfg = ExperimentConfig(algos=("sscl",), hyper=FAST, fold_count=3, out=str(tmp_path))
    rows = run_sweep(cfg, "gamma", [0.01, 0.1, 1, 10], noisy_dataset(0, per_class=8))
    assert [r["value"] for r in rows] == [0.01, 0.1, 1.0, 10.0]
    assert all(0 <= r["mean_accuracy"] <= 1 for r in rows)
    assert len(read_rows(tmp_path / "sweep_gamma.csv")) == 4


def test_sweep_skips_guard_violations(caplog):
    cfg = ExperimentConfig(algos=("knn",), hyper=Hyperparams(alpha=3.0), fold_count=3)
    with caplog.at_level(logging.WARNING):
        rows = run_sweep(cfg, "beta", [1, 10, 100], separable_dataset(0, per_class=6))
    assert [r["value"] for r in rows] == [10.0, 100.0]
    assert "skipping" in caplog.text
    with pytest.raises(ValueError):
        run_sweep(cfg, "beta", [1, 2], separable_dataset(0, per_class=6))


def test_k_sweep_drops_oversized_contexts():
    cfg = ExperimentConfig(algos=("knn",), fold_count=3)
    rows = run_sweep(cfg, "k", [1, 3, 5, 100], separable_dataset(0, per_class=6))
    assert [r["value"] for r in rows] == [1, 3, 5]


# --- convergence trace -----------------------------------------------------

def test_convergence_file(tmp_path):
    ds = separable_dataset(0)
    rows = emit_convergence(ds, Hyperparams(), tmp_path / "c.csv")
    saved = read_rows(tmp_path / "c.csv")
    assert list(saved[0]) == CONVERGENCE_FIELDS
    assert 2 <= len(saved) <= 100
    last, prev = (float(r["dual_objective"]) for r in saved[-1:-3:-1])
    assert abs(last - prev) < 1e-6 * max(1.0, abs(prev))
    assert len(rows) == len(saved)

    assert len(emit_convergence(ds, Hyperparams(max_outer_iter=1), tmp_path / "one.csv")) == 1
    assert len(read_rows(tmp_path / "one.csv")) == 1


def test_convergence_file_is_reproducible(tmp_path):
    ds = separable_dataset(4)
    h = Hyperparams(max_outer_iter=10)
    emit_convergence(ds, h, tmp_path / "a.csv")
    emit_convergence(ds, h, tmp_path / "b.csv")
    strip = lambda rows: [{k: v for k, v in r.items() if k != "seconds"} for r in rows]  # noqa: E731
    assert strip(read_rows(tmp_path / "a.csv")) == strip(read_rows(tmp_path / "b.csv"))


# --- command line ----------------------------------------------------------

@pytest.fixture()
def data_file(tmp_path):
    return write_dataset(tmp_path / "sep.csv", separable_dataset(0, per_class=10))


def test_cli_cv(tmp_path, data_file):
    out = tmp_path / "out"
    res = CliRunner().invoke(main, ["cv", "--data", str(data_file), "--folds", "4", "--iters", "10",
                                    "--out", str(out)])
    assert res.exit_code == 0, res.output
    assert "sscl" in res.output and "knn" in res.output
    assert (out / "cv_summary.csv").exists()


def test_cli_config_file_and_flag_precedence(tmp_path, data_file, monkeypatch):
    cfg = tmp_path / "run.cfg"
    cfg.write_text(f"# settings\ndata = {data_file}\nfolds = 3\nalgos = knn\nk = 3\n")
    assert read_config_file(cfg)["algos"] == ("knn",)
    settings = resolve({"config": str(cfg), "folds": 5, "k": None})
    assert settings["folds"] == 5 and settings["k"] == 3
    monkeypatch.setenv("SSCL_OUT", str(tmp_path / "env_out"))
    res = CliRunner().invoke(main, ["bench", "--config", str(cfg)])
    assert res.exit_code == 0, res.output
    assert (tmp_path / "env_out" / "timing.csv").exists()


def test_cli_sweep_and_converge(tmp_path, data_file):
    res = CliRunner().invoke(main, ["sweep", "--data", str(data_file), "--algos", "knn", "--folds", "3",
                                    "--param", "k", "--grid", "1,3"])
    assert res.exit_code == 0, res.output
    assert len(res.output.strip().splitlines()) == 3
    res = CliRunner().invoke(main, ["converge", "--data", str(data_file), "--iters", "3", "--out", str(tmp_path)])
    assert res.exit_code == 0, res.output
    assert len(read_rows(tmp_path / "convergence.csv")) <= 3


def test_cli_train_predict_round_trip(tmp_path, data_file):
    model = tmp_path / "m.npz"
    runner = CliRunner()
    res = runner.invoke(main, ["train", "--data", str(data_file), "--iters", "10", "--model-out", str(model)])
    assert res.exit_code == 0, res.output
    queries = tmp_path / "q.csv"
    queries.write_text("0.1,-0.2\n9.8,10.3\n")
    res = runner.invoke(main, ["predict", "--model", str(model), "--queries", str(queries),
                               "--out", str(tmp_path / "p.csv")])
    assert res.exit_code == 0, res.output
    assert [r["predicted"] for r in read_rows(tmp_path / "p.csv")] == ["a", "b"]
    res = runner.invoke(main, ["predict", "--model", str(model), "--queries", str(data_file), "--label-col", "label"])
    assert res.exit_code == 0
    assert "accuracy 1.0000" in res.output


def test_cli_exit_codes(tmp_path, data_file):
    runner = CliRunner()
    assert runner.invoke(main, ["cv", "--data", str(tmp_path / "none.csv")]).exit_code == 2
    bad = tmp_path / "bad.csv"
    bad.write_text("f1,f2,c\n1,2,a\n3,x,b\n")
    assert runner.invoke(main, ["cv", "--data", str(bad)]).exit_code == 2
    assert runner.invoke(main, ["cv", "--data", str(data_file), "--alpha", "10", "--beta", "1"]).exit_code == 1
    assert runner.invoke(main, ["cv", "--data", str(data_file), "--k", "50", "--algos", "knn"]).exit_code == 1
    assert runner.invoke(main, ["cv"]).exit_code == 1
