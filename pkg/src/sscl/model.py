"""Supervised sparse context learning: training by alternating dual updates and prediction."""

from __future__ import annotations

import json
import logging
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .context import ContextIndex, build_context_index, query_context
from .data import BinaryTask, Standardizer
from .optim import (
    BoxQpProblem,
    ConvergenceError,
    L1QuadraticProblem,
    solve_box_qp,
    solve_l1_quadratic,
)

log = logging.getLogger(__name__)

RIDGE = 1e-8
TIE_TOL = 1e-12
FORMAT_VERSION = 1


@dataclass(frozen=True)
class Hyperparams:
    alpha: float = 1.0
    beta: float = 10.0
    gamma: float = 0.1
    k: int = 5
    max_outer_iter: int = 100
    outer_tol: float = 1e-6
    seed: int = 0
    solver_tol: float = 1e-8
    # fraction of the way to the exact multiplier maximizer; 1.0 is the plain alternation
    delta_step: float = 0.3

    def __post_init__(self):
        if not self.alpha > 0:
            raise ValueError(f"alpha must be > 0, got {self.alpha}")
        if not self.beta > 0:
            raise ValueError(f"beta must be > 0, got {self.beta}")
        if self.gamma < 0:
            raise ValueError(f"gamma must be >= 0, got {self.gamma}")
        if self.k < 1:
            raise ValueError(f"k must be >= 1, got {self.k}")
        if not 0 < self.delta_step <= 1:
            raise ValueError(f"delta_step must be in (0, 1], got {self.delta_step}")
        if self.max_outer_iter < 1:
            raise ValueError(f"max_outer_iter must be >= 1, got {self.max_outer_iter}")
        # the per-point coefficient subproblem has curvature (2 beta - delta_i^2) X'X with delta_i <= alpha
        if not self.alpha ** 2 < 2 * self.beta:
            raise ValueError(
                f"alpha^2 < 2*beta is required for a convex coefficient update "
                f"(alpha={self.alpha}, beta={self.beta})"
            )

    def replace(self, **changes) -> "Hyperparams":
        return Hyperparams(**{**asdict(self), **changes})


@dataclass
class TrainState:
    """Mutable optimization state for one binary task.

    ``reconstructions[:, i]`` caches ``X_i @ V[:, i]``.
    """

    features: np.ndarray
    labels: np.ndarray
    context: ContextIndex
    V: np.ndarray
    delta: np.ndarray
    reconstructions: np.ndarray

    @classmethod
    def initial(cls, features, labels, context: ContextIndex, delta) -> "TrainState":
        n, d = features.shape
        return cls(
            np.asarray(features, dtype=float),
            np.asarray(labels, dtype=float),
            context,
            np.zeros((context.k, n)),
            np.asarray(delta, dtype=float).copy(),
            np.zeros((d, n)),
        )

    @property
    def n(self) -> int:
        return self.features.shape[0]

    def grams(self) -> tuple[np.ndarray, np.ndarray]:
        """Cached per-point X_i'X_i (n x k x k) and X_i'x_i (n x k)."""
        if getattr(self, "_grams", None) is None:
            C = self.context.context_matrices
            self._grams = (np.einsum("ndk,ndl->nkl", C, C), np.einsum("ndk,nd->nk", C, self.features))
        return self._grams

    def set_coeffs(self, i: int, v: np.ndarray) -> None:
        self.V[:, i] = v
        self.reconstructions[:, i] = self.context.context_matrices[i] @ v


@dataclass
class IterationRecord:
    iteration: int
    dual_objective: float
    primal_objective: float
    mean_l1_kkt: float
    box_kkt: float
    seconds: float


@dataclass
class TrainTrace:
    records: list[IterationRecord] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.records)

    @property
    def dual(self) -> np.ndarray:
        return np.array([r.dual_objective for r in self.records])

    @property
    def primal(self) -> np.ndarray:
        return np.array([r.primal_objective for r in self.records])


@dataclass
class SsclModel:
    w: np.ndarray
    V: np.ndarray
    delta: np.ndarray
    hyper: Hyperparams
    train_features: np.ndarray
    train_binary_labels: np.ndarray
    standardizer: Standardizer | None = None
    positive_class: int = 0
    negative_class: int | None = None

    def save(self, path) -> None:
        save_models(path, [self])

    @classmethod
    def load(cls, path) -> "SsclModel":
        models, _ = load_models(path)
        if len(models) != 1:
            raise ValueError(f"{path} holds {len(models)} models, expected 1")
        return models[0]


def _v_subproblem(X_i, x_i, y_i, delta_i, w_minus, hyper: Hyperparams) -> L1QuadraticProblem:
    curvature = 2.0 * hyper.beta - delta_i ** 2
    assert curvature > 0, "alpha^2 < 2 beta guard violated"
    P = curvature * (X_i.T @ X_i) + RIDGE * np.eye(X_i.shape[1])
    q = -delta_i * y_i * (X_i.T @ w_minus) - 2.0 * hyper.beta * (X_i.T @ x_i)
    return L1QuadraticProblem(P, q, hyper.gamma)


def assemble_v_subproblem(state: TrainState, hyper: Hyperparams, i: int) -> L1QuadraticProblem:
    """Quadratic form of the dual objective in v_i with every other v_j held fixed."""
    y, delta = state.labels, state.delta
    w_minus = recover_w(state) - delta[i] * y[i] * state.reconstructions[:, i]
    return _v_subproblem(state.context.context_matrices[i], state.features[i], y[i], delta[i], w_minus, hyper)


def assemble_delta_qp(state: TrainState, hyper: Hyperparams) -> BoxQpProblem:
    signed = state.reconstructions * state.labels
    return BoxQpProblem(signed.T @ signed, hyper.alpha)


def recover_w(state: TrainState) -> np.ndarray:
    return state.reconstructions @ (state.delta * state.labels)


def _reconstruction_terms(state: TrainState, hyper: Hyperparams) -> float:
    resid = state.features.T - state.reconstructions
    return hyper.beta * float(np.sum(resid ** 2)) + hyper.gamma * float(np.abs(state.V).sum())


def dual_objective(state: TrainState, hyper: Hyperparams) -> float:
    w = recover_w(state)
    return -0.5 * float(w @ w) + _reconstruction_terms(state, hyper) + float(state.delta.sum())


def primal_objective(state: TrainState, w, hyper: Hyperparams) -> float:
    w = np.asarray(w, dtype=float)
    margins = state.labels * (w @ state.reconstructions)
    hinge = np.maximum(0.0, 1.0 - margins).sum()
    return 0.5 * float(w @ w) + hyper.alpha * float(hinge) + _reconstruction_terms(state, hyper)


def scaled_tol(prob: L1QuadraticProblem, tol: float) -> float:
    """Absolute KKT tolerance for ``prob``: ``tol`` relative to the size of its linear term."""
    return tol * max(1.0, float(np.abs(prob.q).max()))


def _accept(report, tol, what: str) -> None:
    if not report.converged:
        raise ConvergenceError(
            f"{what} did not converge: KKT residual {report.kkt_residual:.3e} > {tol:.1e} "
            f"after {report.iterations} iterations"
        )


def coefficient_sweep(state: TrainState, hyper: Hyperparams, on_update=None) -> list[float]:
    """Gauss-Seidel pass over the points in index order; returns per-point KKT residuals.

    Each solve is warm-started from the point's current coefficients.
    ``on_update(i)`` is called after each point's coefficients change.
    """
    y, delta = state.labels, state.delta
    grams, targets = state.grams()
    eye = RIDGE * np.eye(state.context.k)
    w = recover_w(state)
    residuals = []
    for i in range(state.n):
        w_minus = w - delta[i] * y[i] * state.reconstructions[:, i]
        X_i = state.context.context_matrices[i]
        curvature = 2.0 * hyper.beta - delta[i] ** 2
        prob = L1QuadraticProblem(
            curvature * grams[i] + eye,
            -delta[i] * y[i] * (X_i.T @ w_minus) - 2.0 * hyper.beta * targets[i],
            hyper.gamma,
        )
        tol = scaled_tol(prob, hyper.solver_tol)
        v, report = solve_l1_quadratic(prob, tol=tol, x0=state.V[:, i])
        _accept(report, tol, f"coefficient update for point {i}")
        state.set_coeffs(i, v)
        w = w_minus + delta[i] * y[i] * state.reconstructions[:, i]
        residuals.append(report.kkt_residual)
        if on_update is not None:
            on_update(i)
    return residuals


def multiplier_update(state: TrainState, hyper: Hyperparams) -> float:
    """Move the multipliers toward their maximizer for fixed V.

    Returns the KKT residual of the exact maximizer. With ``delta_step < 1``
    the stored multipliers stop part way; the objective is concave in them,
    so the step still never lowers it.
    """
    qp = assemble_delta_qp(state, hyper)
    delta, report = solve_box_qp(qp, tol=hyper.solver_tol, x0=state.delta)
    _accept(report, hyper.solver_tol, "multiplier update")
    if hyper.delta_step < 1.0:
        delta = state.delta + hyper.delta_step * (delta - state.delta)
    state.delta = delta
    return report.kkt_residual


def train(task: BinaryTask, hyper: Hyperparams, *, standardizer: Standardizer | None = None,
          callback=None) -> tuple[SsclModel, TrainTrace]:
    """Alternate coefficient sweeps and multiplier updates until the dual objective settles.

    ``callback(t, state)`` runs after every outer iteration.
    """
    features = task.dataset.features
    y = np.asarray(task.binary_labels, dtype=float)
    n = features.shape[0]
    if np.isnan(features).any():
        raise ValueError("training features contain missing values; standardize first")
    if not ((y == 1).any() and (y == -1).any()):
        raise ValueError("training task needs both +1 and -1 labels")
    if not 1 <= hyper.k <= n - 1:
        raise ValueError(f"k must be in [1, {n - 1}] for {n} training points, got {hyper.k}")

    context = build_context_index(features, hyper.k)
    rng = np.random.default_rng(hyper.seed)
    state = TrainState.initial(features, y, context, rng.uniform(0.0, hyper.alpha, n))
    trace = TrainTrace()
    prev = dual_objective(state, hyper)
    for t in range(1, hyper.max_outer_iter + 1):
        start = time.perf_counter()
        try:
            l1_res = coefficient_sweep(state, hyper)
            box_res = multiplier_update(state, hyper)
        except ConvergenceError as exc:
            raise ConvergenceError(f"outer iteration {t}: {exc}") from exc
        dual = dual_objective(state, hyper)
        primal = primal_objective(state, recover_w(state), hyper)
        trace.records.append(
            IterationRecord(t, dual, primal, float(np.mean(l1_res)), box_res, time.perf_counter() - start)
        )
        if len(trace) >= 2 and trace.records[-1].dual_objective > trace.records[-2].dual_objective + 1e-9:
            log.debug("dual objective rose between iterations %d and %d", t - 1, t)
        if callback is not None:
            callback(t, state)
        change = abs(dual - prev) / max(1.0, abs(prev))
        prev = dual
        if change < hyper.outer_tol:
            break

    model = SsclModel(
        w=recover_w(state),
        V=state.V.copy(),
        delta=state.delta.copy(),
        hyper=hyper,
        train_features=features.copy(),
        train_binary_labels=y.copy(),
        standardizer=standardizer,
        positive_class=task.positive_class,
        negative_class=task.negative_class,
    )
    return model, trace


def _conditional_problem(model: SsclModel, X: np.ndarray, x: np.ndarray, y: float) -> L1QuadraticProblem:
    beta = model.hyper.beta
    P = 2.0 * beta * (X.T @ X) + RIDGE * np.eye(X.shape[1])
    q = -y * (X.T @ model.w) - 2.0 * beta * (X.T @ x)
    return L1QuadraticProblem(P, q, model.hyper.gamma)


def _solve_conditional(model: SsclModel, X, x, y) -> np.ndarray:
    prob = _conditional_problem(model, X, x, y)
    tol = scaled_tol(prob, model.hyper.solver_tol)
    v, report = solve_l1_quadratic(prob, tol=tol)
    _accept(report, tol, "class-conditional reconstruction")
    return v


def conditional_coeffs(model: SsclModel, x, y: int) -> np.ndarray:
    """Reconstruction coefficients of ``x`` over its training neighbors, given candidate label ``y``."""
    x = np.asarray(x, dtype=float)
    _, X = query_context(model.train_features, x, model.hyper.k)
    return _solve_conditional(model, X, x, float(y))


def predict(model: SsclModel, x) -> tuple[int, float]:
    """Label in {+1, -1} and the score s(-1) - s(+1), where s(y) = -y w'X v^y."""
    x = np.asarray(x, dtype=float)
    _, X = query_context(model.train_features, x, model.hyper.k)
    scores = {}
    for y in (1.0, -1.0):
        v = _solve_conditional(model, X, x, y)
        scores[y] = -y * float(model.w @ (X @ v))
    score = scores[-1.0] - scores[1.0]
    if abs(score) <= TIE_TOL:
        return 1, score
    return (1 if score > 0 else -1), score


def predict_multiclass(models: list[SsclModel], x) -> int:
    """One-vs-rest decision: the class whose model scores highest, lowest class id on ties."""
    if not models:
        raise ValueError("no models given")
    if len(models) == 1:
        m = models[0]
        label, _ = predict(m, x)
        if label == 1 or m.negative_class is None:
            return m.positive_class
        return m.negative_class
    best_class, best_score = None, -np.inf
    for m in sorted(models, key=lambda m: m.positive_class):
        _, score = predict(m, x)
        if score > best_score:
            best_class, best_score = m.positive_class, score
    return best_class


def save_models(path, models: list[SsclModel], class_names=None) -> None:
    """Write one or more models to a single ``.npz`` archive with a JSON header."""
    header = {
        "format": "sscl-model",
        "version": FORMAT_VERSION,
        "class_names": list(class_names) if class_names is not None else None,
        "models": [],
    }
    arrays = {}
    for j, m in enumerate(models):
        header["models"].append({
            "hyper": asdict(m.hyper),
            "positive_class": m.positive_class,
            "negative_class": m.negative_class,
            "has_standardizer": m.standardizer is not None,
        })
        arrays[f"m{j}_w"] = m.w
        arrays[f"m{j}_V"] = m.V
        arrays[f"m{j}_delta"] = m.delta
        arrays[f"m{j}_train_features"] = m.train_features
        arrays[f"m{j}_train_binary_labels"] = m.train_binary_labels
        if m.standardizer is not None:
            arrays[f"m{j}_mean"] = m.standardizer.mean
            arrays[f"m{j}_scale"] = m.standardizer.scale
    arrays["header"] = np.frombuffer(json.dumps(header).encode(), dtype=np.uint8)
    with open(Path(path), "wb") as fh:
        np.savez(fh, **arrays)


def load_models(path) -> tuple[list[SsclModel], list[str] | None]:
    with np.load(Path(path)) as archive:
        header = json.loads(archive["header"].tobytes().decode())
        if header.get("format") != "sscl-model":
            raise ValueError(f"{path} is not an SSCL model archive")
        if header["version"] > FORMAT_VERSION:
            raise ValueError(f"{path} has format version {header['version']}, newest supported is {FORMAT_VERSION}")
        models = []
        for j, meta in enumerate(header["models"]):
            std = None
            if meta["has_standardizer"]:
                std = Standardizer(archive[f"m{j}_mean"], archive[f"m{j}_scale"])
            models.append(SsclModel(
                w=archive[f"m{j}_w"],
                V=archive[f"m{j}_V"],
                delta=archive[f"m{j}_delta"],
                hyper=Hyperparams(**meta["hyper"]),
                train_features=archive[f"m{j}_train_features"],
                train_binary_labels=archive[f"m{j}_train_binary_labels"],
                standardizer=std,
                positive_class=meta["positive_class"],
                negative_class=meta["negative_class"],
            ))
    return models, header["class_names"]


class SsclClassifier:
    """One-vs-rest SSCL over a multiclass :class:`Dataset` (a single model for two classes)."""

    def __init__(self, hyper: Hyperparams):
        self.hyper = hyper
        self.models: list[SsclModel] = []
        self.traces: list[TrainTrace] = []
        self.class_names: list[str] | None = None

    def fit(self, ds, standardizer: Standardizer | None = None) -> "SsclClassifier":
        from .data import one_vs_rest_tasks

        self.models, self.traces = [], []
        for task in one_vs_rest_tasks(ds):
            model, trace = train(task, self.hyper, standardizer=standardizer)
            self.models.append(model)
            self.traces.append(trace)
        self.class_names = list(ds.class_names)
        return self

    def predict(self, x) -> int:
        return predict_multiclass(self.models, x)

    def predict_many(self, X) -> np.ndarray:
        return np.array([self.predict(x) for x in np.atleast_2d(X)], dtype=int)

    def save(self, path) -> None:
        save_models(path, self.models, self.class_names)

    @classmethod
    def load(cls, path) -> "SsclClassifier":
        models, class_names = load_models(path)
        clf = cls(models[0].hyper)
        clf.models, clf.class_names = models, class_names
        return clf
