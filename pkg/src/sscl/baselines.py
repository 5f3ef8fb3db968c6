"""Context-based comparison classifiers: majority-vote KNN and sparse-representation classification."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .context import query_context
from .data import Dataset
from .optim import ConvergenceError, L1QuadraticProblem, solve_l1_quadratic

RIDGE = 1e-8


@dataclass(frozen=True)
class KnnClassifier:
    train: Dataset
    k: int

    def __post_init__(self):
        if not 1 <= self.k <= self.train.n:
            raise ValueError(f"k must be in [1, {self.train.n}], got {self.k}")

    def predict(self, x) -> int:
        ids, _ = query_context(self.train.features, x, self.k)
        votes = np.bincount(self.train.labels[ids], minlength=self.train.n_classes)
        # argmax returns the first maximum, i.e. the lowest class id on ties
        return int(np.argmax(votes))

    def predict_many(self, X) -> np.ndarray:
        return np.array([self.predict(x) for x in np.atleast_2d(X)], dtype=int)


def knn_predict(c: KnnClassifier, x) -> int:
    return c.predict(x)


@dataclass(frozen=True)
class SrbcClassifier:
    """Reconstruct the query from each class's training points; the smallest residual wins.

    Each class solves ``min ||x - X_c v||^2 + gamma ||v||_1`` over all of its
    training points.
    """

    train: Dataset
    gamma: float = 0.1
    beta: float = 1.0
    tol: float = 1e-8

    def __post_init__(self):
        if self.gamma < 0:
            raise ValueError(f"gamma must be >= 0, got {self.gamma}")
        # Gram matrices depend only on the training data
        grams = {}
        for c in np.unique(self.train.labels):
            X_c = self.train.features[self.train.labels == c].T
            grams[int(c)] = (X_c, 2.0 * self.beta * (X_c.T @ X_c) + RIDGE * np.eye(X_c.shape[1]))
        object.__setattr__(self, "_grams", grams)

    def residuals(self, x) -> dict[int, float]:
        x = np.asarray(x, dtype=float)
        out = {}
        for c, (X_c, P) in self._grams.items():
            prob = L1QuadraticProblem(P, -2.0 * self.beta * (X_c.T @ x), self.gamma)
            v, report = solve_l1_quadratic(prob, tol=self.tol, max_iter=10 * max(P.shape[0], 10))
            if not report.converged:
                raise ConvergenceError(
                    f"class {c} reconstruction did not converge (KKT residual {report.kkt_residual:.3e})"
                )
            r = x - X_c @ v
            out[c] = float(r @ r)
        return out

    def predict(self, x) -> int:
        res = self.residuals(x)
        return min(sorted(res), key=lambda c: res[c])

    def predict_many(self, X) -> np.ndarray:
        return np.array([self.predict(x) for x in np.atleast_2d(X)], dtype=int)


def srbc_predict(c: SrbcClassifier, x) -> int:
    return c.predict(x)
