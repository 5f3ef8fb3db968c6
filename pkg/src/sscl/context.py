"""Exact k-nearest-neighbor contexts."""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class ContextIndex:
    """Neighbor ids (n x k) and the stacked context matrices (n x d x k).

    ``context_matrices[i][:, j]`` is the feature vector of training point
    ``neighbor_ids[i, j]``.
    """

    k: int
    neighbor_ids: np.ndarray
    distances: np.ndarray
    context_matrices: np.ndarray

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["point_index", "rank", "neighbor_index", "distance"])
            for i, (ids, dists) in enumerate(zip(self.neighbor_ids, self.distances)):
                for rank, (j, dist) in enumerate(zip(ids, dists)):
                    writer.writerow([i, rank, int(j), repr(float(dist))])


def _sq_distances(queries: np.ndarray, points: np.ndarray) -> np.ndarray:
    # explicit differences: the expanded ||a||^2 - 2ab + ||b||^2 form loses exact zeros
    diff = queries[:, None, :] - points[None, :, :]
    return np.einsum("qnd,qnd->qn", diff, diff)


def _rank(sq: np.ndarray, k: int) -> np.ndarray:
    # stable sort on distance keeps ascending index order among ties
    return np.argsort(sq, axis=1, kind="stable")[:, :k]


def _features(train) -> np.ndarray:
    return train.features if hasattr(train, "features") else np.asarray(train, dtype=float)


def build_context_index(train, k: int, chunk: int = 256) -> ContextIndex:
    """Brute-force Euclidean k-NN of every training point, excluding itself."""
    x = _features(train)
    n = x.shape[0]
    if not 1 <= k <= n - 1:
        raise ValueError(f"k must be in [1, {n - 1}], got {k}")
    ids = np.empty((n, k), dtype=int)
    dists = np.empty((n, k))
    for start in range(0, n, chunk):
        stop = min(start + chunk, n)
        sq = _sq_distances(x[start:stop], x)
        sq[np.arange(stop - start), np.arange(start, stop)] = np.inf
        rows = _rank(sq, k)
        ids[start:stop] = rows
        dists[start:stop] = np.sqrt(np.take_along_axis(sq, rows, axis=1))
    return ContextIndex(k, ids, dists, x[ids].transpose(0, 2, 1).copy())


def query_context(train, x, k: int) -> tuple[np.ndarray, np.ndarray]:
    """The ``k`` nearest training points to ``x`` as (ids, d x k matrix)."""
    points = _features(train)
    x = np.asarray(x, dtype=float)
    n = points.shape[0]
    if not 1 <= k <= n:
        raise ValueError(f"k must be in [1, {n}], got {k}")
    if not np.isfinite(x).all():
        raise ValueError("query point must be finite")
    ids = _rank(_sq_distances(x[None, :], points), k)[0]
    return ids, points[ids].T.copy()
