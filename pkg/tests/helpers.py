"""Synthetic datasets and brute-force oracles shared by the test modules."""

import itertools

import numpy as np

from sscl.data import Dataset


def separable_dataset(seed=0, per_class=30, gap=10.0, d=2):
    """Two unit-variance Gaussian clusters centred at the origin and at (gap, ..., gap)."""
    rng = np.random.default_rng(seed)
    X = np.vstack([rng.normal(0.0, 1.0, (per_class, d)), rng.normal(gap, 1.0, (per_class, d))])
    y = np.repeat([0, 1], per_class)
    return Dataset(X, y, "separable", ("a", "b"))


def noisy_dataset(seed=0, per_class=30, noise=0.2):
    """The separable construction with a fraction of labels flipped."""
    rng = np.random.default_rng(seed)
    X = np.vstack([rng.normal(0.0, 1.0, (per_class, 2)), rng.normal(10.0, 1.0, (per_class, 2))])
    y = np.repeat([0, 1], per_class)
    flip = rng.choice(y.size, int(round(noise * y.size)), replace=False)
    y[flip] = 1 - y[flip]
    return Dataset(X, y, "noisy", ("a", "b"))


def overlapping_features(seed, n=40, d=3, shift=1.5):
    """Standardized features of two overlapping clusters plus +1/-1 labels."""
    rng = np.random.default_rng(seed)
    half = n // 2
    X = np.vstack([rng.normal(0.0, 1.0, (half, d)), rng.normal(shift, 1.0, (n - half, d))])
    X = (X - X.mean(0)) / X.std(0)
    y = np.r_[np.ones(half), -np.ones(n - half)]
    return X, y, rng


def l1_oracle(P, q, gamma):
    """Minimum of 0.5 v'Pv + q'v + gamma |v|_1 over every sign pattern (P positive definite)."""
    k = len(q)
    best, best_v = np.inf, None
    for pattern in itertools.product((-1.0, 0.0, 1.0), repeat=k):
        s = np.array(pattern)
        idx = np.flatnonzero(s)
        v = np.zeros(k)
        if idx.size:
            v[idx] = np.linalg.solve(P[np.ix_(idx, idx)], -(q[idx] + gamma * s[idx]))
        # a pattern whose solution has the wrong signs is still a valid point; it just never wins
        obj = 0.5 * v @ P @ v + q @ v + gamma * np.abs(v).sum()
        if obj < best:
            best, best_v = obj, v
    return best, best_v


def box_oracle(M, upper):
    """Maximum of -0.5 d'Md + sum(d) on [0, upper]^n by enumerating lower/free/upper patterns.

    Some maximizer has a nonsingular free block (move along any null direction
    until another bound is hit), so least squares on each face finds it.
    """
    n = len(M)
    best = -np.inf
    for pattern in itertools.product((0, 1, 2), repeat=n):
        pattern = np.array(pattern)
        d = np.where(pattern == 2, upper, 0.0)
        free = np.flatnonzero(pattern == 1)
        if free.size:
            fixed = np.flatnonzero(pattern != 1)
            rhs = 1.0 - M[np.ix_(free, fixed)] @ d[fixed]
            d[free] = np.linalg.lstsq(M[np.ix_(free, free)], rhs, rcond=None)[0]
        if (d < -1e-10).any() or (d > upper + 1e-10).any():
            continue
        best = max(best, -0.5 * d @ M @ d + d.sum())
    return best


def random_pd(rng, k):
    A = rng.normal(size=(k, k))
    return A.T @ A + 0.1 * np.eye(k)


def random_psd(rng, n):
    rank = int(rng.integers(1, n + 1))
    A = rng.normal(size=(rank, n))
    return A.T @ A
