"""L1-regularized quadratic minimization and box-constrained QP maximization.

Both solvers return a :class:`SolverReport` carrying a KKT residual that
certifies the returned point independently of the path that produced it.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

SYMMETRY_TOL = 1e-10
REDUCED_RIDGE = 1e-10
ZERO_CURVATURE = 1e-12


class IndefiniteProblemError(ValueError):
    """The quadratic term has negative curvature along ``direction``."""

    def __init__(self, message: str, direction: np.ndarray):
        super().__init__(message)
        self.direction = direction


class ConvergenceError(RuntimeError):
    pass


@dataclass(frozen=True)
class L1QuadraticProblem:
    """minimize 0.5 v'Pv + q'v + gamma * ||v||_1"""

    P: np.ndarray
    q: np.ndarray
    gamma: float

    def __post_init__(self):
        P = np.atleast_2d(np.asarray(self.P, dtype=float))
        q = np.atleast_1d(np.asarray(self.q, dtype=float))
        if P.shape != (q.size, q.size):
            raise ValueError(f"P has shape {P.shape}, q has length {q.size}")
        if np.abs(P - P.T).max() > SYMMETRY_TOL * max(1.0, np.abs(P).max()):
            raise ValueError("P must be symmetric")
        if self.gamma < 0:
            raise ValueError(f"gamma must be >= 0, got {self.gamma}")
        object.__setattr__(self, "P", P)
        object.__setattr__(self, "q", q)
        object.__setattr__(self, "gamma", float(self.gamma))

    def objective(self, v: np.ndarray) -> float:
        return float(0.5 * v @ self.P @ v + self.q @ v + self.gamma * np.abs(v).sum())


@dataclass(frozen=True)
class BoxQpProblem:
    """maximize -0.5 d'Md + sum(d) subject to 0 <= d <= upper"""

    M: np.ndarray
    upper: float

    def __post_init__(self):
        M = np.atleast_2d(np.asarray(self.M, dtype=float))
        if M.shape[0] != M.shape[1]:
            raise ValueError(f"M must be square, got {M.shape}")
        if M.size and np.abs(M - M.T).max() > SYMMETRY_TOL * max(1.0, np.abs(M).max()):
            raise ValueError("M must be symmetric")
        if not self.upper > 0:
            raise ValueError(f"upper bound must be > 0, got {self.upper}")
        object.__setattr__(self, "M", M)
        object.__setattr__(self, "upper", float(self.upper))

    @property
    def n(self) -> int:
        return self.M.shape[0]

    def objective(self, delta: np.ndarray) -> float:
        return float(-0.5 * delta @ self.M @ delta + delta.sum())


@dataclass
class SolverReport:
    iterations: int
    kkt_residual: float
    objective: float
    converged: bool
    history: list[float] = field(default_factory=list, repr=False)


def l1q_kkt_residual(p: L1QuadraticProblem, v) -> float:
    """Largest violation of the subgradient optimality conditions at ``v``."""
    v = np.asarray(v, dtype=float)
    if v.shape != p.q.shape:
        raise ValueError(f"v has shape {v.shape}, expected {p.q.shape}")
    g = p.P @ v + p.q
    nonzero = v != 0
    viol = np.where(nonzero, np.abs(g + p.gamma * np.sign(v)), np.maximum(0.0, np.abs(g) - p.gamma))
    return float(viol.max(initial=0.0))


def _reduced_solve(P_aa: np.ndarray, rhs: np.ndarray, tol: float) -> np.ndarray:
    try:
        x = np.linalg.solve(P_aa, rhs)
    except np.linalg.LinAlgError:
        P_aa = P_aa + REDUCED_RIDGE * np.eye(P_aa.shape[0])
        x = np.linalg.solve(P_aa, rhs)
    r = rhs - P_aa @ x
    if np.abs(r).max() > 0.1 * tol:
        # iterative refinement for badly scaled blocks
        x = x + np.linalg.solve(P_aa, r)
    return x


def solve_l1_quadratic(
    p: L1QuadraticProblem,
    tol: float = 1e-8,
    max_iter: int | None = None,
    x0=None,
) -> tuple[np.ndarray, SolverReport]:
    """Feature-sign search for ``min 0.5 v'Pv + q'v + gamma ||v||_1``.

    Keeps a working sign vector; each step solves the smooth problem on the
    current sign pattern and line-searches over the sign changes between the
    old and new iterate, so the objective never increases. ``max_iter``
    bounds the number of such steps (default ``10 * k``).
    """
    if tol <= 0:
        raise ValueError("tol must be > 0")
    P, q, gamma = p.P, p.q, p.gamma
    k = q.size
    if max_iter is None:
        max_iter = 10 * k
    diag = np.diag(P)
    if (diag < 0).any():
        i = int(np.argmin(diag))
        direction = np.zeros(k)
        direction[i] = 1.0
        raise IndefiniteProblemError(f"negative diagonal entry P[{i},{i}] = {diag[i]:.3e}", direction)

    v = np.zeros(k) if x0 is None else np.array(x0, dtype=float)
    current = p.objective(v)
    history = [current]
    iterations = 0
    converged = False
    while True:
        g = P @ v + q
        signs = np.sign(v)
        active = signs != 0
        nz_viol = np.abs(g[active] + gamma * signs[active]).max(initial=0.0)
        if nz_viol <= tol:
            zero_grad = np.where(active, 0.0, np.abs(g))
            j = int(np.argmax(zero_grad))
            if zero_grad[j] <= gamma + tol:
                converged = True
                break
            signs[j] = -np.sign(g[j])
        if iterations >= max_iter:
            break
        iterations += 1

        idx = np.flatnonzero(signs)
        P_aa = P[np.ix_(idx, idx)]
        new_a = _reduced_solve(P_aa, -(q[idx] + gamma * signs[idx]), tol)
        step = new_a - v[idx]
        curvature = step @ P_aa @ step
        if curvature < -ZERO_CURVATURE * max(1.0, np.abs(P_aa).max()) * (step @ step):
            direction = np.zeros(k)
            direction[idx] = step / np.linalg.norm(step)
            raise IndefiniteProblemError(f"negative curvature {curvature:.3e} along the search direction", direction)
        old_a = v[idx]

        crossing = (old_a != 0) & (np.sign(new_a) != np.sign(old_a))
        if not crossing.any() and np.array_equal(np.sign(new_a), signs[idx]):
            v[idx] = new_a
            current = p.objective(v)
            history.append(current)
            continue
        candidates = [new_a]
        for j in np.flatnonzero(crossing):
            t = old_a[j] / (old_a[j] - new_a[j])
            point = old_a + t * (new_a - old_a)
            point[j] = 0.0
            candidates.append(point)
        best_a, best_obj = None, np.inf
        trial = v.copy()
        for cand in candidates:
            trial[idx] = cand
            obj = p.objective(trial)
            if obj < best_obj:
                best_a, best_obj = cand, obj
        if best_obj > current + 1e-12 * max(1.0, abs(current)):
            # no candidate improves: rounding-level stall on an optimal pattern
            break
        v[idx] = best_a
        current = best_obj
        history.append(current)

    return v, SolverReport(iterations, l1q_kkt_residual(p, v), p.objective(v), converged, history)


def boxqp_kkt_residual(p: BoxQpProblem, delta) -> float:
    """max_i |clip(delta_i + g_i, 0, upper) - delta_i| with g = 1 - M delta."""
    delta = np.asarray(delta, dtype=float)
    if delta.shape != (p.n,):
        raise ValueError(f"delta has shape {delta.shape}, expected ({p.n},)")
    if (delta < -1e-12).any() or (delta > p.upper + 1e-12).any():
        raise ValueError("delta lies outside the box")
    g = 1.0 - p.M @ delta
    return float(np.abs(np.clip(delta + g, 0.0, p.upper) - delta).max(initial=0.0))


def _active_set_refine(p: BoxQpProblem, delta: np.ndarray, tol: float, max_steps: int) -> np.ndarray:
    """Primal active-set ascent from a feasible ``delta``.

    Coordinates sitting on a bound form the working set; the rest are moved
    toward the maximizer of the objective restricted to them (or along a
    null-space ascent direction when that face is unbounded) until a bound
    blocks. At a face-stationary point the bound with the most violated
    multiplier is released. Every step is an ascent step.
    """
    M, upper, n = p.M, p.upper, p.n
    delta = delta.copy()
    fixed = (delta <= 0.0) | (delta >= upper)
    for _ in range(max_steps):
        g = 1.0 - M @ delta
        free = ~fixed
        f = np.flatnonzero(free)
        if f.size and np.abs(g[f]).max() > tol:
            M_ff = M[np.ix_(f, f)]
            target, *_ = np.linalg.lstsq(M_ff, g[f] + M_ff @ delta[f], rcond=1e-12)
            residual = g[f] - M_ff @ (target - delta[f])
            if np.abs(residual).max() > tol * 1e-3 * max(1.0, np.abs(g[f]).max()):
                # inconsistent face system: the objective rises linearly along the null-space residual
                step, t_max = residual, np.inf
            else:
                step, t_max = target - delta[f], 1.0
            with np.errstate(divide="ignore", invalid="ignore"):
                ratio = np.where(step > 0, (upper - delta[f]) / step,
                                 np.where(step < 0, -delta[f] / step, np.inf))
            hit = int(np.argmin(ratio))
            t = min(t_max, float(ratio[hit]))
            if not np.isfinite(t):
                break
            delta[f] = np.clip(delta[f] + t * step, 0.0, upper)
            if t == ratio[hit]:
                delta[f[hit]] = upper if step[hit] > 0 else 0.0
                fixed[f[hit]] = True
            continue
        # face-stationary: release the bound whose multiplier has the wrong sign by the most
        viol = np.where(fixed, np.where(delta <= 0.0, g, -g), -np.inf)
        i = int(np.argmax(viol))
        if viol[i] <= tol:
            break
        fixed[i] = False
    return delta


def solve_box_qp(
    p: BoxQpProblem,
    tol: float = 1e-8,
    max_iter: int = 200,
    x0=None,
) -> tuple[np.ndarray, SolverReport]:
    """Projected coordinate ascent for ``max -0.5 d'Md + sum(d)`` on ``[0, upper]^n``.

    Each coordinate is maximized exactly, in ascending index order. After
    every sweep that leaves the KKT residual above ``tol``, a primal
    active-set phase starting from the swept point tries to finish exactly;
    its result is kept only when it does not lower the objective.
    ``max_iter`` counts full sweeps.
    """
    if tol <= 0:
        raise ValueError("tol must be > 0")
    M, upper, n = p.M, p.upper, p.n
    delta = np.zeros(n) if x0 is None else np.clip(np.array(x0, dtype=float), 0.0, upper)
    diag = np.diag(M).copy()
    history = [p.objective(delta)]
    converged = boxqp_kkt_residual(p, delta) <= tol
    sweeps = 0
    while not converged and sweeps < max_iter:
        sweeps += 1
        grad = 1.0 - M @ delta
        for i in range(n):
            if diag[i] <= ZERO_CURVATURE:
                # objective is linear in this coordinate: push to the bound the slope favors
                new = upper if grad[i] + diag[i] * delta[i] > 0 else 0.0
            else:
                new = min(max(delta[i] + grad[i] / diag[i], 0.0), upper)
            change = new - delta[i]
            if change != 0.0:
                grad -= change * M[:, i]
                delta[i] = new
        current = p.objective(delta)
        if boxqp_kkt_residual(p, delta) > tol:
            refined = _active_set_refine(p, delta, tol, max_steps=2 * n + 10)
            obj = p.objective(refined)
            if obj >= current:
                delta, current = refined, obj
        history.append(current)
        converged = boxqp_kkt_residual(p, delta) <= tol

    return delta, SolverReport(sweeps, boxqp_kkt_residual(p, delta), p.objective(delta), converged, history)
