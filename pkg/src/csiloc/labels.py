"""Minimum-variance probability-map labels for supervised position training.

Given a ground-truth position inside the hull of a grid, these solvers find
the probability map whose expected location matches the position (within a
configurable slack) while minimizing the spatial variance of the map. The
variance objective is linear in the map, so the exact-match case is a linear
program over the probability simplex.

Three routes are provided:

* :func:`min_variance_pmf` -- the production solver: Douglas-Rachford
  splitting between the simplex and the mean-constraint set, followed (for
  zero slack) by an exact finishing step on the support the splitting
  iteration identifies, with a global optimality certificate from reduced
  costs.
* :func:`min_variance_pmf_rect` -- closed-form fast path for rectangular
  uniform grids: bilinear masses on the four corners of the enclosing cell.
* :func:`lp_oracle` -- a dense basis-enumeration solver for small grids,
  used in tests as an independent cross-check.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np
from scipy.optimize import linprog

from .grid import Grid, ProbabilityMap, in_hull, variance_vector


class InfeasibleTargetError(ValueError):
    """The target position lies outside the convex hull of the grid."""


class ConvergenceError(RuntimeError):
    """The solver exhausted its iteration budget without a reliable solution."""


@dataclass(frozen=True)
class LabelConfig:
    """Solver settings.

    ``epsilon`` is the allowed distance between the map's mean and the target
    (0 enforces exact mean equality, the default so labels carry no
    systematic bias); ``max_iters`` bounds the splitting iterations and
    ``tol`` is the accepted objective gap to the true optimum.
    """

    epsilon: float = 0.0
    max_iters: int = 10_000
    tol: float = 1e-8

    def __post_init__(self):
        if self.epsilon < 0.0:
            raise ValueError("epsilon must be nonnegative")
        if self.max_iters < 1:
            raise ValueError("max_iters must be positive")
        if self.tol <= 0.0:
            raise ValueError("tol must be positive")


def project_simplex(z: np.ndarray) -> np.ndarray:
    """Euclidean projection onto the probability simplex (sort-based)."""
    z = np.asarray(z, dtype=np.float64)
    u = np.sort(z)[::-1]
    css = np.cumsum(u)
    j = np.arange(1, z.size + 1)
    rho = int(j[u + (1.0 - css) / j > 0.0][-1])
    lam = (1.0 - css[rho - 1]) / rho
    return np.maximum(z + lam, 0.0)


def _mean_set_projector(g_pts: np.ndarray, x: np.ndarray, eps: float):
    """Projection onto {p : ||G p - x|| <= eps} (affine set when eps == 0)."""
    if eps == 0.0:
        g_pinv = np.linalg.pinv(g_pts)

        def proj_affine(z):
            return z - g_pinv @ (g_pts @ z - x)

        return proj_affine

    m = g_pts @ g_pts.T
    lam, q = np.linalg.eigh(m)
    lam = np.maximum(lam, 0.0)

    def proj_ball(z):
        r = g_pts @ z - x
        rn = float(np.linalg.norm(r))
        if rn <= eps:
            return z
        rq = q.T @ r
        # find mu > 0 with ||(I + mu*M)^{-1} r|| = eps by bisection
        lo, hi = 0.0, 1.0
        for _ in range(200):
            if np.linalg.norm(rq / (1.0 + hi * lam)) <= eps:
                break
            hi *= 4.0
        for _ in range(120):
            mid = 0.5 * (lo + hi)
            if np.linalg.norm(rq / (1.0 + mid * lam)) > eps:
                lo = mid
            else:
                hi = mid
        mu = 0.5 * (lo + hi)
        shrunk = q @ (rq / (1.0 + mu * lam))
        return z - mu * (g_pts.T @ shrunk)

    return proj_ball


def _douglas_rachford(v, g_pts, x, eps, max_iters, fix_tol):
    """Splitting iteration; returns the simplex-feasible iterate and residual."""
    k = v.size
    vmax = float(v.max())
    gamma = 0.5 / vmax if vmax > 0.0 else 1.0
    proj_mean = _mean_set_projector(g_pts, x, eps)
    z = np.full(k, 1.0 / k)
    p1 = z
    resid = np.inf
    for _ in range(max_iters):
        p1 = project_simplex(z - gamma * v)
        p2 = proj_mean(2.0 * p1 - z)
        dz = p2 - p1
        z = z + dz
        resid = float(np.max(np.abs(dz)))
        if resid < fix_tol:
            break
    return p1, resid


def _exact_finish(v, a_eq, b_eq, p_init, cert_tol, rounds=60):
    """Column-generation finish for the exact-mean case.

    Solves the problem restricted to the candidate columns the splitting
    iteration activated, then certifies global optimality through reduced
    costs; columns with negative reduced cost are pulled in and the solve is
    repeated. Returns the certified map or None.
    """
    k = v.size
    nearest = np.argsort(v, kind="stable")
    seed = a_eq.shape[0] + 1
    cand = np.union1d(np.flatnonzero(p_init > 1e-10), nearest[: min(k, seed)])
    cand = np.union1d(cand, np.argsort(-p_init, kind="stable")[:seed])
    for _ in range(rounds):
        cols = np.sort(cand)
        res = linprog(v[cols], A_eq=a_eq[:, cols], b_eq=b_eq,
                      bounds=(0.0, None), method="highs")
        if res.status != 0:
            if cols.size == k:
                return None
            cand = np.union1d(cand, nearest[: min(k, 2 * cols.size)])
            continue
        q = np.maximum(res.x, 0.0)
        support = cols[q > 1e-9]
        if support.size == 0:
            support = cols[np.argsort(-q)[: a_eq.shape[0]]]
        y = np.linalg.lstsq(a_eq[:, support].T, v[support], rcond=None)[0]
        reduced = v - a_eq.T @ y
        jmin = int(np.argmin(reduced))
        if reduced[jmin] >= -cert_tol or cols.size == k:
            p = np.zeros(k)
            p[cols] = q
            total = p.sum()
            if not 1e-7 > abs(total - 1.0):
                return None
            return p / total
        if np.any(cand == jmin):
            # degenerate tie; widen with the next nearest columns instead
            cand = np.union1d(cand, nearest[: min(k, cols.size + seed)])
        else:
            cand = np.union1d(cand, [jmin])
    return None


def min_variance_pmf(x, g: Grid, cfg: LabelConfig | None = None) -> ProbabilityMap:
    """Minimum-variance probability map whose mean matches ``x``.

    Raises :class:`InfeasibleTargetError` when ``x`` lies outside the grid
    hull and :class:`ConvergenceError` when the iteration budget runs out
    before reaching a solution within tolerance.
    """
    cfg = cfg if cfg is not None else LabelConfig()
    x = np.asarray(x, dtype=np.float64)
    if not in_hull(x, g):
        raise InfeasibleTargetError(f"target {x.tolist()} is outside the grid hull")
    v = variance_vector(g, x)
    fix_tol = min(1e-9, 0.01 * cfg.tol)
    # with exact finishing the splitting phase only needs to identify the
    # active support, so its budget is capped; the eps > 0 path has no
    # finishing step and gets the full budget
    iters = min(cfg.max_iters, 1500) if cfg.epsilon == 0.0 else cfg.max_iters
    p_dr, resid = _douglas_rachford(v, g.points, x, cfg.epsilon, iters, fix_tol)
    if cfg.epsilon == 0.0:
        a_eq = np.vstack([g.points, np.ones(g.count)])
        b_eq = np.concatenate([x, [1.0]])
        cert_tol = max(1e-12, 1e-10 * float(v.max()))
        p = _exact_finish(v, a_eq, b_eq, p_dr, cert_tol)
        if p is None:
            raise ConvergenceError("exact-mean finish failed to certify an optimum")
        return ProbabilityMap.for_grid(np.clip(p, 0.0, 1.0), g)
    mean_err = float(np.linalg.norm(g.points @ p_dr - x))
    if mean_err > cfg.epsilon + 1e-6:
        raise ConvergenceError(
            f"splitting iteration stalled (mean error {mean_err:.3e}, "
            f"fixed-point residual {resid:.3e})")
    return ProbabilityMap.for_grid(p_dr, g)


def min_variance_pmf_rect(x, g: Grid) -> ProbabilityMap:
    """Fast path for rectangular uniform grids: bilinear corner masses.

    The four corners of the cell enclosing ``x`` receive the bilinear
    interpolation weights, which reproduce the mean exactly and attain the
    minimum variance achievable on those corners. Among the optima this path
    always returns the canonical symmetric one.
    """
    if g.lattice is None:
        raise ValueError("grid is not rectangular-uniform")
    lat = g.lattice
    x = np.asarray(x, dtype=np.float64)
    if x.shape != (2,):
        raise ValueError("target must be a 2-vector")
    if not (lat.x_min <= x[0] <= lat.x_max and lat.y_min <= x[1] <= lat.y_max):
        raise InfeasibleTargetError(f"target {x.tolist()} is outside the grid bounding box")
    side = lat.side_count
    hx = (lat.x_max - lat.x_min) / (side - 1)
    hy = (lat.y_max - lat.y_min) / (side - 1)
    i = min(int((x[0] - lat.x_min) / hx), side - 2)
    j = min(int((x[1] - lat.y_min) / hy), side - 2)
    s = (x[0] - (lat.x_min + i * hx)) / hx
    t = (x[1] - (lat.y_min + j * hy)) / hy
    p = np.zeros(g.count)
    p[i * side + j] = (1.0 - s) * (1.0 - t)
    p[(i + 1) * side + j] = s * (1.0 - t)
    p[i * side + (j + 1)] = (1.0 - s) * t
    p[(i + 1) * side + (j + 1)] = s * t
    return ProbabilityMap.for_grid(np.clip(p, 0.0, 1.0), g)


def lp_oracle(x, g: Grid) -> tuple[ProbabilityMap, float]:
    """Exact-mean minimum-variance map by dense basis enumeration.

    Intended for verification on small grids (at most 64 points): every
    basis of the constraint matrix is enumerated and the best feasible basic
    solution is returned together with its objective value.
    """
    if g.count > 64:
        raise ValueError("basis enumeration is limited to grids of at most 64 points")
    x = np.asarray(x, dtype=np.float64)
    if x.shape != (g.dims,):
        raise ValueError(f"target has shape {x.shape}, expected ({g.dims},)")
    v = variance_vector(g, x)
    a_eq = np.vstack([g.points, np.ones(g.count)])
    b_eq = np.concatenate([x, [1.0]])
    rank = np.linalg.matrix_rank(a_eq)
    k = g.count
    best_obj = np.inf
    best_p = None
    combos = np.array(list(itertools.combinations(range(k), rank)))
    if rank == a_eq.shape[0]:
        mats = a_eq[:, combos.T].transpose(2, 0, 1)  # (n_combos, rank, rank)
        dets = np.abs(np.linalg.det(mats))
        scale = np.abs(mats).max(axis=(1, 2)) ** rank + 1e-300
        ok = dets > 1e-12 * scale
        sols = np.full((len(combos), rank), np.nan)
        if np.any(ok):
            rhs = np.broadcast_to(b_eq[:, None], (int(ok.sum()), rank, 1)).copy()
            sols[ok] = np.linalg.solve(mats[ok], rhs)[:, :, 0]
        feas = ok & np.all(sols >= -1e-9, axis=1)
        if np.any(feas):
            objs = np.einsum("ij,ij->i", v[combos], np.where(np.isnan(sols), 0.0, sols))
            objs = np.where(feas, objs, np.inf)
            idx = int(np.argmin(objs))
            best_obj = float(objs[idx])
            best_p = np.zeros(k)
            best_p[combos[idx]] = sols[idx]
    else:
        for cols in combos:
            a_s = a_eq[:, cols]
            if np.linalg.matrix_rank(a_s) < rank:
                continue
            sol, *_ = np.linalg.lstsq(a_s, b_eq, rcond=None)
            if np.linalg.norm(a_s @ sol - b_eq) > 1e-9:
                continue
            if np.any(sol < -1e-9):
                continue
            obj = float(v[cols] @ sol)
            if obj < best_obj:
                best_obj = obj
                best_p = np.zeros(k)
                best_p[cols] = sol
    if best_p is None:
        raise InfeasibleTargetError(f"target {x.tolist()} is outside the grid hull")
    best_p = np.clip(best_p, 0.0, 1.0)
    best_p /= best_p.sum()
    return ProbabilityMap.for_grid(best_p, g), best_obj


def map_objective(p: ProbabilityMap, g: Grid, x) -> float:
    """Variance objective of a map evaluated at target ``x``."""
    return float(variance_vector(g, x) @ p.mass)
