"""Empirical Wasserstein distances, tail and moment statistics, slope fits."""
from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass

import numpy as np
from numba import njit

from .manifolds import InvalidInputError

MAX_CLOUD = 2048


# -- assignment -------------------------------------------------------------------

@dataclass
class Assignment:
    cols: np.ndarray  # row i is matched to column cols[i]
    cost: float
    row_dual: np.ndarray
    col_dual: np.ndarray


@njit(cache=True)
def _augment(C, u, v, owner, way):
    """Shortest augmenting paths, one row at a time (1-based, column 0 virtual)."""
    n = C.shape[0]
    minv = np.empty(n + 1)
    used = np.zeros(n + 1, dtype=np.bool_)
    for i in range(1, n + 1):
        owner[0] = i
        j0 = 0
        minv[:] = np.inf
        used[:] = False
        while True:
            used[j0] = True
            i0 = owner[j0]
            delta = np.inf
            j1 = 0
            for j in range(1, n + 1):
                if not used[j]:
                    red = C[i0 - 1, j - 1] - u[i0] - v[j]
                    if red < minv[j]:
                        minv[j] = red
                        way[j] = j0
                    if minv[j] < delta:
                        delta = minv[j]
                        j1 = j
            for j in range(n + 1):
                if used[j]:
                    u[owner[j]] += delta
                    v[j] -= delta
                else:
                    minv[j] -= delta
            j0 = j1
            if owner[j0] == 0:
                break
        while j0:
            j1 = way[j0]
            owner[j0] = owner[j1]
            j0 = j1


def solve_assignment(C) -> Assignment:
    """Minimum-cost perfect matching of a square cost matrix.

    Shortest augmenting paths with row/column potentials (Hungarian method,
    O(n^3)).  Rows are inserted one at a time; each insertion runs a
    Dijkstra-like search over reduced costs, so the potentials satisfy
    u_i + v_j <= C_ij throughout with equality on matched pairs.
    """
    C = np.ascontiguousarray(C, dtype=float)
    if C.ndim != 2 or C.shape[0] != C.shape[1]:
        raise InvalidInputError("cost matrix must be square")
    if not np.all(np.isfinite(C)):
        raise InvalidInputError("cost matrix must be finite")
    n = C.shape[0]
    if n == 0:
        return Assignment(np.zeros(0, dtype=int), 0.0, np.zeros(0), np.zeros(0))
    u = np.zeros(n + 1)
    v = np.zeros(n + 1)
    owner = np.zeros(n + 1, dtype=np.int64)  # owner[j] = row matched to column j
    way = np.zeros(n + 1, dtype=np.int64)
    _augment(C, u, v, owner, way)
    cols = np.empty(n, dtype=np.int64)
    cols[owner[1:] - 1] = np.arange(n)
    cost = float(C[np.arange(n), cols].sum())
    return Assignment(cols, cost, u[1:].copy(), v[1:].copy())


def slackness_gap(C, a: Assignment):
    """(min reduced cost, max |reduced cost| on matched pairs).

    An optimal assignment has the first >= 0 and the second == 0 up to
    rounding; together they certify optimality by LP duality.
    """
    C = np.asarray(C, dtype=float)
    red = C - a.row_dual[:, None] - a.col_dual[None, :]
    n = len(a.cols)
    return float(red.min(initial=0.0)), float(np.abs(red[np.arange(n), a.cols]).max(initial=0.0))


def brute_force_assignment(C):
    """Minimum over all n! permutations; reference for small n."""
    from itertools import permutations

    C = np.asarray(C, dtype=float)
    n = C.shape[0]
    best, arg = np.inf, None
    rows = np.arange(n)
    for perm in permutations(range(n)):
        c = C[rows, perm].sum()
        if c < best:
            best, arg = c, perm
    return float(best), np.array(arg if arg is not None else (), dtype=int)


# -- clouds and Wasserstein ---------------------------------------------------------

@dataclass
class SampleCloud:
    manifold: object
    points: np.ndarray
    label: str = ""

    def __post_init__(self):
        self.points = np.atleast_2d(np.asarray(self.points, dtype=float))
        self.manifold.check_point(self.points)

    def __len__(self):
        return len(self.points)


@dataclass
class W1Result:
    value: float
    assignment: np.ndarray
    cost_matrix_checksum: str
    row_dual: np.ndarray | None = None
    col_dual: np.ndarray | None = None


def checksum(C):
    return hashlib.sha256(np.ascontiguousarray(C, dtype="<f8").tobytes()).hexdigest()[:16]


def cost_matrix(A: SampleCloud, B: SampleCloud, power=1):
    if A.manifold != B.manifold:
        raise InvalidInputError("clouds live on different manifolds")
    if len(A) != len(B):
        raise InvalidInputError(f"cloud sizes differ: {len(A)} vs {len(B)}")
    if len(A) > MAX_CLOUD:
        raise InvalidInputError(f"cloud size {len(A)} exceeds {MAX_CLOUD}")
    m = A.manifold
    # row blocks keep the temporary (rows, n, ambient) arrays small
    n = len(A)
    D = np.empty((n, n))
    step = max(1, 2**20 // max(1, n * m.ambient_dim))
    for s in range(0, n, step):
        D[s:s + step] = m.distance(A.points[s:s + step, None, :], B.points[None, :, :])
    return D**power


def _solve(A, B, power):
    C = cost_matrix(A, B, power)
    a = solve_assignment(C)
    n = len(A)
    # correctly rounded sum: the value cannot depend on the matching's row order
    total = math.fsum(C[np.arange(n), a.cols])
    return W1Result(total / n if n else 0.0, a.cols, checksum(C), a.row_dual, a.col_dual)


def wasserstein1(A: SampleCloud, B: SampleCloud) -> W1Result:
    """Exact W1 between two equal-size empirical measures under geodesic cost."""
    return _solve(A, B, 1)


def wasserstein2_sq(A: SampleCloud, B: SampleCloud) -> float:
    """Exact squared W2 (mean matched squared distance)."""
    return _solve(A, B, 2).value


# -- fits ---------------------------------------------------------------------------

@dataclass
class LineFit:
    slope: float
    intercept: float
    r2: float
    slope_se: float


def linear_fit(xs, ys) -> LineFit:
    x = np.asarray(xs, dtype=float)
    y = np.asarray(ys, dtype=float)
    if x.shape != y.shape or x.ndim != 1:
        raise InvalidInputError("xs and ys must be 1-d and of equal length")
    if len(x) < 2:
        raise InvalidInputError("need at least two points")
    xc = x - x.mean()
    sxx = float(xc @ xc)
    if sxx == 0:
        raise InvalidInputError("xs are all equal")
    slope = float(xc @ (y - y.mean())) / sxx
    intercept = float(y.mean() - slope * x.mean())
    resid = y - intercept - slope * x
    ss_res = float(resid @ resid)
    ss_tot = float((y - y.mean()) @ (y - y.mean()))
    r2 = 1.0 if ss_tot == 0 else 1.0 - ss_res / ss_tot
    se = float(np.sqrt(ss_res / (len(x) - 2) / sxx)) if len(x) > 2 else float("nan")
    return LineFit(slope, intercept, r2, se)


def loglog_slope(xs, ys):
    """(slope, intercept, r^2) of least squares on (ln x, ln y)."""
    x = np.asarray(xs, dtype=float)
    y = np.asarray(ys, dtype=float)
    if np.any(x <= 0) or np.any(y <= 0):
        raise InvalidInputError("log-log fit needs positive data")
    f = linear_fit(np.log(x), np.log(y))
    return f.slope, f.intercept, f.r2


# -- tails and moments --------------------------------------------------------------

def _distance_series(manifold, traj, x_star):
    pts = traj.points if hasattr(traj, "points") else np.asarray(traj, dtype=float)
    return manifold.distance(pts, np.asarray(x_star, dtype=float))


def tail_exceedance(manifold, traj, x_star, r):
    """Fraction of chains whose running max of d(x_k, x*) reaches r.

    ``traj`` is a Trajectory (or array) of shape (n_records, n_chains, n).
    """
    d = _distance_series(manifold, traj, x_star)
    hit = np.max(d, axis=0) >= r if r > 0 else np.max(d, axis=0) > 0
    return float(np.mean(hit))


def binomial_stderr(p, n):
    return float(np.sqrt(max(p * (1 - p), 0.0) / n))


@dataclass(frozen=True)
class TailConstants:
    """Constants entering the sub-Gaussian tail and moment bounds.

    ``m`` is the far-field contraction rate of the drift towards x*, ``lip``
    the drift Lipschitz constant, ``R`` the dissipativity radius and
    ``sigma`` the stochastic-gradient deviation bound.
    """

    m: float
    lip: float
    L_R: float
    dim: int
    sigma: float = 0.0
    R: float = 0.0


def tail_bound(c: TailConstants, K, delta, r):
    """32 K delta m exp(2 L'^2 R^2/(d+s^2) + 64 L_R (d+s^2)/m - m r^2/(256 (d+s^2)))."""
    ds = c.dim + c.sigma**2
    expo = 2 * c.lip**2 * c.R**2 / ds + 64 * c.L_R * ds / c.m - c.m * r**2 / (256 * ds)
    return 32 * K * delta * c.m * np.exp(expo)


def tail_radius(c: TailConstants, K, delta, level):
    """The r at which :func:`tail_bound` equals ``level``."""
    ds = c.dim + c.sigma**2
    base = 2 * c.lip**2 * c.R**2 / ds + 64 * c.L_R * ds / c.m
    pre = np.log(32 * K * delta * c.m / level)
    return float(np.sqrt(max(base + pre, 0.0) * 256 * ds / c.m))


def tail_stepsize_ok(c: TailConstants, delta, r):
    """The stepsize condition under which the tail bound is stated."""
    ds = c.dim + c.sigma**2
    g = 1 + np.sqrt(c.L_R) * r
    lim = min(c.m / (16 * c.lip**2 * g), ds / (c.m * g), 32 * (c.dim**2 + c.sigma**4) / (c.m**2 * r**2))
    return delta <= lim


def l4_bound(c: TailConstants, K, delta, d0_fourth, sigma_xi):
    """Fourth-moment bound for a dissipative chain after K steps."""
    return (
        np.exp(-K * delta * c.m) * d0_fourth
        + 2**24 * c.L_R**2 * c.lip**8 * sigma_xi**8 / c.m**12
        + 64 * c.lip**2 * c.R**4 / c.m**2
        + 128 * sigma_xi**4 / c.m**2
    )


def l2_near_bound(c: TailConstants, K, delta, sigma_xi, L0):
    """Bound on E d(x_k, x0)^2 for k <= K under a Lipschitz drift."""
    e = np.exp(8 * K * delta * c.lip + K * delta * c.L_R * sigma_xi**2 + K * delta**2 * c.L_R * L0**2)
    return 4 * e * (2 * K * delta * sigma_xi**2 + 8 * K**2 * delta**2 * L0**2)


@dataclass
class MomentStats:
    m2: float
    m2_se: float
    m4: float
    m4_se: float
    n: int


def moment_stats(manifold, points, x_star) -> MomentStats:
    """E d^2 and E d^4 (with standard errors) over an ensemble of final points."""
    d = manifold.distance(np.asarray(points, dtype=float), np.asarray(x_star, dtype=float)).ravel()
    n = len(d)
    se = lambda v: float(np.std(v, ddof=1) / np.sqrt(n)) if n > 1 else float("nan")
    return MomentStats(float(np.mean(d**2)), se(d**2), float(np.mean(d**4)), se(d**4), n)
