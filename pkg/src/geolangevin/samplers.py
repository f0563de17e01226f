"""Geometric Euler-Maruyama Langevin chains, SGLD, and the dyadic multilevel
construction driven by a single Brownian path.

Arrays carry leading batch axes, so one call runs many independent chains.
"""
from __future__ import annotations

import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from numba import njit

from .manifolds import ANTIPODAL_TOL, InvalidInputError, Manifold, Sphere
from .potentials import VonMisesFisher
from .noise import DyadicBrownianPath, MAX_LEVEL, chunk_seed, keyed_rng

NOISE_TAG = 0xA11CE
INDEX_TAG = 0xB0B
LADDER_TAG = 0xCAFE


class DivergenceError(RuntimeError):
    def __init__(self, step, msg=None):
        self.step = int(step)
        super().__init__(msg or f"non-finite state at step {step}; the stepsize is probably too large")


class StepsizeWarning(UserWarning):
    pass


def stepsize_bound(manifold: Manifold, lipschitz: float) -> float:
    """min(1/(16 L_beta'), 1/(16 L_R d)); infinite terms are dropped."""
    b = np.inf
    if lipschitz > 0:
        b = min(b, 1.0 / (16.0 * lipschitz))
    L_R = manifold.curvature.L_R
    if L_R > 0:
        b = min(b, 1.0 / (16.0 * L_R * manifold.dim))
    return b


@dataclass
class EMConfig:
    stepsize: float
    steps: int
    seed: int
    initial: np.ndarray
    record_frames: bool = False
    record_every: int = 1
    allow_large_step: bool = False

    def __post_init__(self):
        if not self.stepsize > 0:
            raise InvalidInputError("stepsize must be > 0")
        if self.steps < 0:
            raise InvalidInputError("steps must be >= 0")
        if self.record_every < 1:
            raise InvalidInputError("record_every must be >= 1")
        self.initial = np.asarray(self.initial, dtype=float)

    def check_stepsize(self, manifold, lipschitz):
        bound = stepsize_bound(manifold, lipschitz)
        if self.stepsize > bound:
            msg = f"stepsize {self.stepsize:g} exceeds the stability bound {bound:g}"
            if not self.allow_large_step:
                raise InvalidInputError(msg + " (set allow_large_step to override)")
            warnings.warn(msg, StepsizeWarning, stacklevel=3)


@dataclass
class Trajectory:
    times: np.ndarray
    points: np.ndarray  # (n_records, *batch, n)
    frames: np.ndarray | None = None

    def __post_init__(self):
        if len(self.times) != len(self.points):
            raise InvalidInputError("times and points differ in length")
        if self.frames is not None and len(self.frames) != len(self.points):
            raise InvalidInputError("frames and points differ in length")

    def __len__(self):
        return len(self.times)

    @property
    def final(self):
        return self.points[-1]


def em_step(manifold: Manifold, x, beta, delta, zeta, check=True):
    """Exp_x(delta * beta + sqrt(delta) * zeta)."""
    return manifold.exp(x, delta * beta + np.sqrt(delta) * zeta, check=check)


def _run_chain(manifold, drift_at, cfg: EMConfig):
    """drift_at(x, k) gives the drift used at step k."""
    m = manifold
    x = m.check_point(cfg.initial)
    rng = keyed_rng(cfg.seed, NOISE_TAG)
    batch = x.shape[:-1]
    n_rec = cfg.steps // cfg.record_every + 1
    pts = np.empty((n_rec,) + x.shape)
    pts[0] = x
    frames = np.empty((n_rec,) + batch + (m.dim, m.ambient_dim)) if cfg.record_frames else None
    F = m.frame(x)
    if frames is not None:
        frames[0] = F
    times = np.arange(n_rec) * cfg.record_every * cfg.stepsize
    r = 1
    for k in range(cfg.steps):
        xi = rng.standard_normal(batch + (m.dim,))
        x = em_step(m, x, drift_at(x, k), cfg.stepsize, m.combine(F, xi), check=False)
        if not np.all(np.isfinite(x)):
            raise DivergenceError(k + 1)
        F = m.frame(x)
        if (k + 1) % cfg.record_every == 0:
            pts[r] = x
            if frames is not None:
                frames[r] = F
            r += 1
    return Trajectory(times, pts, frames)


def run_langevin(cfg: EMConfig, p) -> Trajectory:
    """K steps of x <- Exp_x(delta beta(x) + sqrt(delta) zeta), zeta ~ N_x(0, I)."""
    cfg.check_stepsize(p.manifold, p.lipschitz)
    return _run_chain(p.manifold, lambda x, k: p.drift(x), cfg)


def run_sgld(cfg: EMConfig, oracle) -> Trajectory:
    """As :func:`run_langevin` with one uniformly drawn component drift per
    step.  Component indices come from a stream separate from the Gaussian
    noise, so with a single component the result equals the exact chain."""
    lip = max(getattr(c, "lipschitz", 0.0) for c in oracle.components)
    cfg.check_stepsize(oracle.manifold, lip)
    idx_rng = keyed_rng(cfg.seed, INDEX_TAG)
    batch = np.shape(cfg.initial)[:-1]

    def drift_at(x, k):
        return oracle.drift_for(x, idx_rng.integers(oracle.n_components, size=batch))

    return _run_chain(oracle.manifold, drift_at, cfg)


def _ladder_plan(deltas, horizon):
    deltas = sorted(float(d) for d in deltas)
    dmin = deltas[0]
    ratios = [d / dmin for d in deltas]
    if any(abs(r - round(r)) > 1e-9 or (round(r) & (round(r) - 1)) for r in ratios):
        raise InvalidInputError("stepsizes must be dyadic multiples of the smallest")
    ratios = [int(round(r)) for r in ratios]
    n_fine = horizon / dmin
    if abs(n_fine - round(n_fine)) > 1e-9 or round(n_fine) % ratios[-1]:
        raise InvalidInputError("horizon must be a multiple of the largest stepsize")
    return deltas, ratios, int(round(n_fine))


def run_langevin_ladder(p, x0, deltas, horizon, seed, fast=True):
    """Chains at several dyadic stepsizes driven by one Brownian motion.

    The finest stepsize draws the Euclidean noise coordinates; a chain with
    stepsize 2^j times larger uses the sum of 2^j consecutive fine
    coordinates.  Each chain carries its frame by parallel transport along
    its own steps, so chains at different stepsizes follow the same
    Brownian path closely.  Marginally each chain is an exact
    Euler-Maruyama chain; sharing the driver only correlates them.  Returns
    a dict ``delta -> final points``.

    With ``fast`` a compiled loop is used for the von Mises-Fisher target on
    a sphere; it performs the same arithmetic as the generic loop.
    """
    m = p.manifold
    deltas, ratios, n_fine = _ladder_plan(deltas, horizon)
    x0 = m.check_point(np.asarray(x0, dtype=float))
    if fast and isinstance(p, VonMisesFisher) and isinstance(m, Sphere):
        return _vmf_ladder(p, x0, deltas, ratios, n_fine, seed)
    batch = x0.shape[:-1]
    xs = [x0.copy() for _ in deltas]
    frames = [m.frame(x0) for _ in deltas]
    acc = [np.zeros(batch + (m.dim,)) for _ in deltas]
    sd = np.sqrt(deltas[0])
    for k in range(n_fine):
        dB = sd * keyed_rng(seed, LADDER_TAG, k).standard_normal(batch + (m.dim,))
        for j, r in enumerate(ratios):
            acc[j] += dB
            if (k + 1) % r == 0:
                x = xs[j]
                v = deltas[j] * p.drift(x) + m.combine(frames[j], acc[j])
                xs[j] = m.exp(x, v, check=False)
                if not np.all(np.isfinite(xs[j])):
                    raise DivergenceError((k + 1) // r)
                frames[j] = m.transport_frame(x, xs[j], frames[j])
                acc[j][...] = 0.0
    return dict(zip(deltas, xs))


# no nnan/ninf flags: the divergence check must see non-finite values
@njit(cache=True, fastmath={"reassoc", "contract", "arcp", "nsz"})
def _vmf_ladder_block(xs, Fs, acc, dB, ratios, deltas, half_kappa, mu, k0, tol):
    """Advance every ladder chain through the fine increments in ``dB``.

    xs (J, B, n), Fs (J, B, d, n), acc (J, B, d), dB (B, S, d).  Chains are
    independent given the increments, so each one runs through the whole
    block before the next.  Returns the first fine step at which a chain
    went non-finite, or -1.
    """
    J, B, n = xs.shape
    d = Fs.shape[2]
    S = dB.shape[1]
    x = np.empty(n)
    v = np.empty(n)
    y = np.empty(n)
    F = np.empty((d, n))
    ac = np.empty(d)
    bad = -1
    for j in range(J):
        step = deltas[j] * half_kappa
        for b in range(B):
            x[:] = xs[j, b]
            F[:, :] = Fs[j, b]
            ac[:] = acc[j, b]
            for s in range(S):
                k = k0 + s
                for a in range(d):
                    ac[a] += dB[b, s, a]
                if (k + 1) % ratios[j] != 0:
                    continue
                xm = 0.0
                for i in range(n):
                    xm += x[i] * mu[i]
                nv2 = 0.0
                for i in range(n):
                    vi = step * (mu[i] - xm * x[i])
                    for a in range(d):
                        vi += ac[a] * F[a, i]
                    v[i] = vi
                    nv2 += vi * vi
                nv = np.sqrt(nv2)
                c = np.cos(nv)
                sn = np.sin(nv)
                sc = sn / nv if nv > 0 else 1.0
                ny2 = 0.0
                for i in range(n):
                    y[i] = c * x[i] + sc * v[i]
                    ny2 += y[i] * y[i]
                ny = np.sqrt(ny2)
                if not np.isfinite(ny):
                    if bad < 0 or k < bad:
                        bad = k
                    break
                xy = 0.0
                for i in range(n):
                    y[i] /= ny
                    xy += x[i] * y[i]
                for a in range(d):
                    if xy > -1.0 + tol:
                        # transport along the minimizing geodesic x -> y
                        yf = 0.0
                        for i in range(n):
                            yf += y[i] * F[a, i]
                        coef = yf / (1.0 + xy)
                        for i in range(n):
                            F[a, i] -= coef * (x[i] + y[i])
                    else:
                        # antipodal: rotate along the step itself
                        ef = 0.0
                        for i in range(n):
                            ef += F[a, i] * v[i] / nv
                        for i in range(n):
                            F[a, i] += ef * ((c - 1.0) * v[i] / nv - sn * x[i])
                    ac[a] = 0.0
                for i in range(n):
                    x[i] = y[i]
            xs[j, b] = x
            Fs[j, b] = F
            acc[j, b] = ac
    return bad


def _vmf_ladder(p, x0, deltas, ratios, n_fine, seed, block=256):
    m = p.manifold
    batch = x0.shape[:-1]
    flat = x0.reshape(-1, m.ambient_dim)
    J, B = len(deltas), len(flat)
    xs = np.ascontiguousarray(np.broadcast_to(flat, (J, B, m.ambient_dim)))
    Fs = np.ascontiguousarray(np.broadcast_to(m.frame(flat), (J, B, m.dim, m.ambient_dim)))
    acc = np.zeros((J, B, m.dim))
    sd = np.sqrt(deltas[0])
    r_arr = np.asarray(ratios, dtype=np.int64)
    d_arr = np.asarray(deltas, dtype=float)
    for k0 in range(0, n_fine, block):
        ks = range(k0, min(k0 + block, n_fine))
        dB = np.stack([sd * keyed_rng(seed, LADDER_TAG, k).standard_normal(batch + (m.dim,)).reshape(B, m.dim)
                       for k in ks], axis=1)
        bad = _vmf_ladder_block(xs, Fs, acc, dB, r_arr, d_arr, 0.5 * p.kappa, p.mu, k0, ANTIPODAL_TOL)
        if bad >= 0:
            raise DivergenceError(bad + 1)
    return {d: xs[j].reshape(batch + (m.ambient_dim,)) for j, d in enumerate(deltas)}


# -- dyadic multilevel construction ---------------------------------------------


def _antipodal(m, x, y):
    if isinstance(m, Sphere):
        return np.einsum("...i,...i->...", x, y) <= -1.0 + ANTIPODAL_TOL
    return np.zeros(np.broadcast_shapes(np.shape(x), np.shape(y))[:-1], dtype=bool)


@dataclass
class Level:
    points: np.ndarray  # (2^i + 1, *batch, n)
    frames: np.ndarray  # (2^i + 1, *batch, d, n)


@dataclass
class MultilevelRun:
    manifold: Manifold
    potential: object
    path: DyadicBrownianPath
    horizon: float
    x0: np.ndarray
    frame0: np.ndarray
    levels: list = field(default_factory=list)
    nonunique_geodesics: int = 0

    def step(self, i):
        return self.horizon / 2**i

    def interpolate(self, i, t):
        return interpolate(self, i, t)


def _level_zero(m, p, path, x0, E):
    T = path.horizon
    dB = path.increments(0)[0]
    x1 = m.exp(x0, T * p.drift(x0) + m.combine(E, dB), check=False)
    flags = int(np.sum(_antipodal(m, x0, x1)))
    E1 = m.transport_frame(x0, x1, E)
    return Level(np.stack([x0, x1]), np.stack([E, E1])), flags


def _next_level(m, p, path, coarse: Level, i):
    """Level i+1 from level i, following the recursion for x^{i+1}_k, E^{i+1}_k."""
    delta = path.step(i + 1)
    dB = path.increments(i + 1)
    P, F = coarse.points, coarse.frames
    n = len(P) - 1
    Q = np.empty((2 * n + 1,) + P.shape[1:])
    G = np.empty((2 * n + 1,) + F.shape[1:])
    Q[0], G[0] = P[0], F[0]
    flags = 0
    for k in range(n):
        x = Q[2 * k]
        y = m.exp(x, delta * p.drift(x) + m.combine(G[2 * k], dB[2 * k]), check=False)
        Q[2 * k + 1] = y
        flags += int(np.sum(_antipodal(m, x, y)))
        G[2 * k + 1] = m.transport_frame(x, y, G[2 * k])
        z = m.exp(y, delta * p.drift(y) + m.combine(G[2 * k + 1], dB[2 * k + 1]), check=False)
        Q[2 * k + 2] = z
        flags += int(np.sum(_antipodal(m, P[k + 1], z)))
        G[2 * k + 2] = m.transport_frame(P[k + 1], z, F[k + 1])
    if not np.all(np.isfinite(Q)):
        raise DivergenceError(int(np.argmax(~np.all(np.isfinite(Q.reshape(len(Q), -1)), axis=1))))
    return Level(Q, G), flags


def iter_levels(p, path: DyadicBrownianPath, x0, frame0, i_max):
    """Yield (i, Level, antipodal_count) for i = 0..i_max, keeping only the
    previous level alive."""
    m = p.manifold
    lev, flags = _level_zero(m, p, path, x0, frame0)
    yield 0, lev, flags
    for i in range(i_max):
        lev, flags = _next_level(m, p, path, lev, i)
        yield i + 1, lev, flags


def _initial(m, x0, batch_shape):
    x0 = m.check_point(np.asarray(x0, dtype=float))
    x0 = np.broadcast_to(x0, tuple(batch_shape) + (m.ambient_dim,)).copy()
    return x0, m.frame(x0)


def build_multilevel(T, i_max, p, x0, seed, batch_shape=(), frame0=None) -> MultilevelRun:
    """Levels 0..i_max of the dyadic construction, all stored."""
    if not 0 <= i_max <= MAX_LEVEL:
        raise InvalidInputError(f"i_max must lie in [0, {MAX_LEVEL}]")
    m = p.manifold
    x0, E = _initial(m, x0, batch_shape)
    if frame0 is not None:
        E = np.broadcast_to(frame0, E.shape).copy()
    path = DyadicBrownianPath(T, m.dim, seed, max_level=i_max, batch_shape=batch_shape)
    run = MultilevelRun(m, p, path, float(T), x0, E)
    for _, lev, flags in iter_levels(p, path, x0, E, i_max):
        run.levels.append(lev)
        run.nonunique_geodesics += flags
    return run


def interpolate(run: MultilevelRun, i, t):
    """x^i(t): the geodesic interpolation of the level-i step containing t."""
    T = run.horizon
    if not 0.0 <= t <= T:
        raise InvalidInputError(f"t={t} outside [0, {T}]")
    m = run.manifold
    lev = run.levels[i]
    delta = run.step(i)
    k = min(int(np.floor(t / delta)), 2**i - 1)
    s = t / delta - k
    x = lev.points[k]
    v = delta * run.potential.drift(x) + m.combine(lev.frames[k], run.path.increment(i, k))
    return m.exp(x, s * v, check=False)


def verify_replay(run: MultilevelRun):
    """Re-derive every stored point and frame from the stored data of the
    previous level (vectorized over k) and return the largest discrepancy."""
    m, p, path = run.manifold, run.potential, run.path
    worst = 0.0

    def gap(a, b):
        return float(np.max(np.abs(a - b), initial=0.0))

    lev0 = run.levels[0]
    worst = max(worst, gap(lev0.points[0], run.x0), gap(lev0.frames[0], run.frame0))
    x1 = m.exp(run.x0, run.horizon * p.drift(run.x0) + m.combine(run.frame0, path.increment(0, 0)), check=False)
    worst = max(worst, gap(lev0.points[1], x1))
    for i in range(len(run.levels) - 1):
        P, F = run.levels[i].points, run.levels[i].frames
        Q, G = run.levels[i + 1].points, run.levels[i + 1].frames
        delta = run.step(i + 1)
        dB = path.increments(i + 1)
        ev, od = Q[0:-1:2], Q[1::2]
        odd = m.exp(ev, delta * p.drift(ev) + m.combine(G[0:-1:2], dB[0::2]), check=False)
        nxt = m.exp(od, delta * p.drift(od) + m.combine(G[1::2], dB[1::2]), check=False)
        worst = max(
            worst,
            gap(Q[0], run.x0),
            gap(G[0], run.frame0),
            gap(od, odd),
            gap(Q[2::2], nxt),
            gap(G[1::2], m.transport_frame(ev, od, G[0:-1:2])),
            gap(G[2::2], m.transport_frame(P[1:], Q[2::2], F[1:])),
        )
    return worst


# -- error tables -------------------------------------------------------------


def _chunks(reps, chunk):
    out, start = [], 0
    while start < reps:
        out.append((start, min(chunk, reps - start)))
        start += chunk
    return out


def _map(fn, items, threads):
    if threads <= 1:
        return [fn(it) for it in items]
    with ThreadPoolExecutor(max_workers=threads) as ex:
        return list(ex.map(fn, items))


def _mean_se(v):
    v = np.asarray(v, dtype=float)
    se = float(np.std(v, ddof=1) / np.sqrt(len(v))) if len(v) > 1 else float("nan")
    return float(np.mean(v)), se


def one_step_error_samples(p, x0, T, i_max, n, seed):
    """d(x^0(T), x^{i_max}(T))^2 for n independent Brownian paths."""
    m = p.manifold
    x0b, E = _initial(m, x0, (n,))
    path = DyadicBrownianPath(T, m.dim, seed, batch_shape=(n,))
    end0 = None
    for i, lev, _ in iter_levels(p, path, x0b, E, i_max):
        if i == 0:
            end0 = lev.points[-1]
        if i == i_max:
            return m.distance(end0, lev.points[-1]) ** 2


def one_step_error_table(p, x0, T_list, i_max=9, reps=2000, seed=0, chunk=250, threads=1):
    """Monte Carlo E d(x^0(T), x(T))^2 with level i_max standing in for x(T).
    Chunks of repetitions have fixed boundaries and their own seeds, so the
    result does not depend on ``threads``."""
    jobs = [(ti, c, start, size) for ti in range(len(T_list)) for c, (start, size) in enumerate(_chunks(reps, chunk))]

    def work(job):
        ti, c, _, size = job
        return one_step_error_samples(p, x0, T_list[ti], i_max, size, chunk_seed(seed, ti, c))

    res = _map(work, jobs, threads)
    rows = []
    for ti, T in enumerate(T_list):
        v = np.concatenate([r for r, j in zip(res, jobs) if j[0] == ti])
        mean, se = _mean_se(v)
        rows.append({"T": float(T), "mean_sq_error": mean, "stderr": se, "reps": int(len(v))})
    return rows


def adjacent_level_samples(p, x0, T, i_hi, n, seed):
    """Per-path max over the level-(i+1) grid of d(x^i(t), x^{i+1}(t))^2, for
    i = 0..i_hi-1.  Returns an array of shape (i_hi, n)."""
    m = p.manifold
    x0b, E = _initial(m, x0, (n,))
    path = DyadicBrownianPath(T, m.dim, seed, batch_shape=(n,))
    out = np.empty((i_hi, n))
    prev = None
    for i, lev, _ in iter_levels(p, path, x0b, E, i_hi):
        if prev is not None:
            P, F = prev.points, prev.frames
            delta = path.step(i - 1)
            dB = path.increments(i - 1)
            xs = P[:-1]
            mid = m.exp(xs, 0.5 * (delta * p.drift(xs) + m.combine(F[:-1], dB)), check=False)
            d_even = m.distance(P, lev.points[0::2])
            d_odd = m.distance(mid, lev.points[1::2])
            out[i - 1] = np.maximum(np.max(d_even, axis=0), np.max(d_odd, axis=0)) ** 2
        prev = lev
    return out


def adjacent_level_error_table(p, x0, T, levels, reps=1000, seed=0, chunk=250, threads=1):
    levels = list(levels)
    i_hi = max(levels) + 1
    jobs = _chunks(reps, chunk)

    def work(job):
        c = jobs.index(job)
        return adjacent_level_samples(p, x0, T, i_hi, job[1], chunk_seed(seed, c))

    res = np.concatenate(_map(work, jobs, threads), axis=1)
    rows = []
    for i in levels:
        mean, se = _mean_se(res[i])
        rows.append({"level": int(i), "mean_sup_sq": mean, "stderr": se, "reps": int(reps)})
    return rows
