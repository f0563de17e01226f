"""Synchronous and reflection couplings of two Euler-Maruyama chains.

Both chains read the same Gaussian coordinates xi in R^d.  The x chain maps
them through its frame; the y chain maps them (or their reflection along the
connecting geodesic) through the frame transported from x to y.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .manifolds import InvalidInputError
from .noise import keyed_rng
from .samplers import EMConfig, DivergenceError, _antipodal

COUPLING_TAG = 0xC0DE
DEFAULT_EPS = 1e-6


@dataclass
class CouplingKind:
    variant: str = "synchronous"
    epsilon: float = DEFAULT_EPS

    def __post_init__(self):
        if self.variant not in ("synchronous", "reflection"):
            raise InvalidInputError(f"unknown coupling {self.variant!r}")
        if self.epsilon < 0:
            raise InvalidInputError("reflection threshold must be >= 0")


@dataclass
class CoupledState:
    x: np.ndarray
    y: np.ndarray
    frame_x: np.ndarray
    frame_y: np.ndarray
    nonunique: int = 0


def coupled_state(manifold, x, y) -> CoupledState:
    x = manifold.check_point(np.asarray(x, dtype=float))
    y = manifold.check_point(np.asarray(y, dtype=float))
    x, y = np.broadcast_arrays(x, y)
    x, y = x.copy(), y.copy()
    Fx = manifold.frame(x)
    return CoupledState(x, y, Fx, manifold.transport_frame(x, y, Fx), int(np.sum(_antipodal(manifold, x, y))))


def frame_mismatch(manifold, s: CoupledState):
    """max |frame_y - transport(frame_x)|; zero for a well-formed state."""
    return float(np.max(np.abs(s.frame_y - manifold.transport_frame(s.x, s.y, s.frame_x)), initial=0.0))


def reflection_direction(manifold, s: CoupledState, epsilon):
    """nu: unit coordinates of log_x(y) in frame_x, zero when d(x, y) <= eps."""
    g = manifold.log(s.x, s.y)
    c = manifold.coords(s.frame_x, g)
    d = manifold.distance(s.x, s.y)
    n = np.linalg.norm(c, axis=-1)
    on = (d > epsilon) & (n > 0)
    return np.where(on[..., None], c / np.where(n > 0, n, 1.0)[..., None], 0.0)


def reflect(xi, nu):
    """(I - 2 nu nu^T) xi."""
    return xi - 2.0 * np.sum(nu * xi, axis=-1)[..., None] * nu


def _advance(manifold, drift_x, drift_y, s, delta, xi_x, xi_y):
    m = manifold
    sd = np.sqrt(delta)
    x = m.exp(s.x, delta * drift_x(s.x) + sd * m.combine(s.frame_x, xi_x), check=False)
    y = m.exp(s.y, delta * drift_y(s.y) + sd * m.combine(s.frame_y, xi_y), check=False)
    Fx = m.frame(x)
    flags = int(np.sum(_antipodal(m, x, y)))
    return CoupledState(x, y, Fx, m.transport_frame(x, y, Fx), s.nonunique + flags)


def _drifts(p):
    if isinstance(p, tuple):
        return p
    return p.drift, p.drift


def synchronous_step(manifold, s: CoupledState, p, delta, rng) -> CoupledState:
    """``p`` is a potential, or a pair of drift callables (x chain, y chain)."""
    dx, dy = _drifts(p)
    xi = rng.standard_normal(s.x.shape[:-1] + (manifold.dim,))
    return _advance(manifold, dx, dy, s, delta, xi, xi)


def reflection_step(manifold, s: CoupledState, p, delta, epsilon, rng) -> CoupledState:
    dx, dy = _drifts(p)
    xi = rng.standard_normal(s.x.shape[:-1] + (manifold.dim,))
    nu = reflection_direction(manifold, s, epsilon)
    return _advance(manifold, dx, dy, s, delta, xi, reflect(xi, nu))


@dataclass
class CoupledSeries:
    times: np.ndarray
    distance: np.ndarray  # (K+1, *batch)
    lyapunov: np.ndarray | None
    nonunique: int


def run_coupled(kind: CouplingKind, cfg: EMConfig, p, x0, y0, lyapunov=None) -> CoupledSeries:
    """Run a coupled pair (or a batch of pairs) for cfg.steps steps.

    ``lyapunov`` is an optional callable applied to the distance series.
    """
    m = p.manifold
    s = coupled_state(m, x0, y0)
    rng = keyed_rng(cfg.seed, COUPLING_TAG)
    dist = np.empty((cfg.steps + 1,) + s.x.shape[:-1])
    dist[0] = m.distance(s.x, s.y)
    for k in range(cfg.steps):
        if kind.variant == "synchronous":
            s = synchronous_step(m, s, p, cfg.stepsize, rng)
        else:
            s = reflection_step(m, s, p, cfg.stepsize, kind.epsilon, rng)
        if not (np.all(np.isfinite(s.x)) and np.all(np.isfinite(s.y))):
            raise DivergenceError(k + 1)
        dist[k + 1] = m.distance(s.x, s.y)
    times = np.arange(cfg.steps + 1) * cfg.stepsize
    lyap = None if lyapunov is None else lyapunov(dist)
    return CoupledSeries(times, dist, lyap, s.nonunique)


@dataclass
class RateFit:
    rate: float
    stderr: float
    n_points: int


def contraction_rate_fit(series, delta, burn_in=0.5) -> RateFit:
    """Least-squares slope of log E[series] against time, negated.

    ``series`` has shape (K+1,) or (K+1, n_pairs); the ensemble mean is taken
    over the trailing axes and the first ``burn_in`` fraction is dropped.
    """
    s = np.asarray(series, dtype=float)
    mean = s.reshape(len(s), -1).mean(axis=1)
    start = int(np.floor(burn_in * (len(mean) - 1)))
    t = np.arange(len(mean))[start:] * delta
    y = mean[start:]
    keep = y > 0
    t, y = t[keep], y[keep]
    if len(t) < 2:
        return RateFit(0.0, float("nan"), int(len(t)))
    ly = np.log(y)
    tc = t - t.mean()
    sxx = np.sum(tc**2)
    slope = float(np.sum(tc * (ly - ly.mean())) / sxx)
    resid = ly - ly.mean() - slope * tc
    se = float(np.sqrt(np.sum(resid**2) / (len(t) - 2) / sxx)) if len(t) > 2 else float("nan")
    return RateFit(-slope if slope != 0 else 0.0, se, int(len(t)))


def one_step_contraction(manifold, p, x, y, delta, seed, variant="synchronous", epsilon=DEFAULT_EPS):
    """E d(x', y')^2 / E d(x, y)^2 over a batch of pairs after one coupled step."""
    s = coupled_state(manifold, x, y)
    rng = keyed_rng(seed, COUPLING_TAG)
    if variant == "synchronous":
        s2 = synchronous_step(manifold, s, p, delta, rng)
    else:
        s2 = reflection_step(manifold, s, p, delta, epsilon, rng)
    d0 = manifold.distance(s.x, s.y) ** 2
    d1 = manifold.distance(s2.x, s2.y) ** 2
    ratio = float(np.sum(d1) / np.sum(d0))
    # delta-method standard error of the ratio of means
    n = len(d0)
    r_i = d1 - ratio * d0
    se = float(np.std(r_i, ddof=1) / np.sqrt(n) / np.mean(d0)) if n > 1 else float("nan")
    return ratio, se
