"""Target potentials h, Langevin drifts beta = -grad(h)/2 and stochastic
finite-sum drift oracles.

All potentials evaluate on batches of ambient-coordinate points.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .manifolds import Euclidean, Hyperboloid, Manifold, Sphere, InvalidInputError


class ConfigError(ValueError):
    """Raised for inconsistent potential / oracle configuration."""


class Potential:
    """Base class.  Subclasses define ``value`` and ``egrad`` (the ambient
    gradient of an extension of h); the Riemannian gradient is its tangent
    projection unless overridden."""

    manifold: Manifold
    # declared Lipschitz constant of the drift (not of grad h)
    lipschitz: float = 0.0
    stationary_point: np.ndarray | None = None

    def value(self, x):
        raise NotImplementedError

    def egrad(self, x):
        raise NotImplementedError

    def riemannian_grad(self, x):
        g = self.egrad(x)
        if isinstance(self.manifold, Hyperboloid):
            # Minkowski metric: flip the time component before projecting
            g = g.copy()
            g[..., 0] = -g[..., 0]
        return self.manifold.project_tangent(x, g)

    def drift(self, x):
        return -0.5 * self.riemannian_grad(x)

    def probe_points(self, rng, n):
        """Points where the declared constants are meant to hold."""
        return self.manifold.random_point(rng, n)


@dataclass(eq=False)
class GaussianPotential(Potential):
    """h(x) = c/2 |x - center|^2 on Euclidean space; the target is N(center, I/c)."""

    manifold: Euclidean
    c: float = 1.0
    center: np.ndarray | None = None

    def __post_init__(self):
        if self.c < 0:
            raise ConfigError("c must be >= 0")
        if self.center is None:
            self.center = np.zeros(self.manifold.ambient_dim)
        self.center = np.asarray(self.center, dtype=float)
        self.lipschitz = 0.5 * self.c
        self.stationary_point = self.center

    def value(self, x):
        return 0.5 * self.c * np.sum((x - self.center) ** 2, axis=-1)

    def egrad(self, x):
        return self.c * (x - self.center)

    def probe_points(self, rng, n):
        scale = 1.0 / np.sqrt(self.c) if self.c > 0 else 1.0
        return self.center + 2.0 * scale * rng.standard_normal((n, self.manifold.ambient_dim))


@dataclass(eq=False)
class VonMisesFisher(Potential):
    """h(x) = -kappa <x, mu> on the sphere; the target density is vMF(mu, kappa).

    The drift is (kappa/2)(I - x x^T) mu, whose covariant derivative is
    -(kappa/2)<x, mu> Id on T_x S, so it is kappa/2-Lipschitz.
    """

    manifold: Sphere
    kappa: float = 1.0
    mu: np.ndarray | None = None

    def __post_init__(self):
        if self.kappa < 0:
            raise ConfigError("kappa must be >= 0")
        if self.mu is None:
            self.mu = self.manifold.origin()
        self.mu = self.manifold.check_point(np.asarray(self.mu, dtype=float))
        self.lipschitz = 0.5 * self.kappa
        self.stationary_point = self.mu

    def value(self, x):
        return -self.kappa * (x @ self.mu)

    def egrad(self, x):
        return np.broadcast_to(-self.kappa * self.mu, np.shape(x)).copy()

    def sample(self, rng, n):
        return sample_vmf(rng, self.mu, self.kappa, n)


@dataclass(eq=False)
class VMFMixture(Potential):
    """h(x) = -log sum_j w_j exp(kappa_j <x, mu_j>), a nonconvex target on the sphere."""

    manifold: Sphere
    kappas: np.ndarray = field(default_factory=lambda: np.array([4.0, 4.0]))
    mus: np.ndarray | None = None
    weights: np.ndarray | None = None

    def __post_init__(self):
        self.kappas = np.asarray(self.kappas, dtype=float)
        k = len(self.kappas)
        if self.mus is None:
            n = self.manifold.ambient_dim
            self.mus = np.zeros((k, n))
            for j in range(k):
                self.mus[j, j % n] = (-1.0) ** (j // n)
        self.mus = self.manifold.check_point(np.asarray(self.mus, dtype=float))
        if self.weights is None:
            self.weights = np.full(k, 1.0 / k)
        self.weights = np.asarray(self.weights, dtype=float)
        if len(self.mus) != k or len(self.weights) != k or k == 0:
            raise ConfigError("kappas, mus and weights must have equal nonzero length")
        if np.any(self.weights <= 0):
            raise ConfigError("mixture weights must be positive")
        self.weights = self.weights / self.weights.sum()
        kmax = float(np.max(self.kappas))
        # U = -h has |grad U| <= kmax and |Hess U| <= kmax^2; the projected
        # field (I - x x^T) grad U is then (kmax + kmax^2)-Lipschitz
        self.lipschitz = 0.5 * (kmax + kmax**2)

    def _logits(self, x):
        return np.log(self.weights) + (x @ self.mus.T) * self.kappas

    def value(self, x):
        z = self._logits(x)
        zmax = np.max(z, axis=-1, keepdims=True)
        return -(zmax[..., 0] + np.log(np.sum(np.exp(z - zmax), axis=-1)))

    def egrad(self, x):
        z = self._logits(x)
        r = np.exp(z - np.max(z, axis=-1, keepdims=True))
        r /= r.sum(axis=-1, keepdims=True)
        return -(r * self.kappas) @ self.mus


@dataclass(eq=False)
class HyperboloidQuadratic(Potential):
    """h(x) = c/2 d(x, center)^2 on the hyperboloid.

    The Hessian of d^2/2 has eigenvalues 1 and r coth(r), so the drift is only
    Lipschitz on bounded balls; ``region_radius`` fixes the ball on which the
    declared constant (c/2) R coth(R) holds.
    """

    manifold: Hyperboloid
    c: float = 1.0
    center: np.ndarray | None = None
    region_radius: float = 2.0

    def __post_init__(self):
        if self.center is None:
            self.center = self.manifold.origin()
        self.center = self.manifold.check_point(np.asarray(self.center, dtype=float))
        r = self.region_radius
        self.lipschitz = 0.5 * self.c * (r / np.tanh(r) if r > 0 else 1.0)
        self.stationary_point = self.center

    def value(self, x):
        return 0.5 * self.c * self.manifold.distance(x, self.center) ** 2

    def riemannian_grad(self, x):
        return -self.c * self.manifold.log(x, np.broadcast_to(self.center, np.shape(x)))

    def probe_points(self, rng, n):
        m = self.manifold
        x0 = np.broadcast_to(self.center, (n, m.ambient_dim))
        u = m.random_tangent(rng, x0)
        u /= m.norm(u)[:, None]
        r = self.region_radius * rng.uniform(0, 1, n) ** (1.0 / m.dim)
        return m.exp(x0, r[:, None] * u)


@dataclass(eq=False)
class ZeroPotential(Potential):
    manifold: Manifold

    def value(self, x):
        return np.zeros(np.shape(x)[:-1])

    def egrad(self, x):
        return np.zeros(np.shape(x))


def sample_vmf(rng, mu, kappa, n):
    """Exact vMF samples on S^{p-1} (Wood's rejection scheme for the
    <x, mu> component, uniform direction for the rest)."""
    mu = np.asarray(mu, dtype=float)
    p = mu.shape[-1]
    if kappa == 0:
        z = rng.standard_normal((n, p))
        return z / np.linalg.norm(z, axis=1, keepdims=True)
    if p == 3:
        u = rng.uniform(size=n)
        # inverse CDF of w on S^2: density ~ exp(kappa w) on [-1, 1]
        w = 1.0 + np.log(u + (1.0 - u) * np.exp(-2.0 * kappa)) / kappa
    else:
        w = np.empty(n)
        b = (p - 1) / (2.0 * kappa + np.sqrt(4.0 * kappa**2 + (p - 1) ** 2))
        x0 = (1.0 - b) / (1.0 + b)
        c = kappa * x0 + (p - 1) * np.log(1.0 - x0**2)
        filled = 0
        while filled < n:
            m = 2 * (n - filled)
            z = rng.beta((p - 1) / 2.0, (p - 1) / 2.0, size=m)
            ww = (1.0 - (1.0 + b) * z) / (1.0 - (1.0 - b) * z)
            u = rng.uniform(size=m)
            ok = kappa * ww + (p - 1) * np.log(1.0 - x0 * ww) - c >= np.log(u)
            take = ww[ok][: n - filled]
            w[filled : filled + len(take)] = take
            filled += len(take)
    v = rng.standard_normal((n, p))
    v -= (v @ mu)[:, None] * mu
    v /= np.linalg.norm(v, axis=1, keepdims=True)
    return w[:, None] * mu + np.sqrt(np.clip(1.0 - w**2, 0.0, None))[:, None] * v


@dataclass(eq=False)
class StochasticGradOracle:
    """Finite-sum drift estimate: h = mean(h_i), one uniformly chosen
    component per call."""

    components: list
    sigma: float = 0.0

    def __post_init__(self):
        if not self.components:
            raise ConfigError("stochastic gradient oracle needs at least one component")
        m = self.components[0].manifold
        if any(c.manifold != m for c in self.components):
            raise ConfigError("components live on different manifolds")
        self.manifold = m

    @property
    def n_components(self):
        return len(self.components)

    def component_drifts(self, x):
        """Array of shape (N, ..., n)."""
        return np.stack([c.drift(x) for c in self.components])

    def drift(self, x):
        return np.mean(self.component_drifts(x), axis=0)

    def stochastic_drift(self, x, rng=None, index=None):
        """Drift of a uniformly sampled component (one per batch element)."""
        x = np.asarray(x, dtype=float)
        if index is None:
            index = rng.integers(self.n_components, size=x.shape[:-1])
        return self.drift_for(x, index)

    def drift_for(self, x, index):
        if self.n_components == 1:
            return self.components[0].drift(x)
        all_drifts = self.component_drifts(x)
        index = np.asarray(index)
        return np.take_along_axis(all_drifts, index[None, ..., None], axis=0)[0]

    def max_deviation(self, x):
        d = self.component_drifts(x)
        return float(np.max(np.linalg.norm(d - d.mean(axis=0), axis=-1)))

    @property
    def stationary_point(self):
        return getattr(self.components[0], "stationary_point", None)


def gaussian_finite_sum(manifold: Euclidean, n_components: int, c: float = 1.0,
                        spread: float = 1.0, rng=None) -> StochasticGradOracle:
    """h_i(x) = c/2 |x - a_i|^2 with offsets a_i summing to zero, so the mean
    potential is c/2 |x|^2 up to a constant.  sigma = max_i (c/2)|a_i|."""
    if n_components < 1:
        raise ConfigError("n_components must be >= 1")
    rng = np.random.default_rng(0) if rng is None else rng
    n = manifold.ambient_dim
    if n_components == 1:
        offsets = np.zeros((1, n))
    else:
        offsets = rng.standard_normal((n_components, n))
        offsets -= offsets.mean(axis=0)
        offsets *= spread / np.sqrt(np.mean(np.sum(offsets**2, axis=1)))
    comps = [GaussianPotential(manifold, c=c, center=a) for a in offsets]
    sigma = float(0.5 * c * np.max(np.linalg.norm(offsets, axis=1)))
    oracle = StochasticGradOracle(comps, sigma=sigma)
    oracle.mean_potential = GaussianPotential(manifold, c=c)
    return oracle


# -- empirical checks of the drift assumptions -------------------------------


@dataclass(frozen=True)
class DissipativityParams:
    """(m, q, R) distant-dissipativity constants; m may be +inf when the
    far-range condition is vacuous (e.g. R = diameter)."""

    m: float
    q: float
    R: float

    def __post_init__(self):
        if not self.m > 0:
            raise ConfigError("m must be > 0")
        if self.R < 0:
            raise ConfigError("R must be >= 0")


@dataclass
class DissipativityEstimate:
    q: float
    m: float | None
    R: float | None
    m_curve: list  # (R, m_hat(R)) pairs
    n_pairs: int

    @property
    def params(self) -> DissipativityParams:
        if self.m is None:
            raise ConfigError("no radius with positive m was found")
        return DissipativityParams(self.m, self.q, self.R)


def dissipativity_ratios(p: Potential, x, y, drift=None):
    """rho(x, y) = <P_{y->x} beta(y) - beta(x), log_x y> / d(x, y)^2."""
    m = p.manifold
    drift = p.drift if drift is None else drift
    g = m.log(x, y)
    d = m.distance(x, y)
    diff = m.transport(y, x, drift(y)) - drift(x)
    return m.inner(diff, g) / d**2, d


def estimate_dissipativity(p: Potential, n_pairs: int, rng, sampler=None, R_grid=None,
                           min_distance=1e-6) -> DissipativityEstimate:
    """Empirical (m, q, R) from random pairs.  This is a certificate on the
    sampled pairs only, not a proof.  ``sampler(rng, n)`` draws points
    (defaults to ``p.probe_points``)."""
    sampler = p.probe_points if sampler is None else sampler
    x = sampler(rng, n_pairs)
    y = sampler(rng, n_pairs)
    rho, d = dissipativity_ratios(p, x, y)
    keep = d > min_distance
    rho, d = rho[keep], d[keep]
    if len(rho) == 0:
        raise ConfigError("all sampled pairs coincide")
    q_hat = float(np.max(rho))
    if R_grid is None:
        top = np.pi if isinstance(p.manifold, Sphere) else float(np.max(d))
        R_grid = np.linspace(0.0, top, 33)
    curve = []
    m_hat, R_hat = None, None
    for R in R_grid:
        far = d >= R
        m_R = float(-np.max(rho[far])) if np.any(far) else np.inf
        curve.append((float(R), m_R))
        if m_hat is None and m_R > 0:
            m_hat, R_hat = m_R, float(R)
    return DissipativityEstimate(q_hat, m_hat, R_hat, curve, int(len(rho)))


def check_lipschitz(p: Potential, n_probes: int, rng, sampler=None, dmin=1e-3, dmax=1e-1):
    """max |P_{y->x} beta(y) - beta(x)| / d(x, y) over short random pairs."""
    m = p.manifold
    sampler = p.probe_points if sampler is None else sampler
    x = sampler(rng, n_probes)
    u = m.random_tangent(rng, x)
    u /= m.norm(u)[:, None]
    t = np.exp(rng.uniform(np.log(dmin), np.log(dmax), n_probes))
    y = m.exp(x, t[:, None] * u)
    diff = m.transport(y, x, p.drift(y)) - p.drift(x)
    return float(np.max(m.norm(diff) / m.distance(x, y)))


def gradient_check(p: Potential, rng, n_dirs=20, step=1e-5):
    """Max relative error between central differences of h along geodesics
    and <grad h, direction>."""
    m = p.manifold
    x = p.probe_points(rng, n_dirs)
    u = m.random_tangent(rng, x)
    u /= m.norm(u)[:, None]
    fd = (p.value(m.exp(x, step * u)) - p.value(m.exp(x, -step * u))) / (2 * step)
    an = m.inner(p.riemannian_grad(x), u)
    return float(np.max(np.abs(fd - an) / np.maximum(np.abs(an), 1e-3)))


def make_potential(manifold: Manifold, spec: dict) -> Potential:
    """Build a potential from a config mapping (``kind`` plus parameters)."""
    kind = spec.get("kind", "gaussian")
    if kind == "gaussian":
        if not isinstance(manifold, Euclidean):
            raise ConfigError("gaussian potential needs a euclidean manifold")
        return GaussianPotential(manifold, c=float(spec.get("c", 1.0)), center=spec.get("center"))
    if kind == "vmf":
        if not isinstance(manifold, Sphere):
            raise ConfigError("vmf potential needs a sphere")
        return VonMisesFisher(manifold, kappa=float(spec.get("kappa", 1.0)), mu=spec.get("mu"))
    if kind == "vmf-mixture":
        if not isinstance(manifold, Sphere):
            raise ConfigError("vmf-mixture potential needs a sphere")
        kw = {"kappas": np.asarray(spec.get("kappas", [4.0, 4.0]), dtype=float)}
        if "mus" in spec:
            kw["mus"] = np.asarray(spec["mus"], dtype=float)
        if "weights" in spec:
            kw["weights"] = np.asarray(spec["weights"], dtype=float)
        return VMFMixture(manifold, **kw)
    if kind == "hyperboloid-quadratic":
        if not isinstance(manifold, Hyperboloid):
            raise ConfigError("hyperboloid-quadratic potential needs a hyperboloid")
        return HyperboloidQuadratic(manifold, c=float(spec.get("c", 1.0)), center=spec.get("center"),
                                    region_radius=float(spec.get("region_radius", 2.0)))
    if kind == "zero":
        return ZeroPotential(manifold)
    raise ConfigError(f"unknown potential kind {kind!r}")


__all__ = [
    "ConfigError", "Potential", "GaussianPotential", "VonMisesFisher", "VMFMixture",
    "HyperboloidQuadratic", "ZeroPotential", "StochasticGradOracle", "gaussian_finite_sum",
    "DissipativityParams", "DissipativityEstimate", "estimate_dissipativity",
    "check_lipschitz", "gradient_check", "sample_vmf", "make_potential", "InvalidInputError",
]
