"""Closed-form Riemannian geometry on embedded manifolds.

Points and tangent vectors are stored in ambient coordinates.  Every array
operation broadcasts over leading batch axes, so ``x`` of shape ``(..., n)``
is a batch of points.  Frames are arrays of shape ``(..., d, n)`` whose rows
are the orthonormal tangent vectors.

Three manifolds are provided: flat ``Euclidean`` space, the unit ``Sphere``
and the ``Hyperboloid`` (Minkowski model of hyperbolic space).
"""
from __future__ import annotations

from abc import ABC, abstractmethod
from dataclasses import dataclass, field

import numpy as np

POINT_TOL = 1e-9
TANGENT_TOL = 1e-8
FRAME_TOL = 1e-8
# <x, y> <= -1 + ANTIPODAL_TOL counts as antipodal on the sphere
ANTIPODAL_TOL = 1e-12


class InvalidInputError(ValueError):
    """Raised when points, tangent vectors or frames violate their constraints."""


@dataclass(frozen=True)
class CurvatureBounds:
    """Curvature constants (sectional bound, its derivative, Ricci lower bound).

    ``L_Ric`` follows the convention ``Ric(u, u) >= -L_Ric |u|^2``.
    """

    L_R: float
    L_R_prime: float
    L_Ric: float


@dataclass(frozen=True)
class ManifoldSpec:
    kind: str
    ambient_dim: int
    intrinsic_dim: int
    curvature: CurvatureBounds

    def __post_init__(self):
        if self.intrinsic_dim < 1:
            raise InvalidInputError("intrinsic_dim must be >= 1")
        expected = self.ambient_dim if self.kind == "euclidean" else self.ambient_dim - 1
        if self.intrinsic_dim != expected:
            raise InvalidInputError(
                f"{self.kind}: ambient_dim {self.ambient_dim} inconsistent with "
                f"intrinsic_dim {self.intrinsic_dim}"
            )


def _dot(u, v):
    # einsum is much faster than sum(u * v) over a short last axis
    return np.einsum("...i,...i->...", u, v)


def _norm(u):
    return np.sqrt(_dot(u, u))


class Manifold(ABC):
    """Common interface.  Subclasses implement the metric-specific pieces."""

    kind: str = ""

    def __init__(self, ambient_dim: int):
        self.ambient_dim = int(ambient_dim)
        if self.dim < 1:
            raise InvalidInputError(f"{self.kind} needs intrinsic dimension >= 1")

    def __repr__(self):
        return f"{type(self).__name__}(ambient_dim={self.ambient_dim})"

    def __eq__(self, other):
        return type(self) is type(other) and self.ambient_dim == other.ambient_dim

    def __hash__(self):
        return hash((self.kind, self.ambient_dim))

    @property
    @abstractmethod
    def dim(self) -> int:
        """Intrinsic dimension d."""

    @property
    @abstractmethod
    def curvature(self) -> CurvatureBounds:
        ...

    @property
    def spec(self) -> ManifoldSpec:
        return ManifoldSpec(self.kind, self.ambient_dim, self.dim, self.curvature)

    # -- metric -----------------------------------------------------------
    def inner(self, u, v):
        return _dot(u, v)

    def norm(self, u):
        return np.sqrt(np.maximum(self.inner(u, u), 0.0))

    # -- constraints --------------------------------------------------------
    @abstractmethod
    def constraint_residual(self, x):
        ...

    @abstractmethod
    def tangency_residual(self, x, v):
        ...

    @abstractmethod
    def project(self, x):
        """Map an ambient vector onto the manifold."""

    @abstractmethod
    def project_tangent(self, x, v):
        ...

    def check_point(self, x, tol=POINT_TOL):
        x = np.asarray(x, dtype=float)
        if x.shape[-1] != self.ambient_dim:
            raise InvalidInputError(
                f"point has {x.shape[-1]} coordinates, expected {self.ambient_dim}"
            )
        if not np.all(np.isfinite(x)):
            raise InvalidInputError("non-finite point coordinates")
        res = np.max(self.constraint_residual(x), initial=0.0)
        if res > tol * max(1.0, float(np.max(np.abs(x), initial=1.0))):
            raise InvalidInputError(f"point off {self.kind} (residual {res:.3g})")
        return x

    def check_tangent(self, x, v, tol=TANGENT_TOL):
        v = np.asarray(v, dtype=float)
        if v.shape[-1] != self.ambient_dim:
            raise InvalidInputError(
                f"tangent vector has {v.shape[-1]} coordinates, expected {self.ambient_dim}"
            )
        res = self.tangency_residual(x, v)
        scale = np.maximum(1.0, _norm(x) * _norm(v))
        if np.any(res > tol * scale):
            raise InvalidInputError(
                f"vector not tangent to {self.kind} (residual {np.max(res):.3g})"
            )
        return v

    # -- geometry ---------------------------------------------------------
    @abstractmethod
    def exp(self, x, v, check=True):
        ...

    @abstractmethod
    def log(self, x, y, return_flag=False):
        ...

    @abstractmethod
    def distance(self, x, y):
        ...

    @abstractmethod
    def transport(self, x, y, v):
        """Parallel transport of ``v`` (tangent at ``x``) to ``y`` along the
        minimizing geodesic.  ``v`` may carry extra axes before the last one
        (e.g. a frame of shape ``(..., d, n)`` with ``x`` of shape ``(..., n)``
        is handled by :meth:`transport_frame`)."""

    def transport_frame(self, x, y, frame):
        return self.transport(x[..., None, :], y[..., None, :], frame)

    @abstractmethod
    def curvature_op(self, x, u, v, w):
        """Riemann curvature R(u, v)w at x."""

    def sectional(self, x, u, v):
        return self.inner(self.curvature_op(x, u, v, v), u)

    @abstractmethod
    def ricci(self, x, u):
        ...

    @abstractmethod
    def frame(self, x):
        """Deterministic orthonormal frame of T_x M, shape (..., d, n)."""

    def coords(self, frame, v):
        """Coordinates of ``v`` in an orthonormal ``frame``."""
        return self.inner(frame, v[..., None, :])

    def combine(self, frame, c):
        """Tangent vector ``sum_i c_i frame_i``."""
        return np.einsum("...d,...dn->...n", c, frame)

    def random_point(self, rng, size=()):
        ...

    def random_tangent(self, rng, x, scale=1.0):
        xi = rng.standard_normal(np.shape(x)[:-1] + (self.dim,))
        return scale * self.combine(self.frame(x), xi)

    def origin(self):
        ...

    def gram(self, frame):
        return self.inner(frame[..., :, None, :], frame[..., None, :, :])

    def _gram_schmidt(self, x, drop):
        """Project the ambient basis onto T_x M, skip basis index ``drop`` and
        orthonormalize the rest in order."""
        n = self.ambient_dim
        batch = np.shape(x)[:-1]
        idx = np.arange(n)
        keep = np.broadcast_to(idx, batch + (n,))
        keep = keep[np.broadcast_to(idx, batch + (n,)) != drop[..., None]].reshape(
            batch + (n - 1,)
        )
        eye = np.eye(n)
        out = np.empty(batch + (n - 1, n))
        for j in range(n - 1):
            e = eye[keep[..., j]]
            v = self.project_tangent(x, e)
            for i in range(j):
                v = v - self.inner(v, out[..., i, :])[..., None] * out[..., i, :]
            # second pass keeps orthogonality at ~1e-15
            for i in range(j):
                v = v - self.inner(v, out[..., i, :])[..., None] * out[..., i, :]
            out[..., j, :] = v / self.norm(v)[..., None]
        return out


class Euclidean(Manifold):
    kind = "euclidean"

    @property
    def dim(self):
        return self.ambient_dim

    @property
    def curvature(self):
        return CurvatureBounds(0.0, 0.0, 0.0)

    def constraint_residual(self, x):
        return np.zeros(np.shape(x)[:-1])

    def tangency_residual(self, x, v):
        return np.zeros(np.broadcast_shapes(np.shape(x), np.shape(v))[:-1])

    def project(self, x):
        return np.asarray(x, dtype=float)

    def project_tangent(self, x, v):
        return np.asarray(v, dtype=float)

    def exp(self, x, v, check=True):
        return x + v

    def log(self, x, y, return_flag=False):
        v = y - x
        if return_flag:
            return v, np.zeros(np.shape(v)[:-1], dtype=bool)
        return v

    def distance(self, x, y):
        return _norm(y - x)

    def transport(self, x, y, v):
        return np.array(v, dtype=float, copy=True)

    def curvature_op(self, x, u, v, w):
        return np.zeros(np.broadcast_shapes(np.shape(u), np.shape(v), np.shape(w)))

    def ricci(self, x, u):
        return np.zeros(np.shape(u)[:-1])

    def frame(self, x):
        batch = np.shape(x)[:-1]
        return np.broadcast_to(np.eye(self.ambient_dim), batch + (self.dim, self.ambient_dim)).copy()

    def random_point(self, rng, size=()):
        size = (size,) if np.isscalar(size) else tuple(size)
        return rng.standard_normal(size + (self.ambient_dim,))

    def origin(self):
        return np.zeros(self.ambient_dim)


class Sphere(Manifold):
    """Unit sphere S^{n-1} in R^n."""

    kind = "sphere"

    @property
    def dim(self):
        return self.ambient_dim - 1

    @property
    def curvature(self):
        # Ric(u,u) = (d-1)|u|^2, so the lower-bound constant is -(d-1)
        return CurvatureBounds(1.0, 0.0, -(self.dim - 1.0))

    def constraint_residual(self, x):
        return np.abs(_norm(x) - 1.0)

    def tangency_residual(self, x, v):
        return np.abs(_dot(x, v))

    def project(self, x):
        x = np.asarray(x, dtype=float)
        return x / _norm(x)[..., None]

    def project_tangent(self, x, v):
        return v - _dot(x, v)[..., None] * x

    def exp(self, x, v, check=True):
        if check:
            self.check_tangent(x, v)
        nv = _norm(v)[..., None]
        # sin(t)/t is smooth at 0; np.sinc(t/pi) = sin(t)/t
        y = np.cos(nv) * x + np.sinc(nv / np.pi) * v
        return self.project(y)

    def log(self, x, y, return_flag=False):
        x, y = np.broadcast_arrays(np.asarray(x, float), np.asarray(y, float))
        dist = self.distance(x, y)[..., None]
        w = y - _dot(x, y)[..., None] * x
        nw = _norm(w)[..., None]
        antipodal = _dot(x, y) <= -1.0 + ANTIPODAL_TOL
        with np.errstate(invalid="ignore", divide="ignore"):
            v = np.where(nw > 0, dist * w / np.where(nw > 0, nw, 1.0), 0.0)
        if np.any(antipodal):
            fallback = np.pi * self.frame(x)[..., 0, :]
            v = np.where(antipodal[..., None], fallback, v)
        if return_flag:
            return v, antipodal
        return v

    def distance(self, x, y):
        # 2 atan2(|x-y|, |x+y|) = arccos(<x,y>) without the loss near 0 and pi
        return 2.0 * np.arctan2(_norm(x - y), _norm(x + y))

    def transport(self, x, y, v):
        xy = _dot(x, y)
        antipodal = xy <= -1.0 + ANTIPODAL_TOL
        if np.any(antipodal):
            return self._transport_along(x, self.log(x, y), v)
        coef = _dot(y, v) / (1.0 + xy)
        return v - coef[..., None] * (x + y)

    def _transport_along(self, x, u, v, t=1.0):
        """Transport v along t -> exp(x, t u); rotation in the (x, u) plane."""
        nu = _norm(u)[..., None]
        e = np.where(nu > 0, u / np.where(nu > 0, nu, 1.0), 0.0)
        a = _dot(v, e)[..., None]
        th = t * nu
        return v + a * ((np.cos(th) - 1.0) * e - np.sin(th) * x)

    def curvature_op(self, x, u, v, w):
        return _dot(v, w)[..., None] * u - _dot(u, w)[..., None] * v

    def ricci(self, x, u):
        return (self.dim - 1.0) * _dot(u, u)

    def frame(self, x):
        x = np.asarray(x, dtype=float)
        drop = np.argmax(np.abs(x), axis=-1)
        return self._gram_schmidt(x, drop)

    def random_point(self, rng, size=()):
        size = (size,) if np.isscalar(size) else tuple(size)
        return self.project(rng.standard_normal(size + (self.ambient_dim,)))

    def origin(self):
        e = np.zeros(self.ambient_dim)
        e[0] = 1.0
        return e


def minkowski(u, v):
    return _dot(u[..., 1:], v[..., 1:]) - u[..., 0] * v[..., 0]


class Hyperboloid(Manifold):
    """Upper sheet {x : <x,x>_M = -1, x_0 > 0} of the Minkowski space R^{1,n-1}."""

    kind = "hyperboloid"

    @property
    def dim(self):
        return self.ambient_dim - 1

    @property
    def curvature(self):
        return CurvatureBounds(1.0, 0.0, self.dim - 1.0)

    def inner(self, u, v):
        return minkowski(u, v)

    def constraint_residual(self, x):
        res = np.abs(minkowski(x, x) + 1.0)
        return np.where(x[..., 0] > 0, res, np.inf)

    def tangency_residual(self, x, v):
        return np.abs(minkowski(x, v))

    def project(self, x):
        x = np.array(x, dtype=float, copy=True)
        x[..., 0] = np.sqrt(1.0 + np.sum(x[..., 1:] ** 2, axis=-1))
        return x

    def project_tangent(self, x, v):
        return v + minkowski(x, v)[..., None] * x

    def exp(self, x, v, check=True):
        if check:
            self.check_tangent(x, v)
        nv = self.norm(v)[..., None]
        with np.errstate(invalid="ignore", divide="ignore"):
            shc = np.where(nv > 1e-8, np.sinh(nv) / np.where(nv > 0, nv, 1.0), 1.0 + nv**2 / 6.0)
        y = np.cosh(nv) * x + shc * v
        return self.project(y)

    def log(self, x, y, return_flag=False):
        x, y = np.broadcast_arrays(np.asarray(x, float), np.asarray(y, float))
        dist = self.distance(x, y)[..., None]
        w = y + minkowski(x, y)[..., None] * x
        nw = self.norm(w)[..., None]
        v = np.where(nw > 0, dist * w / np.where(nw > 0, nw, 1.0), 0.0)
        if return_flag:
            return v, np.zeros(np.shape(v)[:-1], dtype=bool)
        return v

    def distance(self, x, y):
        diff = x - y
        chord2 = np.maximum(minkowski(diff, diff), 0.0)
        return 2.0 * np.arcsinh(0.5 * np.sqrt(chord2))

    def transport(self, x, y, v):
        coef = minkowski(y, v) / (1.0 - minkowski(x, y))
        return v + coef[..., None] * (x + y)

    def curvature_op(self, x, u, v, w):
        return -(minkowski(v, w)[..., None] * u - minkowski(u, w)[..., None] * v)

    def ricci(self, x, u):
        return -(self.dim - 1.0) * minkowski(u, u)

    def frame(self, x):
        x = np.asarray(x, dtype=float)
        drop = np.argmax(np.abs(x), axis=-1)
        return self._gram_schmidt(x, drop)

    def random_point(self, rng, size=(), scale=1.0):
        size = (size,) if np.isscalar(size) else tuple(size)
        z = np.zeros(size + (self.ambient_dim,))
        z[..., 1:] = scale * rng.standard_normal(size + (self.dim,))
        return self.project(z)

    def origin(self):
        e = np.zeros(self.ambient_dim)
        e[0] = 1.0
        return e


_KINDS = {"euclidean": Euclidean, "sphere": Sphere, "hyperboloid": Hyperboloid}


def make_manifold(kind: str, ambient_dim: int) -> Manifold:
    try:
        cls = _KINDS[kind.lower()]
    except KeyError:
        raise InvalidInputError(
            f"unknown manifold kind {kind!r}; expected one of {sorted(_KINDS)}"
        ) from None
    return cls(ambient_dim)


# -- validated value types ---------------------------------------------------
# The array API above is what the samplers use; these wrappers give single
# points, vectors and frames an explicit, constraint-checked form.


@dataclass(frozen=True, eq=False)
class Point:
    manifold: Manifold
    coords: np.ndarray

    def __post_init__(self):
        c = self.manifold.check_point(np.array(self.coords, dtype=float))
        c.setflags(write=False)
        object.__setattr__(self, "coords", c)


@dataclass(frozen=True, eq=False)
class TangentVector:
    base: Point
    coords: np.ndarray

    def __post_init__(self):
        c = self.base.manifold.check_tangent(self.base.coords, np.array(self.coords, dtype=float))
        c.setflags(write=False)
        object.__setattr__(self, "coords", c)

    @property
    def norm(self) -> float:
        return float(self.base.manifold.norm(self.coords))


@dataclass(frozen=True, eq=False)
class Frame:
    base: Point
    vectors: np.ndarray = field(repr=False)

    def __post_init__(self):
        m = self.base.manifold
        F = np.array(self.vectors, dtype=float)
        if F.shape != (m.dim, m.ambient_dim):
            raise InvalidInputError(f"frame shape {F.shape}, expected {(m.dim, m.ambient_dim)}")
        m.check_tangent(self.base.coords, F)
        if np.max(np.abs(m.gram(F) - np.eye(m.dim)), initial=0.0) > FRAME_TOL:
            raise InvalidInputError("frame is not orthonormal")
        F.setflags(write=False)
        object.__setattr__(self, "vectors", F)

    def __getitem__(self, i) -> TangentVector:
        return TangentVector(self.base, self.vectors[i])

    def __len__(self):
        return self.vectors.shape[0]


def _same_base(*vs: TangentVector):
    b = vs[0].base
    for v in vs[1:]:
        if v.base.manifold != b.manifold or not np.array_equal(v.base.coords, b.coords):
            raise InvalidInputError("tangent vectors have different base points")
    return b


def exp(x: Point, v: TangentVector) -> Point:
    _check_base(x, v)
    return Point(x.manifold, x.manifold.exp(x.coords, v.coords))


def _check_base(x: Point, v: TangentVector):
    if v.base.manifold != x.manifold or not np.array_equal(v.base.coords, x.coords):
        raise InvalidInputError("tangent vector is not based at the given point")


def log(x: Point, y: Point) -> tuple[TangentVector, bool]:
    """Returns ``(log_x(y), nonunique_geodesic)``."""
    if x.manifold != y.manifold:
        raise InvalidInputError("points live on different manifolds")
    v, flag = x.manifold.log(x.coords, y.coords, return_flag=True)
    return TangentVector(x, v), bool(flag)


def distance(x: Point, y: Point) -> float:
    if x.manifold != y.manifold:
        raise InvalidInputError("points live on different manifolds")
    return float(x.manifold.distance(x.coords, y.coords))


def parallel_transport(v: TangentVector, y: Point) -> TangentVector:
    x = v.base
    if x.manifold != y.manifold:
        raise InvalidInputError("points live on different manifolds")
    return TangentVector(y, x.manifold.transport(x.coords, y.coords, v.coords))


def transport_frame(F: Frame, y: Point) -> Frame:
    m = F.base.manifold
    return Frame(y, m.transport_frame(F.base.coords, y.coords, F.vectors))


def curvature_op(u: TangentVector, v: TangentVector, w: TangentVector) -> TangentVector:
    b = _same_base(u, v, w)
    return TangentVector(b, b.manifold.curvature_op(b.coords, u.coords, v.coords, w.coords))


def ricci(u: TangentVector) -> float:
    return float(u.base.manifold.ricci(u.base.coords, u.coords))


def gram_schmidt_frame(x: Point) -> Frame:
    return Frame(x, x.manifold.frame(x.coords))


def coords_in_frame(v: TangentVector, F: Frame) -> np.ndarray:
    _same_base(v, F[0])
    return F.base.manifold.coords(F.vectors, v.coords)


def combine(F: Frame, c) -> TangentVector:
    c = np.asarray(c, dtype=float)
    if c.shape != (len(F),):
        raise InvalidInputError(f"expected {len(F)} coordinates, got shape {c.shape}")
    return TangentVector(F.base, F.base.manifold.combine(F.vectors, c))
