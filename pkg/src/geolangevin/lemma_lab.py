"""Numerical checks of the geometry toolbox used by the convergence proofs.

Each check evaluates one side exactly (closed-form manifolds, or a fine RK4
solve) and compares it against the corresponding analytic upper bound.  A
check reports the worst slack ``bound - value`` over all trials; it passes
when that slack is at least ``-SLACK``.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .manifolds import Euclidean, Hyperboloid, InvalidInputError, Sphere

SLACK = 1e-6
RK4_STEP = 1e-3
GAUSS_NODES = 64


@dataclass
class LemmaReport:
    name: str
    trials: int
    worst_slack: dict = field(default_factory=dict)
    violations: dict = field(default_factory=dict)
    tol: float = SLACK

    @property
    def passed(self):
        return all(v == 0 for v in self.violations.values())

    def add(self, key, bound, value):
        s = np.asarray(bound, dtype=float) - np.asarray(value, dtype=float)
        s = np.where(np.isnan(s), -np.inf, s)
        worst = float(np.min(s)) if s.size else np.inf
        self.worst_slack[key] = min(self.worst_slack.get(key, np.inf), worst)
        self.violations[key] = self.violations.get(key, 0) + int(np.sum(s < -self.tol))

    def rows(self):
        return [
            {"suite": self.name, "bound": k, "trials": self.trials,
             "worst_slack": self.worst_slack[k], "violations": self.violations[k]}
            for k in self.worst_slack
        ]


# -- safe hyperbolic helpers ----------------------------------------------------

def _sinhc(x):
    """sinh(x)/x with the removable singularity filled in."""
    x = np.asarray(x, dtype=float)
    small = np.abs(x) < 1e-4
    xs = np.where(small, 1.0, x)
    return np.where(small, 1.0 + x**2 / 6.0, np.sinh(xs) / xs)


def _cosh_m1(x):
    return 2.0 * np.sinh(0.5 * np.asarray(x, dtype=float)) ** 2


def _sinh_minus(x):
    """sinh(x) - x, accurate for small x."""
    x = np.asarray(x, dtype=float)
    small = np.abs(x) < 1e-2
    return np.where(small, x**3 / 6.0 + x**5 / 120.0 + x**7 / 5040.0, np.sinh(x) - x)


# -- matrix ODE -----------------------------------------------------------------

@dataclass
class MatrixPath:
    """Symmetric matrix-valued path t -> M(t) on [0, 1].

    ``M`` may return a batch of matrices, shape (*batch, d, d); the bounds
    then broadcast against the batch.
    """

    dim: int
    M: callable
    L_M: object
    L_M_prime: object = 0.0
    validate: bool = True

    def __post_init__(self):
        self.L_M = np.asarray(self.L_M, dtype=float)
        self.L_M_prime = np.asarray(self.L_M_prime, dtype=float)
        if np.any(self.L_M < 0) or np.any(self.L_M_prime < 0):
            raise InvalidInputError("matrix bounds must be >= 0")
        if self.validate:
            worst = 0.0
            for t in np.linspace(0.0, 1.0, 100):
                m = np.asarray(self.M(t), dtype=float)
                if m.shape[-2:] != (self.dim, self.dim):
                    raise InvalidInputError(f"M(t) has shape {m.shape}")
                if np.max(np.abs(m - np.swapaxes(m, -1, -2)), initial=0.0) > 1e-12:
                    raise InvalidInputError("M(t) is not symmetric")
                worst = np.maximum(worst, np.linalg.norm(m, ord=2, axis=(-2, -1)))
            if np.any(worst > self.L_M * (1 + 1e-12) + 1e-14):
                raise InvalidInputError("sampled |M(t)| exceeds L_M")


def random_matrix_paths(rng, n, dim, scale=1.0):
    """Batch of paths M0 + sin(pi t) M1 with guaranteed bounds.

    L_M = |M0| + |M1| and L_M' = |M1|, since |sin| <= 1.
    """
    def sym(size):
        a = rng.standard_normal(size + (dim, dim))
        return 0.5 * (a + np.swapaxes(a, -1, -2))

    M0, M1 = sym((n,)), sym((n,))
    s0 = scale * rng.uniform(0.0, 1.0, n) / np.linalg.norm(M0, ord=2, axis=(-2, -1))
    s1 = scale * rng.uniform(0.0, 1.0, n) / np.linalg.norm(M1, ord=2, axis=(-2, -1))
    M0, M1 = M0 * s0[:, None, None], M1 * s1[:, None, None]
    n0 = np.linalg.norm(M0, ord=2, axis=(-2, -1))
    n1 = np.linalg.norm(M1, ord=2, axis=(-2, -1))
    return MatrixPath(dim, lambda t: M0 + np.sin(np.pi * t) * M1, n0 + n1, n1)


def constant_path(dim, c):
    return MatrixPath(dim, lambda t: c * np.eye(dim), abs(c), 0.0)


def _generator(M):
    d = M.shape[-1]
    G = np.zeros(M.shape[:-2] + (2 * d, 2 * d))
    G[..., :d, d:] = np.eye(d)
    G[..., d:, :d] = M
    return G


def _rk4_flow(Mfun, d, times, h):
    """Solve E' = [[0, I], [M(t), 0]] E, E(0) = I, stopping at each of ``times``."""
    times = np.asarray(times, dtype=float)
    if np.any(times < 0) or np.any(np.diff(times) < 0):
        raise InvalidInputError("times must be sorted and >= 0")
    M0 = np.asarray(Mfun(0.0), dtype=float)
    E = np.broadcast_to(np.eye(2 * d), M0.shape[:-2] + (2 * d, 2 * d)).copy()
    t = 0.0
    out = []
    for target in times:
        while t < target - 1e-15:
            step = min(h, target - t)
            k1 = _generator(Mfun(t)) @ E
            Gm = _generator(Mfun(t + 0.5 * step))
            k2 = Gm @ (E + 0.5 * step * k1)
            k3 = Gm @ (E + 0.5 * step * k2)
            k4 = _generator(Mfun(t + step)) @ (E + step * k3)
            E = E + step / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)
            t = t + step if step < h else t + h
            if abs(t - target) < 1e-12:
                t = target
        out.append(E.copy())
    return out


def _blocks(E, d):
    return E[..., :d, :d], E[..., :d, d:], E[..., d:, :d], E[..., d:, d:]


def emat(path: MatrixPath, t, h=RK4_STEP):
    """Blocks (A, B, C, D) of the fundamental matrix at time t in [0, 1]."""
    if not 0.0 <= t <= 1.0:
        raise InvalidInputError("t must lie in [0, 1]")
    (E,) = _rk4_flow(path.M, path.dim, [t], h)
    return _blocks(E, path.dim)


def block_bound_values(L, Lp, t):
    """The analytic right-hand sides, keyed by bound name."""
    L = np.asarray(L, dtype=float)
    r = np.sqrt(L)
    a = r * t
    sh_over = t * _sinhc(a)  # sinh(r t)/r
    return {
        "A": np.cosh(a),
        "B": sh_over,
        "C": L * sh_over,  # r sinh(r t)
        "D": np.cosh(a),
        "A-I": _cosh_m1(a),
        "B-tI": np.where(r > 0, _sinh_minus(a) / np.where(r > 0, r, 1.0), 0.0),
        "D-I": _cosh_m1(a),
        "C-tM0": (np.asarray(Lp) + 0.5 * L**2) * sh_over,
        # coarser forms valid on t in [0, 1]
        "A-I(exp)": 0.5 * L * np.exp(L),
        "B-tI(exp)": L * np.exp(L) / 6.0,
        "D-I(exp)": 0.5 * L * np.exp(L),
    }


def check_block_bounds(path: MatrixPath, t_grid=None, L_M=None, L_M_prime=None, h=RK4_STEP):
    """Compare the blocks of emat against their bounds on ``t_grid``.

    ``L_M``/``L_M_prime`` override the declared constants, which is how the
    negative control is run.
    """
    t_grid = np.linspace(0.0, 1.0, 11) if t_grid is None else np.sort(np.asarray(t_grid, float))
    L = path.L_M if L_M is None else np.asarray(L_M, float)
    Lp = path.L_M_prime if L_M_prime is None else np.asarray(L_M_prime, float)
    d = path.dim
    eye = np.eye(d)
    M0 = np.asarray(path.M(0.0), dtype=float)
    batch = M0.shape[:-2]
    rep = LemmaReport("matrix-ode", int(np.prod(batch, dtype=int)) * len(t_grid))
    opn = lambda X: np.linalg.norm(X, ord=2, axis=(-2, -1))
    for t, E in zip(t_grid, _rk4_flow(path.M, d, t_grid, h)):
        A, B, C, D = _blocks(E, d)
        bnd = block_bound_values(L, Lp, t)
        vals = {
            "A": opn(A), "B": opn(B), "C": opn(C), "D": opn(D),
            "A-I": opn(A - eye), "B-tI": opn(B - t * eye), "D-I": opn(D - eye),
            "C-tM0": opn(C - t * M0),
            "A-I(exp)": opn(A - eye), "B-tI(exp)": opn(B - t * eye), "D-I(exp)": opn(D - eye),
        }
        for k, v in vals.items():
            rep.add(k, np.broadcast_to(bnd[k], np.shape(v)), v)
    return rep


# -- Jacobi fields ----------------------------------------------------------------

@dataclass
class JacobiSetup:
    """Jacobi field along t -> Exp_x(t w) with J(0) = J0, D_t J(0) = K0.

    Arrays may carry a common batch shape.
    """

    manifold: object
    x: np.ndarray
    w: np.ndarray
    J0: np.ndarray
    K0: np.ndarray

    def __post_init__(self):
        m = self.manifold
        self.x = m.check_point(np.asarray(self.x, float))
        for name in ("w", "J0", "K0"):
            v = np.asarray(getattr(self, name), float)
            m.check_tangent(self.x, v)
            setattr(self, name, v)


def _geodesic(m, x, w, t):
    """Point, velocity and a transported frame at time t along Exp_x(t w)."""
    g = m.exp(x, t * w, check=False)
    return g, m.transport(x, g, w)


def jacobi_matrix(m, x, w, E0, t):
    """M_ij(t) = -<R(E_j, a) a, E_i> in the parallel frame E(t)."""
    g, a = _geodesic(m, x, w, t)
    E = m.transport(x[..., None, :], g[..., None, :], E0)
    Ra = m.curvature_op(g[..., None, :], E, a[..., None, :], a[..., None, :])
    return -m.inner(E[..., None, :, :], Ra[..., :, None, :])


def integrate_jacobi(setup: JacobiSetup, t, h=RK4_STEP, return_coords=False):
    """(J(t), D_t J(t)) by RK4 on J' = K, K' = M(t) J in a parallel frame."""
    m = setup.manifold
    x, w = setup.x, setup.w
    E0 = m.frame(x)
    J = m.coords(E0, setup.J0)
    K = m.coords(E0, setup.K0)
    Mf = lambda s: jacobi_matrix(m, x, w, E0, s)
    ts = np.atleast_1d(np.asarray(t, dtype=float))
    Es = _rk4_flow(Mf, m.dim, np.sort(ts), h)
    order = np.argsort(ts)
    res = [None] * len(ts)
    d = m.dim
    for i, E in zip(order, Es):
        A, B, C, D = _blocks(E, d)
        Jt = np.einsum("...ij,...j->...i", A, J) + np.einsum("...ij,...j->...i", B, K)
        Kt = np.einsum("...ij,...j->...i", C, J) + np.einsum("...ij,...j->...i", D, K)
        res[i] = (Jt, Kt)
    if return_coords:
        out = res
    else:
        out = []
        for ti, (Jt, Kt) in zip(ts, res):
            g, _ = _geodesic(m, x, w, ti)
            Et = m.transport(x[..., None, :], g[..., None, :], E0)
            out.append((m.combine(Et, Jt), m.combine(Et, Kt)))
    return out[0] if np.ndim(t) == 0 else out


def jacobi_closed_form(setup: JacobiSetup, t):
    """Exact Jacobi field on a space of constant curvature k in {0, 1, -1}."""
    m = setup.manifold
    k = 0.0 if isinstance(m, Euclidean) else (1.0 if isinstance(m, Sphere) else -1.0)
    x, w = setup.x, setup.w
    nw = m.norm(w)[..., None]
    e = np.where(nw > 0, w / np.where(nw > 0, nw, 1.0), 0.0)
    par = lambda v: m.inner(v, e)[..., None] * e
    Jp, Kp = par(setup.J0), par(setup.K0)
    Jo, Ko = setup.J0 - Jp, setup.K0 - Kp
    a = nw * t
    if k > 0:
        c, s, ds = np.cos(a), t * np.sinc(a / np.pi), -nw * np.sin(a)
    elif k < 0:
        c, s, ds = np.cosh(a), t * _sinhc(a), nw * np.sinh(a)
    else:
        c, s, ds = np.ones_like(a), t * np.ones_like(a), np.zeros_like(a)
    J = Jp + t * Kp + c * Jo + s * Ko
    K = Kp + ds * Jo + c * Ko
    g, _ = _geodesic(m, x, w, t)
    return m.transport(x, g, J), m.transport(x, g, K)


def jacobi_bound_values(C, Lp_w3, nJ, nK):
    """Right-hand sides of the six Jacobi inequalities (constant C = sqrt(L_R)|w|)."""
    ch, chm1 = np.cosh(C), _cosh_m1(C)
    shc = _sinhc(C)
    sh_c = C * np.sinh(C)
    eC = np.exp(C)
    return {
        "norm": ch * nJ + shc * nK,
        "first_order": chm1 * nJ + (shc - 1.0) * nK,
        "zeroth_order": chm1 * nJ + shc * nK,
        "DtJ_norm": sh_c * nJ + ch * nK,
        "DtJ_residual": sh_c * nJ + chm1 * nK,
        "DtJ_second_order": (Lp_w3 + C**4) * eC * nJ + (Lp_w3 + C**2) * eC * nK,
    }


def check_jacobi_bounds(setup: JacobiSetup, grid=None, L_R=None, L_R_prime=None, h=RK4_STEP):
    m = setup.manifold
    grid = np.linspace(0.0, 1.0, 11) if grid is None else np.asarray(grid, float)
    curv = m.curvature
    LR = curv.L_R if L_R is None else L_R
    LRp = curv.L_R_prime if L_R_prime is None else L_R_prime
    nw = m.norm(setup.w)
    C = np.sqrt(LR) * nw
    E0 = m.frame(setup.x)
    J0 = m.coords(E0, setup.J0)
    K0 = m.coords(E0, setup.K0)
    nJ, nK = np.linalg.norm(J0, axis=-1), np.linalg.norm(K0, axis=-1)
    M0 = jacobi_matrix(m, setup.x, setup.w, E0, 0.0)
    acc0 = np.einsum("...ij,...j->...i", M0, J0)
    bnd = jacobi_bound_values(C, LRp * nw**3, nJ, nK)
    rep = LemmaReport("jacobi", int(np.prod(np.shape(nJ), dtype=int)) * len(grid))
    sols = integrate_jacobi(setup, grid, h=h, return_coords=True)
    if np.ndim(grid) == 0:
        sols = [sols]
    n = lambda v: np.linalg.norm(v, axis=-1)
    for t, (J, K) in zip(np.atleast_1d(grid), sols):
        # in a parallel frame, transport is the identity on coordinates
        rep.add("norm", bnd["norm"], n(J))
        rep.add("first_order", bnd["first_order"], n(J - J0 - t * K0))
        rep.add("zeroth_order", bnd["zeroth_order"], n(J - J0))
        rep.add("DtJ_norm", bnd["DtJ_norm"], n(K))
        rep.add("DtJ_residual", bnd["DtJ_residual"], n(K - K0))
        rep.add("DtJ_second_order", bnd["DtJ_second_order"], n(K - K0 - t * acc0))
    return rep


def random_jacobi_setup(manifold, rng, n, max_speed=1.0, max_init=1.0):
    m = manifold
    x = _random_base(m, rng, n)
    w = _random_tangent_ball(m, rng, x, max_speed)
    J0 = _random_tangent_ball(m, rng, x, max_init)
    K0 = _random_tangent_ball(m, rng, x, max_init)
    return JacobiSetup(m, x, w, J0, K0)


# -- random helpers ---------------------------------------------------------------

def _random_base(m, rng, n):
    if isinstance(m, Hyperboloid):
        return m.random_point(rng, n, scale=0.5)
    return m.random_point(rng, n)


def _random_tangent_ball(m, rng, x, radius):
    """Tangent vectors with uniform direction and norm uniform in [0, radius]."""
    c = rng.standard_normal(np.shape(x)[:-1] + (m.dim,))
    c /= np.linalg.norm(c, axis=-1, keepdims=True)
    c *= rng.uniform(0.0, radius, np.shape(x)[:-1])[..., None]
    return m.combine(m.frame(x), c)


# -- triangle distortion -------------------------------------------------------------

def triangle_distortion(m, x, a, y):
    """d(Exp_x(y + a), Exp_{Exp_x a}(P y))."""
    xa = m.exp(x, a, check=False)
    p = m.exp(x, y + a, check=False)
    q = m.exp(xa, m.transport(x, xa, y), check=False)
    return m.distance(p, q)


def triangle_bound(L_R, na, ny):
    return L_R * na * ny * (na + ny) * np.exp(np.sqrt(L_R) * (na + ny))


def check_triangle_distortion(m, x, a, y_vec, L_R=None):
    """Batched: x, a, y_vec carry a common leading batch shape."""
    LR = m.curvature.L_R if L_R is None else L_R
    lhs = triangle_distortion(m, x, a, y_vec)
    rep = LemmaReport("triangle", int(np.prod(np.shape(lhs), dtype=int)))
    rep.add("triangle", triangle_bound(LR, m.norm(a), m.norm(y_vec)), lhs)
    return rep


def random_triangle_trials(m, rng, n, max_total=1.0):
    x = _random_base(m, rng, n)
    tot = rng.uniform(0.0, max_total, n)
    frac = rng.uniform(0.0, 1.0, n)
    a = _random_tangent_ball(m, rng, x, 1.0)
    y = _random_tangent_ball(m, rng, x, 1.0)
    a = a / np.maximum(m.norm(a), 1e-300)[:, None] * (tot * frac)[:, None]
    y = y / np.maximum(m.norm(y), 1e-300)[:, None] * (tot * (1 - frac))[:, None]
    return x, a, y


# -- two-point expansions ------------------------------------------------------------

def _gauss_legendre(n=GAUSS_NODES):
    s, wts = np.polynomial.legendre.leggauss(n)
    return 0.5 * (s + 1.0), 0.5 * wts


def curvature_integral(m, x, y, u, v, n=GAUSS_NODES):
    """int_0^1 <R(g', w) w, g'> ds with w = (1-s) u(s) + s v(s) along x -> y."""
    g0 = m.log(x, y)
    s, wts = _gauss_legendre(n)
    total = np.zeros(np.shape(x)[:-1])
    for si, wi in zip(s, wts):
        gs = m.exp(x, si * g0, check=False)
        gp = m.transport(x, gs, g0)
        ww = (1 - si) * m.transport(x, gs, u) + si * m.transport(y, gs, v)
        total = total + wi * m.inner(m.curvature_op(gs, gp, ww, ww), gp)
    return total


def two_point_terms(m, x, y, u, v):
    """Exact squared distance and the ingredients of the expansion bounds."""
    lhs = m.distance(m.exp(x, u, check=False), m.exp(y, v, check=False)) ** 2
    g0 = m.log(x, y)
    diff = m.transport(y, x, v) - u
    return {
        "lhs": lhs,
        "d": m.distance(x, y),
        "lin": m.inner(g0, diff),
        "diff2": m.inner(diff, diff),
        "speed": m.norm(u) + m.norm(v),
    }


def basic_two_point_bound(d, lin, diff2, C):
    return (1 + 4 * C**2 * np.exp(4 * C)) * d**2 + 32 * np.exp(C) * diff2 + 2 * lin


def ricci_two_point_bound(d, lin, diff2, C, Cp, curv_int):
    eC = np.exp(C)
    return (
        d**2 + 2 * lin + diff2 - curv_int
        + (2 * C**2 * eC + 18 * C**4 * eC**2) * diff2
        + (18 * C**4 * eC**2 + 4 * Cp) * d**2
        + 4 * C**2 * eC**2 * d * np.sqrt(diff2)
    )


def zeta(r):
    """r / tanh(r), equal to 1 at r = 0."""
    r = np.asarray(r, dtype=float)
    small = np.abs(r) < 1e-6
    rs = np.where(small, 1.0, r)
    return np.where(small, 1.0 + r**2 / 3.0, rs / np.tanh(rs))


def comparison_bound(m, y, u, v, L_R):
    """Right side of d(z, x)^2 <= d(y, x)^2 - 2<v, u> + zeta(sqrt(L_R) d(y, x)) |v|^2."""
    d = m.norm(u)
    return d**2 - 2 * m.inner(v, u) + zeta(np.sqrt(L_R) * d) * m.inner(v, v)


def check_two_point_expansion(m, x, y, u, v, L_R=None, L_R_prime=None, curvature_term=True):
    """All three expansion bounds on a batch of (x, y, u, v).

    For the last bound the roles are read as points y (base), x = Exp_y(u'),
    z = Exp_y(v) with u' = log_y(x) and the same v transported to y.
    """
    curv = m.curvature
    LR = curv.L_R if L_R is None else L_R
    LRp = curv.L_R_prime if L_R_prime is None else L_R_prime
    t = two_point_terms(m, x, y, u, v)
    C = np.sqrt(LR) * t["speed"]
    Cp = LRp * t["speed"] ** 3
    rep = LemmaReport("two-point", int(np.prod(np.shape(t["lhs"]), dtype=int)))
    rep.add("basic", basic_two_point_bound(t["d"], t["lin"], t["diff2"], C), t["lhs"])
    ci = curvature_integral(m, x, y, u, v) if curvature_term else 0.0
    rep.add("ricci", ricci_two_point_bound(t["d"], t["lin"], t["diff2"], C, Cp, ci), t["lhs"])
    uy = m.log(y, x)
    z = m.exp(y, v, check=False)
    rep.add("comparison", comparison_bound(m, y, uy, v, LR), m.distance(z, x) ** 2)
    return rep


def random_two_point_trials(m, rng, n, max_sep=1.0, max_total=0.5):
    x = _random_base(m, rng, n)
    g = _random_tangent_ball(m, rng, x, max_sep)
    y = m.exp(x, g, check=False)
    tot = rng.uniform(0.0, max_total, n)
    frac = rng.uniform(0.0, 1.0, n)
    u = _random_tangent_ball(m, rng, x, 1.0)
    v = _random_tangent_ball(m, rng, y, 1.0)
    u = u / np.maximum(m.norm(u), 1e-300)[:, None] * (tot * frac)[:, None]
    v = v / np.maximum(m.norm(v), 1e-300)[:, None] * (tot * (1 - frac))[:, None]
    return x, y, u, v


# -- suites ---------------------------------------------------------------------------

def run_suite(name, manifold, n_trials, seed, **overrides):
    """One randomized batch of a named suite; returns a LemmaReport."""
    rng = np.random.default_rng(seed)
    m = manifold
    if name == "jacobi":
        return check_jacobi_bounds(random_jacobi_setup(m, rng, n_trials), **overrides)
    if name == "triangle":
        return check_triangle_distortion(m, *random_triangle_trials(m, rng, n_trials), **overrides)
    if name == "two-point":
        return check_two_point_expansion(m, *random_two_point_trials(m, rng, n_trials), **overrides)
    if name == "matrix-ode":
        return check_block_bounds(random_matrix_paths(rng, n_trials, m.dim), **overrides)
    raise InvalidInputError(f"unknown lemma suite {name!r}")


SUITES = ("jacobi", "matrix-ode", "triangle", "two-point")
