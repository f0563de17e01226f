"""Smoothed concave distance reweighting f_eps used in the contraction
argument, and the mixing rate alpha.

With L, R >= 0 and eps >= 0:

    mu(r)  = 1 on [0, R], linear down to 0 on [R, R+eps], 0 afterwards
    psi(r) = exp(-L/2 * I(r)),  I(r) = int_0^r s mu(s) ds
    Psi(r) = int_0^r psi
    nu(r)  = 1 - G(r) / (2 G(inf)),  G(r) = int_0^r mu Psi / psi
    f(r)   = int_0^r psi nu,  g(s) = f(sqrt(s + eps))

I is a piecewise polynomial and is evaluated exactly.  The three nested
integrals are computed on [0, R+eps] with piecewise Chebyshev interpolants
whose panels are split until the trailing coefficients drop below the
tolerance; beyond R+eps every integrand is constant.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from numpy.polynomial import chebyshev as C

_ORDER = 24
_MAX_PANELS = 4096


@dataclass(frozen=True)
class LyapunovParams:
    L: float
    R: float
    epsilon: float = 0.0

    def __post_init__(self):
        if self.L < 0 or self.R < 0 or self.epsilon < 0:
            raise ValueError("L, R and epsilon must be >= 0")
        if self.L > 0 and self.epsilon > 1.0 / (4.0 * math.sqrt(self.L)) * (1 + 1e-12):
            raise ValueError("epsilon must lie in [0, 1/(4 sqrt(L))]")

    @property
    def support(self):
        return self.R + self.epsilon


def mu(params: LyapunovParams, r):
    r = np.asarray(r, dtype=float)
    R, eps = params.R, params.epsilon
    if eps == 0:
        return np.where(r <= R, 1.0, 0.0)
    with np.errstate(over="ignore"):  # subnormal eps: the ramp is a step
        return np.clip(1.0 - (r - R) / eps, 0.0, 1.0)


def inner_integral(params: LyapunovParams, r):
    """I(r) = int_0^r s mu(s) ds in closed form."""
    r = np.asarray(r, dtype=float)
    R, eps = params.R, params.epsilon
    a = np.minimum(r, R)
    out = 0.5 * a**2
    if eps > 0:
        # int_R^b s (1 - (s - R)/eps) ds with h = b - R <= eps, so h^2/eps
        # stays bounded even for subnormal eps
        h = np.clip(r, R, R + eps) - R
        out = out + h * (R + 0.5 * h) - h * (h / eps) * (2.0 * h + 3.0 * R) / 6.0
    return out


def psi(params: LyapunovParams, r):
    return np.exp(-0.5 * params.L * inner_integral(params, r))


class _Panels:
    """Piecewise Chebyshev representation of an antiderivative on [a, b]."""

    def __init__(self, edges, coefs, offsets):
        self.edges = np.asarray(edges)
        self.coefs = coefs  # list of coefficient arrays, one per panel
        self.offsets = np.asarray(offsets)  # antiderivative value at left edges

    def __call__(self, r):
        r = np.asarray(r, dtype=float)
        j = np.clip(np.searchsorted(self.edges, r, side="right") - 1, 0, len(self.coefs) - 1)
        out = np.empty_like(r)
        for p in np.unique(j):
            sel = j == p
            a, b = self.edges[p], self.edges[p + 1]
            t = (2.0 * r[sel] - a - b) / (b - a)
            out[sel] = self.offsets[p] + C.chebval(t, self.coefs[p])
        return out


def _cheb_nodes(a, b, n=_ORDER):
    t = np.cos(np.pi * (np.arange(n) + 0.5) / n)[::-1]
    return t, 0.5 * (a + b) + 0.5 * (b - a) * t


def _fit(values):
    n = len(values)
    t = np.cos(np.pi * (np.arange(n) + 0.5) / n)[::-1]
    return C.chebfit(t, values, n - 1)


def _adaptive_edges(fun, a, b, tol):
    """Split [a, b] until each panel's interpolant of ``fun`` is resolved."""
    if b <= a:
        return [a, b]
    stack, done = [(a, b)], []
    while stack:
        lo, hi = stack.pop()
        _, x = _cheb_nodes(lo, hi)
        c = _fit(fun(x))
        scale = max(np.max(np.abs(c)), 1e-300)
        if np.max(np.abs(c[-4:])) <= tol * scale or len(done) + len(stack) > _MAX_PANELS:
            done.append((lo, hi))
        else:
            mid = 0.5 * (lo + hi)
            stack += [(mid, hi), (lo, mid)]
    done.sort()
    return [done[0][0]] + [p[1] for p in done]


def _integrate(edges, fun):
    """Antiderivative of ``fun`` from edges[0], as a _Panels object."""
    coefs, offsets, acc = [], [], 0.0
    for lo, hi in zip(edges[:-1], edges[1:]):
        _, x = _cheb_nodes(lo, hi)
        c = C.chebint(_fit(fun(x)), lbnd=-1) * (0.5 * (hi - lo))
        coefs.append(c)
        offsets.append(acc)
        acc += C.chebval(1.0, c)
    return _Panels(edges, coefs, offsets), acc


class LyapunovFunction:
    """f_eps together with its building blocks, for fixed parameters."""

    def __init__(self, params: LyapunovParams, tol=1e-9):
        self.params = params
        self.tol = float(tol)
        L, R, eps = params.L, params.R, params.epsilon
        b = params.support
        self._b = b
        if b == 0:
            self._degenerate = True
            return
        self._degenerate = False
        # relative tolerance on panel coefficients; 1e-3 margin absorbs the
        # nesting of three integrals
        ctol = 1e-3 * self.tol
        pieces = [(0.0, R), (R, b)] if eps > 0 else [(0.0, R)]
        edges = [0.0]
        for lo, hi in pieces:
            if hi > lo:
                e = _adaptive_edges(lambda x: psi(params, x), lo, hi, ctol)
                edges += e[1:]
        self.edges = np.array(edges)
        self._psi_b = float(psi(params, b))
        self._Psi, self._Psi_b = _integrate(self.edges, lambda x: psi(params, x))
        # G scaled by psi(b) so that Psi/psi never overflows
        self._Gs, self._Gs_inf = _integrate(
            self.edges,
            lambda x: mu(params, x) * self._Psi(x) * np.exp(0.5 * L * (inner_integral(params, x) - inner_integral(params, b))),
        )
        self._f, self._f_b = _integrate(self.edges, lambda x: psi(params, x) * self.nu(x))

    # -- building blocks ----------------------------------------------------
    def mu(self, r):
        return mu(self.params, r)

    def psi(self, r):
        return psi(self.params, r)

    def Psi(self, r):
        r = np.asarray(r, dtype=float)
        if self._degenerate:
            return r.copy()
        inside = self._Psi(np.minimum(r, self._b))
        return np.where(r <= self._b, inside, self._Psi_b + self._psi_b * (r - self._b))

    def nu(self, r):
        r = np.asarray(r, dtype=float)
        if self._degenerate:
            # R = eps = 0: no reweighting is needed and f(r) = r
            return np.ones_like(r)
        return 1.0 - 0.5 * self._Gs(np.minimum(r, self._b)) / self._Gs_inf

    def nu_prime(self, r):
        r = np.asarray(r, dtype=float)
        if self._degenerate:
            return np.zeros_like(r)
        L, b = self.params.L, self._b
        w = np.exp(0.5 * L * (inner_integral(self.params, r) - inner_integral(self.params, b)))
        return -0.5 * self.mu(r) * self.Psi(r) * w / self._Gs_inf

    # -- f and derivatives ------------------------------------------------------
    def f(self, r):
        r = np.asarray(r, dtype=float)
        if self._degenerate:
            return r.copy()
        inside = self._f(np.minimum(r, self._b))
        return np.where(r <= self._b, inside, self._f_b + 0.5 * self._psi_b * (r - self._b))

    def f_prime(self, r):
        return self.psi(r) * self.nu(r)

    def f_second(self, r):
        """Closed form -(L/2) mu r psi nu + psi nu'."""
        r = np.asarray(r, dtype=float)
        return -0.5 * self.params.L * self.mu(r) * r * self.f_prime(r) + self.psi(r) * self.nu_prime(r)

    def f_second_fd(self, r, h=1e-4):
        """Central differences of f' with one Richardson extrapolation step."""
        r = np.asarray(r, dtype=float)

        def cd(hh):
            lo = np.maximum(r - hh, 0.0)
            return (self.f_prime(r + hh) - self.f_prime(lo)) / (r + hh - lo)

        return (4.0 * cd(h / 2) - cd(h)) / 3.0

    def f_third_fd(self, r, h=1e-3):
        return (self.f_second(r + h) - self.f_second(np.maximum(r - h, 0.0))) / (r + h - np.maximum(r - h, 0.0))

    def g(self, s):
        return self.f(np.sqrt(np.asarray(s, dtype=float) + self.params.epsilon))

    def g_prime(self, s):
        r = np.sqrt(np.asarray(s, dtype=float) + self.params.epsilon)
        return self.f_prime(r) / (2.0 * r)

    def g_second(self, s):
        r = np.sqrt(np.asarray(s, dtype=float) + self.params.epsilon)
        return self.f_second(r) / (4.0 * r**2) - self.f_prime(r) / (4.0 * r**3)


@dataclass
class PropertyReport:
    params: LyapunovParams
    # name -> worst slack (>= 0 means the property holds on the grid)
    slack: dict
    tol: float
    info: dict = field(default_factory=dict)

    @property
    def passed(self):
        return all(v >= -self.tol for v in self.slack.values())

    def failures(self):
        return [k for k, v in self.slack.items() if v < -self.tol]


def check_f_properties(params: LyapunovParams, grid=None, tol=1e-6, lf=None) -> PropertyReport:
    """Check the four grid properties of f_eps:

    1. f(r) in [c r, r]   2. f'(r) in [c, 1]   3. f'' in [-4 L^{3/2}, 0]
    4. f'' + (L/2) r f' <= -2c f / ((1+eps)^2 R^2) on [0, R]

    with c = exp(-(1+eps) L R^2 / 2) / 2.  Property 4 uses the coefficient
    L/2 because psi' = -(L/2) r psi on [0, R], which makes its left side
    exactly psi nu'.  The variant with coefficient L is reported under
    ``info["contraction_full_L"]`` but is not part of the verdict.

    Second derivatives come from Richardson-extrapolated central differences
    of f', skipping grid points within one cell of the kinks at R and R+eps.
    """
    L, R, eps = params.L, params.R, params.epsilon
    lf = LyapunovFunction(params) if lf is None else lf
    if grid is None:
        grid = np.linspace(0.0, 2.0 * (R + eps) + 1.0, 1000)
    grid = np.asarray(grid, dtype=float)
    e = math.exp(-(1.0 + eps) * L * R**2 / 2.0)
    c = 0.5 * e
    f, fp = lf.f(grid), lf.f_prime(grid)
    fpp = lf.f_second_fd(grid)
    cell = grid[1] - grid[0] if len(grid) > 1 else 1.0
    smooth = (np.abs(grid - R) > cell) & (np.abs(grid - R - eps) > cell)
    slack = {
        "f_lower": float(np.min(f - c * grid)),
        "f_upper": float(np.min(grid - f)),
        "fp_lower": float(np.min(fp - c)),
        "fp_upper": float(np.min(1.0 - fp)),
        "fpp_lower": float(np.min(fpp[smooth] + 4.0 * L**1.5, initial=np.inf)),
        "fpp_upper": float(np.min(-fpp[smooth], initial=np.inf)),
    }
    info = {}
    inner = smooth & (grid <= R)
    if R > 0 and np.any(inner):
        rhs = -e / ((1.0 + eps) ** 2 * R**2) * f[inner]
        r_in = grid[inner]
        slack["contraction"] = float(np.min(rhs - (fpp[inner] + 0.5 * L * r_in * fp[inner])))
        info["contraction_full_L"] = float(np.min(rhs - (fpp[inner] + L * r_in * fp[inner])))
    return PropertyReport(params, slack, tol, info)


def check_third_derivative(params: LyapunovParams, grid, lf=None):
    """Worst slack of |f'''| <= 256 sqrt(L) / eps (needs eps > 0)."""
    if params.epsilon <= 0:
        raise ValueError("the third-derivative bound needs epsilon > 0")
    lf = LyapunovFunction(params) if lf is None else lf
    bound = 256.0 * math.sqrt(params.L) / params.epsilon
    return float(bound - np.max(np.abs(lf.f_third_fd(np.asarray(grid, dtype=float)))))


def mixing_alpha(m, L_Ric, q, R):
    """alpha = min((m - L_Ric/2)/16, 1/(2 R^2)) * exp(-(q + L_Ric/2) R^2 / 2).

    q + L_Ric/2 < 0 is replaced by 0, i.e. q by -L_Ric/2.
    """
    if not m > L_Ric / 2.0:
        raise ValueError("need m > L_Ric / 2")
    if R < 0:
        raise ValueError("R must be >= 0")
    Lc = max(q + L_Ric / 2.0, 0.0)
    first = (m - L_Ric / 2.0) / 16.0
    second = math.inf if R == 0 else 1.0 / (2.0 * R**2)
    return min(first, second) * math.exp(-0.5 * Lc * R**2)


def sample_admissible(rng, L_range=(0.5, 16.0)):
    """Random (L, R, eps) with eps in [0, 1/(4 sqrt L)] and R >= 1/sqrt(2L).

    The lower bound on R and a lower bound on L are needed for the
    second-derivative bound; see ``check_f_properties``.
    """
    L = float(np.exp(rng.uniform(np.log(L_range[0]), np.log(L_range[1]))))
    R = float(np.exp(rng.uniform(np.log(1.0 / np.sqrt(2.0 * L)), np.log(4.0 / np.sqrt(L)))))
    eps = float(rng.uniform(0.0, 1.0 / (4.0 * np.sqrt(L))))
    return LyapunovParams(L, R, eps)
