import numpy as np
from hypothesis import given, settings, strategies as st

from geolangevin.couplings import reflect
from geolangevin.diagnostics import (
    SampleCloud, brute_force_assignment, loglog_slope, solve_assignment, wasserstein1,
)
from geolangevin.lyapunov import LyapunovFunction, LyapunovParams
from geolangevin.manifolds import Euclidean, Hyperboloid, Sphere
from geolangevin.noise import DyadicBrownianPath

seeds = st.integers(0, 2**32 - 1)
spaces = st.sampled_from([Sphere(3), Sphere(5), Hyperboloid(3), Hyperboloid(4), Euclidean(3)])
fast = settings(max_examples=60, deadline=None)


def _pair(m, seed, max_norm):
    rng = np.random.default_rng(seed)
    x = m.random_point(rng, 8) if not isinstance(m, Hyperboloid) else m.random_point(rng, 8, scale=0.5)
    v = m.random_tangent(rng, x)
    v = v / np.maximum(m.norm(v), 1e-300)[:, None] * rng.uniform(0, max_norm, 8)[:, None]
    return x, v


@fast
@given(spaces, seeds)
def test_exp_log_round_trip(m, seed):
    x, v = _pair(m, seed, 2.5)
    y = m.exp(x, v)
    assert np.allclose(m.distance(x, y), m.norm(v), atol=1e-9)
    assert np.allclose(m.log(x, y), v, atol=1e-7)


@fast
@given(spaces, seeds)
def test_transport_is_isometry(m, seed):
    x, u = _pair(m, seed, 2.0)
    _, v = _pair(m, seed + 1, 2.0)
    v = m.project_tangent(x, v)
    y = m.exp(x, m.random_tangent(np.random.default_rng(seed), x))
    pu, pv = m.transport(x, y, u), m.transport(x, y, v)
    assert np.allclose(m.inner(pu, pv), m.inner(u, v), atol=1e-9)
    assert np.max(m.tangency_residual(y, pu)) <= 1e-8


@fast
@given(spaces, seeds)
def test_distance_metric_axioms(m, seed):
    rng = np.random.default_rng(seed)
    kw = {"scale": 0.7} if isinstance(m, Hyperboloid) else {}
    a, b, c = (m.random_point(rng, 10, **kw) for _ in range(3))
    assert np.allclose(m.distance(a, b), m.distance(b, a), atol=1e-12)
    assert np.all(m.distance(a, c) <= m.distance(a, b) + m.distance(b, c) + 1e-9)
    assert np.allclose(m.distance(a, a), 0.0, atol=1e-7)


@fast
@given(seeds, st.integers(1, 6))
def test_assignment_optimal_small(seed, n):
    C = np.random.default_rng(seed).uniform(0, 5, (n, n))
    best, _ = brute_force_assignment(C)
    assert abs(solve_assignment(C).cost - best) <= 1e-12


@fast
@given(seeds, st.integers(2, 40))
def test_w1_symmetric_and_permutation_invariant(seed, n):
    m = Sphere(3)
    rng = np.random.default_rng(seed)
    A = SampleCloud(m, m.random_point(rng, n))
    B = SampleCloud(m, m.random_point(rng, n))
    w = wasserstein1(A, B).value
    assert wasserstein1(B, A).value == w
    Bp = SampleCloud(m, B.points[rng.permutation(n)])
    assert abs(wasserstein1(A, Bp).value - w) <= 1e-12


@fast
@given(st.floats(-3, 3), st.floats(0.1, 10))
def test_loglog_recovers_power(p, a):
    x = np.geomspace(0.01, 1.0, 6)
    slope, intercept, _ = loglog_slope(x, a * x**p)
    assert abs(slope - p) <= 1e-9 and abs(intercept - np.log(a)) <= 1e-9


@fast
@given(seeds, st.integers(2, 6))
def test_reflection_involution(seed, d):
    rng = np.random.default_rng(seed)
    xi = rng.standard_normal((5, d))
    nu = rng.standard_normal(d)
    nu /= np.linalg.norm(nu)
    assert np.allclose(reflect(reflect(xi, nu), nu), xi, atol=1e-12)


@settings(max_examples=25, deadline=None)
@given(st.floats(0.5, 16), st.floats(0.2, 2.0), st.floats(0.0, 1.0))
def test_lyapunov_sandwich(L, R, frac):
    eps = frac / (4 * np.sqrt(L))
    p = LyapunovParams(L, R, eps)
    lf = LyapunovFunction(p)
    r = np.linspace(0, 3 * (R + eps), 60)
    c = 0.5 * np.exp(-(1 + eps) * L * R**2 / 2)
    f, fp = lf.f(r), lf.f_prime(r)
    assert np.all(f >= c * r - 1e-9) and np.all(f <= r + 1e-12)
    assert np.all(fp >= c - 1e-9) and np.all(fp <= 1 + 1e-12)


@fast
@given(seeds, st.integers(1, 6))
def test_brownian_levels_consistent(seed, i):
    p = DyadicBrownianPath(1.0, 2, seed=seed, max_level=i + 1)
    fine = p.increments(i + 1)
    assert np.allclose(fine[0::2] + fine[1::2], p.increments(i), atol=1e-14)
