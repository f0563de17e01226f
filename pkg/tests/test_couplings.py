import numpy as np
import pytest

from geolangevin.couplings import (
    CoupledState, CouplingKind, contraction_rate_fit, coupled_state, frame_mismatch,
    one_step_contraction, reflect, reflection_direction, reflection_step, run_coupled,
    synchronous_step,
)
from geolangevin.manifolds import Euclidean, InvalidInputError, Sphere
from geolangevin.potentials import (
    GaussianPotential, VMFMixture, VonMisesFisher, ZeroPotential, estimate_dissipativity,
)
from geolangevin.samplers import EMConfig, run_langevin


def test_kind_validation():
    with pytest.raises(InvalidInputError):
        CouplingKind("maximal")
    with pytest.raises(InvalidInputError):
        CouplingKind("reflection", -1.0)


def test_synchronous_euclidean_exact_ratio():
    c, delta = 1.0, 0.05
    p = GaussianPotential(Euclidean(3), c=c)
    rng = np.random.default_rng(0)
    x0, y0 = rng.standard_normal((2, 10, 3))
    s = run_coupled(CouplingKind(), EMConfig(delta, 30, 1, x0), p, x0, y0)
    ratio = s.distance[1:] / s.distance[:-1]
    assert np.max(np.abs(ratio - (1 - delta * c / 2))) <= 1e-12


def test_coincident_pairs_stay_together():
    p = VonMisesFisher(Sphere(3), kappa=2.0)
    x0 = p.manifold.random_point(np.random.default_rng(1), 5)
    for variant in ("synchronous", "reflection"):
        s = run_coupled(CouplingKind(variant), EMConfig(0.01, 40, 2, x0), p, x0, x0)
        assert np.max(s.distance) <= 1e-12


def test_frames_are_transported_each_step():
    m = Sphere(4)
    p = VonMisesFisher(m, kappa=3.0)
    rng = np.random.default_rng(2)
    s = coupled_state(m, m.random_point(rng, 20), m.random_point(rng, 20))
    for _ in range(10):
        s = reflection_step(m, s, p, 0.01, 1e-6, rng)
        assert frame_mismatch(m, s) <= 1e-7


def test_reflection_below_threshold_is_synchronous():
    m = Sphere(3)
    p = VonMisesFisher(m, kappa=1.0)
    x = m.random_point(np.random.default_rng(3), 8)
    y = m.exp(x, 1e-4 * m.random_tangent(np.random.default_rng(4), x))
    s = coupled_state(m, x, y)
    a = synchronous_step(m, s, p, 0.01, np.random.default_rng(5))
    b = reflection_step(m, s, p, 0.01, 1.0, np.random.default_rng(5))
    assert np.array_equal(a.x, b.x) and np.array_equal(a.y, b.y)


def test_reflection_doubles_radial_noise():
    """Flat space, no drift: <x - y, u> moves by 2 sqrt(delta) N(0, 1)."""
    m = Euclidean(2)
    p = ZeroPotential(m)
    delta, n = 0.01, 20000
    x = np.zeros((n, 2))
    y = np.tile([3.0, 0.0], (n, 1))
    s = reflection_step(m, coupled_state(m, x, y), p, delta, 1e-6, np.random.default_rng(6))
    radial = (s.y - s.x)[:, 0] - 3.0
    assert np.var(radial) == pytest.approx(4 * delta, rel=0.05)
    # tangential coordinates move together
    assert np.allclose((s.y - s.x)[:, 1], 0.0, atol=1e-14)


def test_reflect_is_orthogonal():
    rng = np.random.default_rng(7)
    xi = rng.standard_normal((100000, 3))
    nu = np.array([0.6, 0.0, 0.8])
    r = reflect(xi, nu)
    assert np.allclose(np.linalg.norm(r, axis=1), np.linalg.norm(xi, axis=1), rtol=1e-14)
    assert np.allclose(np.cov(r.T), np.eye(3), atol=0.02)


def test_reflection_direction_unit():
    m = Sphere(3)
    rng = np.random.default_rng(8)
    s = coupled_state(m, m.random_point(rng, 10), m.random_point(rng, 10))
    nu = reflection_direction(m, s, 1e-6)
    assert np.allclose(np.linalg.norm(nu, axis=1), 1.0)
    assert np.all(reflection_direction(m, s, 10.0) == 0)


def test_rate_fit_exact_series():
    delta, r = 0.1, 0.9
    series = r ** np.arange(50)
    fit = contraction_rate_fit(series, delta, burn_in=0.0)
    assert fit.rate == pytest.approx(-np.log(r) / delta, abs=1e-10)
    assert contraction_rate_fit(np.full(30, 2.0), delta).rate == 0.0


def test_rate_fit_synchronous_euclidean():
    c, delta = 1.0, 0.01
    p = GaussianPotential(Euclidean(2), c=c)
    rng = np.random.default_rng(9)
    x0, y0 = rng.standard_normal((2, 20, 2))
    s = run_coupled(CouplingKind(), EMConfig(delta, 300, 3, x0), p, x0, y0)
    fit = contraction_rate_fit(s.distance**2, delta)
    assert fit.rate == pytest.approx(c, rel=0.05)


def test_reflection_mixture_lyapunov_decays():
    m = Sphere(3)
    p = VMFMixture(m, kappas=np.array([2.0, 2.0]))
    rng = np.random.default_rng(10)
    x0, y0 = m.random_point(rng, 300), m.random_point(rng, 300)
    from geolangevin.lyapunov import LyapunovFunction, LyapunovParams

    f = LyapunovFunction(LyapunovParams(1.0, 1.0, 0.1)).f
    s = run_coupled(CouplingKind("reflection", 1e-3), EMConfig(0.01, 200, 4, x0), p, x0, y0, lyapunov=f)
    fit = contraction_rate_fit(s.lyapunov, 0.01, burn_in=0.0)
    assert fit.rate >= 0
    Ef = s.lyapunov.mean(axis=1)
    assert Ef[-1] < Ef[0]


def test_marginals_match_run_langevin():
    """Each coupled chain is distributed as an uncoupled chain."""
    m = Sphere(3)
    p = VonMisesFisher(m, kappa=2.0)
    n, K, delta = 10000, 20, 0.02
    x0 = np.tile([1.0, 0.0, 0.0], (n, 1))
    y0 = np.tile([0.0, 1.0, 0.0], (n, 1))
    s = coupled_state(m, x0, y0)
    rng = np.random.default_rng(11)
    for _ in range(K):
        s = reflection_step(m, s, p, delta, 1e-6, rng)
    ref = run_langevin(EMConfig(delta, K, 12, y0, record_every=K), p).final
    for a, b in ((m.distance(s.y, p.mu), m.distance(ref, p.mu)),):
        for k in (1, 2):
            va, vb = a**k, b**k
            se = np.sqrt(va.var() / n + vb.var() / n)
            assert abs(va.mean() - vb.mean()) <= 4 * se


def test_sphere_vmf_one_step_contraction_bound():
    m = Sphere(3)
    p = VonMisesFisher(m, kappa=10.0)
    delta = 1e-3
    est = estimate_dissipativity(p, 1000, np.random.default_rng(13), sampler=p.sample)
    rng = np.random.default_rng(14)
    x, y = p.sample(rng, 1000), p.sample(rng, 1000)
    ratio, se = one_step_contraction(m, p, x, y, delta, seed=15)
    bound = 1 - 0.5 * delta * (est.m - m.curvature.L_Ric / 2)
    assert ratio <= bound
    # no pair can contract faster than the drift Lipschitz constant plus
    # the Ricci term allow
    floor = 1 - delta * (2 * p.lipschitz + (m.dim - 1)) - 3 * se
    assert ratio >= floor


def test_coupled_state_flags_antipodes():
    m = Sphere(3)
    s = coupled_state(m, np.array([1.0, 0, 0]), np.array([-1.0, 0, 0]))
    assert s.nonunique == 1
    assert isinstance(s, CoupledState)
