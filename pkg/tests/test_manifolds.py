import numpy as np
import pytest
from scipy.integrate import quad, solve_ivp

from geolangevin import manifolds as mf
from geolangevin.manifolds import Euclidean, Hyperboloid, InvalidInputError, Sphere, make_manifold

E = np.eye(4)


def s2():
    return Sphere(3)


def pt(m, c):
    return mf.Point(m, c)


def tv(x, c):
    return mf.TangentVector(x, c)


def all_manifolds():
    return [Euclidean(3), Sphere(3), Sphere(5), Hyperboloid(3), Hyperboloid(5)]


def random_pair(m, rng, n=50):
    if isinstance(m, Hyperboloid):
        return m.random_point(rng, n, scale=0.8), m.random_point(rng, n, scale=0.8)
    return m.random_point(rng, n), m.random_point(rng, n)


# -- spec and curvature constants ---------------------------------------------

def test_curvature_constants():
    assert Euclidean(3).curvature == mf.CurvatureBounds(0, 0, 0)
    assert Sphere(4).curvature == mf.CurvatureBounds(1, 0, -2)
    assert Hyperboloid(4).curvature == mf.CurvatureBounds(1, 0, 2)


def test_spec_dims():
    assert Sphere(3).spec.intrinsic_dim == 2
    assert Euclidean(3).spec.intrinsic_dim == 3
    with pytest.raises(InvalidInputError):
        mf.ManifoldSpec("sphere", 3, 3, mf.CurvatureBounds(1, 0, -1))
    with pytest.raises(InvalidInputError):
        make_manifold("torus", 3)


def test_point_validation():
    m = s2()
    with pytest.raises(InvalidInputError):
        pt(m, [1.0, 1.0, 0.0])
    with pytest.raises(InvalidInputError):
        pt(Hyperboloid(3), [-1.0, 0.0, 0.0])
    x = pt(m, [1, 0, 0])
    with pytest.raises(InvalidInputError):
        tv(x, [1.0, 0.0, 0.0])
    pt(m, [1 + 5e-10, 0, 0])


# -- exp ------------------------------------------------------------------------

def test_exp_quarter_circle():
    m = s2()
    x = pt(m, E[0, :3])
    y = mf.exp(x, tv(x, np.pi / 2 * E[1, :3]))
    assert np.allclose(y.coords, E[1, :3], atol=1e-15)


def test_exp_antipode():
    m = s2()
    x = pt(m, E[0, :3])
    assert np.allclose(mf.exp(x, tv(x, np.pi * E[1, :3])).coords, -E[0, :3], atol=1e-15)


@pytest.mark.parametrize("m", all_manifolds(), ids=repr)
def test_exp_zero(m):
    x = m.random_point(np.random.default_rng(1), 4)
    assert np.array_equal(m.exp(x, np.zeros_like(x)), m.project(x))
    assert np.allclose(m.exp(x, np.zeros_like(x)), x, atol=1e-15)


def test_exp_rejects_non_tangent():
    m = s2()
    with pytest.raises(InvalidInputError):
        m.exp(E[0, :3], E[0, :3])


# -- log ------------------------------------------------------------------------

def test_log_examples():
    m = s2()
    v, flag = mf.log(pt(m, E[0, :3]), pt(m, E[1, :3]))
    assert np.allclose(v.coords, np.pi / 2 * E[1, :3], atol=1e-15) and not flag
    eu = Euclidean(3)
    a, b = np.array([1.0, 2, 3]), np.array([-1.0, 0.5, 2])
    assert np.allclose(mf.log(pt(eu, a), pt(eu, b))[0].coords, b - a)
    for mm in all_manifolds():
        x = mm.random_point(np.random.default_rng(2))
        assert np.allclose(mm.log(x, x), 0.0, atol=1e-12)


def test_log_antipodal_fallback():
    m = s2()
    x = pt(m, E[0, :3])
    v, flag = mf.log(x, pt(m, -E[0, :3]))
    assert flag
    F = mf.gram_schmidt_frame(x)
    assert np.allclose(v.coords, np.pi * F.vectors[0])
    # the fallback direction still reaches y
    assert np.allclose(mf.exp(x, v).coords, -E[0, :3], atol=1e-12)


@pytest.mark.parametrize("m", all_manifolds(), ids=repr)
def test_exp_log_inverse(m):
    rng = np.random.default_rng(3)
    x, y = random_pair(m, rng, 200)
    if isinstance(m, Sphere):
        keep = m.distance(x, y) < np.pi - 0.1
        x, y = x[keep], y[keep]
    v = m.log(x, y)
    assert np.max(m.distance(m.exp(x, v), y)) <= 1e-7
    assert np.allclose(m.norm(v), m.distance(x, y), atol=1e-10)


# -- distance -------------------------------------------------------------------

def test_distance_examples():
    m = s2()
    assert mf.distance(pt(m, E[0, :3]), pt(m, E[1, :3])) == pytest.approx(np.pi / 2, abs=1e-15)
    x = m.random_point(np.random.default_rng(0), 10)
    assert np.all(m.distance(x, x) == 0)


def _arc_length(x, y):
    """Length of the normalized chord path, integrated numerically."""
    def speed(s):
        c = (1 - s) * x + s * y
        dc = y - x
        nc = np.linalg.norm(c)
        # derivative of c/|c|
        return np.linalg.norm(dc / nc - c * (c @ dc) / nc**3)

    return quad(speed, 0.0, 1.0, epsabs=1e-12, epsrel=1e-12)[0]


def test_distance_matches_integrated_arc_length():
    m = s2()
    rng = np.random.default_rng(4)
    x, y = m.random_point(rng, 20), m.random_point(rng, 20)
    for a, b in zip(x, y):
        if a @ b > -0.95:
            assert m.distance(a, b) == pytest.approx(_arc_length(a, b), abs=1e-6)


def test_distance_matches_geodesic_ode():
    # integrate x'' = -|x'|^2 x from x along log(x, y) / |log| for time d
    m = s2()
    rng = np.random.default_rng(5)
    for a, b in zip(m.random_point(rng, 10), m.random_point(rng, 10)):
        g = b - (a @ b) * a
        u = g / np.linalg.norm(g)
        d = m.distance(a, b)
        sol = solve_ivp(lambda t, z: np.r_[z[3:], -(z[3:] @ z[3:]) * z[:3]], (0, d), np.r_[a, u],
                        rtol=1e-11, atol=1e-12)
        assert np.linalg.norm(sol.y[:3, -1] - b) < 1e-6


@pytest.mark.parametrize("m", all_manifolds(), ids=repr)
def test_distance_symmetric_nonnegative(m):
    x, y = random_pair(m, np.random.default_rng(6))
    d = m.distance(x, y)
    assert np.all(d >= 0) and np.array_equal(d, m.distance(y, x))


def test_hyperboloid_distance_closed_form():
    m = Hyperboloid(3)
    x, y = random_pair(m, np.random.default_rng(7))
    ref = np.arccosh(np.maximum(-mf.minkowski(x, y), 1.0))
    assert np.allclose(m.distance(x, y), ref, atol=1e-7)


@pytest.mark.parametrize("m", [Sphere(3), Hyperboloid(3)], ids=repr)
def test_geodesic_constant_speed(m):
    rng = np.random.default_rng(8)
    x = m.random_point(rng, 30)
    v = m.random_tangent(rng, x)
    v /= m.norm(v)[:, None]
    t1, t2 = rng.uniform(-1.4, 1.4, (2, 30))
    d = m.distance(m.exp(x, t1[:, None] * v), m.exp(x, t2[:, None] * v))
    assert np.allclose(d, np.abs(t1 - t2), atol=1e-6)


# -- transport ------------------------------------------------------------------

def test_transport_examples():
    m = Sphere(4)
    x, y = pt(m, E[0]), pt(m, E[1])
    assert np.allclose(mf.parallel_transport(tv(x, E[2]), y).coords, E[2])
    m3 = s2()
    x, y = pt(m3, E[0, :3]), pt(m3, E[1, :3])
    assert np.allclose(mf.parallel_transport(tv(x, E[1, :3]), y).coords, -E[0, :3])
    v = tv(x, [0, 0.3, -0.2])
    assert np.allclose(mf.parallel_transport(v, x).coords, v.coords)


def test_transport_sphere_closed_form():
    m = Sphere(4)
    rng = np.random.default_rng(9)
    x, y = m.random_point(rng, 40), m.random_point(rng, 40)
    v = m.random_tangent(rng, x)
    ref = v - (np.sum(y * v, -1) / (1 + np.sum(x * y, -1)))[:, None] * (x + y)
    assert np.allclose(m.transport(x, y, v), ref, atol=1e-12)


def _transport_ode(x, y, v):
    """Transport along the great circle by integrating V' = -<V, g'> g."""
    m = Sphere(len(x))
    u = m.log(x, y)
    d = np.linalg.norm(u)
    e = u / d

    def rhs(t, V):
        g = np.cos(t) * x + np.sin(t) * e
        gp = -np.sin(t) * x + np.cos(t) * e
        return -(V @ gp) * g

    return solve_ivp(rhs, (0, d), v, rtol=1e-11, atol=1e-12).y[:, -1]


def test_transport_matches_ode():
    m = Sphere(4)
    rng = np.random.default_rng(10)
    x, y = m.random_point(rng, 8), m.random_point(rng, 8)
    v = m.random_tangent(rng, x)
    for a, b, w in zip(x, y, v):
        assert np.allclose(m.transport(a, b, w), _transport_ode(a, b, w), atol=1e-7)


@pytest.mark.parametrize("m", all_manifolds(), ids=repr)
def test_transport_isometry(m):
    rng = np.random.default_rng(11)
    x, y = random_pair(m, rng)
    u, v = m.random_tangent(rng, x), m.random_tangent(rng, x)
    Pu, Pv = m.transport(x, y, u), m.transport(x, y, v)
    assert np.allclose(m.inner(Pu, Pv), m.inner(u, v), atol=1e-8)
    assert np.max(m.tangency_residual(y, Pu)) < 1e-10


def test_transport_antipodal_uses_fallback():
    m = s2()
    x = E[0, :3]
    v = np.array([0.0, 0.4, -1.0])
    w = m.transport(x, -x, v)
    assert np.all(np.isfinite(w)) and np.isclose(np.linalg.norm(w), np.linalg.norm(v))
    assert abs(w @ -x) < 1e-12


@pytest.mark.parametrize("m", all_manifolds(), ids=repr)
def test_transport_frame(m):
    rng = np.random.default_rng(12)
    x, y = random_pair(m, rng, 20)
    F = m.frame(x)
    G = m.transport_frame(x, y, F)
    assert np.max(np.abs(m.gram(G) - np.eye(m.dim))) < 1e-8
    assert np.allclose(m.transport_frame(x, x, F), F, atol=1e-12)
    assert np.allclose(m.transport_frame(y, x, G), F, atol=1e-7)


def test_transport_frame_value_types():
    m = Sphere(4)
    x = pt(m, E[0])
    F = mf.gram_schmidt_frame(x)
    y = pt(m, m.project(np.array([1.0, 0.5, -0.2, 0.1])))
    G = mf.transport_frame(F, y)
    assert len(G) == 3 and G.base is y
    back = mf.transport_frame(G, x)
    assert np.allclose(back.vectors, F.vectors, atol=1e-7)


# -- curvature ------------------------------------------------------------------

def test_curvature_examples():
    rng = np.random.default_rng(13)
    eu = Euclidean(3)
    x = eu.random_point(rng)
    u, v, w = rng.standard_normal((3, 3))
    assert np.array_equal(eu.curvature_op(x, u, v, w), np.zeros(3))
    m = Sphere(4)
    x = m.random_point(rng)
    F = m.frame(x)
    assert m.sectional(x, F[0], F[1]) == pytest.approx(1.0, abs=1e-14)


@pytest.mark.parametrize("m", all_manifolds(), ids=repr)
def test_curvature_antisymmetry_and_bound(m):
    rng = np.random.default_rng(14)
    x = m.random_point(rng, 1000) if not isinstance(m, Hyperboloid) else m.random_point(rng, 1000, scale=1.5)
    u, v, w = (m.random_tangent(rng, x) for _ in range(3))
    assert np.allclose(m.curvature_op(x, u, v, w), -m.curvature_op(x, v, u, w), atol=1e-12)
    K = np.abs(m.sectional(x, u, v))
    assert np.all(K <= m.curvature.L_R * m.norm(u) ** 2 * m.norm(v) ** 2 * (1 + 1e-10) + 1e-12)


@pytest.mark.parametrize("m", all_manifolds(), ids=repr)
def test_ricci_matches_frame_trace(m):
    rng = np.random.default_rng(15)
    x = m.random_point(rng, 50)
    u = m.random_tangent(rng, x)
    F = m.frame(x)
    trace = sum(m.inner(m.curvature_op(x, u, F[..., i, :], F[..., i, :]), u) for i in range(m.dim))
    assert np.allclose(m.ricci(x, u), trace, atol=1e-8)


def test_ricci_examples():
    rng = np.random.default_rng(16)
    for m, want in ((Euclidean(2), 0.0), (Sphere(3), 1.0), (Hyperboloid(3), -1.0)):
        x = m.random_point(rng)
        F = m.frame(x)
        u = F[0]
        trace = sum(m.inner(m.curvature_op(x, u, F[i], F[i]), u) for i in range(m.dim))
        assert trace == pytest.approx(want, abs=1e-12)
        assert mf.ricci(mf.TangentVector(mf.Point(m, x), u)) == pytest.approx(want, abs=1e-12)


def test_curvature_op_base_mismatch():
    m = s2()
    x, y = pt(m, E[0, :3]), pt(m, E[1, :3])
    with pytest.raises(InvalidInputError):
        mf.curvature_op(tv(x, E[1, :3]), tv(x, E[2, :3]), tv(y, E[2, :3]))


# -- frames and coordinates -----------------------------------------------------

def test_gram_schmidt_examples():
    m = Sphere(4)
    F = mf.gram_schmidt_frame(pt(m, E[0])).vectors
    assert np.allclose(F, E[1:], atol=1e-15)
    rng = np.random.default_rng(17)
    for mm in all_manifolds():
        x = mm.random_point(rng, 30)
        F = mm.frame(x)
        assert np.max(np.abs(mm.gram(F) - np.eye(mm.dim))) < 1e-10
        assert np.array_equal(F, mm.frame(x.copy()))


def test_frame_rejects_non_orthonormal():
    m = s2()
    with pytest.raises(InvalidInputError):
        mf.Frame(pt(m, E[0, :3]), [[0, 1, 0], [0, 1, 0]])


@pytest.mark.parametrize("m", all_manifolds(), ids=repr)
def test_coords_combine(m):
    rng = np.random.default_rng(18)
    x = m.random_point(rng, 10)
    F = m.frame(x)
    for i in range(m.dim):
        c = np.zeros(m.dim)
        c[i] = 1
        assert np.allclose(m.combine(F, np.broadcast_to(c, (10, m.dim))), F[:, i])
    v = m.random_tangent(rng, x)
    c = m.coords(F, v)
    assert np.allclose(m.combine(F, c), v, atol=1e-10)
    assert np.allclose(np.linalg.norm(c, axis=-1), m.norm(v), atol=1e-8)
    assert np.array_equal(m.coords(F, np.zeros_like(v)), np.zeros((10, m.dim)))


def test_combine_value_type():
    m = s2()
    F = mf.gram_schmidt_frame(pt(m, E[0, :3]))
    v = mf.combine(F, [0.5, -1.0])
    assert np.allclose(mf.coords_in_frame(v, F), [0.5, -1.0])
    with pytest.raises(InvalidInputError):
        mf.combine(F, [1.0, 2.0, 3.0])
