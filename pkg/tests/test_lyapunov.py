import numpy as np
import pytest
from scipy.integrate import solve_ivp

from geolangevin.lyapunov import (
    LyapunovFunction, LyapunovParams, check_f_properties, check_third_derivative, mixing_alpha,
    mu, psi, sample_admissible,
)


def ode_oracle(p: LyapunovParams, r_grid):
    """f on r_grid by integrating (I, Psi, G, f) as one ODE system, twice."""
    b = p.R + p.epsilon

    def m(r):
        if p.epsilon == 0:
            return 1.0 if r <= p.R else 0.0
        return min(max(1.0 - (r - p.R) / p.epsilon, 0.0), 1.0)

    def rhs(r, z, g_inf):
        I, Psi, G, _ = z
        ps = np.exp(-0.5 * p.L * I)
        nu = 1.0 - G / (2 * g_inf) if g_inf else 1.0
        return [r * m(r), ps, m(r) * Psi / ps, ps * nu]

    opts = dict(rtol=1e-12, atol=1e-14, max_step=b / 200)
    g_inf = solve_ivp(rhs, (0, b), [0, 0, 0, 0], args=(None,), **opts).y[2, -1]
    inside = r_grid[r_grid < b]
    sol = solve_ivp(rhs, (0, b), [0, 0, 0, 0], args=(g_inf,), t_eval=np.r_[inside, b], **opts)
    f_in, (I_b, f_b) = sol.y[3, :-1], sol.y[[0, 3], -1]
    return np.r_[f_in, f_b + 0.5 * np.exp(-0.5 * p.L * I_b) * (r_grid[r_grid >= b] - b)]


def test_L_zero_building_blocks():
    p = LyapunovParams(0.0, 1.0, 0.0)
    lf = LyapunovFunction(p)
    r = np.linspace(0, 3, 31)
    assert np.allclose(lf.psi(r), 1.0)
    assert np.allclose(lf.Psi(r), r, atol=1e-12)


def test_psi_closed_form_inside():
    p = LyapunovParams(2.0, 1.5, 0.0)
    r = np.linspace(0, 1.5, 20)
    assert np.allclose(psi(p, r), np.exp(-2.0 * r**2 / 4), rtol=1e-14)


def test_mu_cutoff():
    p = LyapunovParams(1.0, 1.0, 0.2)
    assert mu(p, 0.5) == 1.0 and mu(p, 1.1) == pytest.approx(0.5) and mu(p, 1.3) == 0.0


def test_nu_endpoints_and_monotone():
    lf = LyapunovFunction(LyapunovParams(3.0, 1.2, 0.1))
    assert lf.nu(0.0) == 1.0
    assert lf.nu(50.0) == pytest.approx(0.5, abs=1e-12)
    v = lf.nu(np.linspace(0, 3, 300))
    assert np.all(np.diff(v) <= 1e-15) and np.all((v >= 0.5 - 1e-12) & (v <= 1))


def test_f_spot_value():
    lf = LyapunovFunction(LyapunovParams(0.0, 1.0, 0.0))
    assert lf.f(1.0) == pytest.approx(5 / 6, abs=1e-9)
    r = np.linspace(0, 1, 11)
    assert np.allclose(lf.f(r), r - r**3 / 6, atol=1e-9)
    assert lf.f(0.0) == 0.0 and lf.f_prime(0.0) == 1.0


@pytest.mark.parametrize("L,R,eps", [(1.0, 1.0, 0.0), (4.0, 0.8, 0.1), (0.5, 2.0, 0.3), (10.0, 0.5, 0.05)])
def test_f_matches_ode_oracle(L, R, eps):
    p = LyapunovParams(L, R, eps)
    r = np.linspace(0, 2 * (R + eps) + 1, 57)
    assert np.allclose(LyapunovFunction(p).f(r), ode_oracle(p, r), atol=1e-8)


def test_f_prime_and_second_consistency():
    lf = LyapunovFunction(LyapunovParams(2.0, 1.0, 0.15))
    r = np.linspace(0.05, 2.5, 40)
    h = 1e-5
    fd = (lf.f(r + h) - lf.f(r - h)) / (2 * h)
    assert np.allclose(fd, lf.f_prime(r), atol=1e-7)
    smooth = (np.abs(r - 1.0) > 0.02) & (np.abs(r - 1.15) > 0.02)
    assert np.allclose(lf.f_second_fd(r)[smooth], lf.f_second(r)[smooth], atol=1e-6)


def test_g_relations():
    eps = 0.05
    lf = LyapunovFunction(LyapunovParams(1.0, 1.0, eps))
    s = np.linspace(0.1, 4, 20)
    assert np.allclose(lf.g(s), lf.f(np.sqrt(s + eps)))
    h = 1e-5
    fd = (lf.g(s + h) - lf.g(s - h)) / (2 * h)
    assert np.all(np.abs(fd - lf.g_prime(s)) <= 1e-5 * np.abs(lf.g_prime(s)))
    assert np.all(np.diff(lf.g(np.linspace(0, 5, 200))) >= 0)
    lf0 = LyapunovFunction(LyapunovParams(1.0, 1.0, 0.0))
    r = np.linspace(0, 2, 9)
    assert np.allclose(lf0.g(r**2), lf0.f(r))


def test_properties_L_zero():
    # f'' = -r inside, so only the curvature-scaled lower bound can fail
    rep = check_f_properties(LyapunovParams(0.0, 1.0, 0.0))
    assert rep.failures() == ["fpp_lower"]
    assert rep.slack["fpp_lower"] == pytest.approx(-1.0, abs=0.01)


def test_property_four_at_zero():
    p = LyapunovParams(2.0, 1.0, 0.0)
    rep = check_f_properties(p, grid=np.array([0.0, 0.5]))
    assert rep.slack["contraction"] >= -1e-6


def test_random_admissible_configs_pass():
    rng = np.random.default_rng(0)
    for _ in range(50):
        p = sample_admissible(rng)
        rep = check_f_properties(p)
        assert rep.passed, (p, rep.failures())


def test_failure_regions_are_real():
    """Small L with large R breaks the second-derivative bound, and the
    contraction inequality with coefficient L instead of L/2 fails for
    small R."""
    rep = check_f_properties(LyapunovParams(0.01, 3.0, 0.0))
    assert "fpp_lower" in rep.failures()
    L = 4.0
    rep = check_f_properties(LyapunovParams(L, 0.3 / np.sqrt(2 * L), 0.0))
    assert rep.passed
    assert rep.info["contraction_full_L"] < 0


def test_full_L_variant_reported():
    rep = check_f_properties(LyapunovParams(4.0, 1.0, 0.0))
    assert "contraction_full_L" in rep.info


def test_third_derivative_bound():
    p = LyapunovParams(2.0, 1.0, 0.15)
    assert check_third_derivative(p, np.linspace(0.01, 2.0, 200)) >= 0
    with pytest.raises(ValueError):
        check_third_derivative(LyapunovParams(2.0, 1.0, 0.0), [0.5])


def test_quadrature_tolerance_convergence():
    p = LyapunovParams(5.0, 1.3, 0.1)
    r = np.linspace(0, 4, 200)
    a, b = LyapunovFunction(p, tol=1e-9).f(r), LyapunovFunction(p, tol=5e-10).f(r)
    assert np.max(np.abs(a - b)) <= 1e-8


def test_epsilon_continuity():
    r = np.linspace(0, 3, 100)
    f0 = LyapunovFunction(LyapunovParams(2.0, 1.0, 0.0)).f(r)
    gaps = []
    for eps in (0.08, 0.04, 0.02, 0.01):
        gaps.append(np.max(np.abs(LyapunovFunction(LyapunovParams(2.0, 1.0, eps)).f(r) - f0)) / eps)
    assert np.all(np.isfinite(gaps)) and max(gaps) < 10 * min(gaps) + 1


def test_params_validation():
    with pytest.raises(ValueError):
        LyapunovParams(4.0, 1.0, 0.5)
    with pytest.raises(ValueError):
        LyapunovParams(-1.0, 1.0)


def test_mixing_alpha():
    assert mixing_alpha(2.0, 0.0, 0.0, 0.0) == pytest.approx(2.0 / 16)
    # the c = 2m form: (c - L_Ric)/32
    c, L_Ric = 3.0, 1.0
    assert mixing_alpha(c / 2, L_Ric, -L_Ric / 2, 0.0) == pytest.approx((c - L_Ric) / 32)
    assert mixing_alpha(16.5, 1.0, -0.5, 1.0) == pytest.approx(0.5)
    a1 = mixing_alpha(100.0, 1.0, -0.5, 2.0)
    a2 = mixing_alpha(100.0, 1.0, -0.5, 4.0)
    assert a2 == pytest.approx(a1 / 4)
    with pytest.raises(ValueError):
        mixing_alpha(0.1, 1.0, 0.0, 1.0)
