import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.integrate import quad, solve_ivp

from u2ad.sde import MarginalParams, NoiseSchedule, beta, beta_integral, drift_diffusion, marginal_params, perturb

VP = NoiseSchedule()
SUBVP = NoiseSchedule(kind="subvp")
VE = NoiseSchedule(kind="ve")


class TestBeta:
    def test_endpoints(self):
        assert beta(VP, 0.0) == pytest.approx(0.1)
        assert beta(VP, 1.0) == pytest.approx(20.0)

    def test_midpoint_interpolation(self):
        assert beta(VP, 0.5) == pytest.approx(10.05)

    def test_ve_rejects(self):
        with pytest.raises(ValueError):
            beta(VE, 0.5)

    def test_out_of_range(self):
        with pytest.raises(ValueError):
            beta(VP, 1.5)


class TestMarginalParams:
    def test_identity_at_origin(self):
        mp = marginal_params(VP, 1e-9)
        assert mp.alpha == pytest.approx(1.0, abs=1e-8)
        assert mp.sigma == pytest.approx(0.0, abs=1e-4)

    def test_half_time_against_quadrature(self):
        # oracle: integrate beta numerically, compare closed form
        mp = marginal_params(VP, 0.5)
        integral, _ = quad(lambda s: beta(VP, s), 0.0, 0.5, epsabs=1e-13, epsrel=1e-13)
        assert beta_integral(VP, 0.5) == pytest.approx(2.5375, abs=1e-12)
        assert abs(mp.alpha - np.exp(-0.5 * integral)) <= 1e-10
        assert mp.alpha == pytest.approx(0.28123, abs=2e-4)
        assert mp.sigma == pytest.approx(0.95964, abs=2e-4)

    def test_t1_against_quadrature(self):
        mp = marginal_params(VP, 1.0)
        integral, _ = quad(lambda s: beta(VP, s), 0.0, 1.0, epsabs=1e-13, epsrel=1e-13)
        assert beta_integral(VP, 1.0) == pytest.approx(10.05, abs=1e-12)
        assert abs(mp.alpha - np.exp(-0.5 * integral)) <= 1e-10
        assert mp.alpha == pytest.approx(6.55e-3, rel=5e-3)
        assert mp.sigma == pytest.approx(0.99998, abs=1e-5)

    def test_vp_identity_many_t(self):
        rng = np.random.default_rng(0)
        t = rng.uniform(1e-6, 1.0, 1000)
        mp = marginal_params(VP, t)
        assert np.max(np.abs(mp.alpha**2 + mp.sigma**2 - 1.0)) <= 1e-12

    def test_subvp_sigma_form(self):
        mp = marginal_params(SUBVP, 0.5)
        assert mp.sigma == pytest.approx(1.0 - mp.alpha**2, abs=1e-14)

    def test_ve_geometric(self):
        mp = marginal_params(VE, 0.5)
        assert mp.alpha == 1.0
        assert mp.sigma == pytest.approx(0.01 * (50.0 / 0.01) ** 0.5)

    def test_monotone(self):
        t = np.linspace(1e-4, 1.0, 200)
        for sch in (VP, SUBVP):
            mp = marginal_params(sch, t)
            assert np.all(np.diff(mp.alpha) < 0)
            assert np.all(np.diff(mp.sigma) > 0)

    def test_rejects_t_zero(self):
        with pytest.raises(ValueError):
            marginal_params(VP, 0.0)


class TestPerturb:
    def test_zero_noise(self):
        x0 = np.ones((4, 3))
        b = perturb(VP, x0, 0.3, np.zeros_like(x0))
        assert np.allclose(b.xt, b.marginal.alpha * x0)

    def test_t1_is_noise(self):
        # x0 = 0 and t = 1: xt should be sigma * noise with sigma ~ 1
        noise = np.random.default_rng(1).standard_normal((5, 2))
        b = perturb(VP, np.zeros((5, 2)), 1.0, noise)
        assert np.allclose(b.xt, b.marginal.sigma * noise)
        assert b.marginal.sigma == pytest.approx(1.0, abs=1e-4)

    def test_near_identity_at_t_eps(self):
        # Taylor bound: with zero noise, ||xt - x0|| = (1 - alpha)||x0|| and
        # 1 - alpha ~ B(t_eps)/2 ~ 5e-7
        x0 = np.full((2, 2), 0.5)
        x0 /= np.linalg.norm(x0)
        b = perturb(VP, x0, VP.t_eps, np.zeros_like(x0))
        assert np.linalg.norm(b.xt - x0) / np.linalg.norm(x0) < 1e-3

    def test_shape_mismatch(self):
        with pytest.raises(ValueError):
            perturb(VP, np.zeros((3, 2)), 0.5, np.zeros((2, 3)))

    def test_vector_t_broadcast(self):
        x0 = np.ones((4, 6, 2))
        t = np.array([0.1, 0.2, 0.5, 1.0])
        b = perturb(VP, x0, t, np.zeros_like(x0))
        for i, ti in enumerate(t):
            assert np.allclose(b.xt[i], marginal_params(VP, ti).alpha)

    def test_monte_carlo_variance(self):
        rng = np.random.default_rng(7)
        for t in (0.25, 0.5, 1.0):
            noise = rng.standard_normal(100_000)
            b = perturb(VP, np.zeros(100_000), t, noise)
            assert b.xt.var() == pytest.approx(b.marginal.sigma**2, rel=0.02)


class TestDriftDiffusion:
    def test_vp_at_zero_state(self):
        f, g = drift_diffusion(VP, np.zeros((3, 2)), 0.5)
        assert np.all(f == 0)
        assert g == pytest.approx(np.sqrt(beta(VP, 0.5)))

    def test_ve_has_no_drift(self):
        f, g = drift_diffusion(VE, np.random.default_rng(2).standard_normal((4, 4)), 0.7)
        assert np.all(f == 0)

    def test_subvp_g_at_t1(self):
        _, g = drift_diffusion(SUBVP, np.zeros(1), 1.0)
        assert g * g == pytest.approx(20.0 * (1.0 - np.exp(-20.1)), rel=1e-12)

    def test_consistent_with_marginals(self):
        # d alpha/dt = -beta(t)/2 * alpha integrated from ~0 reproduces alpha(t)
        sol = solve_ivp(
            lambda t, a: -0.5 * beta(VP, t) * a,
            (1e-12, 1.0),
            [1.0],
            t_eval=[0.25, 0.5, 1.0],
            rtol=1e-10,
            atol=1e-12,
        )
        for t, a in zip(sol.t, sol.y[0]):
            assert abs(a - marginal_params(VP, t).alpha) < 1e-6


class TestScheduleValidation:
    def test_bad_kind(self):
        with pytest.raises(ValueError):
            NoiseSchedule(kind="ddpm")

    def test_bad_beta_order(self):
        with pytest.raises(ValueError):
            NoiseSchedule(beta_min=5.0, beta_max=1.0)

    def test_bad_t_eps(self):
        with pytest.raises(ValueError):
            NoiseSchedule(t_eps=2.0)


@settings(deadline=None, max_examples=50)
@given(st.floats(min_value=1e-5, max_value=1.0))
def test_vp_identity_property(t):
    mp = marginal_params(VP, t)
    assert abs(mp.alpha**2 + mp.sigma**2 - 1.0) <= 1e-12


@settings(deadline=None, max_examples=30)
@given(st.floats(min_value=1e-4, max_value=1.0), st.integers(min_value=0, max_value=2**32 - 1))
def test_perturb_invariant_property(t, seed):
    rng = np.random.default_rng(seed)
    x0 = rng.standard_normal((3, 2))
    noise = rng.standard_normal((3, 2))
    b = perturb(VP, x0, t, noise)
    assert np.allclose(b.xt, b.marginal.alpha * x0 + b.marginal.sigma * noise)
