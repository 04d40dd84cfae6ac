import numpy as np
import pytest

from u2ad.sde import NoiseSchedule, marginal_params, perturb
from u2ad.solver import SolverConfig, SolverError, integrate_reverse, ode_rhs, reconstruct

VP = NoiseSchedule()


def std_normal_score(x, t):
    """Analytic score of the VP marginal for unit-variance data: stays -x."""
    mp = marginal_params(VP, t)
    return -x / (mp.alpha**2 + mp.sigma**2)


def gaussian_marginal_score(mu, sd):
    def fn(x, t):
        mp = marginal_params(VP, t)
        var = mp.alpha**2 * sd**2 + mp.sigma**2
        return -(x - mp.alpha * mu) / var

    return fn


class TestOdeRhs:
    def test_stationary_prior(self):
        x = np.random.default_rng(0).standard_normal((4, 2))
        rhs = ode_rhs(x, 0.5, lambda y, t: -y, VP)
        assert np.allclose(rhs, 0.0, atol=1e-12)

    def test_zero_score_pure_contraction(self):
        x = np.ones((3, 2))
        rhs = ode_rhs(x, 0.5, lambda y, t: np.zeros_like(y), VP)
        from u2ad.sde import beta

        assert np.allclose(rhs, -0.5 * beta(VP, 0.5) * x)

    def test_ve_gaussian_growth(self):
        ve = NoiseSchedule(kind="ve")

        def score(y, t):
            return -y / marginal_params(ve, t).sigma ** 2

        x = np.array([[2.0]])
        t = 0.6
        sig2 = marginal_params(ve, t).sigma ** 2
        dsig2_dt = sig2 * 2.0 * np.log(ve.sigma_max / ve.sigma_min)
        rhs = ode_rhs(x, t, score, ve)
        assert rhs[0, 0] == pytest.approx(0.5 * dsig2_dt * x[0, 0] / sig2, rel=1e-10)

    def test_nonfinite_score_rejected(self):
        with pytest.raises(SolverError):
            ode_rhs(np.ones((2, 2)), 0.5, lambda y, t: np.full_like(y, np.nan), VP)


class TestIntegrateReverse:
    def test_stationarity_monte_carlo(self):
        rng = np.random.default_rng(1)
        x1 = rng.standard_normal(20_000)
        cfg = SolverConfig(t_rec=1.0, t_end=1e-3)
        x_end, n_steps = integrate_reverse(x1, 1.0, std_normal_score, VP, cfg)
        assert n_steps > 0
        assert x_end.mean() == pytest.approx(0.0, abs=0.02)
        assert x_end.var() == pytest.approx(1.0, rel=0.02)

    def test_noop_interval(self):
        rng = np.random.default_rng(2)
        x0 = 5.0 + 0.1 * rng.standard_normal((50, 4, 1))
        cfg = SolverConfig(t_rec=0.5, t_end=0.5 - 1e-9)
        b = perturb(VP, x0, 0.5, rng.standard_normal(x0.shape))
        x_end, _ = integrate_reverse(b.xt, 0.5, gaussian_marginal_score(5.0, 0.1), VP, cfg)
        assert np.abs(x_end - b.xt).max() < cfg.atol * 10

    def test_max_steps_enforced(self):
        cfg = SolverConfig(t_rec=1.0, t_end=1e-3, max_steps=2)
        with pytest.raises(SolverError, match="steps"):
            integrate_reverse(np.ones(10), 1.0, std_normal_score, VP, cfg)

    def test_tolerance_monotonicity(self):
        rng = np.random.default_rng(3)
        x0 = 5.0 + 0.1 * rng.standard_normal((20, 8, 1))
        noise = rng.standard_normal(x0.shape)
        b = perturb(VP, x0, 0.5, noise)
        score = gaussian_marginal_score(5.0, 0.1)
        loose = SolverConfig(t_rec=0.5, t_end=1e-3, rtol=1e-5, atol=1e-5)
        tight = SolverConfig(t_rec=0.5, t_end=1e-3, rtol=1e-6, atol=1e-6)
        x_loose, n_loose = integrate_reverse(b.xt, 0.5, score, VP, loose)
        x_tight, _ = integrate_reverse(b.xt, 0.5, score, VP, tight)
        scale = np.abs(x_tight).max()
        bound = n_loose * (loose.atol + loose.rtol * scale)
        assert np.abs(x_loose - x_tight).max() < bound


class TestReconstruct:
    def test_inverts_perturb_on_gaussian(self):
        rng = np.random.default_rng(4)
        mu, sd = 5.0, 0.1
        x0 = mu + sd * rng.standard_normal((500, 8, 1))
        cfg = SolverConfig(t_rec=0.5, t_end=1e-3)
        x_hat, _ = reconstruct(x0, gaussian_marginal_score(mu, sd), VP, cfg, rng=np.random.default_rng(5))
        rel = np.linalg.norm(x_hat - x0) / np.linalg.norm(x0)
        assert rel <= 0.05

    def test_inverts_at_lower_t_rec(self):
        rng = np.random.default_rng(6)
        mu, sd = 5.0, 0.1
        x0 = mu + sd * rng.standard_normal((500, 8, 1))
        cfg = SolverConfig(t_rec=0.25, t_end=1e-3)
        x_hat, _ = reconstruct(x0, gaussian_marginal_score(mu, sd), VP, cfg, rng=np.random.default_rng(7))
        assert np.linalg.norm(x_hat - x0) / np.linalg.norm(x0) <= 0.05

    def test_deterministic_given_seed(self):
        x0 = np.random.default_rng(8).standard_normal((10, 4, 2))
        cfg = SolverConfig(t_rec=0.4, t_end=1e-3)
        a, _ = reconstruct(x0, std_normal_score, VP, cfg, rng=np.random.default_rng(42))
        b, _ = reconstruct(x0, std_normal_score, VP, cfg, rng=np.random.default_rng(42))
        assert np.array_equal(a, b)

    def test_outliers_reconstruct_worse(self):
        # in-distribution points come back closer than 5-sigma outliers
        rng = np.random.default_rng(9)
        mu, sd = 5.0, 0.1
        score = gaussian_marginal_score(mu, sd)
        cfg = SolverConfig(t_rec=0.5, t_end=1e-3)
        wins = 0
        trials = 200
        for i in range(trials):
            inlier = np.full((1, 1), mu + sd * rng.standard_normal())
            outlier = np.full((1, 1), mu + 5 * sd * (1 + rng.random()))
            noise = rng.standard_normal((1, 1))
            xh_in, _ = reconstruct(inlier, score, VP, cfg, noise=noise)
            xh_out, _ = reconstruct(outlier, score, VP, cfg, noise=noise)
            if abs(xh_out - outlier) > abs(xh_in - inlier):
                wins += 1
        assert wins / trials >= 0.95

    def test_rejects_nonfinite_input(self):
        cfg = SolverConfig()
        with pytest.raises(ValueError):
            reconstruct(np.array([[np.nan]]), std_normal_score, VP, cfg, rng=np.random.default_rng(0))


class TestSolverConfig:
    def test_order(self):
        with pytest.raises(ValueError):
            SolverConfig(t_rec=0.1, t_end=0.2)

    def test_positive_tols(self):
        with pytest.raises(ValueError):
            SolverConfig(rtol=0.0)

    def test_defaults(self):
        cfg = SolverConfig()
        assert (cfg.t_rec, cfg.t_end, cfg.rtol, cfg.atol, cfg.max_steps) == (0.5, 1e-3, 1e-5, 1e-5, 10000)
