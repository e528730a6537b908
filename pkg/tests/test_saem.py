import warnings

import numpy as np
import pytest
from helpers import grid_tau, numeric_alpha_sigma2, numeric_sigma, random_stats
from scipy import optimize

from saemreg.errors import NumericalError, ParameterError
from saemreg.model import Curve, Dataset, Effects, SufficientStats, loglik_from_stats, sample_dirichlet, simulate, suff_stats
from saemreg.saem import (
    FitResult,
    SaemConfig,
    _tau_grad,
    fit,
    init_params,
    m_step,
    newton_tau,
    predict,
    sa_update,
    step_size,
)
from saemreg.splines import eval_basis, eval_spline, make_basis

QUICK = SaemConfig(burn_in=150, total_iters=400, seed=3)


@pytest.fixture(scope="module")
def quick_fit(shape1):
    params, bf, bh = shape1
    ds, eff = simulate(params, bf, bh, 8, 40, seed=2)
    return ds, eff, fit(ds, bf, bh, QUICK)


class TestSchedule:
    def test_examples(self):
        assert step_size(3, 10, 0.75) == 1.0
        assert step_size(11, 10, 0.6) == 1.0
        assert step_size(16 + 10, 10, 0.75) == pytest.approx(0.125, rel=1e-15)
        with pytest.raises(ValueError):
            step_size(0, 10, 0.75)

    @pytest.mark.parametrize("B,alpha", [(0, 0.51), (5, 0.75), (100, 1.0)])
    def test_conditions(self, B, alpha):
        g = np.array([step_size(k, B, alpha) for k in range(1, 200_001)])
        assert np.all((g >= 0) & (g <= 1))
        # partial sums of gamma keep growing; partial sums of gamma^2 level off
        s1 = np.cumsum(g)
        s2 = np.cumsum(g**2)
        assert s1[-1] - s1[100_000] > 0.25 * (s1[100_000] - s1[50_000])
        assert s2[-1] - s2[100_000] < 0.5 * (s2[100_000] - s2[B + 1] + 1e-300) or alpha < 0.55

    def test_sa_update(self):
        old = SufficientStats.zeros(3, 4)
        new = old.map(lambda x: x + 4.0)
        old = old.map(lambda x: x + 2.0)
        mid = sa_update(old, new, 0.5)
        assert mid.S_yy == 3.0 and np.all(mid.S_BB == 3.0)
        assert sa_update(old, new, 1.0).S_yy == 4.0
        assert sa_update(old, new, 0.0).S_yy == 2.0
        with pytest.raises(ValueError):
            sa_update(old, new, 1.5)


class TestMStep:
    def test_self_consistent_recovery(self, shape1):
        params, bf, bh = shape1
        q = params.copy(sigma2=0.0)
        ds, eff = simulate(q, bf, bh, 6, 30, seed=0)
        s = suff_stats(ds, eff, bf, bh)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", RuntimeWarning)
            out = m_step(s, ds.n_tot, len(ds), params.kappa0, 10.0)
        np.testing.assert_allclose(out.alpha, params.alpha, rtol=1e-10, atol=1e-9)

    def test_sigma_definition(self):
        s, n_tot, N, k0 = random_stats(0)
        Sigma = np.array([[4.0, 0.3], [0.3, 0.2]])
        s = SufficientStats(s.S_yy, s.S_By, s.S_BB, N * Sigma, s.S_w)
        np.testing.assert_allclose(m_step(s, n_tot, N, k0, 1.0).Sigma, Sigma, rtol=1e-14)

    @pytest.mark.parametrize("seed", range(8))
    def test_numeric_oracle(self, seed):
        s, n_tot, N, k0 = random_stats(seed)
        p = m_step(s, n_tot, N, k0, 1.0)
        alpha, sigma2 = numeric_alpha_sigma2(s, n_tot)
        np.testing.assert_allclose(alpha, p.alpha, rtol=1e-6, atol=1e-6 * np.abs(p.alpha).max())
        assert sigma2 == pytest.approx(p.sigma2, rel=1e-6)
        np.testing.assert_allclose(numeric_sigma(s, N), p.Sigma, rtol=1e-6, atol=1e-6 * np.abs(p.Sigma).max())

    @pytest.mark.parametrize("seed", range(4))
    def test_no_local_improvement(self, seed):
        s, n_tot, N, k0 = random_stats(seed)
        p = m_step(s, n_tot, N, k0, 1.0)
        q0 = sum(loglik_from_stats(p, s, n_tot, N).values())

        def neg(v):
            q = p.copy(alpha=p.alpha + v[:-2], sigma2=p.sigma2 * np.exp(v[-2]), tau=p.tau * np.exp(v[-1]))
            return -sum(loglik_from_stats(q, s, n_tot, N).values())

        res = optimize.minimize(neg, np.zeros(p.alpha.size + 2), method="Nelder-Mead", options={"maxiter": 2000})
        assert -res.fun - q0 < 1e-8 * max(1.0, abs(q0))

    def test_singular_basis_ridge(self):
        s, n_tot, N, k0 = random_stats(1)
        # every observation inside the first knot span leaves later coefficients undetermined
        B = eval_basis(make_basis(6), np.linspace(0, 0.2, 30))
        s = SufficientStats(s.S_yy, B.T @ np.ones(30), B.T @ B, s.S_a, s.S_w)
        with pytest.warns(RuntimeWarning, match="singular"):
            out = m_step(s, n_tot, N, k0, 1.0)
        assert np.all(np.isfinite(out.alpha))


class TestNewtonTau:
    def test_consistency(self, shape1):
        params, _, _ = shape1
        w = sample_dirichlet(np.random.default_rng(0), 10 * params.kappa0, 10_000)
        tau = newton_tau(np.log(w).sum(axis=0), params.kappa0, 10_000, tau_init=1.0)
        assert tau == pytest.approx(10.0, rel=0.05)

    @pytest.mark.parametrize("seed", range(6))
    def test_grid_oracle_and_stationarity(self, seed):
        s, n_tot, N, k0 = random_stats(seed)
        tau = newton_tau(s.S_w, k0, N, tau_init=float(np.random.default_rng(seed).uniform(0.1, 100)))
        ref, res = grid_tau(s, k0, N)
        assert abs(np.log(tau / ref)) <= res
        assert abs(_tau_grad(tau, s.S_w, k0, N)) < 1e-8 * max(1.0, N)

    def test_unbounded(self, shape1):
        params, _, _ = shape1
        S_w = 5 * np.log(params.kappa0)  # five identical draws at the mean
        with pytest.raises(NumericalError):
            newton_tau(S_w, params.kappa0, 5)
        assert newton_tau(S_w, params.kappa0, 5, tau_max=1e6) == 1e6


class TestInit:
    def test_no_variation(self, shape1):
        params, bf, bh = shape1
        q = params.copy(Sigma=np.zeros((2, 2)), tau=1e9)
        ds, _ = simulate(q, bf, bh, 10, 50, seed=1)
        p0 = init_params(ds, bf, bh)
        # noise-level error: coefficient standard errors of the pooled regression
        B = eval_basis(bf, np.concatenate([c.ts for c in ds.curves]))
        se = np.sqrt(params.sigma2 * np.diag(np.linalg.inv(B.T @ B)))
        assert np.all(np.abs(p0.alpha - params.alpha) < 5 * se)
        assert p0.sigma2 > 0 and p0.tau == 6.0
        np.testing.assert_allclose(p0.Sigma, np.diag([p0.sigma2, 0.01]))

    def test_too_little_data(self, shape1):
        _, bf, bh = shape1
        ds = Dataset((Curve("x", np.array([0.0, 0.5, 1.0]), np.zeros(3)),))
        with pytest.raises(ParameterError):
            init_params(ds, bf, bh)


class TestConfig:
    @pytest.mark.parametrize(
        "kw", [dict(burn_in=10, total_iters=10), dict(alpha=0.5), dict(alpha=1.2), dict(n_inner=0), dict(pred_grid=1)]
    )
    def test_invalid(self, kw):
        with pytest.raises(ParameterError):
            SaemConfig(**kw).validate()

    def test_round_trip(self):
        c = SaemConfig(burn_in=3, total_iters=9, alpha=0.9)
        assert SaemConfig.from_dict(c.to_dict()) == c


class TestFit:
    def test_degenerate_identical_curves(self, shape1):
        params, bf, bh = shape1
        ts = np.linspace(0, 1, 50)
        y = eval_spline(bf, params.alpha, ts) + np.random.default_rng(0).normal(0, 5, 50)
        ds = Dataset(tuple(Curve(f"c{i}", ts, y) for i in range(10)))
        B = eval_basis(bf, ts)
        ls = np.linalg.lstsq(B, y, rcond=None)[0]
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", RuntimeWarning)
            r = fit(ds, bf, bh, SaemConfig(burn_in=300, total_iters=800, seed=0))
        assert np.max(np.abs(r.theta.alpha - ls)) < 1e-3 * np.max(np.abs(ls))

    def test_result_invariants(self, quick_fit):
        ds, _, r = quick_fit
        r.theta.validate()
        np.testing.assert_allclose(r.w_hat.sum(axis=1), 1.0, atol=1e-12)
        assert np.all(r.w_hat > 0)
        assert r.trajectory["alpha"].shape == (QUICK.total_iters, 5)
        assert np.all((r.acceptance_rate >= 0) & (r.acceptance_rate <= 1))

    def test_trajectory_settles(self, quick_fit):
        _, _, r = quick_fit
        steps = np.abs(np.diff(r.trajectory["alpha"], axis=0)).max(axis=1)
        B = QUICK.burn_in
        assert steps[-50:].max() < steps[B - 50 : B].max()

    def test_prediction(self, quick_fit):
        ds, _, r = quick_fit
        grid = np.linspace(0, 1, 501)
        for cid in ds.ids:
            y_hat, h_hat = predict(r, cid, grid)
            assert h_hat[0] == 0.0 and h_hat[-1] == 1.0
            assert np.all(np.diff(h_hat) > 0)
            assert np.all(np.isfinite(y_hat))
        with pytest.raises(KeyError):
            predict(r, "nope", grid)

    def test_better_than_start_on_noiseless_data(self, shape1):
        params, bf, bh = shape1
        ds, eff = simulate(params.copy(sigma2=1e-2), bf, bh, 6, 50, seed=4)
        r = fit(ds, bf, bh, SaemConfig(burn_in=300, total_iters=800, seed=1))
        p0 = init_params(ds, bf, bh)
        rss0 = sum(np.sum((c.ys - eval_spline(bf, p0.alpha, c.ts)) ** 2) for c in ds.curves)
        rss = sum(np.sum((c.ys - predict(r, c.id, c.ts)[0]) ** 2) for c in ds.curves)
        assert rss < rss0

    def test_deterministic_and_serialisable(self, shape1, quick_fit):
        ds, _, r = quick_fit
        params, bf, bh = shape1
        again = fit(ds, bf, bh, QUICK)
        assert again.theta.to_dict() == r.theta.to_dict()
        back = FitResult.from_dict(r.to_dict())
        np.testing.assert_array_equal(back.w_hat, r.w_hat)
        np.testing.assert_array_equal(predict(back, ds.ids[0], [0.3])[0], predict(r, ds.ids[0], [0.3])[0])

    def test_non_finite_parameters(self, shape1, monkeypatch):
        import saemreg.saem as saem

        params, bf, bh = shape1
        ds, _ = simulate(params, bf, bh, 3, 20, seed=0)
        real = saem.m_step

        def broken(*a, **k):
            p = real(*a, **k)
            p.alpha = p.alpha * np.nan
            return p

        monkeypatch.setattr(saem, "m_step", broken)
        with pytest.raises(NumericalError, match="iteration 1"):
            fit(ds, bf, bh, QUICK)
