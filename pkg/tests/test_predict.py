"""Posterior predictive inference: kriging, forecasting, back-transform."""

import math

import numpy as np
import pytest

from helpers import make_fixed_chain, make_grid, make_theta, nu_on_grid

from demandcast.kernel import SiteGrid
from demandcast.mcmc import ChainConfig, run_chain
from demandcast.model import PriorSpec, simulate_panel
from demandcast.predict import (
    PredictionField,
    back_transform,
    forecast_temporal,
    krige_spatial,
    smooth_series,
    write_prediction_csv,
)


def fitted_setup(seed=60, n=8, T=12, m=2, n_iter=600, n_burn=150, **theta_kw):
    grid = make_grid(n, seed=seed, extent=10.0)
    kw = dict(rho=0.4, phi=0.25, nu=nu_on_grid(0.5), sigma_eps2=0.02,
              sigma_eta2=0.4, sigma2=0.4)
    kw.update(theta_kw)
    truth = make_theta(n, T, m, seed=seed, **kw)
    panel = simulate_panel(grid, T, truth, seed=seed + 1)
    chain = run_chain(panel, PriorSpec(), ChainConfig("ar", n_iter, n_burn, seed=seed + 2))
    return panel, truth, chain


class TestKrigeSpatial:
    def test_coincident_site_matches_latent_posterior_mean(self):
        panel, truth, chain = fitted_setup(seed=61)
        idx = 2
        new = SiteGrid(("new0",), panel.grid.coords[[idx]])
        feats = panel.X[:, [idx], :]
        field = krige_spatial(chain, panel, new, feats, thin=2, seed=5)
        retained = chain.draws[::2]
        for t in range(panel.T):
            v_draws = np.array([th.V[idx, t] for th in retained])
            eps_bar = math.sqrt(np.mean([th.sigma_eps2 for th in retained]))
            target = field.mean_log[t]
            se = eps_bar / math.sqrt(len(retained))
            assert abs(target - v_draws.mean()) < 3 * se + 1e-6, f"slot {t}"

    def test_distant_site_reverts_to_trend(self):
        # all correlations vanish: the new site follows its own recursion
        # around x' beta, so with rho = 0 the predictive mean is x' beta
        n, T, m = 4, 6, 2
        grid = make_grid(n, seed=62, extent=5.0)
        theta = make_theta(n, T, m, seed=62, rho=0.0, phi=0.5, nu=0.5,
                           sigma_eps2=0.01, sigma_eta2=0.25)
        panel = simulate_panel(grid, T, theta, seed=63)
        chain = make_fixed_chain(theta, 4000)
        far = SiteGrid(("far",), np.array([[1e7, 1e7]]))
        feats = np.ones((T, 1, m))
        feats[:, 0, 1] = 0.3
        field = krige_spatial(chain, panel, far, feats, thin=1, seed=6)
        expect = feats[0, 0] @ theta.beta
        total_sd = math.sqrt(theta.sigma_eta2 + theta.sigma_eps2)
        se = total_sd / math.sqrt(field.n_samples)
        for t in range(T):
            assert abs(field.mean_log[t] - expect) < 4 * se

    def test_field_recovery_beats_constant_baseline(self):
        n = 16
        grid = make_grid(n, seed=64, extent=6.0)
        truth = make_theta(n, 15, 2, seed=64, rho=0.3, phi=0.12, nu=nu_on_grid(1.0),
                           sigma_eps2=0.01, sigma_eta2=0.8, sigma2=0.8)
        panel_full = simulate_panel(grid, 15, truth, seed=65)
        train_idx = list(range(0, n, 2))
        test_idx = list(range(1, n, 2))
        from demandcast.model import Panel

        train = Panel(
            grid=grid.subset(train_idx),
            O=panel_full.O[train_idx],
            X=panel_full.X[:, train_idx, :],
            mask=panel_full.mask[train_idx],
        )
        chain = run_chain(train, PriorSpec(), ChainConfig("ar", 800, 200, seed=66))
        new = grid.subset(test_idx)
        field = krige_spatial(chain, train, new, panel_full.X[:, test_idx, :], thin=2, seed=7)
        pred = field.mean_log
        obs = panel_full.O[test_idx].reshape(-1)
        rmse_krige = math.sqrt(np.mean((pred - obs) ** 2))
        baseline = float(np.mean(train.O))
        rmse_const = math.sqrt(np.mean((baseline - obs) ** 2))
        assert rmse_krige < rmse_const

    def test_deterministic_per_seed(self):
        panel, _, chain = fitted_setup(seed=67, n=5, T=6, n_iter=200, n_burn=50)
        new = SiteGrid(("a", "b"), np.array([[1.0, 2.0], [4.0, 1.0]]))
        feats = np.ones((panel.T, 2, panel.m))
        f1 = krige_spatial(chain, panel, new, feats, seed=9)
        f2 = krige_spatial(chain, panel, new, feats, seed=9)
        np.testing.assert_array_equal(f1.draws_log, f2.draws_log)
        f3 = krige_spatial(chain, panel, new, feats, seed=10)
        assert not np.array_equal(f1.draws_log, f3.draws_log)

    def test_t_range_subsets_slots(self):
        panel, _, chain = fitted_setup(seed=68, n=4, T=8, n_iter=120, n_burn=40)
        new = SiteGrid(("a",), np.array([[2.0, 2.0]]))
        feats = np.ones((panel.T, 1, panel.m))
        field = krige_spatial(chain, panel, new, feats, t_range=[2, 5], seed=3)
        np.testing.assert_array_equal(field.times, [2, 5])
        assert len(field.mean_log) == 2

    def test_conditional_variance_within_bounds(self):
        # kriging variance factor 1 - w^T c stays in [0, 1]: predictive sd of
        # the latent part never exceeds the field sd scale
        panel, truth, chain = fitted_setup(seed=69, n=6, T=6, n_iter=200, n_burn=50)
        new = SiteGrid(("mid",), np.array([[5.0, 5.0]]))
        feats = np.ones((panel.T, 1, panel.m))
        field = krige_spatial(chain, panel, new, feats, seed=4)
        assert not field.variance_clamped or np.all(field.sd_log >= 0)

    def test_feature_shape_validated(self):
        panel, _, chain = fitted_setup(seed=70, n=4, T=5, n_iter=80, n_burn=20)
        new = SiteGrid(("a",), np.array([[0.0, 0.0]]))
        with pytest.raises(ValueError):
            krige_spatial(chain, panel, new, np.ones((panel.T, 2, panel.m)))


class TestForecastTemporal:
    def test_zero_rho_forecast_mean_is_trend(self):
        n, T, m = 3, 5, 2
        grid = make_grid(n, seed=71)
        theta = make_theta(n, T, m, seed=71, rho=0.0, sigma_eps2=0.01, sigma_eta2=0.09)
        panel = simulate_panel(grid, T, theta, seed=72)
        chain = make_fixed_chain(theta, 5000)
        horizon = 3
        ff = np.ones((horizon, n, m))
        ff[:, :, 1] = 0.5
        field = forecast_temporal(chain, panel, ff, horizon, thin=1, seed=8)
        expect = ff[0, 0] @ theta.beta
        se = math.sqrt(theta.sigma_eta2 + theta.sigma_eps2) / math.sqrt(field.n_samples)
        for i in range(len(field.mean_log)):
            assert abs(field.mean_log[i] - expect) < 4 * se

    def test_one_step_mean_analytic(self):
        n, T, m = 3, 5, 2
        grid = make_grid(n, seed=73)
        theta = make_theta(n, T, m, seed=73, rho=0.6, sigma_eps2=0.01, sigma_eta2=0.09)
        panel = simulate_panel(grid, T, theta, seed=74)
        chain = make_fixed_chain(theta, 5000)
        ff = np.ones((1, n, m))
        ff[:, :, 1] = -0.2
        field = forecast_temporal(chain, panel, ff, 1, thin=1, seed=9)
        expect = theta.rho * theta.V[:, -1] + ff[0] @ theta.beta
        se = math.sqrt(theta.sigma_eta2 + theta.sigma_eps2) / math.sqrt(field.n_samples)
        for i, sid in enumerate(panel.grid.ids):
            got = field.mean_log[list(field.site_ids).index(sid)]
            assert abs(got - expect[i]) < 4 * se

    def test_variance_recursion(self):
        # sd_k must track sqrt(sigma_eta^2 (1 - rho^{2k}) / (1 - rho^2) +
        # sigma_eps^2) and is nondecreasing in k for rho >= 0
        n, T, m = 2, 4, 1
        grid = make_grid(n, seed=75)
        theta = make_theta(n, T, m, seed=75, rho=0.7, sigma_eps2=0.05, sigma_eta2=0.5)
        theta.beta = np.array([0.3])
        panel = simulate_panel(grid, T, theta, seed=76)
        chain = make_fixed_chain(theta, 8000)
        horizon = 5
        ff = np.ones((horizon, n, m))
        field = forecast_temporal(chain, panel, ff, horizon, thin=1, seed=10)
        analytic = []
        var_v = 0.0
        for k in range(horizon):
            var_v = theta.rho**2 * var_v + theta.sigma_eta2
            analytic.append(math.sqrt(var_v + theta.sigma_eps2))
        assert all(b >= a for a, b in zip(analytic, analytic[1:]))
        for i in range(n):
            sds = field.sd_log[i * horizon:(i + 1) * horizon]
            np.testing.assert_allclose(sds, analytic, rtol=0.06)

    def test_horizon_zero_empty(self):
        panel, _, chain = fitted_setup(seed=77, n=3, T=4, n_iter=60, n_burn=10)
        field = forecast_temporal(chain, panel, np.zeros((0, 3, panel.m)), 0)
        assert len(field.mean_log) == 0

    def test_deterministic(self):
        panel, _, chain = fitted_setup(seed=78, n=3, T=4, n_iter=60, n_burn=10)
        ff = np.ones((2, 3, panel.m))
        f1 = forecast_temporal(chain, panel, ff, 2, seed=4)
        f2 = forecast_temporal(chain, panel, ff, 2, seed=4)
        np.testing.assert_array_equal(f1.draws_log, f2.draws_log)


class TestBackTransform:
    def field_from_draws(self, draws):
        draws = np.asarray(draws, dtype=float)
        n = draws.shape[0]
        zeros = np.zeros(n)
        f = PredictionField(
            site_ids=tuple(f"s{i}" for i in range(n)),
            coords=np.zeros((n, 2)),
            times=np.zeros(n, int),
            mean_log=zeros, sd_log=zeros, mean_orig=zeros, sd_orig=zeros,
            n_samples=draws.shape[1], draws_log=draws,
        )
        return back_transform(f)

    def test_constant_draws(self):
        c = 1.7
        f = self.field_from_draws([[c, c, c]])
        assert f.mean_orig[0] == pytest.approx(math.exp(c) - 1.0, rel=1e-12)
        assert f.sd_orig[0] == 0.0

    def test_zero_ln2_draws(self):
        f = self.field_from_draws([[0.0, math.log(2.0)]])
        assert f.mean_orig[0] == pytest.approx(0.5, rel=1e-12)

    def test_negative_draws_clip_to_zero(self):
        f = self.field_from_draws([[-5.0, -2.0]])
        assert f.mean_orig[0] == 0.0

    def test_jensen_gap(self):
        rng = np.random.default_rng(80)
        draws = rng.normal(0.5, 0.8, size=(5, 4000))
        f = self.field_from_draws(draws)
        for i in range(5):
            assert f.mean_orig[i] >= math.exp(f.mean_log[i]) - 1.0

    def test_missing_draws_rejected(self):
        f = self.field_from_draws([[0.0, 1.0]])
        f = PredictionField(**{**f.__dict__, "draws_log": None})
        with pytest.raises(ValueError):
            back_transform(f)


class TestSmoothSeries:
    def test_constant_unchanged(self):
        out = smooth_series(np.full(30, 2.5), sd=2.0)
        np.testing.assert_allclose(out, 2.5, rtol=1e-12)

    def test_impulse_center_weight(self):
        n = 41
        x = np.zeros(n)
        x[20] = 1.0
        out = smooth_series(x, sd=2.0)
        radius = int(math.ceil(8.0))
        offsets = np.arange(-radius, radius + 1)
        kernel = np.exp(-0.5 * (offsets / 2.0) ** 2)
        assert out[20] == pytest.approx(kernel[radius] / kernel.sum(), rel=1e-12)

    def test_mass_preserved_away_from_boundaries(self):
        # zero-pad by two kernel radii: every contributing point then sits in
        # the un-renormalized interior and total mass is conserved exactly
        rng = np.random.default_rng(81)
        x = rng.uniform(0, 3, 60)
        sd = 2.0
        radius = int(math.ceil(4 * sd))
        padded = np.concatenate([np.zeros(2 * radius), x, np.zeros(2 * radius)])
        out = smooth_series(padded, sd=sd)
        assert np.sum(out) == pytest.approx(np.sum(x), rel=1e-9)

    def test_length_preserved(self):
        assert smooth_series(np.arange(7.0), sd=1.0).shape == (7,)

    def test_bad_sd(self):
        with pytest.raises(ValueError):
            smooth_series(np.arange(3.0), sd=0.0)


def test_prediction_csv_roundtrip(tmp_path):
    panel_seed = 82
    grid = make_grid(3, seed=panel_seed)
    theta = make_theta(3, 4, 2, seed=panel_seed, nu=nu_on_grid(0.5))
    panel = simulate_panel(grid, 4, theta, seed=panel_seed + 1)
    chain = run_chain(panel, PriorSpec(), ChainConfig("ar", 40, 10, seed=1))
    new = SiteGrid(("a",), np.array([[1.0, 1.0]]))
    field = krige_spatial(chain, panel, new, np.ones((4, 1, 2)), seed=2)
    p1 = tmp_path / "pred.csv"
    p2 = tmp_path / "pred2.csv"
    write_prediction_csv(field, p1)
    write_prediction_csv(field, p2)
    assert p1.read_bytes() == p2.read_bytes()
    lines = p1.read_text().splitlines()
    assert lines[0] == "site_id,x_m,y_m,t,mean_log,sd_log,mean,sd"
    assert len(lines) == 1 + 4
