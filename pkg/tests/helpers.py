"""Shared builders and oracles for the test suite."""

import math

import numpy as np

from demandcast import mcmc
from demandcast.kernel import SiteGrid, correlation_matrix
from demandcast.model import (
    Panel,
    Theta,
    default_nu_grid,
    log_joint_posterior_ar,
    log_joint_posterior_gp,
    simulate_panel,
)


def make_grid(n, seed=0, extent=10.0):
    rng = np.random.default_rng(seed)
    coords = rng.uniform(0.0, extent, size=(n, 2))
    return SiteGrid(tuple(f"s{i}" for i in range(n)), coords)


def make_theta(n, T, m, seed=0, **overrides):
    rng = np.random.default_rng(seed)
    params = dict(
        beta=rng.normal(0.0, 1.0, size=m),
        rho=0.4,
        sigma_eps2=0.3,
        sigma_eta2=0.8,
        phi=0.25,
        nu=0.5,
        mu=rng.normal(0.0, 1.0, size=n),
        sigma2=1.1,
        V=rng.normal(0.0, 1.0, size=(n, T)),
        V0=rng.normal(0.0, 1.0, size=n),
    )
    params.update(overrides)
    return Theta(**params)


def nu_on_grid(value=0.5):
    grid = default_nu_grid()
    return float(grid[np.argmin(np.abs(grid - value))])


def small_panel(n=2, T=3, m=2, seed=0, mask=None, model="ar"):
    grid = make_grid(n, seed=seed + 100)
    theta = make_theta(n, T, m, seed=seed)
    panel = simulate_panel(grid, T, theta, seed=seed + 200, model=model, mask=mask)
    return panel, theta


def make_fixed_chain(theta, n_draws, model="ar"):
    """Chain whose draws all equal one Theta (for analytic predictive checks)."""
    draws = [theta.copy() for _ in range(n_draws)]
    return mcmc.Chain(
        draws=draws,
        imputed=[np.empty(0)] * n_draws,
        missing_cells=np.empty((0, 2), int),
        n_iter=n_draws,
        n_burn=0,
        accept_phi=0.3,
        accept_nu=0.5,
        pmcc=0.0,
        seed=0,
        chain_index=0,
        model=model,
        final_step_phi=0.5,
    )


class ZeroNoiseRng:
    """Stub rng whose normal draws are all zero (draws become means)."""

    def standard_normal(self, size=None):
        if size is None:
            return 0.0
        return np.zeros(size)


def logpdf_mvn_prec(x, mean, prec):
    d = np.atleast_1d(x - mean)
    sign, logdet = np.linalg.slogdet(np.atleast_2d(prec))
    return 0.5 * logdet - 0.5 * float(d @ np.atleast_2d(prec) @ d)


def logpdf_variance(v, shape, rate):
    # Gamma(shape, rate) on the precision, expressed in the variance
    return -(shape + 1.0) * math.log(v) - rate / v


def conditional_vs_joint_gaps(panel, theta, priors, seed, n_pairs, model="ar"):
    """Max |conditional log-density difference - joint log-posterior
    difference| per Gibbs block, over random block-value pairs.

    The independent oracle is the joint log posterior itself; a correct full
    conditional must reproduce its differences exactly.
    """
    rng = np.random.default_rng(seed)
    cors = correlation_matrix(panel.grid, theta.phi, theta.nu)
    joint_fn = log_joint_posterior_ar if model == "ar" else log_joint_posterior_gp

    def joint(**mods):
        th = theta.copy()
        for k, v in mods.items():
            setattr(th, k, v)
        return joint_fn(th, panel, priors)

    gaps = {}

    mean, prec = mcmc.beta_conditional_params(theta, panel, priors, cors, model)
    g = 0.0
    for _ in range(n_pairs):
        b1 = mean + rng.standard_normal(panel.m)
        b2 = mean + rng.standard_normal(panel.m)
        lhs = logpdf_mvn_prec(b1, mean, prec) - logpdf_mvn_prec(b2, mean, prec)
        g = max(g, abs(lhs - (joint(beta=b1) - joint(beta=b2))))
    gaps["beta"] = g

    if model == "ar":
        mean_r, var_r = mcmc.rho_conditional_params(theta, panel, priors, cors)
        g = 0.0
        for _ in range(n_pairs):
            r1, r2 = rng.uniform(-0.99, 0.99, 2)
            lhs = (-0.5 * (r1 - mean_r) ** 2 + 0.5 * (r2 - mean_r) ** 2) / var_r
            g = max(g, abs(lhs - (joint(rho=r1) - joint(rho=r2))))
        gaps["rho"] = g

    var_params = mcmc.variance_conditional_params(theta, panel, priors, cors, model)
    var_names = ["sigma_eps2", "sigma_eta2"] + (["sigma2"] if model == "ar" else [])
    for name in var_names:
        shape, rate = var_params[name]
        g = 0.0
        for _ in range(n_pairs):
            v1, v2 = np.exp(rng.normal(0.0, 1.0, 2))
            lhs = logpdf_variance(v1, shape, rate) - logpdf_variance(v2, shape, rate)
            g = max(g, abs(lhs - (joint(**{name: v1}) - joint(**{name: v2}))))
        gaps[name] = g

    for t in range(panel.T):
        mean_t, prec_t = mcmc.latent_conditional_params(
            theta, panel, priors, t, cors, panel.O, model
        )
        g = 0.0
        gs = 0.0
        for _ in range(n_pairs):
            v1 = mean_t + rng.standard_normal(panel.n)
            v2 = mean_t + rng.standard_normal(panel.n)
            lhs = logpdf_mvn_prec(v1, mean_t, prec_t) - logpdf_mvn_prec(v2, mean_t, prec_t)
            V1 = theta.V.copy()
            V1[:, t] = v1
            V2 = theta.V.copy()
            V2[:, t] = v2
            g = max(g, abs(lhs - (joint(V=V1) - joint(V=V2))))
            # scalar slice: site 0 of slot t given the rest
            x1, x2 = rng.standard_normal(2) + mean_t[0]
            rest = theta.V[1:, t] - mean_t[1:]
            cond_mean = mean_t[0] - float(prec_t[0, 1:] @ rest) / prec_t[0, 0]
            lhs_s = -0.5 * prec_t[0, 0] * ((x1 - cond_mean) ** 2 - (x2 - cond_mean) ** 2)
            Vs1 = theta.V.copy()
            Vs1[0, t] = x1
            Vs2 = theta.V.copy()
            Vs2[0, t] = x2
            gs = max(gs, abs(lhs_s - (joint(V=Vs1) - joint(V=Vs2))))
        gaps[f"V_{t}"] = g
        gaps[f"V_{t}_site0"] = gs

    if model == "ar":
        mean0, prec0 = mcmc.v0_conditional_params(theta, panel, priors, cors)
        g = 0.0
        for _ in range(n_pairs):
            v1 = mean0 + rng.standard_normal(panel.n)
            v2 = mean0 + rng.standard_normal(panel.n)
            lhs = logpdf_mvn_prec(v1, mean0, prec0) - logpdf_mvn_prec(v2, mean0, prec0)
            g = max(g, abs(lhs - (joint(V0=v1) - joint(V0=v2))))
        gaps["V0"] = g

        mean_m, prec_m = mcmc.mu_conditional_params(theta, panel, priors, cors)
        g = 0.0
        for _ in range(n_pairs):
            m1 = mean_m + rng.standard_normal(panel.n)
            m2 = mean_m + rng.standard_normal(panel.n)
            lhs = logpdf_mvn_prec(m1, mean_m, prec_m) - logpdf_mvn_prec(m2, mean_m, prec_m)
            g = max(g, abs(lhs - (joint(mu=m1) - joint(mu=m2))))
        gaps["mu"] = g

    g = 0.0
    for _ in range(n_pairs):
        p1, p2 = np.exp(rng.normal(math.log(theta.phi), 0.7, 2))
        k1, _ = mcmc.phi_nu_log_kernel(theta, panel, priors, p1, theta.nu, model)
        k2, _ = mcmc.phi_nu_log_kernel(theta, panel, priors, p2, theta.nu, model)
        g = max(g, abs((k1 - k2) - (joint(phi=p1) - joint(phi=p2))))
    gaps["phi"] = g

    g = 0.0
    grid_vals = priors.nu_grid
    for _ in range(n_pairs):
        n1, n2 = grid_vals[rng.integers(len(grid_vals), size=2)]
        k1, _ = mcmc.phi_nu_log_kernel(theta, panel, priors, theta.phi, float(n1), model)
        k2, _ = mcmc.phi_nu_log_kernel(theta, panel, priors, theta.phi, float(n2), model)
        g = max(g, abs((k1 - k2) - (joint(nu=float(n1)) - joint(nu=float(n2)))))
    gaps["nu"] = g

    return gaps
