"""Gibbs sampler with Metropolis-Hastings updates for the kernel parameters.

One sweep updates, in order: missing-value imputations and the latent field
(V, and for the AR variant V_0 and mu), the regression coefficients beta, the
temporal correlation rho (AR only), the three variances, and finally (phi,
nu) by Metropolis-Hastings.  Every closed-form conditional is exposed as a
`*_conditional_params` function so tests can check it against the joint log
posterior directly.

Missing observations are re-imputed from N(V_t(s), sigma_eps^2) at the start
of the latent update, before anything conditions on them; the sigma_eps^2
update itself uses observed cells only (the marginal form), which keeps the
sweep a valid partially collapsed Gibbs scheme.

The phi proposal is a random walk on log(phi) (Jacobian-corrected), with the
log step adapted by Robbins-Monro during burn-in toward 30% acceptance and
frozen afterwards, targeting the 15-40% acceptance window.  nu is updated by
an independence proposal, uniform over its prior grid.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field, replace

import numpy as np
import scipy.linalg
from scipy.linalg.lapack import dtrtrs
from scipy.special import ndtr, ndtri

from .kernel import (
    DEFAULT_JITTER,
    ConditioningError,
    CorrelationMatrix,
    correlation_matrix,
    distance_matrix,
)
from .model import Panel, PriorSpec, Theta, lagged_latents

RM_TARGET = 0.30  # Robbins-Monro acceptance target for the phi step
_STEP_BOUNDS = (1e-3, 10.0)


@dataclass
class MhTuning:
    """Random-walk tuning for the phi update."""

    proposal_sd_phi: float = 0.5
    target_accept: tuple[float, float] = (0.15, 0.40)
    adapt_during_burnin: bool = True

    def __post_init__(self):
        if not self.proposal_sd_phi > 0:
            raise ValueError("proposal_sd_phi must be > 0")
        lo, hi = self.target_accept
        if not 0.0 < lo < hi < 1.0:
            raise ValueError("target_accept must be an interval inside (0, 1)")


@dataclass
class ChainConfig:
    model: str = "ar"
    n_iter: int = 5000
    n_burn: int = 1000
    tuning: MhTuning = field(default_factory=MhTuning)
    seed: int = 0
    chain_index: int = 0
    init: Theta | None = None

    def __post_init__(self):
        if self.model not in ("ar", "gp"):
            raise ValueError(f"model must be 'ar' or 'gp', got {self.model!r}")
        if not 0 <= self.n_burn < self.n_iter:
            raise ValueError("need 0 <= n_burn < n_iter")


@dataclass
class Chain:
    """Post-burn-in draws with imputations and diagnostics."""

    draws: list[Theta]
    imputed: list[np.ndarray]
    missing_cells: np.ndarray  # (n_missing, 2) [site, slot] index pairs
    n_iter: int
    n_burn: int
    accept_phi: float
    accept_nu: float
    pmcc: float
    seed: int
    chain_index: int
    model: str
    final_step_phi: float

    def __post_init__(self):
        if len(self.draws) != self.n_iter - self.n_burn:
            raise ValueError("draws length must equal n_iter - n_burn")
        if not (0.0 <= self.accept_phi <= 1.0 and 0.0 <= self.accept_nu <= 1.0):
            raise ValueError("acceptance rates must lie in [0, 1]")


class DivergedError(RuntimeError):
    """The chain reached a non-finite state."""


def _cors_for(state: Theta, panel: Panel) -> CorrelationMatrix:
    return correlation_matrix(panel.grid, state.phi, state.nu, DEFAULT_JITTER)


def _draw_mvn_prec(mean: np.ndarray, prec_chol: np.ndarray, rng, size=None) -> np.ndarray:
    """Draw from N(mean, P^{-1}) given the lower Cholesky factor of P."""
    shape = mean.shape if size is None else (mean.shape[0], size)
    z = rng.standard_normal(shape)
    x, info = dtrtrs(prec_chol, z, lower=1, trans=1)
    if info != 0:
        raise np.linalg.LinAlgError(f"triangular solve failed (info={info})")
    return mean + x


# ---------------------------------------------------------------------------
# Full conditionals
# ---------------------------------------------------------------------------


def beta_conditional_params(
    state: Theta, panel: Panel, priors: PriorSpec, cors=None, model: str = "ar"
):
    """Mean and precision of the Gaussian full conditional for beta."""
    m = panel.m
    prec = np.eye(m) / priors.beta_var
    chi = np.full(m, priors.beta_mean / priors.beta_var)
    if panel.T > 0:
        if cors is None:
            cors = _cors_for(state, panel)
        n, T = panel.n, panel.T

        def _sxx():
            flat = panel.X.transpose(1, 0, 2).reshape(n, T * m)
            zi_x = cors.solve_fast(flat).reshape(n, T, m).transpose(1, 0, 2)
            return np.einsum("tnm,tnp->mp", panel.X, zi_x)

        sxx = cors.cached(("sxx", id(panel.X)), _sxx)
        prec = prec + sxx / state.sigma_eta2
        resid = state.V - (state.rho * lagged_latents(state) if model == "ar" else 0.0)
        chi = chi + np.einsum("tnm,nt->m", panel.X, cors.solve_fast(resid)) / state.sigma_eta2
    mean = np.linalg.solve(prec, chi)
    return mean, prec


def sample_beta(state, panel, priors, rng, cors=None, model: str = "ar") -> np.ndarray:
    mean, prec = beta_conditional_params(state, panel, priors, cors, model)
    return _draw_mvn_prec(mean, np.linalg.cholesky(prec), rng)


def rho_conditional_params(state: Theta, panel: Panel, priors: PriorSpec, cors=None):
    """Mean and variance of the (untruncated) normal conditional for rho."""
    if cors is None:
        cors = _cors_for(state, panel)
    lag = lagged_latents(state)
    zi_lag = cors.solve_fast(lag) if panel.T > 0 else lag
    prec = 1.0 / priors.rho_var
    chi = priors.rho_mean / priors.rho_var
    if panel.T > 0:
        prec = prec + float(np.sum(lag * zi_lag)) / state.sigma_eta2
        resid0 = state.V - panel.xbeta(state.beta)
        chi = chi + float(np.sum(zi_lag * resid0)) / state.sigma_eta2
    return chi / prec, 1.0 / prec


def sample_rho(state, panel, priors, rng, cors=None, max_tries: int = 100) -> float:
    """Draw rho from its conditional, constrained to (-1, 1).

    Rejection resampling first; after `max_tries` failures, an inverse-CDF
    draw from the truncated normal.
    """
    mean, var = rho_conditional_params(state, panel, priors, cors)
    sd = math.sqrt(var)
    for _ in range(max_tries):
        draw = mean + sd * rng.standard_normal()
        if -1.0 < draw < 1.0:
            return float(draw)
    lo = ndtr((-1.0 - mean) / sd)
    hi = ndtr((1.0 - mean) / sd)
    u = rng.uniform(lo, hi)
    draw = mean + sd * float(ndtri(u))
    return float(min(max(draw, -1.0 + 1e-12), 1.0 - 1e-12))


def variance_conditional_params(
    state: Theta, panel: Panel, priors: PriorSpec, cors=None, model: str = "ar"
) -> dict:
    """Gamma (shape, rate) for the precisions 1/sigma_eps^2, 1/sigma_eta^2
    and, for the AR variant, 1/sigma^2.

    The nugget conditional sums squared residuals over observed cells only.
    """
    if cors is None:
        cors = _cors_for(state, panel)
    a, b = priors.gamma_a, priors.gamma_b
    obs = ~panel.mask
    resid_obs = panel.O[obs] - state.V[obs]
    out = {
        "sigma_eps2": (0.5 * resid_obs.size + a, b + 0.5 * float(resid_obs @ resid_obs))
    }
    xb = panel.xbeta(state.beta)
    r = state.V - (state.rho * lagged_latents(state) if model == "ar" else 0.0) - xb
    out["sigma_eta2"] = (0.5 * panel.n * panel.T + a, b + 0.5 * cors.quad_fast(r))
    if model == "ar":
        d0 = state.V0 - state.mu
        out["sigma2"] = (0.5 * panel.n + a, b + 0.5 * float(d0 @ cors.solve_fast(d0)))
    return out


def sample_variances(state, panel, priors, rng, cors=None, model: str = "ar"):
    """Draw (sigma_eps2, sigma_eta2, sigma2); sigma2 passes through for GP."""
    params = variance_conditional_params(state, panel, priors, cors, model)
    shape, rate = params["sigma_eps2"]
    sigma_eps2 = 1.0 / rng.gamma(shape, 1.0 / rate)
    shape, rate = params["sigma_eta2"]
    sigma_eta2 = 1.0 / rng.gamma(shape, 1.0 / rate)
    sigma2 = state.sigma2
    if model == "ar":
        shape, rate = params["sigma2"]
        sigma2 = 1.0 / rng.gamma(shape, 1.0 / rate)
    return float(sigma_eps2), float(sigma_eta2), float(sigma2)


def latent_conditional_params(
    state: Theta,
    panel: Panel,
    priors: PriorSpec,
    t: int,
    cors=None,
    o_work: np.ndarray | None = None,
    model: str = "ar",
):
    """Mean and precision of the conditional for the slot-t latent vector V_t.

    `o_work` must carry current imputations at masked cells; with no mask,
    panel.O is used directly.
    """
    if cors is None:
        cors = _cors_for(state, panel)
    if o_work is None:
        o_work = panel.O
    n, T = panel.n, panel.T
    xb = panel.xbeta(state.beta)
    zi = cors.inv
    left = state.V0 if t == 0 else state.V[:, t - 1]
    if model == "ar":
        if t < T - 1:
            prec = np.eye(n) / state.sigma_eps2 + (1.0 + state.rho**2) / state.sigma_eta2 * zi
            m_vec = state.rho * left + xb[:, t] + state.rho * (state.V[:, t + 1] - xb[:, t + 1])
        else:
            prec = np.eye(n) / state.sigma_eps2 + zi / state.sigma_eta2
            m_vec = state.rho * left + xb[:, t]
    else:
        prec = np.eye(n) / state.sigma_eps2 + zi / state.sigma_eta2
        m_vec = xb[:, t]
    chi = o_work[:, t] / state.sigma_eps2 + cors.solve_fast(m_vec) / state.sigma_eta2
    mean = np.linalg.solve(prec, chi)
    return mean, prec


def v0_conditional_params(state: Theta, panel: Panel, priors: PriorSpec, cors=None):
    """Mean and precision of the conditional for the initial state V_0."""
    if cors is None:
        cors = _cors_for(state, panel)
    c = state.rho**2 / state.sigma_eta2 + 1.0 / state.sigma2
    prec = c * cors.inv
    xb1 = panel.X[0] @ state.beta
    chi = state.rho * cors.solve_fast(state.V[:, 0] - xb1) / state.sigma_eta2
    chi = chi + cors.solve_fast(state.mu) / state.sigma2
    mean = cors.values @ chi / c
    return mean, prec


def mu_conditional_params(state: Theta, panel: Panel, priors: PriorSpec, cors=None):
    """Mean and precision of the conditional for the initial mean mu."""
    if cors is None:
        cors = _cors_for(state, panel)
    prec = cors.inv / state.sigma2 + np.eye(panel.n) / priors.mu_var
    chi = cors.solve_fast(state.V0) / state.sigma2
    mean = np.linalg.solve(prec, chi)
    return mean, prec


def sample_latents(
    state: Theta,
    panel: Panel,
    priors: PriorSpec,
    rng,
    cors=None,
    model: str = "ar",
):
    """Draw (V, V0, mu, imputed missing values).

    Masked observations are imputed first from N(V_t(s), sigma_eps^2); the
    slot updates then treat them as data.  Interior slots are updated in an
    odd/even checkerboard (each half is conditionally independent given the
    other), which leaves every slot's stated conditional untouched.
    """
    if cors is None:
        cors = _cors_for(state, panel)
    n, T = panel.n, panel.T
    sig_eps = math.sqrt(state.sigma_eps2)

    imputed = state.V[panel.mask] + sig_eps * rng.standard_normal(int(panel.mask.sum()))
    o_work = panel.O.copy()
    o_work[panel.mask] = imputed

    V = state.V.copy()
    xb = panel.xbeta(state.beta)
    zi = cors.inv
    eye = np.eye(n)

    if model == "ar":
        rho = state.rho
        prec_int = eye / state.sigma_eps2 + (1.0 + rho**2) / state.sigma_eta2 * zi
        prec_end = eye / state.sigma_eps2 + zi / state.sigma_eta2
        l_int = np.linalg.cholesky(prec_int)
        l_end = np.linalg.cholesky(prec_end)
        for parity in (0, 1):
            ts = np.arange(parity, T, 2)
            interior = ts[ts < T - 1]
            if interior.size:
                lag = np.column_stack([state.V0, V[:, :-1]])
                m_mat = (
                    rho * lag[:, interior]
                    + xb[:, interior]
                    + rho * (V[:, interior + 1] - xb[:, interior + 1])
                )
                chi = o_work[:, interior] / state.sigma_eps2 + cors.solve_fast(m_mat) / state.sigma_eta2
                mean = scipy.linalg.cho_solve((l_int, True), chi, check_finite=False)
                V[:, interior] = _draw_mvn_prec(mean, l_int, rng, size=interior.size)
            if T - 1 in ts:
                left = V[:, T - 2] if T >= 2 else state.V0
                m_vec = rho * left + xb[:, T - 1]
                chi = o_work[:, T - 1] / state.sigma_eps2 + cors.solve_fast(m_vec) / state.sigma_eta2
                mean = scipy.linalg.cho_solve((l_end, True), chi, check_finite=False)
                V[:, T - 1] = _draw_mvn_prec(mean, l_end, rng)
    else:
        prec = eye / state.sigma_eps2 + zi / state.sigma_eta2
        l_prec = np.linalg.cholesky(prec)
        chi = o_work / state.sigma_eps2 + cors.solve_fast(xb) / state.sigma_eta2
        mean = scipy.linalg.cho_solve((l_prec, True), chi, check_finite=False)
        V = _draw_mvn_prec(mean, l_prec, rng, size=T)

    if model == "ar":
        work = state.copy()
        work.V = V
        c = state.rho**2 / state.sigma_eta2 + 1.0 / state.sigma2
        mean0, _ = v0_conditional_params(work, panel, priors, cors)
        V0 = mean0 + cors.chol @ rng.standard_normal(n) / math.sqrt(c)
        work.V0 = V0
        mean_mu, prec_mu = mu_conditional_params(work, panel, priors, cors)
        mu = _draw_mvn_prec(mean_mu, np.linalg.cholesky(prec_mu), rng)
    else:
        V0 = state.V0.copy()
        mu = state.mu.copy()
    return V, V0, mu, imputed


# ---------------------------------------------------------------------------
# Metropolis-Hastings for (phi, nu)
# ---------------------------------------------------------------------------


def phi_nu_log_kernel(
    state: Theta,
    panel: Panel,
    priors: PriorSpec,
    phi: float,
    nu: float,
    model: str = "ar",
    cors: CorrelationMatrix | None = None,
    dists: np.ndarray | None = None,
    quads: tuple[float, float] | None = None,
):
    """(phi, nu)-dependent part of the joint log posterior, plus its matrix.

    Gamma log-prior on phi, the spatio-temporal quadratic/determinant term,
    and (AR only) the initial-state term.  Returns (-inf, None) when the
    candidate matrix cannot be factored.  `quads` may supply the two
    quadratic forms (eta residual, initial state) already computed against
    `cors` for the current state.
    """
    if phi <= 0.0 or nu <= 0.0:
        return -math.inf, None
    if cors is None:
        try:
            cors = correlation_matrix(panel.grid, phi, nu, DEFAULT_JITTER, dists=dists)
        except ConditioningError:
            return -math.inf, None
    val = (priors.gamma_a - 1.0) * math.log(phi) - priors.gamma_b * phi
    if quads is None:
        xb = panel.xbeta(state.beta)
        r = state.V - (state.rho * lagged_latents(state) if model == "ar" else 0.0) - xb
        quad_r = cors.quad_fast(r)
        d0 = state.V0 - state.mu
        quad_0 = float(d0 @ cors.solve_fast(d0)) if model == "ar" else 0.0
    else:
        quad_r, quad_0 = quads
    val -= 0.5 * panel.T * cors.log_det
    val -= 0.5 * quad_r / state.sigma_eta2
    if model == "ar":
        val -= 0.5 * cors.log_det
        val -= 0.5 * quad_0 / state.sigma2
    if not math.isfinite(val):
        return -math.inf, None
    return val, cors


@dataclass(frozen=True)
class MhResult:
    phi: float
    nu: float
    accepted_phi: bool
    accepted_nu: bool
    cors: CorrelationMatrix


def _mh_accept(log_r: float, rng) -> bool:
    # accept when r >= 1, else with probability r
    if log_r >= 0.0:
        return True
    return math.log(rng.uniform()) < log_r


def mh_step_phi_nu(
    state: Theta,
    panel: Panel,
    priors: PriorSpec,
    tuning: MhTuning,
    rng,
    cors: CorrelationMatrix | None = None,
    model: str = "ar",
    step: float | None = None,
    dists: np.ndarray | None = None,
    cur_quads: tuple[float, float] | None = None,
) -> MhResult:
    """One Metropolis-Hastings update of phi (log random walk) then nu
    (independence draw from the prior grid)."""
    if step is None:
        step = tuning.proposal_sd_phi
    if cur_quads is not None and cors is None:
        raise ValueError("cur_quads requires the matching cors")
    k_cur, cors = phi_nu_log_kernel(
        state, panel, priors, state.phi, state.nu, model, cors, dists, cur_quads
    )

    phi = state.phi
    phi_prop = math.exp(math.log(phi) + step * rng.standard_normal())
    k_prop, cors_prop = phi_nu_log_kernel(state, panel, priors, phi_prop, state.nu, model, dists=dists)
    accepted_phi = False
    if math.isfinite(k_prop):
        log_r = k_prop - k_cur + math.log(phi_prop) - math.log(phi)
        if _mh_accept(log_r, rng):
            phi, k_cur, cors = phi_prop, k_prop, cors_prop
            accepted_phi = True

    nu = state.nu
    nu_prop = float(priors.nu_grid[rng.integers(len(priors.nu_grid))])
    if nu_prop == nu:
        accepted_nu = True  # identical proposal: ratio is exactly 1
    else:
        k_prop, cors_prop = phi_nu_log_kernel(state, panel, priors, phi, nu_prop, model, dists=dists)
        accepted_nu = math.isfinite(k_prop) and _mh_accept(k_prop - k_cur, rng)
        if accepted_nu:
            nu, cors = nu_prop, cors_prop
    return MhResult(phi=phi, nu=nu, accepted_phi=accepted_phi, accepted_nu=accepted_nu, cors=cors)


# ---------------------------------------------------------------------------
# Chain orchestration
# ---------------------------------------------------------------------------


def default_init(panel: Panel, priors: PriorSpec, model: str = "ar") -> Theta:
    """Starting state: OLS for beta, rho = 0, unit variances, decay set to
    1 / median pairwise distance, smoothness at the grid midpoint, latents
    from the observations (masked cells filled with slot means)."""
    n, T, m = panel.n, panel.T, panel.m
    obs_flat = (~panel.mask).T.reshape(-1)
    A = panel.X.reshape(T * n, m)
    y = panel.O.T.reshape(-1)
    if obs_flat.any():
        beta, *_ = np.linalg.lstsq(A[obs_flat], y[obs_flat], rcond=None)
    else:
        beta = np.zeros(m)

    d = distance_matrix(panel.grid)
    pos = d[d > 0]
    phi = 1.0 / float(np.median(pos)) if pos.size else 1.0

    V = panel.O.copy()
    fill = float(np.mean(panel.O[~panel.mask])) if obs_flat.any() else 0.0
    for t in range(T):
        col_obs = ~panel.mask[:, t]
        col_fill = float(np.mean(panel.O[col_obs, t])) if col_obs.any() else fill
        V[panel.mask[:, t], t] = col_fill

    first = V[:, 0].copy() if T > 0 else np.zeros(n)
    return Theta(
        beta=beta,
        rho=0.0,
        sigma_eps2=1.0,
        sigma_eta2=1.0,
        phi=phi,
        nu=float(priors.nu_grid[len(priors.nu_grid) // 2]),
        mu=first.copy(),
        sigma2=1.0,
        V=V,
        V0=first,
    )


def _check_finite(state: Theta, iteration: int) -> None:
    # a finite sum implies finite entries (nan/inf propagate through sums)
    probe = (
        state.rho + state.sigma_eps2 + state.sigma_eta2 + state.sigma2
        + state.phi + state.nu + float(state.beta.sum())
        + float(state.V.sum()) + float(state.V0.sum()) + float(state.mu.sum())
    )
    if not math.isfinite(probe):
        raise DivergedError(f"non-finite sampler state at iteration {iteration}")


def run_chain(panel: Panel, priors: PriorSpec, config: ChainConfig, progress=None) -> Chain:
    """Run one chain; deterministic for a given (seed, chain_index).

    `progress`, when given, is called every 100 iterations with a dict of
    running diagnostics (iteration, phi/nu acceptance so far, running PMCC).
    """
    if panel.T < 1:
        raise ValueError("panel must contain at least one time slot")
    model = config.model
    rng = np.random.default_rng([config.seed, config.chain_index])
    state = config.init.copy() if config.init is not None else default_init(panel, priors, model)
    state.validate(panel)
    if model == "gp":
        state.rho = 0.0
    dists = distance_matrix(panel.grid)
    cors = correlation_matrix(panel.grid, state.phi, state.nu, DEFAULT_JITTER, dists=dists)
    step = config.tuning.proposal_sd_phi

    missing_cells = np.argwhere(panel.mask)
    draws: list[Theta] = []
    imputed_draws: list[np.ndarray] = []
    acc_phi = acc_nu = 0
    acc_phi_all = acc_nu_all = 0
    obs = ~panel.mask
    kept = 0
    mean_v = np.zeros_like(panel.O)
    m2_v = np.zeros_like(panel.O)
    sum_eps2 = 0.0

    for it in range(config.n_iter):
        V, V0, mu, imputed = sample_latents(state, panel, priors, rng, cors, model)
        state.V, state.V0, state.mu = V, V0, mu
        state.beta = sample_beta(state, panel, priors, rng, cors, model)
        if model == "ar":
            state.rho = sample_rho(state, panel, priors, rng, cors)
        vparams = variance_conditional_params(state, panel, priors, cors, model)
        shape_e, rate_e = vparams["sigma_eps2"]
        state.sigma_eps2 = float(1.0 / rng.gamma(shape_e, 1.0 / rate_e))
        shape_h, rate_h = vparams["sigma_eta2"]
        state.sigma_eta2 = float(1.0 / rng.gamma(shape_h, 1.0 / rate_h))
        quad_0 = 0.0
        if model == "ar":
            shape_0, rate_0 = vparams["sigma2"]
            state.sigma2 = float(1.0 / rng.gamma(shape_0, 1.0 / rate_0))
            quad_0 = 2.0 * (rate_0 - priors.gamma_b)
        # the variance step's quadratic forms are exactly the kernel's
        quad_r = 2.0 * (rate_h - priors.gamma_b)
        res = mh_step_phi_nu(
            state, panel, priors, config.tuning, rng, cors, model, step,
            dists=dists, cur_quads=(quad_r, quad_0),
        )
        state.phi, state.nu, cors = res.phi, res.nu, res.cors
        acc_phi_all += res.accepted_phi
        acc_nu_all += res.accepted_nu

        if config.tuning.adapt_during_burnin and it < config.n_burn:
            gain = 1.0 / (1.0 + it) ** 0.6
            step = step * math.exp(gain * (float(res.accepted_phi) - RM_TARGET))
            step = min(max(step, _STEP_BOUNDS[0]), _STEP_BOUNDS[1])

        _check_finite(state, it)

        if it >= config.n_burn:
            draws.append(state.copy())
            imputed_draws.append(imputed.copy())
            acc_phi += res.accepted_phi
            acc_nu += res.accepted_nu
            kept += 1
            delta = state.V - mean_v
            mean_v += delta / kept
            m2_v += delta * (state.V - mean_v)
            sum_eps2 += state.sigma_eps2

        if progress is not None and (it + 1) % 100 == 0:
            if kept > 1:
                var_v = m2_v / (kept - 1)
                pmcc_now = float(
                    np.sum((mean_v[obs] - panel.O[obs]) ** 2)
                    + np.sum(var_v[obs])
                    + obs.sum() * (sum_eps2 / kept)
                )
            else:
                pmcc_now = math.nan
            progress(
                {
                    "iteration": it + 1,
                    "accept_phi": acc_phi_all / (it + 1),
                    "accept_nu": acc_nu_all / (it + 1),
                    "pmcc": pmcc_now,
                    "step_phi": step,
                }
            )

    n_kept = config.n_iter - config.n_burn
    var_v = m2_v / (kept - 1) if kept > 1 else np.zeros_like(mean_v)
    pmcc = float(
        np.sum((mean_v[obs] - panel.O[obs]) ** 2)
        + np.sum(var_v[obs])
        + obs.sum() * (sum_eps2 / max(kept, 1))
    )
    return Chain(
        draws=draws,
        imputed=imputed_draws,
        missing_cells=missing_cells,
        n_iter=config.n_iter,
        n_burn=config.n_burn,
        accept_phi=acc_phi / n_kept,
        accept_nu=acc_nu / n_kept,
        pmcc=pmcc,
        seed=config.seed,
        chain_index=config.chain_index,
        model=model,
        final_step_phi=step,
    )


def _run_chain_task(args):
    panel, priors, config = args
    return run_chain(panel, priors, config)


def run_chains(
    panel: Panel,
    priors: PriorSpec,
    config: ChainConfig,
    n_chains: int,
    progress=None,
    workers: int = 1,
) -> list[Chain]:
    """Run `n_chains` independent chains with derived per-chain seeds.

    With `workers` > 1 the chains run in separate processes; results are
    identical to the sequential path (chains share no state and merge in
    chain order).  `progress` applies to the sequential path only.
    """
    configs = [replace(config, chain_index=k) for k in range(n_chains)]
    if workers > 1 and n_chains > 1:
        import concurrent.futures

        with concurrent.futures.ProcessPoolExecutor(max_workers=workers) as ex:
            return list(ex.map(_run_chain_task, [(panel, priors, c) for c in configs]))
    return [run_chain(panel, priors, c, progress) for c in configs]


# ---------------------------------------------------------------------------
# Posterior summaries and export
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ParamSummary:
    mean: float
    median: float
    sd: float
    low2_5: float
    up97_5: float


def _param_names(model: str, m: int) -> list[str]:
    names = [f"beta_{j}" for j in range(m)]
    if model == "ar":
        names.append("rho")
    names += ["sigma_eps2", "sigma_eta2", "phi", "nu"]
    return names


def _extract(theta: Theta, name: str) -> float:
    if name.startswith("beta_"):
        return float(theta.beta[int(name.split("_")[1])])
    return float(getattr(theta, name))


def posterior_summary(chains: list[Chain], skip: int = 0) -> dict[str, ParamSummary]:
    """Pooled posterior summary over chains (mean, median, sd, 2.5/97.5%).

    `skip` drops that many additional leading draws from every chain before
    pooling (on top of each chain's own burn-in).  The sd is the population
    standard deviation and quantiles use the empirical CDF, so pooling l
    identical chains reproduces the single-chain summary exactly.
    """
    if not chains:
        raise ValueError("need at least one chain")
    if any(len(c.draws) <= skip for c in chains):
        raise ValueError("chains have no draws after skip")
    model = chains[0].model
    if any(c.model != model for c in chains):
        raise ValueError("cannot pool chains from different model variants")
    m = chains[0].draws[0].beta.shape[0]
    out: dict[str, ParamSummary] = {}
    for name in _param_names(model, m):
        pooled = np.array(
            [_extract(th, name) for c in chains for th in c.draws[skip:]]
        )
        sd = float(np.std(pooled))
        lo, hi = np.quantile(pooled, [0.025, 0.975], method="inverted_cdf")
        out[name] = ParamSummary(
            mean=float(np.mean(pooled)),
            median=float(np.median(pooled)),
            sd=sd,
            low2_5=float(lo),
            up97_5=float(hi),
        )
    return out


def write_summary_csv(summary: dict[str, ParamSummary], path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["parameter", "mean", "median", "sd", "low2.5p", "up97.5p"])
        for name, s in summary.items():
            w.writerow([name, repr(s.mean), repr(s.median), repr(s.sd), repr(s.low2_5), repr(s.up97_5)])


def write_chain_ndjson(chain: Chain, path) -> None:
    """One post-burn-in draw per line with named scalar/vector parameters."""
    with open(path, "w") as fh:
        for theta in chain.draws:
            rec = {"beta": [float(b) for b in theta.beta]}
            if chain.model == "ar":
                rec["rho"] = theta.rho
            rec["sigma_eps2"] = theta.sigma_eps2
            rec["sigma_eta2"] = theta.sigma_eta2
            rec["phi"] = theta.phi
            rec["nu"] = theta.nu
            if chain.model == "ar":
                rec["sigma2"] = theta.sigma2
            fh.write(json.dumps(rec) + "\n")
