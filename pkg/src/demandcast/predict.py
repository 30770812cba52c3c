"""Posterior predictive inference: kriging to new sites and forecasting ahead.

Both operations loop over retained posterior draws.  For a draw with
parameters (beta, rho, sigma_eps^2, sigma_eta^2, phi, nu) and latent field V:

* spatial kriging draws the new-site random effect from its Gaussian
  conditional given the observed-site effects eta_t = V_t - rho V_{t-1} -
  X_t beta (conditional mean  w^T eta_t  with kriging weights
  w = zeta_cross zeta^{-1}, conditional variance sigma_eta^2 (1 - w^T
  zeta_cross)), then runs the new site's own recursion from an initial value
  kriged off V_0;
* temporal forecasting iterates the latent recursion forward from V_T with
  fresh spatially correlated innovations.

Model-scale draws are kept so the original-scale summary can be computed per
draw (expm1, clipped at zero) rather than by transforming moments.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, replace

import numpy as np

from .kernel import DEFAULT_JITTER, SiteGrid, correlation_matrix, cross_distances, matern
from .mcmc import Chain
from .model import Panel


@dataclass(frozen=True)
class PredictionField:
    """Per-(site, time) posterior predictive summaries.

    `mean_log`/`sd_log` are on the modeling (log1p) scale; `mean_orig`/
    `sd_orig` on the original scale.  `draws_log` retains the per-target
    predictive draws used for both summaries.
    """

    site_ids: tuple[str, ...]
    coords: np.ndarray  # (n_targets, 2)
    times: np.ndarray  # (n_targets,)
    mean_log: np.ndarray
    sd_log: np.ndarray
    mean_orig: np.ndarray
    sd_orig: np.ndarray
    n_samples: int
    draws_log: np.ndarray | None  # (n_targets, n_samples)
    variance_clamped: bool = False

    def __post_init__(self):
        sizes = {
            len(self.site_ids), len(self.times), len(self.mean_log),
            len(self.sd_log), len(self.mean_orig), len(self.sd_orig),
            self.coords.shape[0],
        }
        if len(sizes) > 1:
            raise ValueError("inconsistent target lengths")
        if np.any(self.sd_log < 0) or np.any(self.sd_orig < 0):
            raise ValueError("predictive sds must be nonnegative")


def _retained(chain: Chain, thin: int):
    if thin < 1:
        raise ValueError("thinning stride must be >= 1")
    return chain.draws[::thin]


class _CorsCache:
    """Correlation factorizations keyed by the draw's (phi, nu)."""

    def __init__(self, grid: SiteGrid):
        self.grid = grid
        self.dists = None
        self._store: dict = {}

    def get(self, phi: float, nu: float):
        key = (phi, nu)
        if key not in self._store:
            if self.dists is None:
                from .kernel import distance_matrix

                self.dists = distance_matrix(self.grid)
            self._store[key] = correlation_matrix(
                self.grid, phi, nu, DEFAULT_JITTER, dists=self.dists
            )
        return self._store[key]


def _summaries_from_draws(draws: np.ndarray):
    mean_log = draws.mean(axis=1)
    sd_log = draws.std(axis=1)
    orig = np.clip(np.expm1(draws), 0.0, None)
    return mean_log, sd_log, orig.mean(axis=1), orig.std(axis=1)


def back_transform(field: PredictionField) -> PredictionField:
    """Recompute original-scale summaries from the retained draws.

    Applies expm1 to each predictive draw, clips at zero, then summarizes;
    the original-scale moments are statistics of transformed draws, not
    transformed moments.
    """
    if field.draws_log is None:
        raise ValueError("field carries no predictive draws")
    mean_log, sd_log, mean_orig, sd_orig = _summaries_from_draws(field.draws_log)
    return replace(
        field,
        mean_log=mean_log,
        sd_log=sd_log,
        mean_orig=mean_orig,
        sd_orig=sd_orig,
    )


def krige_spatial(
    chain: Chain,
    panel: Panel,
    new_sites: SiteGrid,
    new_features: np.ndarray,
    t_range=None,
    thin: int = 4,
    seed: int = 0,
) -> PredictionField:
    """Predict workload at unobserved sites over observed time slots.

    `new_features` has shape (T, n_new, m) aligned with the panel's slots
    (covariates at new sites are caller-supplied, never invented here).
    `t_range` selects slots (default: all).  Deterministic per (chain, seed).
    """
    new_features = np.asarray(new_features, dtype=float)
    n_new = new_sites.n
    if new_features.shape != (panel.T, n_new, panel.m):
        raise ValueError(
            f"new_features must be (T, n_new, m) = ({panel.T}, {n_new}, {panel.m})"
        )
    t_sel = np.arange(panel.T) if t_range is None else np.asarray(list(t_range), int)
    if t_sel.size and (t_sel.min() < 0 or t_sel.max() >= panel.T):
        raise ValueError("t_range outside panel slots")

    draws = _retained(chain, thin)
    rng = np.random.default_rng([seed, 101])
    cache = _CorsCache(panel.grid)
    d_cross = cross_distances(new_sites, panel.grid)

    out = np.empty((n_new * t_sel.size, len(draws)))
    clamped = False
    t_index = {int(t): k for k, t in enumerate(t_sel)}

    for j, th in enumerate(draws):
        cors = cache.get(th.phi, th.nu)
        c_cross = matern(d_cross, th.phi, th.nu)  # (n_new, n_obs)
        w = cors.solve(c_cross.T).T  # kriging weights
        q = np.einsum("on,on->o", w, c_cross)
        cond = 1.0 - q
        if np.any(cond < 0.0):
            clamped = True
            cond = np.clip(cond, 0.0, None)
        sd_eta = np.sqrt(th.sigma_eta2 * cond)
        sig_eps = math.sqrt(th.sigma_eps2)
        xb_new = np.einsum("tom,m->to", new_features, th.beta)  # (T, n_new)

        if chain.model == "ar":
            xb_obs = panel.xbeta(th.beta)  # (n_obs, T)
            sd0 = np.sqrt(th.sigma2 * cond)
            v_prev = w @ th.V0 + sd0 * rng.standard_normal(n_new)
            for t in range(panel.T):
                left = th.V0 if t == 0 else th.V[:, t - 1]
                eta_obs = th.V[:, t] - th.rho * left - xb_obs[:, t]
                eta_new = w @ eta_obs + sd_eta * rng.standard_normal(n_new)
                v_new = th.rho * v_prev + xb_new[t] + eta_new
                if t in t_index:
                    o_new = v_new + sig_eps * rng.standard_normal(n_new)
                    out[t_index[t]::t_sel.size, j] = o_new
                v_prev = v_new
        else:
            xb_obs = panel.xbeta(th.beta)
            for t in t_sel:
                eta_obs = th.V[:, t] - xb_obs[:, t]
                eta_new = w @ eta_obs + sd_eta * rng.standard_normal(n_new)
                v_new = xb_new[t] + eta_new
                o_new = v_new + sig_eps * rng.standard_normal(n_new)
                out[t_index[int(t)]::t_sel.size, j] = o_new

    site_ids = tuple(s for s in new_sites.ids for _ in t_sel)
    coords = np.repeat(new_sites.coords, t_sel.size, axis=0)
    times = np.tile(t_sel, n_new)
    mean_log, sd_log, mean_orig, sd_orig = _summaries_from_draws(out)
    return PredictionField(
        site_ids=site_ids,
        coords=coords,
        times=times,
        mean_log=mean_log,
        sd_log=sd_log,
        mean_orig=mean_orig,
        sd_orig=sd_orig,
        n_samples=len(draws),
        draws_log=out,
        variance_clamped=clamped,
    )


def forecast_temporal(
    chain: Chain,
    panel: Panel,
    future_features: np.ndarray,
    horizon: int,
    thin: int = 4,
    seed: int = 0,
) -> PredictionField:
    """Forecast the panel's sites `horizon` slots past the observed window.

    `future_features` has shape (horizon, n, m).  Horizon 0 yields an empty
    field.  Deterministic per (chain, seed).
    """
    n = panel.n
    future_features = np.asarray(future_features, dtype=float)
    if horizon < 0:
        raise ValueError("horizon must be >= 0")
    if horizon > 0 and future_features.shape != (horizon, n, panel.m):
        raise ValueError(f"future_features must be ({horizon}, {n}, {panel.m})")

    draws = _retained(chain, thin)
    rng = np.random.default_rng([seed, 202])
    cache = _CorsCache(panel.grid)
    out = np.empty((n * horizon, len(draws)))

    for j, th in enumerate(draws):
        if horizon == 0:
            break
        cors = cache.get(th.phi, th.nu)
        chol = cors.chol
        sig_eta = math.sqrt(th.sigma_eta2)
        sig_eps = math.sqrt(th.sigma_eps2)
        v_cur = th.V[:, -1]
        for k in range(horizon):
            eta = sig_eta * (chol @ rng.standard_normal(n))
            v_next = future_features[k] @ th.beta + eta
            if chain.model == "ar":
                v_next = v_next + th.rho * v_cur
            o_next = v_next + sig_eps * rng.standard_normal(n)
            out[k::horizon, j] = o_next
            v_cur = v_next

    site_ids = tuple(s for s in panel.grid.ids for _ in range(horizon))
    coords = np.repeat(panel.grid.coords, horizon, axis=0)
    times = np.tile(panel.T + np.arange(horizon), n)
    mean_log, sd_log, mean_orig, sd_orig = _summaries_from_draws(out)
    return PredictionField(
        site_ids=site_ids,
        coords=coords,
        times=times,
        mean_log=mean_log,
        sd_log=sd_log,
        mean_orig=mean_orig,
        sd_orig=sd_orig,
        n_samples=len(draws),
        draws_log=out,
    )


def smooth_series(values, sd: float) -> np.ndarray:
    """Gaussian smoothing of a 1-D series; kernel truncated at 4 sd and
    renormalized at the boundaries.  Output length equals input length."""
    if not sd > 0:
        raise ValueError("sd must be > 0")
    values = np.asarray(values, dtype=float)
    radius = int(math.ceil(4.0 * sd))
    offsets = np.arange(-radius, radius + 1)
    kernel = np.exp(-0.5 * (offsets / sd) ** 2)
    # centered slice of the full convolution; robust when the kernel is
    # longer than the series
    num = np.convolve(values, kernel, mode="full")[radius:radius + len(values)]
    den = np.convolve(np.ones_like(values), kernel, mode="full")[radius:radius + len(values)]
    return num / den


def write_prediction_csv(field: PredictionField, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["site_id", "x_m", "y_m", "t", "mean_log", "sd_log", "mean", "sd"])
        for i in range(len(field.site_ids)):
            w.writerow(
                [
                    field.site_ids[i],
                    repr(float(field.coords[i, 0])),
                    repr(float(field.coords[i, 1])),
                    int(field.times[i]),
                    repr(float(field.mean_log[i])),
                    repr(float(field.sd_log[i])),
                    repr(float(field.mean_orig[i])),
                    repr(float(field.sd_orig[i])),
                ]
            )
