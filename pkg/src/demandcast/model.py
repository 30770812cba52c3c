"""Hierarchical space-time workload model: data panel, parameters, priors.

The latent workload field V evolves over discrete time slots as

    AR:  V_t = rho V_{t-1} + X_t beta + eta_t,   eta_t ~ N(0, sigma_eta^2 zeta)
    GP:  V_t =               X_t beta + eta_t,

with observations O_t = V_t + eps_t, eps_t ~ N(0, sigma_eps^2 I) (the nugget)
and, for the AR variant, an initial state V_0 ~ N(mu, sigma^2 zeta_0).  The
correlation matrices zeta and zeta_0 come from the Matern kernel at shared
(phi, nu).  Workload values are modeled on log1p scale; the predict module
inverts the transform.

The joint log posterior here is the single source of truth the sampler's full
conditionals are tested against.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np

from .kernel import DEFAULT_JITTER, CorrelationMatrix, SiteGrid, correlation_matrix


def default_nu_grid() -> np.ndarray:
    """Discrete uniform support for the smoothness: 0.05 .. 1.50 step 0.05.

    Zero is excluded because the correlation function is undefined there.
    """
    return np.round(np.arange(1, 31) * 0.05, 10)


@dataclass(frozen=True)
class PriorSpec:
    """Prior hyperparameters.

    Normal priors for the regression coefficients and the temporal
    correlation; Gamma(a, b) priors for the precisions 1/sigma_eps^2,
    1/sigma_eta^2, 1/sigma^2 and for the decay phi; discrete uniform for nu.
    """

    beta_mean: float = 0.0
    beta_var: float = 1.0e10
    rho_mean: float = 0.0
    rho_var: float = 1.0e10
    gamma_a: float = 2.0
    gamma_b: float = 1.0
    nu_grid: np.ndarray = field(default_factory=default_nu_grid)
    mu_var: float = 1.0e10

    def __post_init__(self):
        grid = np.asarray(self.nu_grid, dtype=float)
        if grid.size == 0 or np.any(np.diff(grid) <= 0) or np.any(grid <= 0):
            raise ValueError("nu_grid must be nonempty, strictly increasing, > 0")
        if min(self.beta_var, self.rho_var, self.mu_var) <= 0:
            raise ValueError("prior variances must be > 0")
        if self.gamma_a <= 0 or self.gamma_b <= 0:
            raise ValueError("gamma prior shape/rate must be > 0")
        object.__setattr__(self, "nu_grid", grid)


@dataclass
class Panel:
    """Space-time data cube.

    O is (n, T) log-scale workload; X is (T, n, m) features with the first
    column identically 1 (intercept); mask is (n, T) with True marking
    missing observations (their O entries carry no information).
    """

    grid: SiteGrid
    O: np.ndarray
    X: np.ndarray
    mask: np.ndarray

    def __post_init__(self):
        self.O = np.asarray(self.O, dtype=float)
        self.X = np.asarray(self.X, dtype=float)
        self.mask = np.asarray(self.mask, dtype=bool)
        n = self.grid.n
        if self.O.ndim != 2 or self.O.shape[0] != n:
            raise ValueError(f"O must be (n, T) with n={n}, got {self.O.shape}")
        T = self.O.shape[1]
        if self.X.shape[:2] != (T, n) or self.X.ndim != 3:
            raise ValueError(f"X must be (T, n, m), got {self.X.shape}")
        if self.mask.shape != (n, T):
            raise ValueError(f"mask must be (n, T), got {self.mask.shape}")
        if not np.all(np.isfinite(self.X)):
            raise ValueError("features must be finite")
        if T > 0 and not np.allclose(self.X[:, :, 0], 1.0):
            raise ValueError("first feature column must be the intercept (all ones)")
        if not np.all(np.isfinite(self.O[~self.mask])):
            raise ValueError("observed workload entries must be finite")

    @property
    def n(self) -> int:
        return self.grid.n

    @property
    def T(self) -> int:
        return self.O.shape[1]

    @property
    def m(self) -> int:
        return self.X.shape[2]

    @property
    def n_observed(self) -> int:
        return int((~self.mask).sum())

    def xbeta(self, beta: np.ndarray) -> np.ndarray:
        """X_t beta for all slots, returned as (n, T)."""
        T, n, m = self.X.shape
        return (self.X.reshape(-1, m) @ beta).reshape(T, n).T


@dataclass
class Theta:
    """Full parameter vector including the latent field."""

    beta: np.ndarray
    rho: float
    sigma_eps2: float
    sigma_eta2: float
    phi: float
    nu: float
    mu: np.ndarray
    sigma2: float
    V: np.ndarray  # (n, T)
    V0: np.ndarray  # (n,)

    def __post_init__(self):
        self.beta = np.asarray(self.beta, dtype=float)
        self.mu = np.asarray(self.mu, dtype=float)
        self.V = np.asarray(self.V, dtype=float)
        self.V0 = np.asarray(self.V0, dtype=float)

    def validate(self, panel: Panel) -> None:
        if not -1.0 < self.rho < 1.0:
            raise ValueError(f"rho must be in (-1, 1), got {self.rho}")
        for name in ("sigma_eps2", "sigma_eta2", "sigma2", "phi", "nu"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be > 0")
        if self.beta.shape != (panel.m,):
            raise ValueError("beta dimension mismatch")
        if self.V.shape != (panel.n, panel.T) or self.V0.shape != (panel.n,):
            raise ValueError("latent field dimension mismatch")
        if self.mu.shape != (panel.n,):
            raise ValueError("mu dimension mismatch")

    def copy(self) -> "Theta":
        return Theta(
            beta=self.beta.copy(),
            rho=self.rho,
            sigma_eps2=self.sigma_eps2,
            sigma_eta2=self.sigma_eta2,
            phi=self.phi,
            nu=self.nu,
            mu=self.mu.copy(),
            sigma2=self.sigma2,
            V=self.V.copy(),
            V0=self.V0.copy(),
        )


def lagged_latents(theta: Theta) -> np.ndarray:
    """[V_0, V_1, ..., V_{T-1}] as (n, T): the AR regressor for each slot."""
    n, T = theta.V.shape
    out = np.empty((n, T))
    if T > 0:
        out[:, 0] = theta.V0
        out[:, 1:] = theta.V[:, :-1]
    return out


def _log_gamma_prior_on_precision(value: float, a: float, b: float) -> float:
    # Gamma(a, b) density on 1/value, expressed in the variance
    # parameterization (Jacobian included); additive constants dropped.
    return -(a + 1.0) * math.log(value) - b / value


def _log_priors(
    theta: Theta, priors: PriorSpec, model: str
) -> float:
    lp = -0.5 * float(np.sum((theta.beta - priors.beta_mean) ** 2)) / priors.beta_var
    lp += _log_gamma_prior_on_precision(theta.sigma_eps2, priors.gamma_a, priors.gamma_b)
    lp += _log_gamma_prior_on_precision(theta.sigma_eta2, priors.gamma_a, priors.gamma_b)
    # Gamma prior directly on the decay phi.
    lp += (priors.gamma_a - 1.0) * math.log(theta.phi) - priors.gamma_b * theta.phi
    if model == "ar":
        if not -1.0 < theta.rho < 1.0:
            return -math.inf
        lp += -0.5 * (theta.rho - priors.rho_mean) ** 2 / priors.rho_var
        lp += _log_gamma_prior_on_precision(theta.sigma2, priors.gamma_a, priors.gamma_b)
        lp += -0.5 * float(theta.mu @ theta.mu) / priors.mu_var
    # nu carries a uniform prior over its grid: constant inside the support.
    return lp


@dataclass(frozen=True)
class PosteriorTerms:
    """Additive decomposition of the joint log posterior.

    `evolution` holds one term per time slot (log-determinant share plus the
    quadratic form); `initial_state` is zero for the GP variant.
    """

    observation: float
    evolution: np.ndarray
    initial_state: float
    priors: float

    @property
    def total(self) -> float:
        return self.observation + float(np.sum(self.evolution)) + self.initial_state + self.priors


def log_joint_terms(
    theta: Theta,
    panel: Panel,
    priors: PriorSpec,
    model: str = "ar",
    cors: CorrelationMatrix | None = None,
) -> PosteriorTerms:
    """Term-by-term joint log posterior; the *_ar/_gp functions sum this."""
    if model not in ("ar", "gp"):
        raise ValueError(f"model must be 'ar' or 'gp', got {model!r}")
    if cors is None:
        cors = correlation_matrix(panel.grid, theta.phi, theta.nu, DEFAULT_JITTER)

    obs = ~panel.mask
    n_obs = int(obs.sum())
    resid_obs = panel.O[obs] - theta.V[obs]
    observation = -0.5 * n_obs * math.log(theta.sigma_eps2)
    observation -= 0.5 * float(resid_obs @ resid_obs) / theta.sigma_eps2

    n, T = panel.n, panel.T
    xb = panel.xbeta(theta.beta)
    if model == "ar":
        r = theta.V - theta.rho * lagged_latents(theta) - xb
    else:
        r = theta.V - xb
    quad_t = np.sum(r * cors.solve(r), axis=0)
    evolution = -0.5 * (n * math.log(theta.sigma_eta2) + cors.log_det) - 0.5 * quad_t / theta.sigma_eta2

    initial_state = 0.0
    if model == "ar":
        d0 = theta.V0 - theta.mu
        initial_state = -0.5 * (n * math.log(theta.sigma2) + cors.log_det)
        initial_state -= 0.5 * float(d0 @ cors.solve(d0)) / theta.sigma2

    return PosteriorTerms(
        observation=observation,
        evolution=np.asarray(evolution, dtype=float),
        initial_state=initial_state,
        priors=_log_priors(theta, priors, model),
    )


def log_joint_posterior_ar(
    theta: Theta,
    panel: Panel,
    priors: PriorSpec,
    cors: CorrelationMatrix | None = None,
) -> float:
    """Log density of the AR joint posterior up to an additive constant.

    The observation term sums over observed cells only (masked entries carry
    no information); `cors` may supply a prebuilt correlation matrix for the
    current (phi, nu).
    """
    return log_joint_terms(theta, panel, priors, "ar", cors).total


def log_joint_posterior_gp(
    theta: Theta,
    panel: Panel,
    priors: PriorSpec,
    cors: CorrelationMatrix | None = None,
) -> float:
    """Log density of the GP joint posterior up to an additive constant.

    rho, V0, mu and sigma2 do not enter: the GP variant has no temporal
    recursion and no initial-state block.
    """
    return log_joint_terms(theta, panel, priors, "gp", cors).total


def simulate_panel(
    grid: SiteGrid,
    T: int,
    theta_true: Theta,
    seed: int,
    X: np.ndarray | None = None,
    model: str = "ar",
    mask: np.ndarray | None = None,
) -> Panel:
    """Forward-simulate a panel from known parameters; deterministic per seed.

    V_0 ~ N(mu, sigma^2 zeta_0), then V_t = rho V_{t-1} + X_t beta + eta_t
    and O_t = V_t + eps_t (the GP variant drops the rho term).  When X is not
    given, features are an intercept plus standard-normal columns drawn from
    the same seed stream.
    """
    if model not in ("ar", "gp"):
        raise ValueError(f"model must be 'ar' or 'gp', got {model!r}")
    rng = np.random.default_rng(seed)
    n = grid.n
    m = theta_true.beta.shape[0]
    if X is None:
        X = np.ones((T, n, m))
        if m > 1:
            X[:, :, 1:] = rng.standard_normal((T, n, m - 1))
    else:
        X = np.asarray(X, dtype=float)

    cors = correlation_matrix(grid, theta_true.phi, theta_true.nu, DEFAULT_JITTER)
    L = cors.chol
    V0 = theta_true.mu + math.sqrt(theta_true.sigma2) * (L @ rng.standard_normal(n))
    sig_eta = math.sqrt(theta_true.sigma_eta2)
    sig_eps = math.sqrt(theta_true.sigma_eps2)

    V = np.empty((n, T))
    prev = V0
    for t in range(T):
        eta = sig_eta * (L @ rng.standard_normal(n))
        mean = X[t] @ theta_true.beta + eta
        if model == "ar":
            mean = mean + theta_true.rho * prev
        V[:, t] = mean
        prev = V[:, t]
    O = V + sig_eps * rng.standard_normal((n, T))

    if mask is None:
        mask = np.zeros((n, T), dtype=bool)
    return Panel(grid=grid, O=O, X=X, mask=mask)


# ---------------------------------------------------------------------------
# Panel CSV serialization
# site_id, x_m, y_m, t, observed(0/1), o_log, f_1..f_{m-1}
# ---------------------------------------------------------------------------


def write_panel_csv(panel: Panel, path) -> None:
    m = panel.m
    header = ["site_id", "x_m", "y_m", "t", "observed", "o_log"]
    header += [f"f_{j}" for j in range(1, m)]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for i, sid in enumerate(panel.grid.ids):
            x, y = panel.grid.coords[i]
            for t in range(panel.T):
                row = [sid, repr(float(x)), repr(float(y)), t,
                       0 if panel.mask[i, t] else 1, repr(float(panel.O[i, t]))]
                row += [repr(float(panel.X[t, i, j])) for j in range(1, m)]
                w.writerow(row)


def read_panel_csv(path) -> Panel:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    header, rows = rows[0], rows[1:]
    n_feat = sum(1 for h in header if h.startswith("f_"))
    ids: list[str] = []
    coords: dict[str, tuple[float, float]] = {}
    slots: set[int] = set()
    cells: dict[tuple[str, int], tuple[bool, float, list[float]]] = {}
    for row in rows:
        sid = row[0]
        if sid not in coords:
            ids.append(sid)
            coords[sid] = (float(row[1]), float(row[2]))
        t = int(row[3])
        slots.add(t)
        observed = row[4] == "1"
        cells[(sid, t)] = (observed, float(row[5]), [float(v) for v in row[6:6 + n_feat]])
    T = max(slots) + 1 if slots else 0
    n = len(ids)
    m = n_feat + 1
    grid = SiteGrid(tuple(ids), np.array([coords[s] for s in ids]))
    O = np.zeros((n, T))
    X = np.ones((T, n, m))
    mask = np.ones((n, T), dtype=bool)
    for (sid, t), (observed, o_val, feats) in cells.items():
        i = ids.index(sid)
        O[i, t] = o_val
        mask[i, t] = not observed
        X[t, i, 1:] = feats
    return Panel(grid=grid, O=O, X=X, mask=mask)
