"""Matern spatial correlation and correlation matrices over a site grid.

The correlation between two sites at distance d is

    kappa(d; phi, nu) = (2 sqrt(nu) d phi)^nu K_nu(2 sqrt(nu) d phi)
                        / (2^(nu-1) Gamma(nu)),

with kappa(0) = 1 by the limit.  phi > 0 is an inverse-range decay (it
multiplies the distance) and nu > 0 the smoothness.  At nu = 1/2 the family
reduces to exp(-sqrt(2) phi d).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg

from .specfun import matern_scaled

DEFAULT_JITTER = 1.0e-8

_TRIU_CACHE: dict = {}


def _triu_indices(n: int):
    if n not in _TRIU_CACHE:
        _TRIU_CACHE[n] = np.triu_indices(n, 1)
    return _TRIU_CACHE[n]


class ConditioningError(RuntimeError):
    """A correlation matrix failed to factor even after jitter."""


@dataclass(frozen=True)
class SiteGrid:
    """Site labels with planar coordinates in meters."""

    ids: tuple[str, ...]
    coords: np.ndarray  # (n, 2)

    def __post_init__(self):
        coords = np.atleast_2d(np.asarray(self.coords, dtype=float))
        if coords.shape != (len(self.ids), 2):
            raise ValueError(f"coords shape {coords.shape} != ({len(self.ids)}, 2)")
        if len(self.ids) < 1:
            raise ValueError("grid needs at least one site")
        if len(set(self.ids)) != len(self.ids):
            raise ValueError("site ids must be unique")
        if not np.all(np.isfinite(coords)):
            raise ValueError("coords must be finite")
        object.__setattr__(self, "ids", tuple(str(i) for i in self.ids))
        object.__setattr__(self, "coords", coords)

    @property
    def n(self) -> int:
        return len(self.ids)

    def subset(self, indices) -> "SiteGrid":
        indices = list(indices)
        return SiteGrid(tuple(self.ids[i] for i in indices), self.coords[indices])


def distance_matrix(grid: SiteGrid) -> np.ndarray:
    """Pairwise Euclidean distances, (n, n), zero diagonal."""
    diff = grid.coords[:, None, :] - grid.coords[None, :, :]
    return np.hypot(diff[..., 0], diff[..., 1])


def cross_distances(a: SiteGrid, b: SiteGrid) -> np.ndarray:
    """Distances from each site of `a` to each site of `b`, (n_a, n_b)."""
    diff = a.coords[:, None, :] - b.coords[None, :, :]
    return np.hypot(diff[..., 0], diff[..., 1])


def matern(d, phi: float, nu: float):
    """Matern correlation at distance(s) d.  Scalar in, scalar out.

    Values saturating the Bessel evaluation at vanishing scaled distance are
    the d -> 0 limit and return exactly 1.
    """
    if not phi > 0.0:
        raise ValueError(f"phi must be > 0, got {phi}")
    if not nu > 0.0:
        raise ValueError(f"nu must be > 0, got {nu}")
    d_arr = np.asarray(d, dtype=float)
    if np.any(d_arr < 0.0):
        raise ValueError("distances must be >= 0")

    t = np.ascontiguousarray((2.0 * math.sqrt(nu) * phi * d_arr).ravel())
    out = matern_scaled(nu, t).reshape(d_arr.shape)
    if np.isscalar(d) or d_arr.ndim == 0:
        return float(out)
    return out


@dataclass(frozen=True)
class CorrelationMatrix:
    """Matern correlation matrix with jitter and its Cholesky factor."""

    values: np.ndarray  # (n, n), diagonal 1 + jitter
    jitter: float
    chol: np.ndarray = field(repr=False)  # lower triangular
    log_det: float

    _cache: dict = field(default_factory=dict, repr=False, compare=False)

    @property
    def n(self) -> int:
        return self.values.shape[0]

    def solve(self, b: np.ndarray) -> np.ndarray:
        """Solve (zeta + jitter I) x = b via the stored factor."""
        return scipy.linalg.cho_solve((self.chol, True), b, check_finite=False)

    @property
    def inv(self) -> np.ndarray:
        if "inv" not in self._cache:
            self._cache["inv"] = self.solve(np.eye(self.n))
        return self._cache["inv"]

    def solve_fast(self, b: np.ndarray) -> np.ndarray:
        """Inverse-multiply; cheaper than `solve` in tight loops at small n."""
        return self.inv @ b

    def quad(self, r: np.ndarray) -> float:
        """Sum over columns of r[:, j]^T zeta^{-1} r[:, j]."""
        return float(np.sum(r * self.solve(r)))

    def quad_fast(self, r: np.ndarray) -> float:
        return float(np.sum(r * (self.inv @ r)))

    def cached(self, key, fn):
        """Memoize a derived quantity on this factorization's lifetime."""
        if key not in self._cache:
            self._cache[key] = fn()
        return self._cache[key]


def correlation_matrix(
    grid: SiteGrid,
    phi: float,
    nu: float,
    jitter: float = DEFAULT_JITTER,
    dists: np.ndarray | None = None,
) -> CorrelationMatrix:
    """Build the Matern correlation matrix over a grid and factor it.

    `dists` may supply the precomputed distance matrix (the sampler reuses
    one across thousands of builds).

    Raises
    ------
    ConditioningError
        If the Cholesky factorization fails after the jitter is applied
        (typically duplicate sites with jitter = 0).
    """
    if not phi > 0.0:
        raise ValueError(f"phi must be > 0, got {phi}")
    if not nu > 0.0:
        raise ValueError(f"nu must be > 0, got {nu}")
    if jitter < 0.0:
        raise ValueError(f"jitter must be >= 0, got {jitter}")
    d = distance_matrix(grid) if dists is None else dists
    n = grid.n
    iu = _triu_indices(n)
    scaled = np.ascontiguousarray(2.0 * math.sqrt(nu) * phi * d[iu])
    upper = matern_scaled(nu, scaled)
    values = np.empty((n, n))
    values[iu] = upper
    values.T[iu] = upper
    np.fill_diagonal(values, 1.0 + jitter)
    try:
        chol = np.linalg.cholesky(values)
    except np.linalg.LinAlgError as exc:
        raise ConditioningError(
            f"correlation matrix not positive definite at phi={phi}, nu={nu}, "
            f"jitter={jitter}; grid may contain duplicate sites"
        ) from exc
    log_det = 2.0 * float(np.sum(np.log(np.diagonal(chol))))
    return CorrelationMatrix(values=values, jitter=jitter, chol=chol, log_det=log_det)
