"""Task-offloading simulation: does prediction-guided allocation help?

Tasks arrive per (location, slot) with normally distributed CPU-cycle
requirements and completion tolerances.  A fixed cycle budget is split either
equally across locations or weighted by predicted demand; co-located tasks
share their cell's allocation equally, and a task completes when its
processing time (cycles / per-task share, in slot units) fits within its
tolerance.  Weighted allocations are damped by a movable-resource deploy
delay factor gamma drawn per cell.

Two weighted variants exist: the literal share rule
c = (C/l) * gamma * v / sum_all(v), and a budget-normalized rule
c = C * gamma * v / sum_locations(v) that spends the full budget within each
slot.  The literal rule deploys only about gamma * C / l cycles in total, so
the budget-normalized switch is what makes guided allocation competitive.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.special import ndtr, ndtri

TRUNC_FLOOR = 0.1  # lower truncation for cycles and tolerances


@dataclass(frozen=True)
class SimConfig:
    """Simulation settings; defaults follow the reference experiment."""

    mu_c: float = 10.0  # mean required CPU cycles per task
    sigma_c2: float = 3.0  # variance of required cycles
    mu_delta: float = 5.0  # mean max tolerance (mu_c / 2)
    sigma_delta2: float = 2.0  # variance of tolerance
    c_total: float = 1000.0  # total CPU cycles to distribute
    tasks_per_slot: tuple[int, int] = (107, 4501)  # demand range
    n_locations: int = 10
    mu_gamma: float = 0.7  # mean deploy-delay factor
    sigma_gamma2: float = 0.3  # variance of deploy-delay factor
    reps: int = 500
    seed: int = 0
    budget_normalized: bool = False

    def __post_init__(self):
        if min(self.sigma_c2, self.sigma_delta2, self.sigma_gamma2) <= 0:
            raise ValueError("variances must be > 0")
        if self.mu_c <= 0 or self.c_total <= 0:
            raise ValueError("scales must be > 0")
        if self.n_locations < 1 or self.reps < 1:
            raise ValueError("need n_locations >= 1 and reps >= 1")


@dataclass(frozen=True)
class SimResult:
    completed_rate_equal: float
    completed_rate_weighted: float
    per_location_equal: np.ndarray  # completed / offered per location
    per_location_weighted: np.ndarray
    offered_per_location: np.ndarray  # offered per location per replication
    demand: np.ndarray  # (l, T) offered counts per cell (same every rep)
    completed_equal: np.ndarray  # (reps, l, T) completed counts
    completed_weighted: np.ndarray
    reps: int

    def __post_init__(self):
        for r in (self.completed_rate_equal, self.completed_rate_weighted):
            if not 0.0 <= r <= 1.0:
                raise ValueError("completed rates must lie in [0, 1]")


def _truncated_normal(rng, mean, sd, lo, hi, size):
    """Inverse-CDF draw from N(mean, sd^2) truncated to [lo, hi]."""
    a = ndtr((lo - mean) / sd)
    b = ndtr((hi - mean) / sd)
    u = rng.uniform(a, b, size=size)
    return mean + sd * ndtri(u)


def generate_tasks(config: SimConfig, demand: np.ndarray, rng):
    """Per-cell task draws: (cycles, tolerance) arrays per (location, slot).

    Both are normal draws truncated below at 0.1 (negative cycles or
    tolerances are physically meaningless).  Deterministic per rng state.
    """
    demand = np.asarray(demand, dtype=int)
    if np.any(demand < 0):
        raise ValueError("demand counts must be >= 0")
    sd_c = math.sqrt(config.sigma_c2)
    sd_d = math.sqrt(config.sigma_delta2)
    tasks = {}
    for (i, j), count in np.ndenumerate(demand):
        count = int(count)
        if count == 0:
            continue
        cycles = _truncated_normal(rng, config.mu_c, sd_c, TRUNC_FLOOR, math.inf, count)
        tol = _truncated_normal(rng, config.mu_delta, sd_d, TRUNC_FLOOR, math.inf, count)
        tasks[(i, j)] = (cycles, tol)
    return tasks


def allocate(config: SimConfig, mode: str, predictions: np.ndarray | None, rng) -> np.ndarray:
    """Cycle budget per (location, slot).

    equal: C/l everywhere (fixed infrastructure, no deploy delay).
    weighted: share rule scaled by a per-cell deploy-delay factor gamma,
    truncated to [0, 1]; the denominator is the all-cell demand sum (literal
    rule) or the per-slot sum when `budget_normalized` is set.
    """
    if mode == "equal":
        if predictions is None:
            raise ValueError("equal mode still needs the demand shape")
        shape = np.asarray(predictions).shape
        return np.full(shape, config.c_total / config.n_locations)
    if mode != "weighted":
        raise ValueError(f"mode must be 'equal' or 'weighted', got {mode!r}")
    v = np.asarray(predictions, dtype=float)
    if v.ndim != 2 or v.shape[0] != config.n_locations:
        raise ValueError("predictions must be (n_locations, n_slots)")
    if np.any(v < 0):
        raise ValueError("predictions must be >= 0")
    total = v.sum()
    if total <= 0:
        raise ValueError("weighted mode needs a positive prediction mass")
    sd_g = math.sqrt(config.sigma_gamma2)
    gamma = _truncated_normal(rng, config.mu_gamma, sd_g, 0.0, 1.0, v.shape)
    if config.budget_normalized:
        slot_tot = v.sum(axis=0, keepdims=True)
        weights = np.divide(v, slot_tot, out=np.zeros_like(v), where=slot_tot > 0)
        return config.c_total * gamma * weights
    return (config.c_total / config.n_locations) * gamma * v / total


def run_slot(cycles: np.ndarray, tolerance: np.ndarray, c_cell: float) -> int:
    """Completed-task count in one cell.

    u co-located tasks share the cell's per-slot budget equally, so a task
    needing c cycles takes c * u / c_cell slot units; it completes when that
    fits its tolerance.  A zero budget expires everything.
    """
    u = cycles.size
    if u == 0:
        return 0
    if c_cell <= 0.0:
        return 0
    times = cycles * u / c_cell
    return int(np.sum(times <= tolerance))


def _replicate(config: SimConfig, demand, predictions, rep_seed):
    rng = np.random.default_rng(rep_seed)
    tasks = generate_tasks(config, demand, rng)
    alloc_equal = allocate(config, "equal", demand, rng)
    alloc_weighted = allocate(config, "weighted", predictions, rng)
    l, T = np.asarray(demand).shape
    comp_eq = np.zeros((l, T), dtype=int)
    comp_wt = np.zeros((l, T), dtype=int)
    for (i, j), (cycles, tol) in tasks.items():
        comp_eq[i, j] = run_slot(cycles, tol, alloc_equal[i, j])
        comp_wt[i, j] = run_slot(cycles, tol, alloc_weighted[i, j])
    return comp_eq, comp_wt


def run_simulation(config: SimConfig, demand, predictions) -> SimResult:
    """Average completed-task rates for both modes over seeded replications.

    Replications use seeds derived from (config.seed, replication index), so
    the result is deterministic for a given master seed.
    """
    demand = np.asarray(demand, dtype=int)
    if demand.ndim != 2 or demand.shape[0] != config.n_locations:
        raise ValueError("demand must be (n_locations, n_slots)")
    l, T = demand.shape
    comp_eq = np.zeros((config.reps, l, T), dtype=int)
    comp_wt = np.zeros((config.reps, l, T), dtype=int)
    for rep in range(config.reps):
        comp_eq[rep], comp_wt[rep] = _replicate(config, demand, predictions, [config.seed, rep])
    offered_loc = demand.sum(axis=1).astype(float) * config.reps
    eq_loc = comp_eq.sum(axis=(0, 2)).astype(float)
    wt_loc = comp_wt.sum(axis=(0, 2)).astype(float)
    total = offered_loc.sum()
    with np.errstate(invalid="ignore", divide="ignore"):
        per_eq = np.divide(eq_loc, offered_loc, out=np.zeros_like(eq_loc), where=offered_loc > 0)
        per_wt = np.divide(wt_loc, offered_loc, out=np.zeros_like(wt_loc), where=offered_loc > 0)
    return SimResult(
        completed_rate_equal=float(eq_loc.sum() / total) if total else 0.0,
        completed_rate_weighted=float(wt_loc.sum() / total) if total else 0.0,
        per_location_equal=per_eq,
        per_location_weighted=per_wt,
        offered_per_location=demand.sum(axis=1).astype(float),
        demand=demand,
        completed_equal=comp_eq,
        completed_weighted=comp_wt,
        reps=config.reps,
    )


def reference_demand(
    config: SimConfig,
    n_slots: int = 20,
    hot_share: float = 0.8,
    seed: int = 0,
    scale: tuple[int, int] = (107, 200),
) -> np.ndarray:
    """Seeded heterogeneous demand: one hot location holds `hot_share` of the
    tasks; per-slot totals drawn uniformly from `scale` (the low portion of
    the configured demand range, where a fixed budget is contested but not
    hopeless)."""
    lo, hi = scale
    if not config.tasks_per_slot[0] <= lo <= hi <= config.tasks_per_slot[1]:
        raise ValueError("scale must fall inside config.tasks_per_slot")
    rng = np.random.default_rng(seed)
    l = config.n_locations
    demand = np.zeros((l, n_slots), dtype=int)
    hot = 0
    for j in range(n_slots):
        total = int(rng.integers(lo, hi + 1))
        hot_count = int(round(hot_share * total))
        rest = total - hot_count
        demand[hot, j] = hot_count
        if l > 1:
            others = rng.multinomial(rest, np.full(l - 1, 1.0 / (l - 1)))
            demand[np.arange(l) != hot, j] = others
    return demand


def write_sim_csv(result: SimResult, path) -> None:
    """Per (mode, rep, location, slot) detail plus one summary row per mode."""
    l, T = result.demand.shape
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["mode", "rep", "location", "slot", "offered", "completed"])
        for mode, detail in (("equal", result.completed_equal), ("weighted", result.completed_weighted)):
            for rep in range(result.reps):
                for i in range(l):
                    for j in range(T):
                        w.writerow([mode, rep, i, j, int(result.demand[i, j]), int(detail[rep, i, j])])
        total_offered = int(result.demand.sum()) * result.reps
        w.writerow(["equal", "all", "", "", total_offered, int(result.completed_equal.sum())])
        w.writerow(["weighted", "all", "", "", total_offered, int(result.completed_weighted.sum())])
