"""Prediction scoring: pointwise error metrics and the predictive criterion.

Pointwise metrics over d records: MSE, MAE, MAPE, the relative separation
ratio RMSEP = sum (pred - obs)^2 / sum (mean_pred - obs)^2 (the denominator
centers on the mean of the *predictions*, implemented verbatim), and RMSE
reported as sqrt(MSE).

The predictive model choice criterion (PMCC) is the summed squared error of
the predictive means plus the summed predictive variances.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class PointErrors:
    mse: float
    mae: float
    mape: float
    rmsep: float
    rmse: float
    mape_excluded: int  # records dropped from MAPE for zero observed value
    rmsep_defined: bool  # False when the RMSEP denominator vanishes


@dataclass(frozen=True)
class ScoreReport:
    mse: float
    mae: float
    mape: float
    rmsep: float
    rmse: float
    pmcc: float
    d: int

    def __post_init__(self):
        if self.d < 1:
            raise ValueError("a score report needs at least one record")


def point_errors(pred, obs) -> PointErrors:
    """Pointwise error metrics between predictions and observations.

    Zero observed values are excluded from MAPE (their count is reported);
    a zero RMSEP denominator is flagged and reported as nan.
    """
    pred = np.asarray(pred, dtype=float)
    obs = np.asarray(obs, dtype=float)
    if pred.shape != obs.shape or pred.ndim != 1 or pred.size < 1:
        raise ValueError("pred and obs must be equal-length 1-D with d >= 1")
    err = pred - obs
    mse = float(np.mean(err**2))
    mae = float(np.mean(np.abs(err)))

    nonzero = obs != 0.0
    excluded = int(np.sum(~nonzero))
    if nonzero.any():
        mape = float(np.mean(np.abs(err[nonzero] / obs[nonzero])))
    else:
        mape = math.nan

    denom = float(np.sum((np.mean(pred) - obs) ** 2))
    numer = float(np.sum(err**2))
    if denom > 0.0:
        rmsep = numer / denom
        defined = True
    elif numer == 0.0:
        rmsep = 0.0  # exact predictions of a constant series
        defined = True
    else:
        rmsep = math.nan
        defined = False

    return PointErrors(
        mse=mse,
        mae=mae,
        mape=mape,
        rmsep=rmsep,
        rmse=math.sqrt(mse),
        mape_excluded=excluded,
        rmsep_defined=defined,
    )


def pmcc(pred_mean, pred_var, obs) -> float:
    """Squared-error-plus-variance criterion over aligned cells."""
    pred_mean = np.asarray(pred_mean, dtype=float)
    pred_var = np.asarray(pred_var, dtype=float)
    obs = np.asarray(obs, dtype=float)
    if not (pred_mean.shape == pred_var.shape == obs.shape):
        raise ValueError("pmcc inputs must share one shape")
    if np.any(pred_var < 0.0):
        raise ValueError("predictive variances must be nonnegative")
    return float(np.sum((pred_mean - obs) ** 2) + np.sum(pred_var))


def score_report(pred, obs, pred_var=None) -> ScoreReport:
    """Bundle the pointwise metrics (and PMCC when variances are given)."""
    pe = point_errors(pred, obs)
    crit = pmcc(pred, pred_var, obs) if pred_var is not None else math.nan
    return ScoreReport(
        mse=pe.mse, mae=pe.mae, mape=pe.mape, rmsep=pe.rmsep, rmse=pe.rmse,
        pmcc=crit, d=int(np.asarray(pred).size),
    )


_REPORT_ROWS = [
    ("Predictive Model Choice Criteria (PMCC)", "pmcc"),
    ("Mean Squared Error (MSE)", "mse"),
    ("Mean Absolute Error (MAE)", "mae"),
    ("Mean Absolute Percentage Error (MAPE)", "mape"),
    ("Relative Mean Separation (RMSEP)", "rmsep"),
    ("Relative Mean Squared Error (RMSE)", "rmse"),
]


def write_score_csv(report: ScoreReport, path) -> None:
    """Two-column CSV: metric label, value."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["loss", "value"])
        for label, attr in _REPORT_ROWS:
            w.writerow([label, repr(float(getattr(report, attr)))])
        w.writerow(["records", report.d])
