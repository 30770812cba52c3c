"""Command-line driver: ingest, cluster, fit, predict, score, simulate, demo.

One YAML config document carries every knob; command-line flags override
file values, and the DEMANDCAST_OUT_DIR environment variable overrides the
output directory.  Every subcommand is a deterministic function of (config,
input files, seed).

Exit codes: 0 success; 2 configuration error (a JSON line on stderr names
the offending field); 3 numerical failure (JSON line names the module).
"""

from __future__ import annotations

import argparse
import copy
import csv
import json
import logging
import math
import os
import pickle
import sys

import numpy as np
import yaml

from .kernel import ConditioningError, SiteGrid
from .mcmc import (
    ChainConfig,
    DivergedError,
    MhTuning,
    posterior_summary,
    run_chains,
    write_chain_ndjson,
    write_summary_csv,
)
from .metrics import score_report, write_score_csv
from .model import Panel, PriorSpec, read_panel_csv, write_panel_csv
from .pipeline import (
    aggregate,
    elbow_curve,
    kmeans,
    read_records_csv,
    split_sites,
    synthesize_records,
    write_clustering_csv,
    write_elbow_csv,
    write_records_csv,
)
from .predict import back_transform, forecast_temporal, krige_spatial, write_prediction_csv
from .simulator import SimConfig, reference_demand, run_simulation, write_sim_csv

log = logging.getLogger("demandcast")

PICKLE_PROTOCOL = 4


class ConfigError(Exception):
    def __init__(self, field: str, message: str):
        super().__init__(f"{field}: {message}")
        self.field = field


DEFAULTS = {
    "paths": {"records": None, "panel": None, "out_dir": "out", "chains": None},
    "model": "ar",
    "seed": 0,
    "mcmc": {
        "n_iter": 5000,
        "n_burn": 1000,
        "chains": 1,
        "proposal_sd_phi": 0.5,
        "adapt": True,
        "workers": 1,
    },
    "pipeline": {
        "k": 25,
        "slot_seconds": 86400.0,
        "holdout": 10,
        "elbow_min": 1,
        "elbow_max": 30,
    },
    "predict": {"targets": None, "future": None, "horizon": 0, "thinning": 4},
    "score": {"predictions": None, "actual": None, "scale": "log"},
    "sim": {
        "mu_c": 10.0,
        "sigma_c2": 3.0,
        "mu_delta": 5.0,
        "sigma_delta2": 2.0,
        "c_total": 1000.0,
        "tasks_min": 107,
        "tasks_max": 4501,
        "n_locations": 10,
        "mu_gamma": 0.7,
        "sigma_gamma2": 0.3,
        "reps": 500,
        "budget_normalized": False,
        "demand": None,
        "predictions": None,
        "n_slots": 20,
        "hot_share": 0.8,
        "scale_min": 107,
        "scale_max": 200,
    },
    "demo": {"n_stations": 120, "n_users": 400, "n_days": 60},
}

_POSITIVE_INT = ("mcmc.n_iter", "mcmc.chains", "mcmc.workers", "pipeline.k",
                 "predict.thinning", "sim.reps", "sim.n_locations",
                 "demo.n_stations", "demo.n_users", "demo.n_days")
_NONNEG_INT = ("mcmc.n_burn", "pipeline.holdout", "predict.horizon", "seed",
               "sim.tasks_min", "sim.tasks_max", "sim.n_slots",
               "pipeline.elbow_min", "pipeline.elbow_max", "sim.scale_min", "sim.scale_max")
_POSITIVE_FLOAT = ("pipeline.slot_seconds", "mcmc.proposal_sd_phi", "sim.mu_c",
                   "sim.sigma_c2", "sim.mu_delta", "sim.sigma_delta2",
                   "sim.c_total", "sim.sigma_gamma2")


def _get(cfg, dotted):
    node = cfg
    for part in dotted.split("."):
        node = node[part]
    return node


def _deep_merge(base, override, path=""):
    out = copy.deepcopy(base)
    for key, value in override.items():
        where = f"{path}.{key}" if path else key
        if key not in base:
            raise ConfigError(where, "unknown configuration field")
        if isinstance(base[key], dict):
            if not isinstance(value, dict):
                raise ConfigError(where, "expected a mapping")
            out[key] = _deep_merge(base[key], value, where)
        else:
            out[key] = value
    return out


def _validate(cfg):
    if cfg["model"] not in ("ar", "gp"):
        raise ConfigError("model", "must be 'ar' or 'gp'")
    for dotted in _POSITIVE_INT:
        v = _get(cfg, dotted)
        if not isinstance(v, int) or isinstance(v, bool) or v < 1:
            raise ConfigError(dotted, f"must be a positive integer, got {v!r}")
    for dotted in _NONNEG_INT:
        v = _get(cfg, dotted)
        if not isinstance(v, int) or isinstance(v, bool) or v < 0:
            raise ConfigError(dotted, f"must be a nonnegative integer, got {v!r}")
    for dotted in _POSITIVE_FLOAT:
        v = _get(cfg, dotted)
        if not isinstance(v, (int, float)) or isinstance(v, bool) or not v > 0:
            raise ConfigError(dotted, f"must be a positive number, got {v!r}")
    if cfg["mcmc"]["n_burn"] >= cfg["mcmc"]["n_iter"]:
        raise ConfigError("mcmc.n_burn", "must be smaller than mcmc.n_iter")
    if cfg["score"]["scale"] not in ("log", "orig"):
        raise ConfigError("score.scale", "must be 'log' or 'orig'")
    if not isinstance(cfg["sim"]["hot_share"], (int, float)) or not 0 < cfg["sim"]["hot_share"] < 1:
        raise ConfigError("sim.hot_share", "must lie in (0, 1)")
    for key in ("mcmc.adapt", "sim.budget_normalized"):
        if not isinstance(_get(cfg, key), bool):
            raise ConfigError(key, "must be true or false")


def load_config(path=None, overrides=None):
    cfg = copy.deepcopy(DEFAULTS)
    if path is not None:
        try:
            with open(path) as fh:
                data = yaml.safe_load(fh) or {}
        except FileNotFoundError:
            raise ConfigError("paths.config", f"config file not found: {path}")
        except yaml.YAMLError as exc:
            raise ConfigError("paths.config", f"invalid YAML: {exc}")
        if not isinstance(data, dict):
            raise ConfigError("paths.config", "config document must be a mapping")
        cfg = _deep_merge(cfg, data)
    for dotted, value in (overrides or {}).items():
        node = cfg
        parts = dotted.split(".")
        for part in parts[:-1]:
            node = node[part]
        node[parts[-1]] = value
    if os.environ.get("DEMANDCAST_OUT_DIR"):
        cfg["paths"]["out_dir"] = os.environ["DEMANDCAST_OUT_DIR"]
    _validate(cfg)
    return cfg


def _out_dir(cfg) -> str:
    out = cfg["paths"]["out_dir"]
    os.makedirs(out, exist_ok=True)
    return out


def _require_path(cfg, dotted):
    value = _get(cfg, dotted)
    if not value:
        raise ConfigError(dotted, "required for this subcommand")
    if not os.path.exists(value):
        raise ConfigError(dotted, f"file not found: {value}")
    return value


def _progress_logger(tag):
    def cb(info):
        log.info(
            "%s iter=%d accept_phi=%.3f accept_nu=%.3f pmcc=%.2f step=%.3f",
            tag, info["iteration"], info["accept_phi"], info["accept_nu"],
            info["pmcc"], info["step_phi"],
        )
    return cb


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------


def cmd_ingest(cfg) -> int:
    records_path = _require_path(cfg, "paths.records")
    out = _out_dir(cfg)
    res = read_records_csv(records_path)
    log.info("ingested %d records (%d rejected) across %d stations",
             len(res.records), res.rejected, res.stations.n)
    k = min(cfg["pipeline"]["k"], res.stations.n)
    clustering = kmeans(res.stations, K=k, seed=cfg["seed"])
    panel = aggregate(res.records, res, clustering, cfg["pipeline"]["slot_seconds"])
    write_panel_csv(panel, os.path.join(out, "panel.csv"))
    log.info("panel: %d sites x %d slots (%d masked cells)",
             panel.n, panel.T, int(panel.mask.sum()))
    return 0


def cmd_cluster(cfg) -> int:
    records_path = _require_path(cfg, "paths.records")
    out = _out_dir(cfg)
    res = read_records_csv(records_path)
    k = min(cfg["pipeline"]["k"], res.stations.n)
    clustering = kmeans(res.stations, K=k, seed=cfg["seed"])
    write_clustering_csv(clustering, os.path.join(out, "clustering.csv"))
    lo = max(1, cfg["pipeline"]["elbow_min"])
    hi = min(cfg["pipeline"]["elbow_max"], res.stations.n)
    curve = elbow_curve(res.stations, range(lo, hi + 1), seed=cfg["seed"])
    write_elbow_csv(curve, os.path.join(out, "elbow.csv"))
    return 0


def _fit_chains(cfg, panel):
    tuning = MhTuning(
        proposal_sd_phi=cfg["mcmc"]["proposal_sd_phi"],
        adapt_during_burnin=cfg["mcmc"]["adapt"],
    )
    config = ChainConfig(
        model=cfg["model"],
        n_iter=cfg["mcmc"]["n_iter"],
        n_burn=cfg["mcmc"]["n_burn"],
        tuning=tuning,
        seed=cfg["seed"],
    )
    progress = _progress_logger(f"fit[{cfg['model']}]")
    return run_chains(
        panel, PriorSpec(), config, cfg["mcmc"]["chains"],
        progress=progress, workers=cfg["mcmc"]["workers"],
    )


def cmd_fit(cfg) -> int:
    panel_path = _require_path(cfg, "paths.panel")
    out = _out_dir(cfg)
    panel = read_panel_csv(panel_path)
    chains = _fit_chains(cfg, panel)
    for chain in chains:
        write_chain_ndjson(chain, os.path.join(out, f"chain_{chain.chain_index}.ndjson"))
    write_summary_csv(posterior_summary(chains), os.path.join(out, "summary.csv"))
    with open(os.path.join(out, "fit_stats.csv"), "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["chain", "accept_phi", "accept_nu", "pmcc", "final_step_phi"])
        for c in chains:
            w.writerow([c.chain_index, repr(c.accept_phi), repr(c.accept_nu),
                        repr(c.pmcc), repr(c.final_step_phi)])
    with open(os.path.join(out, "chains.pkl"), "wb") as fh:
        pickle.dump(chains, fh, protocol=PICKLE_PROTOCOL)
    for c in chains:
        log.info("chain %d: accept_phi=%.3f accept_nu=%.3f pmcc=%.2f",
                 c.chain_index, c.accept_phi, c.accept_nu, c.pmcc)
    return 0


def _read_targets_csv(path, panel):
    """Feature rows for new sites: site_id,x_m,y_m,t,f_1..f_{m-1}."""
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    header, rows = rows[0], rows[1:]
    n_feat = sum(1 for h in header if h.startswith("f_"))
    if n_feat != panel.m - 1:
        raise ConfigError("predict.targets", f"expected {panel.m - 1} feature columns, got {n_feat}")
    ids, coords = [], {}
    cells = {}
    for row in rows:
        sid = row[0]
        if sid not in coords:
            ids.append(sid)
            coords[sid] = (float(row[1]), float(row[2]))
        cells[(sid, int(row[3]))] = [float(v) for v in row[4:4 + n_feat]]
    grid = SiteGrid(tuple(ids), np.array([coords[s] for s in ids]))
    feats = np.ones((panel.T, len(ids), panel.m))
    for i, sid in enumerate(ids):
        for t in range(panel.T):
            if (sid, t) not in cells:
                raise ConfigError(
                    "predict.targets", f"missing features for site {sid} at slot {t}"
                )
            feats[t, i, 1:] = cells[(sid, t)]
    return grid, feats


def _future_features(cfg, panel, horizon):
    path = cfg["predict"]["future"]
    if path is not None:
        _require_path(cfg, "predict.future")
        with open(path, newline="") as fh:
            rows = list(csv.reader(fh))
        header, rows = rows[0], rows[1:]
        n_feat = sum(1 for h in header if h.startswith("f_"))
        if n_feat != panel.m - 1:
            raise ConfigError("predict.future", f"expected {panel.m - 1} feature columns")
        feats = np.ones((horizon, panel.n, panel.m))
        index = {sid: i for i, sid in enumerate(panel.grid.ids)}
        seen = set()
        for row in rows:
            sid, t = row[0], int(row[3])
            if sid not in index or not panel.T <= t < panel.T + horizon:
                continue
            feats[t - panel.T, index[sid], 1:] = [float(v) for v in row[4:4 + n_feat]]
            seen.add((sid, t))
        if len(seen) < horizon * panel.n:
            raise ConfigError("predict.future", "missing future feature rows")
        return feats
    # fall back to per-site historical feature means, tiled over the horizon
    log.info("no future-features file: using per-site historical feature means")
    mean_feats = panel.X.mean(axis=0)  # (n, m)
    feats = np.tile(mean_feats, (horizon, 1, 1))
    feats[:, :, 0] = 1.0
    return feats


def cmd_predict(cfg) -> int:
    panel_path = _require_path(cfg, "paths.panel")
    chains_path = cfg["paths"]["chains"] or os.path.join(cfg["paths"]["out_dir"], "chains.pkl")
    if not os.path.exists(chains_path):
        raise ConfigError("paths.chains", f"fitted chains not found: {chains_path}")
    out = _out_dir(cfg)
    panel = read_panel_csv(panel_path)
    with open(chains_path, "rb") as fh:
        chains = pickle.load(fh)
    chain = chains[0]
    thin = cfg["predict"]["thinning"]
    wrote = False
    if cfg["predict"]["targets"]:
        _require_path(cfg, "predict.targets")
        new_sites, feats = _read_targets_csv(cfg["predict"]["targets"], panel)
        field = krige_spatial(chain, panel, new_sites, feats, thin=thin, seed=cfg["seed"])
        write_prediction_csv(field, os.path.join(out, "predictions_spatial.csv"))
        wrote = True
    horizon = cfg["predict"]["horizon"]
    if horizon > 0:
        feats = _future_features(cfg, panel, horizon)
        field = forecast_temporal(chain, panel, feats, horizon, thin=thin, seed=cfg["seed"])
        write_prediction_csv(field, os.path.join(out, "predictions_forecast.csv"))
        wrote = True
    if not wrote:
        raise ConfigError("predict", "nothing to do: set predict.targets and/or predict.horizon")
    return 0


def _read_prediction_csv(path):
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    out = {}
    for row in rows[1:]:
        out[(row[0], int(row[3]))] = (float(row[4]), float(row[5]), float(row[6]), float(row[7]))
    return out


def cmd_score(cfg) -> int:
    pred_path = _require_path(cfg, "score.predictions")
    actual_path = _require_path(cfg, "score.actual")
    out = _out_dir(cfg)
    preds = _read_prediction_csv(pred_path)
    actual = read_panel_csv(actual_path)
    scale = cfg["score"]["scale"]
    pred_v, obs_v, var_v = [], [], []
    for i, sid in enumerate(actual.grid.ids):
        for t in range(actual.T):
            if actual.mask[i, t] or (sid, t) not in preds:
                continue
            mean_log, sd_log, mean_orig, sd_orig = preds[(sid, t)]
            if scale == "log":
                pred_v.append(mean_log)
                obs_v.append(actual.O[i, t])
                var_v.append(sd_log**2)
            else:
                pred_v.append(mean_orig)
                obs_v.append(math.expm1(actual.O[i, t]))
                var_v.append(sd_orig**2)
    if not pred_v:
        raise ConfigError("score.predictions", "no overlapping (site, slot) cells to score")
    report = score_report(pred_v, obs_v, pred_var=var_v)
    write_score_csv(report, os.path.join(out, "score.csv"))
    log.info("scored %d cells: mse=%.4f mae=%.4f pmcc=%.2f", report.d, report.mse,
             report.mae, report.pmcc)
    return 0


def _read_demand_csv(path, n_locations):
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))[1:]
    cells = {(int(r[0]), int(r[1])): float(r[2]) for r in rows}
    n_slots = max(j for _, j in cells) + 1
    arr = np.zeros((n_locations, n_slots))
    for (i, j), v in cells.items():
        arr[i, j] = v
    return arr


def cmd_simulate(cfg) -> int:
    out = _out_dir(cfg)
    sim = cfg["sim"]
    config = SimConfig(
        mu_c=sim["mu_c"], sigma_c2=sim["sigma_c2"], mu_delta=sim["mu_delta"],
        sigma_delta2=sim["sigma_delta2"], c_total=sim["c_total"],
        tasks_per_slot=(sim["tasks_min"], sim["tasks_max"]),
        n_locations=sim["n_locations"], mu_gamma=sim["mu_gamma"],
        sigma_gamma2=sim["sigma_gamma2"], reps=sim["reps"], seed=cfg["seed"],
        budget_normalized=sim["budget_normalized"],
    )
    if sim["demand"]:
        _require_path(cfg, "sim.demand")
        demand = _read_demand_csv(sim["demand"], config.n_locations).astype(int)
    else:
        demand = reference_demand(
            config, n_slots=sim["n_slots"], hot_share=sim["hot_share"],
            seed=cfg["seed"], scale=(sim["scale_min"], sim["scale_max"]),
        )
    if sim["predictions"]:
        _require_path(cfg, "sim.predictions")
        predictions = _read_demand_csv(sim["predictions"], config.n_locations)
    else:
        predictions = demand.astype(float)  # oracle guidance
    result = run_simulation(config, demand, predictions)
    write_sim_csv(result, os.path.join(out, "simulation.csv"))
    log.info("completed rate: equal=%.4f weighted=%.4f",
             result.completed_rate_equal, result.completed_rate_weighted)
    print(f"equal={result.completed_rate_equal:.4f} "
          f"weighted={result.completed_rate_weighted:.4f}")
    return 0


def cmd_demo(cfg) -> int:
    out = _out_dir(cfg)
    seed = cfg["seed"]
    demo = cfg["demo"]

    rows = synthesize_records(demo["n_stations"], demo["n_users"], demo["n_days"], seed=seed)
    records_path = os.path.join(out, "records.csv")
    write_records_csv(rows, records_path)
    log.info("demo: wrote %d synthetic records", len(rows) - 1)

    res = read_records_csv(records_path)
    k = min(cfg["pipeline"]["k"], res.stations.n)
    clustering = kmeans(res.stations, K=k, seed=seed)
    write_clustering_csv(clustering, os.path.join(out, "clustering.csv"))
    lo = max(1, cfg["pipeline"]["elbow_min"])
    hi = min(cfg["pipeline"]["elbow_max"], res.stations.n)
    curve = elbow_curve(res.stations, range(lo, hi + 1), seed=seed)
    write_elbow_csv(curve, os.path.join(out, "elbow.csv"))

    panel = aggregate(res.records, res, clustering, cfg["pipeline"]["slot_seconds"])
    write_panel_csv(panel, os.path.join(out, "panel.csv"))
    holdout = min(cfg["pipeline"]["holdout"], panel.n - 2)
    train, test = split_sites(panel, n_holdout=holdout, seed=seed)
    write_panel_csv(train, os.path.join(out, "panel_train.csv"))
    if test is not None:
        write_panel_csv(test, os.path.join(out, "panel_test.csv"))

    chains = _fit_chains(cfg, train)
    for chain in chains:
        write_chain_ndjson(chain, os.path.join(out, f"chain_{chain.chain_index}.ndjson"))
    write_summary_csv(posterior_summary(chains), os.path.join(out, "summary.csv"))
    with open(os.path.join(out, "chains.pkl"), "wb") as fh:
        pickle.dump(chains, fh, protocol=PICKLE_PROTOCOL)
    log.info("demo: fitted %s model, pmcc=%.2f accept_phi=%.3f",
             cfg["model"], chains[0].pmcc, chains[0].accept_phi)

    field = None
    if test is not None:
        field = krige_spatial(
            chains[0], train, test.grid, test.X,
            thin=cfg["predict"]["thinning"], seed=seed,
        )
        write_prediction_csv(field, os.path.join(out, "predictions_spatial.csv"))

        pred_v = field.mean_log
        obs_pairs = {}
        for i, sid in enumerate(test.grid.ids):
            for t in range(test.T):
                if not test.mask[i, t]:
                    obs_pairs[(sid, t)] = test.O[i, t]
        keys = [(sid, t) for i, sid in enumerate(test.grid.ids) for t in range(test.T)]
        keep = [k_ for k_ in range(len(keys)) if keys[k_] in obs_pairs]
        report = score_report(
            [pred_v[k_] for k_ in keep],
            [obs_pairs[keys[k_]] for k_ in keep],
            pred_var=[field.sd_log[k_] ** 2 for k_ in keep],
        )
        write_score_csv(report, os.path.join(out, "score.csv"))
        log.info("demo: held-out mse=%.4f mae=%.4f", report.mse, report.mae)

    horizon = max(cfg["predict"]["horizon"], 7)
    feats = np.tile(train.X.mean(axis=0), (horizon, 1, 1))
    feats[:, :, 0] = 1.0
    forecast = forecast_temporal(
        chains[0], train, feats, horizon, thin=cfg["predict"]["thinning"], seed=seed
    )
    write_prediction_csv(forecast, os.path.join(out, "predictions_forecast.csv"))

    # offloading experiment over the held-out locations, demand from their
    # actual workloads rescaled into the low portion of the task range;
    # run the share rule both ways (the literal rule deploys only a small
    # fraction of the budget, the normalized rule spends all of it)
    if test is not None and field is not None:
        l = test.n
        sim = cfg["sim"]
        actual = np.clip(np.expm1(np.where(test.mask, 0.0, test.O)), 0.0, None)
        target_total = 0.5 * (sim["scale_min"] + sim["scale_max"])
        slot_tot = actual.sum(axis=0, keepdims=True)
        demand = np.rint(
            np.divide(actual, slot_tot, out=np.zeros_like(actual), where=slot_tot > 0)
            * target_total
        ).astype(int)
        predicted = np.clip(field.mean_orig.reshape(l, test.T), 0.0, None) + 1e-9
        for normalized, name in ((False, "simulation_literal.csv"),
                                 (True, "simulation_normalized.csv")):
            config = SimConfig(
                mu_c=sim["mu_c"], sigma_c2=sim["sigma_c2"], mu_delta=sim["mu_delta"],
                sigma_delta2=sim["sigma_delta2"], c_total=sim["c_total"],
                tasks_per_slot=(sim["tasks_min"], sim["tasks_max"]),
                n_locations=l, mu_gamma=sim["mu_gamma"],
                sigma_gamma2=sim["sigma_gamma2"], reps=sim["reps"], seed=seed,
                budget_normalized=normalized,
            )
            result = run_simulation(config, demand, predicted)
            write_sim_csv(result, os.path.join(out, name))
            log.info("demo: %s rule completed rate equal=%.4f weighted=%.4f",
                     "normalized" if normalized else "literal",
                     result.completed_rate_equal, result.completed_rate_weighted)

    print(f"demo artifacts written to {out}")
    return 0


# ---------------------------------------------------------------------------
# entry point
# ---------------------------------------------------------------------------

_COMMANDS = {
    "ingest": cmd_ingest,
    "cluster": cmd_cluster,
    "fit": cmd_fit,
    "predict": cmd_predict,
    "score": cmd_score,
    "simulate": cmd_simulate,
    "demo": cmd_demo,
}


def _build_parser():
    parser = argparse.ArgumentParser(
        prog="demandcast",
        description="Spatio-temporal Bayesian workload forecasting toolkit",
    )
    parser.add_argument("command", choices=sorted(_COMMANDS))
    parser.add_argument("--config", help="YAML configuration file")
    parser.add_argument("--records", help="connection records CSV")
    parser.add_argument("--panel", help="panel CSV")
    parser.add_argument("--out-dir", help="output directory")
    parser.add_argument("--seed", type=int, help="master seed")
    parser.add_argument("--model", choices=["ar", "gp"], help="model variant")
    parser.add_argument("--chains", type=int, help="number of MCMC chains")
    parser.add_argument("--iters", type=int, help="MCMC iterations")
    parser.add_argument("--burn", type=int, help="burn-in iterations")
    parser.add_argument("--verbose", action="store_true", help="INFO logging")
    return parser


def run_cli(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        stream=sys.stderr,
        format="%(levelname)s %(name)s: %(message)s",
    )
    overrides = {}
    if args.records is not None:
        overrides["paths.records"] = args.records
    if args.panel is not None:
        overrides["paths.panel"] = args.panel
    if args.out_dir is not None:
        overrides["paths.out_dir"] = args.out_dir
    if args.seed is not None:
        overrides["seed"] = args.seed
    if args.model is not None:
        overrides["model"] = args.model
    if args.chains is not None:
        overrides["mcmc.chains"] = args.chains
    if args.iters is not None:
        overrides["mcmc.n_iter"] = args.iters
    if args.burn is not None:
        overrides["mcmc.n_burn"] = args.burn

    try:
        cfg = load_config(args.config, overrides)
        return _COMMANDS[args.command](cfg)
    except ConfigError as exc:
        print(json.dumps({"error": str(exc), "field": exc.field}), file=sys.stderr)
        return 2
    except (ConditioningError, DivergedError, np.linalg.LinAlgError, ArithmeticError) as exc:
        print(json.dumps({"error": str(exc), "kind": type(exc).__name__}), file=sys.stderr)
        return 3


def main() -> None:
    sys.exit(run_cli())


if __name__ == "__main__":
    main()
