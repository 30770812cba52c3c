"""Data preparation: connection-record ingestion, clustering, aggregation.

Raw records are user-to-station connections with start/end timestamps.
Stations are clustered with K-means (elbow diagnostics provided); records
then aggregate into a per-(cluster, slot) workload panel.  Workload is total
connected seconds divided by the number of stations in the cluster, log1p
transformed; covariates are log1p counts of connections, unique users and
active stations, plus log1p total connected seconds, behind an intercept.

Connections spanning slot boundaries contribute their duration to each slot
proportionally, so total connected time is conserved by aggregation.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from datetime import datetime, timezone

import numpy as np

from .kernel import SiteGrid
from .model import Panel

EARTH_RADIUS_M = 6_371_000.0


@dataclass(frozen=True)
class ConnectionRecord:
    user_id: str
    station_id: str
    lon: float
    lat: float
    start: float  # seconds
    end: float


@dataclass(frozen=True)
class IngestResult:
    records: list[ConnectionRecord]
    stations: SiteGrid  # planar meters
    station_lonlat: dict[str, tuple[float, float]]
    centroid: tuple[float, float]  # (lon, lat) used for the projection
    rejected: int
    reject_reasons: dict[str, int]


@dataclass(frozen=True)
class Clustering:
    K: int
    centroids: np.ndarray  # (K, 2) planar meters
    assignment: dict[str, int]
    wcss: float

    def stations_per_cluster(self) -> np.ndarray:
        counts = np.zeros(self.K, dtype=int)
        for c in self.assignment.values():
            counts[c] += 1
        return counts


def project_lonlat(lon, lat, centroid) -> tuple[np.ndarray, np.ndarray]:
    """Equirectangular projection to planar meters about (lon0, lat0)."""
    lon0, lat0 = centroid
    lon = np.asarray(lon, dtype=float)
    lat = np.asarray(lat, dtype=float)
    x = np.radians(lon - lon0) * EARTH_RADIUS_M * math.cos(math.radians(lat0))
    y = np.radians(lat - lat0) * EARTH_RADIUS_M
    return x, y


def _parse_timestamp(text: str) -> float:
    value = datetime.fromisoformat(text)
    if value.tzinfo is None:
        value = value.replace(tzinfo=timezone.utc)
    return value.timestamp()


def ingest(rows, centroid: tuple[float, float] | None = None) -> IngestResult:
    """Parse connection rows into validated records plus a station grid.

    `rows` is an iterable of (user_id, station_id, lon, lat, start_iso8601,
    end_iso8601) sequences (header rows are skipped).  Malformed rows are
    counted and dropped, never fatal.  Coordinates project to planar meters
    about `centroid` (default: mean station lon/lat).
    """
    records: list[ConnectionRecord] = []
    reasons: dict[str, int] = {}
    station_lonlat: dict[str, tuple[float, float]] = {}

    def reject(reason: str):
        reasons[reason] = reasons.get(reason, 0) + 1

    for row in rows:
        row = list(row)
        if len(row) != 6:
            reject("wrong_field_count")
            continue
        user_id, station_id, lon_s, lat_s, start_s, end_s = (str(v).strip() for v in row)
        if user_id == "user_id":  # header
            continue
        try:
            lon, lat = float(lon_s), float(lat_s)
        except ValueError:
            reject("bad_coordinates")
            continue
        if not (-180.0 <= lon <= 180.0 and -90.0 <= lat <= 90.0):
            reject("coordinates_out_of_range")
            continue
        try:
            start = _parse_timestamp(start_s)
            end = _parse_timestamp(end_s)
        except ValueError:
            reject("bad_timestamp")
            continue
        if end < start:
            reject("end_before_start")
            continue
        records.append(ConnectionRecord(user_id, station_id, lon, lat, start, end))
        station_lonlat.setdefault(station_id, (lon, lat))

    if not station_lonlat:
        raise ValueError("no valid connection records")
    ids = sorted(station_lonlat)
    lons = np.array([station_lonlat[s][0] for s in ids])
    lats = np.array([station_lonlat[s][1] for s in ids])
    if centroid is None:
        centroid = (float(lons.mean()), float(lats.mean()))
    x, y = project_lonlat(lons, lats, centroid)
    grid = SiteGrid(tuple(ids), np.column_stack([x, y]))
    return IngestResult(
        records=records,
        stations=grid,
        station_lonlat=station_lonlat,
        centroid=centroid,
        rejected=int(sum(reasons.values())),
        reject_reasons=reasons,
    )


def read_records_csv(path, centroid=None) -> IngestResult:
    with open(path, newline="") as fh:
        return ingest(csv.reader(fh), centroid)


# ---------------------------------------------------------------------------
# K-means (Lloyd iterations, seeded k-means++ start)
# ---------------------------------------------------------------------------


def _kmeans_pp_init(coords: np.ndarray, K: int, rng) -> np.ndarray:
    n = coords.shape[0]
    centers = np.empty((K, 2))
    centers[0] = coords[rng.integers(n)]
    d2 = np.sum((coords - centers[0]) ** 2, axis=1)
    for k in range(1, K):
        total = d2.sum()
        if total <= 0:
            centers[k] = coords[rng.integers(n)]
            continue
        probs = d2 / total
        centers[k] = coords[rng.choice(n, p=probs)]
        d2 = np.minimum(d2, np.sum((coords - centers[k]) ** 2, axis=1))
    return centers


def kmeans(stations: SiteGrid, K: int = 25, seed: int = 0, max_iter: int = 100) -> Clustering:
    """Lloyd's algorithm to an assignment fixpoint; deterministic per seed.

    Empty clusters are reseeded from the point farthest from its center.
    """
    n = stations.n
    if not 1 <= K <= n:
        raise ValueError(f"need 1 <= K <= {n}, got {K}")
    coords = stations.coords
    rng = np.random.default_rng(seed)
    centers = _kmeans_pp_init(coords, K, rng)
    labels = np.full(n, -1)
    for _ in range(max_iter):
        d2 = np.sum((coords[:, None, :] - centers[None, :, :]) ** 2, axis=2)
        new_labels = np.argmin(d2, axis=1)
        for k in range(K):
            members = new_labels == k
            if not members.any():
                worst = int(np.argmax(d2[np.arange(n), new_labels]))
                centers[k] = coords[worst]
                new_labels[worst] = k
                members = new_labels == k
            centers[k] = coords[members].mean(axis=0)
        if np.array_equal(new_labels, labels):
            break
        labels = new_labels
    d2 = np.sum((coords - centers[labels]) ** 2, axis=1)
    return Clustering(
        K=K,
        centroids=centers,
        assignment={sid: int(labels[i]) for i, sid in enumerate(stations.ids)},
        wcss=float(d2.sum()),
    )


def elbow_curve(stations: SiteGrid, K_range, seed: int = 0, restarts: int = 5):
    """(K, wcss) pairs, best of `restarts` seeded runs per K."""
    out = []
    for K in K_range:
        best = math.inf
        for r in range(restarts):
            best = min(best, kmeans(stations, K, seed=seed * 1000 + K * restarts + r).wcss)
        out.append((int(K), float(best)))
    return out


def write_clustering_csv(clustering: Clustering, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["station_id", "cluster", "centroid_x", "centroid_y"])
        for sid in sorted(clustering.assignment):
            c = clustering.assignment[sid]
            w.writerow([sid, c, repr(float(clustering.centroids[c, 0])), repr(float(clustering.centroids[c, 1]))])


def write_elbow_csv(curve, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["K", "wcss"])
        for K, wcss in curve:
            w.writerow([K, repr(float(wcss))])


# ---------------------------------------------------------------------------
# Aggregation into a Panel
# ---------------------------------------------------------------------------


def aggregate(
    records: list[ConnectionRecord],
    ingest_result: IngestResult,
    clustering: Clustering,
    slot_seconds: float = 86_400.0,
) -> Panel:
    """Aggregate records into a per-(cluster, slot) workload panel.

    Workload = total connected seconds / number of stations in the cluster,
    log1p transformed.  Features per cell: intercept, log1p connection count,
    log1p unique users, log1p active stations, log1p total connected seconds.
    Cells with no records are masked.  Clusters with no records anywhere are
    dropped with a warning count in the panel id ordering.
    """
    if not records:
        raise ValueError("no records to aggregate")
    if slot_seconds <= 0:
        raise ValueError("slot length must be positive")
    for rec in records:
        if rec.station_id not in clustering.assignment:
            raise ValueError(f"station {rec.station_id} missing from clustering")

    t0 = min(r.start for r in records)
    t_end = max(r.end for r in records)
    T = max(1, int(math.ceil((t_end - t0) / slot_seconds)))
    if t_end == t0:
        T = 1
    K = clustering.K

    seconds = np.zeros((K, T))
    conn_count = np.zeros((K, T))
    users: dict[tuple[int, int], set] = {}
    active_stations: dict[tuple[int, int], set] = {}

    for rec in records:
        c = clustering.assignment[rec.station_id]
        first = min(int((rec.start - t0) // slot_seconds), T - 1)
        # an end falling exactly on a slot boundary belongs to the slot before
        last_f = (rec.end - t0) / slot_seconds
        last = int(last_f)
        if rec.end > rec.start and last_f == last:
            last -= 1
        last = min(max(last, first), T - 1)
        for slot in range(first, last + 1):
            lo = t0 + slot * slot_seconds
            hi = lo + slot_seconds
            overlap = max(0.0, min(rec.end, hi) - max(rec.start, lo))
            seconds[c, slot] += overlap
            conn_count[c, slot] += 1
            users.setdefault((c, slot), set()).add(rec.user_id)
            active_stations.setdefault((c, slot), set()).add(rec.station_id)

    station_counts = clustering.stations_per_cluster()
    keep = [k for k in range(K) if conn_count[k].sum() > 0]
    if len(keep) < K:
        import warnings

        warnings.warn(f"dropping {K - len(keep)} cluster(s) with no records", stacklevel=2)

    n = len(keep)
    O = np.zeros((n, T))
    X = np.ones((T, n, 5))
    mask = np.zeros((n, T), dtype=bool)
    for i, k in enumerate(keep):
        for t in range(T):
            if conn_count[k, t] == 0:
                mask[i, t] = True
                continue
            O[i, t] = math.log1p(seconds[k, t] / station_counts[k])
            X[t, i, 1] = math.log1p(conn_count[k, t])
            X[t, i, 2] = math.log1p(len(users.get((k, t), ())))
            X[t, i, 3] = math.log1p(len(active_stations.get((k, t), ())))
            X[t, i, 4] = math.log1p(seconds[k, t])

    grid = SiteGrid(
        tuple(f"c{k}" for k in keep), clustering.centroids[keep]
    )
    return Panel(grid=grid, O=O, X=X, mask=mask)


def total_connected_seconds(panel: Panel, clustering: Clustering) -> float:
    """Invert the workload transform and sum: the aggregate connected time.

    Uses the cluster ordering produced by `aggregate` (ids "c<k>").
    """
    counts = clustering.stations_per_cluster()
    total = 0.0
    for i, sid in enumerate(panel.grid.ids):
        k = int(sid[1:])
        workload = np.expm1(panel.O[i, ~panel.mask[i]])
        total += float(workload.sum()) * counts[k]
    return total


def synthesize_records(
    n_stations: int = 120,
    n_users: int = 400,
    n_days: int = 60,
    seed: int = 0,
    center: tuple[float, float] = (121.45, 31.22),
) -> list[list[str]]:
    """Synthetic connection rows for demos and end-to-end tests.

    Stations scatter around a handful of hot spots; users connect daily with
    a weekly rhythm, more often near the busy spots.  Rows come back in the
    ingestion CSV schema (header included).
    """
    from datetime import datetime, timedelta, timezone

    rng = np.random.default_rng(seed)
    n_spots = 5
    spots = rng.uniform(-0.06, 0.06, size=(n_spots, 2))
    weights = rng.dirichlet(np.full(n_spots, 1.5))
    spot_idx = rng.choice(n_spots, size=n_stations, p=weights)
    station_pos = spots[spot_idx] + rng.normal(0.0, 0.008, size=(n_stations, 2))
    station_ids = [f"bs{i:04d}" for i in range(n_stations)]
    # busy spots draw proportionally more connections
    station_load = weights[spot_idx] + rng.uniform(0.02, 0.1, n_stations)
    station_load /= station_load.sum()

    t0 = datetime(2023, 3, 1, tzinfo=timezone.utc)
    rows = [["user_id", "station_id", "lon", "lat", "start", "end"]]
    for day in range(n_days):
        weekday = (t0 + timedelta(days=day)).weekday()
        rhythm = 0.7 if weekday >= 5 else 1.0
        n_conn = rng.poisson(6.0 * n_users * rhythm / 7.0)
        stations = rng.choice(n_stations, size=n_conn, p=station_load)
        users = rng.integers(n_users, size=n_conn)
        starts = rng.uniform(0, 86_400.0 - 1.0, size=n_conn)
        durations = rng.gamma(2.0, 600.0, size=n_conn)
        for k in range(n_conn):
            s = t0 + timedelta(days=day, seconds=float(starts[k]))
            e = s + timedelta(seconds=float(durations[k]))
            lon = center[0] + station_pos[stations[k], 0]
            lat = center[1] + station_pos[stations[k], 1]
            rows.append(
                [
                    f"u{users[k]:05d}",
                    station_ids[stations[k]],
                    repr(float(lon)),
                    repr(float(lat)),
                    s.isoformat(),
                    e.isoformat(),
                ]
            )
    return rows


def write_records_csv(rows, path) -> None:
    with open(path, "w", newline="") as fh:
        csv.writer(fh).writerows(rows)


def split_sites(panel: Panel, n_holdout: int = 10, seed: int = 0) -> tuple[Panel, Panel]:
    """Seeded site-level split into (train, test) panels."""
    n = panel.n
    if not 0 <= n_holdout < n:
        raise ValueError(f"need 0 <= n_holdout < {n}")
    rng = np.random.default_rng(seed)
    test_idx = np.sort(rng.choice(n, size=n_holdout, replace=False))
    train_idx = np.array([i for i in range(n) if i not in set(test_idx.tolist())])

    def take(idx):
        if idx.size == 0:
            return None
        return Panel(
            grid=panel.grid.subset(idx),
            O=panel.O[idx],
            X=panel.X[:, idx, :],
            mask=panel.mask[idx],
        )

    return take(train_idx), take(test_idx)
