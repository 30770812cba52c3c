"""Ingestion, clustering, and panel aggregation."""

import math

import numpy as np
import pytest

from demandcast.kernel import SiteGrid
from demandcast.model import read_panel_csv, write_panel_csv
from demandcast.pipeline import (
    Clustering,
    aggregate,
    elbow_curve,
    ingest,
    kmeans,
    project_lonlat,
    split_sites,
    total_connected_seconds,
    write_clustering_csv,
    write_elbow_csv,
)


def row(user, station, lon, lat, start, end):
    return [user, station, str(lon), str(lat), start, end]


BASE = "2023-05-01T"


def rows_fixture():
    return [
        ["user_id", "station_id", "lon", "lat", "start", "end"],
        row("u1", "a", 121.4, 31.2, BASE + "00:10:00", BASE + "00:20:00"),
        row("u2", "a", 121.4, 31.2, BASE + "01:00:00", BASE + "01:05:00"),
        row("u1", "b", 121.5, 31.3, BASE + "02:00:00", BASE + "02:30:00"),
    ]


class TestIngest:
    def test_basic_counts(self):
        res = ingest(rows_fixture())
        assert len(res.records) == 3
        assert res.stations.n == 2
        assert res.rejected == 0
        assert len({r.user_id for r in res.records}) == 2

    def test_zero_duration_accepted(self):
        res = ingest([row("u", "s", 0, 0, BASE + "00:00:00", BASE + "00:00:00")])
        assert len(res.records) == 1
        assert res.records[0].end == res.records[0].start

    def test_end_before_start_rejected(self):
        res = ingest(
            [
                row("u", "s", 0, 0, BASE + "01:00:00", BASE + "00:00:00"),
                row("u", "s", 0, 0, BASE + "00:00:00", BASE + "01:00:00"),
            ]
        )
        assert len(res.records) == 1
        assert res.reject_reasons == {"end_before_start": 1}

    def test_bad_timestamp_and_coords_rejected(self):
        res = ingest(
            [
                row("u", "s", 0, 0, "not-a-time", BASE + "01:00:00"),
                row("u", "s", "x", 0, BASE + "00:00:00", BASE + "01:00:00"),
                row("u", "s", 200.0, 0, BASE + "00:00:00", BASE + "01:00:00"),
                row("u", "s", 0, 0, BASE + "00:00:00", BASE + "01:00:00"),
            ]
        )
        assert res.rejected == 3
        assert set(res.reject_reasons) == {"bad_timestamp", "bad_coordinates", "coordinates_out_of_range"}

    def test_no_valid_rows_is_error(self):
        with pytest.raises(ValueError):
            ingest([row("u", "s", 0, 0, "bad", "bad")])

    def test_projection_scale(self):
        # one degree of latitude is ~111 km; longitude shrinks by cos(lat)
        x, y = project_lonlat([0.0, 1.0], [45.0, 45.0], (0.0, 45.0))
        assert y[0] == 0.0 and x[0] == 0.0
        assert x[1] == pytest.approx(111_195 * math.cos(math.radians(45)), rel=0.01)
        x2, y2 = project_lonlat([0.0, 0.0], [45.0, 46.0], (0.0, 45.0))
        assert y2[1] == pytest.approx(111_195, rel=0.01)


def station_grid(n, seed=0, extent=1000.0):
    rng = np.random.default_rng(seed)
    return SiteGrid(tuple(f"st{i}" for i in range(n)), rng.uniform(0, extent, (n, 2)))


class TestKmeans:
    def test_single_cluster_is_mean(self):
        g = station_grid(20, seed=1)
        c = kmeans(g, K=1, seed=0)
        np.testing.assert_allclose(c.centroids[0], g.coords.mean(axis=0), rtol=1e-12)
        total_var = np.sum((g.coords - g.coords.mean(axis=0)) ** 2)
        assert c.wcss == pytest.approx(total_var, rel=1e-12)

    def test_k_equals_n_zero_wcss(self):
        g = station_grid(8, seed=2)
        c = kmeans(g, K=8, seed=0)
        assert c.wcss == pytest.approx(0.0, abs=1e-18)

    def test_deterministic_per_seed(self):
        g = station_grid(100, seed=3)
        a = kmeans(g, K=10, seed=42)
        b = kmeans(g, K=10, seed=42)
        assert a.assignment == b.assignment
        np.testing.assert_array_equal(a.centroids, b.centroids)

    def test_all_assigned_and_centroids_are_member_means(self):
        g = station_grid(60, seed=4)
        c = kmeans(g, K=6, seed=1)
        assert set(c.assignment) == set(g.ids)
        labels = np.array([c.assignment[s] for s in g.ids])
        for k in range(6):
            members = g.coords[labels == k]
            assert members.shape[0] >= 1
            np.testing.assert_allclose(c.centroids[k], members.mean(axis=0), rtol=1e-9)

    def test_k_bounds(self):
        g = station_grid(5)
        with pytest.raises(ValueError):
            kmeans(g, K=6)
        with pytest.raises(ValueError):
            kmeans(g, K=0)

    def test_default_k_is_25(self):
        g = station_grid(40, seed=5)
        c = kmeans(g, seed=0)
        assert c.K == 25

    def test_duplicate_points_dont_crash(self):
        coords = np.zeros((6, 2))
        coords[3:] = 1.0
        g = SiteGrid(tuple(f"s{i}" for i in range(6)), coords)
        c = kmeans(g, K=3, seed=0)
        assert c.wcss >= 0.0


class TestElbow:
    def test_wcss_nonincreasing_in_k(self):
        g = station_grid(80, seed=6)
        curve = elbow_curve(g, range(1, 12), seed=3)
        wcss = [w for _, w in curve]
        assert all(a >= b - 1e-9 for a, b in zip(wcss, wcss[1:]))

    def test_single_point_range(self):
        g = station_grid(10, seed=7)
        curve = elbow_curve(g, [1], seed=0)
        assert len(curve) == 1
        assert curve[0][0] == 1

    def test_k_covering_n_hits_zero(self):
        g = station_grid(9, seed=8)
        curve = elbow_curve(g, [9], seed=0)
        assert curve[0][1] == pytest.approx(0.0, abs=1e-18)


def two_station_cluster():
    # both stations in one cluster
    return Clustering(
        K=1,
        centroids=np.array([[0.0, 0.0]]),
        assignment={"a": 0, "b": 0},
        wcss=0.0,
    )


class TestAggregate:
    def test_workload_ratio_hand_value(self):
        # 600 connected seconds over 2 stations in the cluster -> log1p(300)
        res = ingest(
            [
                row("u1", "a", 0, 0, BASE + "00:00:00", BASE + "00:05:00"),
                row("u2", "b", 0.001, 0, BASE + "00:02:00", BASE + "00:07:00"),
            ]
        )
        panel = aggregate(res.records, res, two_station_cluster(), slot_seconds=86400.0)
        assert panel.n == 1 and panel.T == 1
        assert panel.O[0, 0] == pytest.approx(math.log1p(600.0 / 2.0), rel=1e-12)
        # features: connections, users, active stations, total seconds
        assert panel.X[0, 0, 1] == pytest.approx(math.log1p(2))
        assert panel.X[0, 0, 2] == pytest.approx(math.log1p(2))
        assert panel.X[0, 0, 3] == pytest.approx(math.log1p(2))
        assert panel.X[0, 0, 4] == pytest.approx(math.log1p(600.0))

    def test_intercept_column(self):
        res = ingest(rows_fixture())
        clustering = kmeans(res.stations, K=2, seed=0)
        panel = aggregate(res.records, res, clustering, slot_seconds=3600.0)
        assert np.all(panel.X[:, :, 0] == 1.0)

    def test_empty_slots_masked(self):
        res = ingest(
            [
                row("u1", "a", 0, 0, BASE + "00:00:00", BASE + "00:30:00"),
                row("u1", "a", 0, 0, BASE + "05:00:00", BASE + "05:30:00"),
            ]
        )
        clustering = Clustering(K=1, centroids=np.zeros((1, 2)), assignment={"a": 0}, wcss=0.0)
        panel = aggregate(res.records, res, clustering, slot_seconds=3600.0)
        assert panel.T == 6
        assert not panel.mask[0, 0] and not panel.mask[0, 5]
        assert panel.mask[0, 1:5].all()

    def test_boundary_spanning_split_conserves_mass(self):
        # slots anchor at the earliest record: [00:30, 01:30) and [01:30, 02:30)
        res = ingest(
            [
                row("u1", "a", 0, 0, BASE + "00:30:00", BASE + "02:30:00"),
                row("u2", "a", 0, 0, BASE + "01:10:00", BASE + "01:20:00"),
            ]
        )
        clustering = Clustering(K=1, centroids=np.zeros((1, 2)), assignment={"a": 0}, wcss=0.0)
        panel = aggregate(res.records, res, clustering, slot_seconds=3600.0)
        assert panel.T == 2
        total = total_connected_seconds(panel, clustering)
        expect = sum(r.end - r.start for r in res.records)
        assert total == pytest.approx(expect, rel=1e-9)
        # the spanning connection is counted in both slots it touches, and an
        # end landing exactly on a boundary does not leak into a third slot
        assert panel.mask.sum() == 0
        assert panel.X[0, 0, 1] == pytest.approx(math.log1p(2))
        assert panel.X[1, 0, 1] == pytest.approx(math.log1p(1))
        # workload split: slot 0 carries u1's first hour plus u2's 10 min
        assert panel.O[0, 0] == pytest.approx(math.log1p(3600.0 + 600.0), rel=1e-12)
        assert panel.O[0, 1] == pytest.approx(math.log1p(3600.0), rel=1e-12)

    def test_mass_conservation_random_records(self):
        rng = np.random.default_rng(9)
        rows_list = []
        for i in range(300):
            start = rng.uniform(0, 86400 * 5)
            dur = rng.uniform(0, 86400 * 1.5)
            s = f"2023-05-01T00:00:{0:02d}"
            rows_list.append(
                ConnectionRecordRow(i, start, dur, rng)
            )
        res = ingest(rows_list)
        clustering = kmeans(res.stations, K=4, seed=0)
        panel = aggregate(res.records, res, clustering, slot_seconds=86400.0)
        total = total_connected_seconds(panel, clustering)
        expect = sum(r.end - r.start for r in res.records)
        assert total == pytest.approx(expect, rel=1e-9)

    def test_requires_clustered_stations(self):
        res = ingest(rows_fixture())
        clustering = Clustering(K=1, centroids=np.zeros((1, 2)), assignment={"a": 0}, wcss=0.0)
        with pytest.raises(ValueError):
            aggregate(res.records, res, clustering)

    def test_roundtrip_through_csv_bit_exact(self, tmp_path):
        res = ingest(rows_fixture())
        clustering = kmeans(res.stations, K=2, seed=0)
        panel = aggregate(res.records, res, clustering, slot_seconds=3600.0)
        p1 = tmp_path / "panel.csv"
        write_panel_csv(panel, p1)
        panel2 = read_panel_csv(p1)
        p2 = tmp_path / "panel2.csv"
        write_panel_csv(panel2, p2)
        assert p1.read_bytes() == p2.read_bytes()


def ConnectionRecordRow(i, start, dur, rng):
    from datetime import datetime, timedelta, timezone

    t0 = datetime(2023, 5, 1, tzinfo=timezone.utc)
    s = t0 + timedelta(seconds=start)
    e = s + timedelta(seconds=dur)
    station = f"st{rng.integers(8)}"
    lon, lat = 121.0 + rng.uniform(0, 0.5), 31.0 + rng.uniform(0, 0.5)
    return [f"u{i % 40}", station, str(lon), str(lat), s.isoformat(), e.isoformat()]


class TestSplitSites:
    def make_panel(self, n=12, seed=10):
        from helpers import make_theta, make_grid
        from demandcast.model import simulate_panel

        grid = make_grid(n, seed=seed)
        theta = make_theta(n, 5, 2, seed=seed)
        return simulate_panel(grid, 5, theta, seed=seed + 1)

    def test_partition(self):
        panel = self.make_panel()
        train, test = split_sites(panel, n_holdout=4, seed=3)
        assert train.n == 8 and test.n == 4
        assert set(train.grid.ids) | set(test.grid.ids) == set(panel.grid.ids)
        assert not (set(train.grid.ids) & set(test.grid.ids))

    def test_zero_holdout(self):
        panel = self.make_panel()
        train, test = split_sites(panel, n_holdout=0, seed=3)
        assert test is None
        assert train.n == panel.n

    def test_deterministic(self):
        panel = self.make_panel()
        a = split_sites(panel, 4, seed=5)
        b = split_sites(panel, 4, seed=5)
        assert a[1].grid.ids == b[1].grid.ids
        c = split_sites(panel, 4, seed=6)
        assert a[1].grid.ids != c[1].grid.ids

    def test_bounds(self):
        panel = self.make_panel()
        with pytest.raises(ValueError):
            split_sites(panel, panel.n, seed=0)


class TestClusteringCsv:
    def test_deterministic_exports(self, tmp_path):
        g = station_grid(30, seed=11)
        clustering = kmeans(g, K=5, seed=2)
        curve = elbow_curve(g, range(1, 6), seed=2)
        c1, c2 = tmp_path / "c1.csv", tmp_path / "c2.csv"
        write_clustering_csv(clustering, c1)
        write_clustering_csv(clustering, c2)
        assert c1.read_bytes() == c2.read_bytes()
        e1, e2 = tmp_path / "e1.csv", tmp_path / "e2.csv"
        write_elbow_csv(curve, e1)
        write_elbow_csv(curve, e2)
        assert e1.read_bytes() == e2.read_bytes()
        assert c1.read_text().splitlines()[0] == "station_id,cluster,centroid_x,centroid_y"
        assert e1.read_text().splitlines()[0] == "K,wcss"
