import math

import numpy as np
import pandas as pd
import pytest

from ricsim.errors import DomainError, TrainingDataError
from ricsim.runner import sweep
from ricsim.wireless import TaConfig, ta_index
from ricsim.xapp_ssd import (
    NOISE,
    AnomalyPoint,
    BucketStats,
    KpiProfile,
    StormDetector,
    WindowStats,
    anomaly_point,
    blacklist_from_ta,
    build_profile,
    dbscan,
    detect,
    rejection_ratios,
    training_windows,
)


def window(start, histogram):
    items = tuple(sorted(histogram.items()))
    return WindowStats(start, start + 300.0, sum(c for _, c in items), items)


# -- DBSCAN ------------------------------------------------------------------

def test_dbscan_two_clusters_and_noise():
    points = [(0, 0), (0, 0.5), (0.5, 0), (10, 10), (10, 10.5), (10.5, 10), (50, 50)]
    assert dbscan(points, eps=1.0, min_pts=3).tolist() == [0, 0, 0, 1, 1, 1, NOISE]


def test_dbscan_border_points_join_cluster():
    assert dbscan([(0, 0), (1, 0), (2, 0)], eps=1.0, min_pts=3).tolist() == [0, 0, 0]
    assert dbscan([(0, 0), (1, 0), (2, 0)], eps=0.9, min_pts=2).tolist() == [NOISE] * 3


def test_dbscan_edge_cases():
    assert dbscan(np.zeros((0, 2)), 1.0, 2).tolist() == []
    assert dbscan([(0, 0)], 1.0, 1).tolist() == [0]
    with pytest.raises(DomainError):
        dbscan([(0, 0)], 0.0, 2)
    with pytest.raises(DomainError):
        dbscan([(0, 0)], 1.0, 0)


def brute_force_clusters(points, eps, min_pts):
    """Noise set and core-point components by exhaustive distance checks."""
    n = len(points)
    near = [[j for j in range(n) if math.dist(points[i], points[j]) <= eps] for i in range(n)]
    core = {i for i in range(n) if len(near[i]) >= min_pts}
    parent = list(range(n))

    def find(i):
        while parent[i] != i:
            i = parent[i]
        return i

    for i in core:
        for j in near[i]:
            if j in core:
                parent[find(i)] = find(j)
    noise = {i for i in range(n) if i not in core and not any(j in core for j in near[i])}
    return core, noise, find, near


def test_dbscan_matches_brute_force():
    rng = np.random.default_rng(99)
    for _ in range(200):
        n = int(rng.integers(1, 51))
        points = rng.normal(scale=2.0, size=(n, 2))
        eps = float(rng.uniform(0.3, 2.0))
        min_pts = int(rng.integers(1, 5))
        labels = dbscan(points, eps, min_pts)
        core, noise, find, near = brute_force_clusters(points.tolist(), eps, min_pts)
        assert {i for i in range(n) if labels[i] == NOISE} == noise
        for i in core:
            for j in core:
                assert (labels[i] == labels[j]) == (find(i) == find(j))
        for i in set(range(n)) - core - noise:
            assert labels[i] in {labels[j] for j in near[i] if j in core}


def test_storm_detector_agrees_with_dbscan():
    rng = np.random.default_rng(5)
    history = rng.normal(size=(40, 2))
    detector = StormDetector(history, eps=0.5, min_pts=4)
    for p in rng.normal(scale=2.0, size=(300, 2)):
        point = AnomalyPoint(float(p[0]), float(p[1]))
        labels = dbscan(np.vstack([history, p]), 0.5, 4)
        assert detector.is_noise(point) == (labels[-1] == NOISE)


def test_storm_detector_without_history():
    assert StormDetector(np.zeros((0, 2)), 1.0, 2).is_noise(AnomalyPoint(0, 0))
    assert not StormDetector(np.zeros((0, 2)), 1.0, 1).is_noise(AnomalyPoint(0, 0))


# -- KPI profile -------------------------------------------------------------

def two_bucket_windows():
    return [
        window(0.0, {1: 10}),
        window(300.0, {1: 12}),
        window(3600.0, {2: 5}),
        window(3900.0, {2: 5}),
    ]


def test_build_profile():
    profile = build_profile(two_bucket_windows(), bucket_s=3600.0)
    assert profile.buckets[0].mean == 11.0
    assert profile.buckets[0].std == pytest.approx(math.sqrt(2))
    assert (profile.buckets[1].mean, profile.buckets[1].std, profile.buckets[1].n) == (5.0, 0.0, 2)
    assert profile.ta_mean == {1: 5.5, 2: 2.5}
    assert profile.buckets_per_day == 24
    assert profile.bucket_of(86400.0 + 3700.0) == 1


def test_short_buckets_are_reported():
    with pytest.raises(TrainingDataError) as info:
        build_profile(two_bucket_windows(), min_training_windows=3)
    assert (info.value.bucket, info.value.found, info.value.required) == (0, 2, 3)
    with pytest.raises(TrainingDataError) as info:
        build_profile(two_bucket_windows(), expected_buckets=range(3))
    assert info.value.bucket == 2


def test_anomaly_point():
    profile = build_profile(two_bucket_windows(), bucket_s=3600.0)
    point = anomaly_point(window(600.0, {1: 18}), profile)
    assert point.z_count == pytest.approx(7 / math.sqrt(2))
    # zero std of bucket 1 is floored at 0.5
    assert anomaly_point(window(3600.0, {2: 6}), profile).z_count == pytest.approx(2.0)


def test_anomaly_point_peak_bin():
    profile = KpiProfile(3600.0, {0: BucketStats(10.0, 2.0, 5)}, ta_mean={3: 1.0}, ta_std={3: 0.0})
    point = anomaly_point(window(100.0, {3: 4, 5: 20}), profile)
    assert (point.z_count, point.z_ta_peak) == (7.0, 40.0)
    tie = anomaly_point(window(100.0, {3: 10, 5: 10}), profile)
    assert tie.z_ta_peak == 18.0
    assert anomaly_point(window(100.0, {}), profile).z_ta_peak == 0.0
    with pytest.raises(DomainError):
        anomaly_point(window(3600.0, {}), profile)


def test_window_histogram_must_add_up():
    with pytest.raises(DomainError):
        WindowStats(0.0, 300.0, 5, ((1, 4),))


def test_training_windows():
    events = [(np.array([0.5, 1.5, 250.0, 600.0]), 3), (np.array([10.0]), 4)]
    windows = training_windows(events, 600.0, 300.0)
    assert [(w.start, w.request_count, w.ta_histogram) for w in windows] == [
        (0.0, 4, ((3, 3), (4, 1))),
        (300.0, 1, ((3, 1),)),
    ]


# -- blacklisting ------------------------------------------------------------

def test_blacklist_from_ta():
    profile = KpiProfile(3600.0, {0: BucketStats(5.0, 1.0, 5)}, ta_mean={1: 2.0, 2: 2.0}, ta_std={1: 1.0, 2: 1.0})
    w = window(0.0, {1: 3, 2: 40, 7: 12})
    body = blacklist_from_ta(w, profile, 3.0, "gnb", 300.0, min_bin_requests=10)
    assert (body.cell_id, body.ta_indices, body.ttl_s) == ("gnb", (2, 7), 300.0)
    assert blacklist_from_ta(w, profile, 3.0, "gnb", 300.0, min_bin_requests=20).ta_indices == (2,)
    assert blacklist_from_ta(window(0.0, {1: 3}), profile, 3.0, "gnb", 300.0) is None
    with pytest.raises(DomainError):
        blacklist_from_ta(w, profile, 0.0, "gnb", 300.0)


def test_detect_needs_history():
    profile = KpiProfile(3600.0, {0: BucketStats(5.0, 1.0, 5)}, ta_mean={1: 5.0}, ta_std={1: 1.0})
    with pytest.raises(DomainError):
        detect(window(0.0, {}), profile, np.zeros((0, 2)), 3.0, 4)
    history = np.zeros((10, 2))
    assert not detect(window(0.0, {1: 5}), profile, history, 3.0, 4)
    assert detect(window(0.0, {1: 50}), profile, history, 3.0, 4)


class FakeTrace:
    def __init__(self, rows):
        self.rows = rows

    def frame(self, name):
        return pd.DataFrame(self.rows, columns=["time", "ue", "kind", "cell", "ta", "outcome"])


def test_rejection_ratios():
    trace = FakeTrace([
        (1.0, "d1", "IOT_LEGIT", "gnb", 1, "ACCEPTED"),
        (2.0, "d1", "IOT_LEGIT", "gnb", 1, "REJECTED_BLACKLIST"),
        (3.0, "d2", "IOT_LEGIT", "gnb", 2, "ACCEPTED"),
        (4.0, "a1", "IOT_ADVERSARY", "gnb", 1, "REJECTED_BLACKLIST"),
    ])
    ratios = rejection_ratios(trace)
    assert ratios["legit_rejection_ratio"] == pytest.approx(1 / 3)
    assert ratios["legit_device_rejection_ratio"] == 0.5
    assert rejection_ratios(FakeTrace([]))["legit_rejection_ratio"] == 0.0


# -- numerology --------------------------------------------------------------

@pytest.mark.parametrize("scs", [15, 30, 60, 120, 240])
def test_bundled_adversaries_share_one_ta_bin(bundled, scs):
    groups = {g["prefix"]: g["placement"] for g in bundled("ssd_scs_sweep")["ue_groups"]}
    adv = groups["adv"]
    ta = TaConfig(scs)
    spot = {ta_index(adv["y"] + dy, ta) for dy in (-adv["radius_m"], adv["radius_m"])}
    assert len(spot) == 1
    # the hacked devices sit inside the ring of legitimate sensors
    ring = groups["iot"]
    assert ring["min_radius_m"] < adv["y"] - adv["radius_m"] < adv["y"] + adv["radius_m"] < ring["radius_m"]


@pytest.mark.slow
def test_rejection_ratio_falls_with_subcarrier_spacing(tmp_path, bundled):
    table = sweep(bundled("ssd_scs_sweep"), "ta.scs_khz", [15, 30, 60, 120, 240], 20, tmp_path)
    ratios = table["legit_rejection_ratio_mean"].tolist()
    assert all(a >= b for a, b in zip(ratios, ratios[1:])), ratios
    assert ratios[0] > 0.40
    assert ratios[-1] < 0.05
    assert (table["storms_mean"] > 0).all()
