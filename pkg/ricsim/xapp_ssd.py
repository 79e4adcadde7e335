"""
Signaling Storm Detection xApp.

A KPI profile (per time-of-day bucket mean/std of connection requests per
window, plus the long-term per-TA-bin level) is learned offline from
legitimate traffic. Every report window is turned into a 2-D anomaly point
(z of the request count, z of the busiest TA bin); a window whose point is
DBSCAN noise next to the training points is a storm, and the TA bins
carrying the excess are blacklisted on the cell.
"""

import logging
import math
from collections import defaultdict, deque
from dataclasses import dataclass, field
from typing import Any, Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from .config import DAY_S
from .errors import DomainError, TrainingDataError
from .policy import TaBlacklistBody
from .ransim import legit_traffic
from .ric import ConnStats, EiKind, ReportKind, RicMessage, XApp
from .scenario import SsdConfig

logger = logging.getLogger(__name__)

NOISE = -1


@dataclass(frozen=True)
class WindowStats:
    start: float
    end: float
    request_count: int
    ta_histogram: Tuple[Tuple[int, int], ...] = ()

    def __post_init__(self):
        if sum(c for _, c in self.ta_histogram) != self.request_count:
            raise DomainError("TA histogram does not add up to the request count")

    @property
    def histogram(self) -> Dict[int, int]:
        return dict(self.ta_histogram)

    @classmethod
    def from_conn_stats(cls, stats: ConnStats) -> "WindowStats":
        return cls(stats.window_start, stats.window_end, stats.request_count, stats.ta_histogram)


@dataclass(frozen=True)
class AnomalyPoint:
    z_count: float
    z_ta_peak: float

    def as_array(self) -> np.ndarray:
        return np.array([self.z_count, self.z_ta_peak])


@dataclass
class BucketStats:
    mean: float
    std: float
    n: int


@dataclass
class KpiProfile:
    """Long-term request statistics of one cell."""
    bucket_s: float
    buckets: Dict[int, BucketStats]
    ta_mean: Dict[int, float] = field(default_factory=dict)
    ta_std: Dict[int, float] = field(default_factory=dict)
    std_floor: float = 0.5

    @property
    def buckets_per_day(self) -> int:
        return max(1, int(round(DAY_S / self.bucket_s)))

    def bucket_of(self, t: float) -> int:
        return int(t // self.bucket_s) % self.buckets_per_day

    def ta_level(self, ta: int) -> Tuple[float, float]:
        return self.ta_mean.get(ta, 0.0), self.ta_std.get(ta, 0.0)


def _sample_std(values: np.ndarray) -> float:
    return float(np.std(values, ddof=1)) if len(values) > 1 else 0.0


def build_profile(
    windows: Sequence[WindowStats],
    bucket_s: float = 3600.0,
    min_training_windows: int = 1,
    std_floor: float = 0.5,
    expected_buckets: Optional[Iterable[int]] = None,
) -> KpiProfile:
    """
    Learn a KPI profile from training windows.

    Args:
        windows: Training windows, legitimate traffic only
        bucket_s: Length of a time-of-day bucket
        min_training_windows: Windows each bucket needs
        std_floor: Lower bound applied to every std when scoring
        expected_buckets: Buckets that must be covered; by default the ones
            the windows fall into

    Raises:
        TrainingDataError: a bucket has fewer than `min_training_windows` windows
    """
    if not bucket_s > 0:
        raise DomainError(f"bucket length must be > 0, got {bucket_s}")
    profile = KpiProfile(bucket_s, {}, std_floor=std_floor)
    counts: Dict[int, List[int]] = defaultdict(list)
    for w in windows:
        counts[profile.bucket_of(w.start)].append(w.request_count)
    wanted = sorted(set(expected_buckets) if expected_buckets is not None else counts)
    for bucket in wanted:
        found = len(counts.get(bucket, []))
        if found < min_training_windows:
            raise TrainingDataError(bucket, found, min_training_windows)
    for bucket in sorted(counts):
        values = np.array(counts[bucket], dtype=float)
        profile.buckets[bucket] = BucketStats(float(values.mean()), _sample_std(values), len(values))

    bins = sorted({ta for w in windows for ta, _ in w.ta_histogram})
    if bins and windows:
        column = {ta: j for j, ta in enumerate(bins)}
        matrix = np.zeros((len(windows), len(bins)))
        for i, w in enumerate(windows):
            for ta, c in w.ta_histogram:
                matrix[i, column[ta]] = c
        for ta, j in column.items():
            profile.ta_mean[ta] = float(matrix[:, j].mean())
            profile.ta_std[ta] = _sample_std(matrix[:, j])
    return profile


def anomaly_point(w: WindowStats, profile: KpiProfile) -> AnomalyPoint:
    """
    Score a window against the profile.

    z_count compares the request count with its bucket; z_ta_peak compares
    the busiest TA bin (lowest index on ties) with that bin's long-term
    level. Stds below the profile's floor are raised to it.
    """
    bucket = profile.bucket_of(w.start)
    stats = profile.buckets.get(bucket)
    if stats is None:
        raise DomainError(f"profile has no bucket {bucket}")
    floor = profile.std_floor
    z_count = (w.request_count - stats.mean) / max(stats.std, floor)
    if not w.ta_histogram:
        return AnomalyPoint(z_count, 0.0)
    ta, peak = min(w.ta_histogram, key=lambda item: (-item[1], item[0]))
    mean, std = profile.ta_level(ta)
    return AnomalyPoint(z_count, (peak - mean) / max(std, floor))


def _neighborhoods(points: np.ndarray, eps: float) -> List[np.ndarray]:
    diff = points[:, None, :] - points[None, :, :]
    close = np.sqrt((diff ** 2).sum(axis=2)) <= eps
    return [np.flatnonzero(row) for row in close]


def dbscan(points: Any, eps: float, min_pts: int) -> np.ndarray:
    """
    Density-based clustering.

    A point is core when at least `min_pts` points (itself included) lie
    within `eps` of it. Clusters grow from core points in index order;
    points reachable from no core point are NOISE (-1).

    Returns:
        Cluster label per point, clusters numbered from 0 in discovery order
    """
    if not eps > 0:
        raise DomainError(f"eps must be > 0, got {eps}")
    if min_pts < 1:
        raise DomainError(f"min_pts must be >= 1, got {min_pts}")
    pts = np.asarray(points, dtype=float).reshape(-1, 2)
    n = len(pts)
    labels = np.full(n, NOISE, dtype=int)
    if n == 0:
        return labels
    neighbors = _neighborhoods(pts, eps)
    core = np.array([len(nb) >= min_pts for nb in neighbors])
    visited = np.zeros(n, dtype=bool)
    cluster = 0
    for i in range(n):
        if visited[i] or not core[i]:
            continue
        visited[i] = True
        labels[i] = cluster
        frontier = deque(neighbors[i])
        while frontier:
            j = frontier.popleft()
            if labels[j] == NOISE:
                labels[j] = cluster
            if visited[j]:
                continue
            visited[j] = True
            if core[j]:
                frontier.extend(k for k in neighbors[j] if not visited[k])
        cluster += 1
    return labels


class StormDetector:
    """
    Noise test of a new point against fixed history points.

    Equivalent to running `dbscan` on history plus the point and checking
    whether the point comes out NOISE: it does not iff it is core itself, or
    it lies within eps of a history point that is core once the new point
    is counted.
    """

    def __init__(self, history: np.ndarray, eps: float, min_pts: int):
        if not eps > 0:
            raise DomainError(f"eps must be > 0, got {eps}")
        self.history = np.asarray(history, dtype=float).reshape(-1, 2)
        self.eps = eps
        self.min_pts = min_pts
        if len(self.history):
            self.counts = np.array([len(nb) for nb in _neighborhoods(self.history, eps)])
        else:
            self.counts = np.zeros(0, dtype=int)

    def is_noise(self, point: AnomalyPoint) -> bool:
        if not len(self.history):
            return 1 < self.min_pts
        d = np.sqrt(((self.history - point.as_array()) ** 2).sum(axis=1))
        near = d <= self.eps
        if near.sum() + 1 >= self.min_pts:
            return False
        return not bool(np.any(self.counts[near] + 1 >= self.min_pts))


def detect(w: WindowStats, profile: KpiProfile, history: np.ndarray, eps: float, min_pts: int) -> bool:
    """Whether the window is a storm: its anomaly point is noise next to the history points."""
    if not len(history):
        raise DomainError("detection needs history points")
    return StormDetector(history, eps, min_pts).is_noise(anomaly_point(w, profile))


def blacklist_from_ta(
    w: WindowStats,
    profile: KpiProfile,
    k_sigma: float,
    cell_id: str,
    ttl_s: float,
    min_bin_requests: int = 1,
) -> Optional[TaBlacklistBody]:
    """
    TA bins of a storm window to block.

    A bin qualifies when its count exceeds its long-term mean by more than
    `k_sigma` stds (floored) and holds at least `min_bin_requests` requests.

    Returns:
        The blacklist, or None when no bin qualifies
    """
    if not k_sigma > 0:
        raise DomainError(f"k_sigma must be > 0, got {k_sigma}")
    excess = []
    for ta, count in w.ta_histogram:
        mean, std = profile.ta_level(ta)
        if count > mean + k_sigma * max(std, profile.std_floor) and count >= min_bin_requests:
            excess.append(ta)
    if not excess:
        return None
    return TaBlacklistBody.create(cell_id, excess, ttl_s)


@dataclass
class TrainedProfile:
    """A cell's profile plus the anomaly points of its training windows."""
    profile: KpiProfile
    history: np.ndarray


def training_windows(events: Sequence[Tuple[np.ndarray, int]], duration_s: float,
                     window_s: float) -> List[WindowStats]:
    """Cut request times (per device, with its TA) into consecutive windows, empty ones included."""
    n = max(1, int(math.ceil(duration_s / window_s)))
    per_window: List[Dict[int, int]] = [defaultdict(int) for _ in range(n)]
    for times, ta in events:
        idx = np.minimum((np.asarray(times) // window_s).astype(int), n - 1)
        for k, c in zip(*np.unique(idx, return_counts=True)):
            per_window[k][ta] += int(c)
    out = []
    for k, hist in enumerate(per_window):
        items = tuple(sorted(hist.items()))
        out.append(WindowStats(k * window_s, (k + 1) * window_s, sum(c for _, c in items), items))
    return out


def train_profile(
    attachments: Sequence[Tuple[Any, Any, int]],
    rate_per_hour: float,
    cfg: SsdConfig,
    rng: np.random.Generator,
) -> Dict[str, TrainedProfile]:
    """
    Learn every cell's profile from simulated days of legitimate traffic.

    Args:
        attachments: (device, serving cell, TA index) of the static devices;
            only IOT_LEGIT devices contribute
        rate_per_hour: Request rate of a legitimate device
        cfg: SSD parameters (training length, windows, buckets)
        rng: Training traffic generator

    Raises:
        TrainingDataError: the training span leaves a bucket short of windows
    """
    duration = cfg.training_days * DAY_S
    by_cell: Dict[str, List[Tuple[np.ndarray, int]]] = defaultdict(list)
    for ue, cell, ta in attachments:
        if ue.kind.value == "IOT_LEGIT":
            by_cell[cell.cell_id].append((legit_traffic(rate_per_hour, duration, rng), ta))
    per_day = max(1, int(round(DAY_S / cfg.bucket_s)))
    covered = range(per_day) if duration >= DAY_S else None

    out: Dict[str, TrainedProfile] = {}
    for cell_id in sorted(by_cell):
        windows = training_windows(by_cell[cell_id], duration, cfg.window_s)
        profile = build_profile(windows, cfg.bucket_s, cfg.min_training_windows, cfg.std_floor, covered)
        history = np.array([anomaly_point(w, profile).as_array() for w in windows]).reshape(-1, 2)
        out[cell_id] = TrainedProfile(profile, history)
        logger.info("KPI profile of %s: %d windows, %d TA bins", cell_id, len(windows), len(profile.ta_mean))
    return out


def rejection_ratios(trace) -> Dict[str, float]:
    """Rejected share of legitimate attempts and of legitimate devices."""
    attempts = trace.frame("attempts")
    legit = attempts[attempts["kind"] == "IOT_LEGIT"]
    rejected = legit["outcome"] == "REJECTED_BLACKLIST"
    devices = legit["ue"].nunique()
    hit = legit.loc[rejected, "ue"].nunique()
    return {
        "legit_attempts": float(len(legit)),
        "legit_rejected": float(rejected.sum()),
        "legit_rejection_ratio": float(rejected.mean()) if len(legit) else 0.0,
        "legit_devices": float(devices),
        "legit_devices_rejected": float(hit),
        "legit_device_rejection_ratio": hit / devices if devices else 0.0,
    }


class SsdXApp(XApp):
    """
    Scores every CONN_STATS window of its cells and blacklists storm TA bins.

    Args:
        cfg: SSD parameters
        cell_ids: Cells to watch
    """
    xapp_id = "ssd"
    ei_kinds = (EiKind.KPI_PROFILE,)

    def __init__(self, cfg: SsdConfig, cell_ids: Sequence[str]):
        super().__init__()
        self.cfg = cfg
        self.cell_ids = list(cell_ids)
        self.profiles: Dict[str, TrainedProfile] = {}
        self.detectors: Dict[str, StormDetector] = {}
        self.rows: List[tuple] = []
        self.storms = 0
        self.blacklists = 0

    def on_start(self, t: float):
        self.ric.subscribe(self.xapp_id, self.cell_ids, ReportKind.CONN_STATS, self.cfg.window_s)

    def on_ei(self, msg: RicMessage):
        doc = msg.payload
        if doc.kind is not EiKind.KPI_PROFILE:
            return
        for cell_id, trained in doc.data.items():
            self.profiles[cell_id] = trained
            self.detectors[cell_id] = StormDetector(trained.history, self.cfg.eps, self.cfg.min_pts)

    def on_report(self, msg: RicMessage):
        for stats in msg.payload:
            trained = self.profiles.get(stats.cell_id)
            if trained is None:
                logger.debug("no KPI profile for %s yet", stats.cell_id)
                continue
            w = WindowStats.from_conn_stats(stats)
            point = anomaly_point(w, trained.profile)
            storm = self.detectors[stats.cell_id].is_noise(point)
            blocked: Tuple[int, ...] = ()
            if storm:
                self.storms += 1
                body = blacklist_from_ta(w, trained.profile, self.cfg.k_sigma, stats.cell_id,
                                         self.cfg.blacklist_ttl_s, self.cfg.min_bin_requests)
                if body is None:
                    logger.warning("storm on %s at t=%.0f with no TA bin to block", stats.cell_id, msg.time)
                else:
                    logger.warning("storm on %s at t=%.0f: blacklisting TA %s", stats.cell_id, msg.time,
                                   list(body.ta_indices))
                    if self.ric.submit_policy(self.xapp_id, body).accepted:
                        self.blacklists += 1
                        blocked = body.ta_indices
            self.rows.append((stats.cell_id, w.start, w.end, w.request_count, point.z_count, point.z_ta_peak,
                              storm, " ".join(str(ta) for ta in blocked)))

    def export(self, trace) -> Dict[str, Any]:
        windows = pd.DataFrame(self.rows, columns=["cell", "window_start", "window_end", "count", "z_count",
                                                   "z_ta_peak", "storm", "blacklisted"])
        ratios = rejection_ratios(trace)
        rejections = pd.DataFrame([ratios], columns=list(ratios))
        return {"ssd_windows": windows, "ssd_rejections": rejections}

    def summary(self, trace) -> Dict[str, float]:
        ratios = rejection_ratios(trace)
        return {
            "legit_rejection_ratio": ratios["legit_rejection_ratio"],
            "legit_device_rejection_ratio": ratios["legit_device_rejection_ratio"],
            "storms": float(self.storms),
            "blacklists": float(self.blacklists),
        }
