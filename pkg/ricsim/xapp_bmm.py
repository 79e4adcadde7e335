"""
Beam Mobility Management xApp.

Offline, a radio environment map (REM) is built per beamformed cell from a
training drive: per-beam mean RSRP and a motion histogram (speed, bearing)
per grid square, binned at the positions the location server reports. Online,
the xApp predicts every UE's path over a short horizon and keeps or switches
its beam so the REM stays above the failure threshold plus a margin. When too
many beam failures pile up it falls back to plain RSRP-based selection
(emergency mode) until enough clean windows pass.
"""

import logging
import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Any, Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from .errors import DomainError
from .ric import (
    ControlAction,
    EiKind,
    LocationReport,
    ReportKind,
    RicMessage,
    RsrpReport,
    XApp,
)
from .scenario import BmmConfig, Bounds
from .wireless import LocalizationTechnique, noisy_positions

logger = logging.getLogger(__name__)


class BeamReason(str, Enum):
    STAY = "STAY"
    LOOKAHEAD_SWITCH = "LOOKAHEAD_SWITCH"
    EMERGENCY_RSRP = "EMERGENCY_RSRP"


@dataclass(frozen=True)
class BeamDecision:
    ue_id: str
    beam_id: int
    reason: BeamReason


@dataclass(frozen=True, eq=False)
class TrainingTrace:
    """Samples of a training drive: true positions, velocities and per-beam RSRP of one cell."""
    xy: np.ndarray          # (S, 2)
    velocity: np.ndarray    # (S, 2)
    beam_rsrp: np.ndarray   # (S, B)

    def __len__(self) -> int:
        return len(self.xy)


class BeamFailureMonitor:
    """
    Consecutive below-threshold counters of the serving beams of N UEs.

    A failure fires when a UE's counter reaches `n_consecutive`; the counter
    then restarts from zero.
    """

    def __init__(self, n: int, threshold_dbm: float, n_consecutive: int):
        if n_consecutive < 1:
            raise DomainError(f"n_consecutive must be >= 1, got {n_consecutive}")
        self.threshold_dbm = threshold_dbm
        self.n_consecutive = n_consecutive
        self.counts = np.zeros(n, dtype=int)
        self.window_total = 0
        self.total = 0

    def observe(self, values: np.ndarray) -> np.ndarray:
        """
        Feed one tick of serving-beam RSRP (NaN for UEs without a beam).

        Returns:
            Boolean mask of the UEs whose failure fired this tick
        """
        with np.errstate(invalid="ignore"):
            below = np.asarray(values, dtype=float) < self.threshold_dbm
        self.counts = np.where(below, self.counts + 1, 0)
        fired = self.counts >= self.n_consecutive
        self.counts[fired] = 0
        n = int(fired.sum())
        self.window_total += n
        self.total += n
        return fired

    def reset(self, rows: Iterable[int]):
        self.counts[list(rows)] = 0

    def take_window(self) -> int:
        """Failures since the previous call."""
        n, self.window_total = self.window_total, 0
        return n


class EmergencyGate:
    """
    Emergency-mode switch driven by per-window failure totals.

    Mode turns on when a window holds more than `limit` failures and off
    after `clean_windows` consecutive windows without any. A limit of None
    keeps the mode off.
    """

    def __init__(self, limit: Optional[int], clean_windows: int = 3):
        if clean_windows < 1:
            raise DomainError("clean_windows must be >= 1")
        self.limit = limit
        self.clean_windows = clean_windows
        self.active = False
        self._clean = 0

    def close_window(self, failures: int) -> bool:
        if self.limit is None:
            return False
        if failures > self.limit:
            if not self.active:
                logger.info("beam failures %d > %d: entering emergency mode", failures, self.limit)
            self.active = True
            self._clean = 0
        elif self.active:
            self._clean = self._clean + 1 if failures == 0 else 0
            if self._clean >= self.clean_windows:
                logger.info("%d clean windows: leaving emergency mode", self._clean)
                self.active = False
                self._clean = 0
        return self.active


def monitor_failures(
    serving_rsrp: Iterable[np.ndarray],
    monitor: BeamFailureMonitor,
    gate: Optional[EmergencyGate] = None,
) -> Tuple[List[Tuple[int, int]], bool]:
    """
    Run a sequence of ticks through a monitor as one report window.

    Args:
        serving_rsrp: Per tick, the serving-beam RSRP of every monitored UE
        monitor: Failure counters (updated in place)
        gate: Optional emergency gate closed at the end of the window

    Returns:
        ((tick, row) of every failure event, emergency mode after the window)
    """
    events: List[Tuple[int, int]] = []
    for tick, values in enumerate(serving_rsrp):
        events.extend((tick, int(row)) for row in np.flatnonzero(monitor.observe(values)))
    failures = monitor.take_window()
    active = gate.close_window(failures) if gate is not None else False
    return events, active


# -- radio environment map -----------------------------------------------------

def _grid_index(xy: np.ndarray, x_min: float, y_min: float, size: float, nx: int,
                ny: int) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    xy = np.asarray(xy, dtype=float).reshape(-1, 2)
    x_max = x_min + nx * size
    y_max = y_min + ny * size
    with np.errstate(invalid="ignore"):
        inside = (xy[:, 0] >= x_min) & (xy[:, 0] <= x_max) & (xy[:, 1] >= y_min) & (xy[:, 1] <= y_max)
    safe = np.where(inside[:, None], xy, [x_min, y_min])
    ix = np.minimum(((safe[:, 0] - x_min) // size).astype(int), nx - 1)
    iy = np.minimum(((safe[:, 1] - y_min) // size).astype(int), ny - 1)
    return ix, iy, inside


@dataclass(eq=False)
class RemGrid:
    """
    Per-beam mean RSRP (dB domain) and motion statistics on a square grid.

    Arrays are indexed [ix, iy, ...]; `rsrp_mean` is NaN where no sample fell.
    The motion histogram is indexed [ix, iy, speed_bin, bearing_bin].
    """
    x_min: float
    y_min: float
    cell_size_m: float
    nx: int
    ny: int
    rsrp_mean: np.ndarray
    counts: np.ndarray
    motion: np.ndarray
    speed_sum: np.ndarray
    sin_sum: np.ndarray
    cos_sum: np.ndarray
    speed_bin_edges: Tuple[float, ...]
    mode_velocity: np.ndarray = field(init=False)

    def __post_init__(self):
        self.mode_velocity = self._mode_velocity()

    @property
    def n_beams(self) -> int:
        return self.rsrp_mean.shape[2]

    @property
    def x_max(self) -> float:
        return self.x_min + self.nx * self.cell_size_m

    @property
    def y_max(self) -> float:
        return self.y_min + self.ny * self.cell_size_m

    def index_of(self, xy: np.ndarray) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
        """(ix, iy, inside) of (M, 2) points; indices of outside points are 0."""
        return _grid_index(xy, self.x_min, self.y_min, self.cell_size_m, self.nx, self.ny)

    def contains(self, xy: np.ndarray) -> np.ndarray:
        return self.index_of(xy)[2]

    def rem_at(self, xy: np.ndarray) -> np.ndarray:
        """(M, B) mean RSRP at the points; NaN outside the grid or in empty squares."""
        ix, iy, inside = self.index_of(xy)
        values = self.rsrp_mean[ix, iy].copy()
        values[~inside] = np.nan
        return values

    def motion_probabilities(self, ix: int, iy: int) -> np.ndarray:
        """Normalized (speed_bin, bearing_bin) histogram of one square; zeros when empty."""
        hist = self.motion[ix, iy].astype(float)
        total = hist.sum()
        return hist / total if total > 0 else hist

    def _mode_velocity(self) -> np.ndarray:
        nx, ny, s, k = self.motion.shape
        flat = self.motion.reshape(nx, ny, s * k)
        mode = flat.argmax(axis=2)
        pick = (np.arange(nx)[:, None], np.arange(ny)[None, :], mode)
        n = flat[pick].astype(float)
        seen = n > 0
        n = np.where(seen, n, 1.0)
        speed = self.speed_sum.reshape(nx, ny, s * k)[pick] / n
        bearing = np.arctan2(self.sin_sum.reshape(nx, ny, s * k)[pick], self.cos_sum.reshape(nx, ny, s * k)[pick])
        velocity = np.stack([speed * np.cos(bearing), speed * np.sin(bearing)], axis=2)
        velocity[~seen] = 0.0
        return velocity


def build_rem(
    trace: TrainingTrace,
    tech: LocalizationTechnique,
    bounds: Bounds,
    rng: np.random.Generator,
    cell_size_m: float = 5.0,
    speed_bin_edges: Sequence[float] = (0.0, 1.0, 5.0, 10.0, 20.0, 30.0, 50.0),
    bearing_bins: int = 8,
) -> RemGrid:
    """
    Build the REM of one cell from a training drive.

    Every sample is binned at its position as reported by the location
    server (true position plus the technique's error); samples landing off
    the grid are dropped.

    Args:
        trace: Training samples of the cell
        tech: Localization technique of the location server
        bounds: Area the grid must cover
        rng: Generator for the localization error
        cell_size_m: Grid square side
        speed_bin_edges: Increasing edges of the speed bins (speeds past the
            last edge fall into the last bin)
        bearing_bins: Number of equal bearing sectors

    Returns:
        The RemGrid
    """
    if len(trace) == 0:
        raise DomainError("training trace is empty")
    if not cell_size_m > 0:
        raise DomainError(f"grid cell size must be > 0, got {cell_size_m}")
    edges = np.asarray(speed_bin_edges, dtype=float)
    if len(edges) < 2 or np.any(np.diff(edges) <= 0):
        raise DomainError("speed bin edges must be strictly increasing")
    if bearing_bins < 1:
        raise DomainError("bearing_bins must be >= 1")

    nx = max(1, int(math.ceil((bounds.x_max - bounds.x_min) / cell_size_m)))
    ny = max(1, int(math.ceil((bounds.y_max - bounds.y_min) / cell_size_m)))
    n_speed = len(edges) - 1
    n_beams = trace.beam_rsrp.shape[1]
    reported = noisy_positions(trace.xy, tech, rng)
    ix, iy, inside = _grid_index(reported, bounds.x_min, bounds.y_min, cell_size_m, nx, ny)
    flat = (ix * ny + iy)[inside]
    values = trace.beam_rsrp[inside]
    velocity = trace.velocity[inside]

    counts = np.bincount(flat, minlength=nx * ny)
    sums = np.zeros((nx * ny, n_beams))
    np.add.at(sums, flat, values)
    with np.errstate(invalid="ignore", divide="ignore"):
        mean = sums / counts[:, None]
    mean[counts == 0] = np.nan

    speed = np.hypot(velocity[:, 0], velocity[:, 1])
    heading = np.arctan2(velocity[:, 1], velocity[:, 0])
    s_bin = np.clip(np.digitize(speed, edges) - 1, 0, n_speed - 1)
    sector = 2.0 * np.pi / bearing_bins
    k_bin = (np.floor(np.mod(heading, 2.0 * np.pi) / sector).astype(int)) % bearing_bins
    shape = (nx * ny, n_speed, bearing_bins)
    motion = np.zeros(shape, dtype=int)
    speed_sum = np.zeros(shape)
    sin_sum = np.zeros(shape)
    cos_sum = np.zeros(shape)
    where = (flat, s_bin, k_bin)
    np.add.at(motion, where, 1)
    np.add.at(speed_sum, where, speed)
    np.add.at(sin_sum, where, np.sin(heading))
    np.add.at(cos_sum, where, np.cos(heading))

    grid = (nx, ny)
    rem = RemGrid(
        x_min=bounds.x_min,
        y_min=bounds.y_min,
        cell_size_m=cell_size_m,
        nx=nx,
        ny=ny,
        rsrp_mean=mean.reshape(grid + (n_beams,)),
        counts=counts.reshape(grid),
        motion=motion.reshape(grid + shape[1:]),
        speed_sum=speed_sum.reshape(grid + shape[1:]),
        sin_sum=sin_sum.reshape(grid + shape[1:]),
        cos_sum=cos_sum.reshape(grid + shape[1:]),
        speed_bin_edges=tuple(float(e) for e in edges),
    )
    logger.debug("REM %dx%d, %d beams, %d of %d samples on grid", nx, ny, n_beams, int(inside.sum()), len(trace))
    return rem


def predict_paths(xy: np.ndarray, rem: RemGrid, horizon: int, tick_s: float) -> np.ndarray:
    """
    Advance (M, 2) start points along the modal motion of the squares they cross.

    Returns:
        (M, horizon, 2) predicted positions; NaN from the step a path leaves
        the grid (and throughout for starts off the grid)
    """
    xy = np.asarray(xy, dtype=float).reshape(-1, 2)
    out = np.full((len(xy), max(horizon, 0), 2), np.nan)
    if horizon <= 0 or not len(xy):
        return out
    cur = xy.copy()
    ix, iy, alive = rem.index_of(cur)
    for h in range(horizon):
        step = np.where(alive[:, None], rem.mode_velocity[ix, iy], 0.0) * tick_s
        cur = cur + step
        ix, iy, inside = rem.index_of(cur)
        alive &= inside
        out[alive, h] = cur[alive]
    return out


def predict_path(pos: Tuple[float, float], rem: RemGrid, horizon: int, tick_s: float) -> List[Tuple[float, float]]:
    """Single-UE form of `predict_paths`; the path is truncated where it leaves the grid."""
    path = predict_paths(np.array([pos], dtype=float), rem, horizon, tick_s)[0]
    out = []
    for x, y in path:
        if np.isnan(x):
            break
        out.append((float(x), float(y)))
    return out


def select_beams(
    rem: RemGrid,
    reported_xy: np.ndarray,
    paths: np.ndarray,
    current: np.ndarray,
    threshold_dbm: float,
    margin_db: float,
    bias_db: Optional[np.ndarray] = None,
) -> Tuple[np.ndarray, List[BeamReason]]:
    """
    Lookahead beam choice for M UEs.

    A beam is acceptable at a point when its REM value (plus the UE's bias)
    reaches threshold + margin; path points off the grid do not constrain,
    squares without samples never satisfy. The current beam stays if it is
    acceptable along the reported position and the whole predicted path.
    Otherwise the beam acceptable over the longest run of points from the
    reported position wins, ties going to the higher REM value at the
    reported position and then to the lower beam id.

    Args:
        rem: Map of the serving cell
        reported_xy: (M, 2) estimated positions
        paths: (M, H, 2) predicted positions
        current: (M,) current beam ids, -1 where none
        threshold_dbm: Beam failure threshold
        margin_db: Safety margin above the threshold
        bias_db: (M,) per-UE correction added to the REM

    Returns:
        (chosen beam ids, reasons); rows whose reported position lies off the
        grid get beam -1 and EMERGENCY_RSRP
    """
    m = len(reported_xy)
    points = np.concatenate([np.asarray(reported_xy, dtype=float).reshape(m, 1, 2), paths], axis=1)
    n_points = points.shape[1]
    flat = points.reshape(-1, 2)
    valid = rem.contains(flat).reshape(m, n_points)
    values = rem.rem_at(flat).reshape(m, n_points, rem.n_beams)
    if bias_db is not None:
        values = values + np.asarray(bias_db, dtype=float)[:, None, None]
    with np.errstate(invalid="ignore"):
        ok = values >= threshold_dbm + margin_db
    ok = np.where(valid[:, :, None], ok, True)
    run = np.cumprod(ok, axis=1).sum(axis=1)                  # (M, B)

    rows = np.arange(m)
    current = np.asarray(current, dtype=int)
    has_current = (current >= 0) & (current < rem.n_beams)
    stay = has_current & (run[rows, np.where(has_current, current, 0)] == n_points)

    best_run = run.max(axis=1)
    candidates = run == best_run[:, None]
    at_start = np.nan_to_num(values[:, 0, :], nan=-1e300)
    chosen = np.argmax(np.where(candidates, at_start, -np.inf), axis=1)

    beams = np.where(stay, current, chosen)
    reasons = []
    for i in range(m):
        if not valid[i, 0]:
            beams[i] = -1
            reasons.append(BeamReason.EMERGENCY_RSRP)
        elif stay[i] or beams[i] == current[i]:
            reasons.append(BeamReason.STAY)
        else:
            reasons.append(BeamReason.LOOKAHEAD_SWITCH)
    return beams, reasons


def select_beam(
    ue_id: str,
    reported_pos: Tuple[float, float],
    current_beam: Optional[int],
    rem: RemGrid,
    horizon: int,
    tick_s: float,
    threshold_dbm: float,
    margin_db: float,
) -> BeamDecision:
    """Decision for a single UE; see `select_beams`."""
    xy = np.array([reported_pos], dtype=float)
    paths = predict_paths(xy, rem, horizon, tick_s)
    current = np.array([-1 if current_beam is None else current_beam])
    beams, reasons = select_beams(rem, xy, paths, current, threshold_dbm, margin_db)
    return BeamDecision(ue_id, int(beams[0]), reasons[0])


def emergency_select(measured_dbm: Sequence[float]) -> int:
    """Index of the strongest measured beam; ties go to the lowest index."""
    values = np.asarray(measured_dbm, dtype=float)
    if values.size == 0:
        raise DomainError("empty beam report")
    return int(np.argmax(np.nan_to_num(values, nan=-np.inf)))


def build_rems(
    traces: Dict[str, TrainingTrace],
    tech: LocalizationTechnique,
    bounds: Bounds,
    cfg: BmmConfig,
    rng: np.random.Generator,
) -> Dict[str, RemGrid]:
    """REMs of every trained cell, in cell order."""
    return {
        cell_id: build_rem(trace, tech, bounds, rng, cfg.grid_cell_m, cfg.speed_bin_edges, cfg.bearing_bins)
        for cell_id, trace in traces.items()
        if len(trace)
    }


# -- the xApp ------------------------------------------------------------------

class BmmXApp(XApp):
    """
    Beam selection for the UEs of the beamformed cells.

    Args:
        cfg: BMM parameters
        cell_ids: Beamformed cells to manage
        threshold_dbm: Beam failure threshold of the RAN
        tick_s: Measurement cadence
    """
    xapp_id = "bmm"
    ei_kinds = (EiKind.LOCATION, EiKind.REM)

    def __init__(self, cfg: BmmConfig, cell_ids: Sequence[str], threshold_dbm: float, tick_s: float):
        super().__init__()
        if cfg.mode not in ("rem", "rsrp"):
            raise DomainError(f"unknown BMM mode {cfg.mode}")
        self.cfg = cfg
        self.cell_ids = list(cell_ids)
        self.threshold_dbm = threshold_dbm
        self.tick_s = tick_s
        self.rems: Dict[str, RemGrid] = {}
        self.location: Optional[LocationReport] = None
        self._location_rows: Dict[str, int] = {}
        self.bias: Dict[str, float] = {}
        self.gate = EmergencyGate(cfg.emergency_window_limit, cfg.clean_windows)
        self.windows: List[Tuple[float, int, bool]] = []
        self.decisions = {reason: 0 for reason in BeamReason}

    def on_start(self, t: float):
        if not self.cell_ids:
            logger.warning("BMM xApp has no beamformed cell to manage")
            return
        period = self.cfg.report_period_s or self.tick_s
        self.ric.subscribe(self.xapp_id, self.cell_ids, ReportKind.RSRP_MEAS, period)
        self.ric.subscribe(self.xapp_id, self.cell_ids, ReportKind.BEAM_STATS, self.cfg.stats_period_s)

    def on_ei(self, msg: RicMessage):
        doc = msg.payload
        if doc.kind is EiKind.LOCATION:
            self.location = doc.data
            self._location_rows = {ue_id: i for i, ue_id in enumerate(doc.data.ue_ids)}
        elif doc.kind is EiKind.REM:
            self.rems.update(doc.data)
            logger.info("BMM received REM for %s", ", ".join(sorted(doc.data)))

    def on_report(self, msg: RicMessage):
        payload = msg.payload
        if isinstance(payload, RsrpReport):
            self._select(payload, msg.time)
            return
        failures = sum(stats.failures for stats in payload)
        active = self.gate.close_window(failures)
        self.windows.append((msg.time, failures, active))

    @property
    def emergency(self) -> bool:
        return self.gate.active

    def _estimate(self, ue_ids: Sequence[str], rem: RemGrid, t: float) -> Tuple[np.ndarray, np.ndarray]:
        """Dead-reckoned positions of `ue_ids` and whether a location was known."""
        xy = np.full((len(ue_ids), 2), np.nan)
        known = np.zeros(len(ue_ids), dtype=bool)
        loc = self.location
        if loc is None:
            return xy, known
        for i, ue_id in enumerate(ue_ids):
            j = self._location_rows.get(ue_id)
            if j is not None:
                xy[i] = loc.xy[j]
                known[i] = True
        age = t - loc.time
        if age > 0 and known.any():
            ix, iy, inside = rem.index_of(xy[known])
            velocity = np.where(inside[:, None], rem.mode_velocity[ix, iy], 0.0)
            xy[known] = xy[known] + velocity * age
        return xy, known

    def _select(self, report: RsrpReport, t: float):
        for cell_id, measured in report.beam_rsrp_dbm:
            rows = [i for i, c in enumerate(report.serving_cell) if c == cell_id]
            if not rows:
                continue
            ue_ids = [report.ue_ids[i] for i in rows]
            values = measured[rows]
            current = np.array([-1 if report.serving_beam[i] is None else report.serving_beam[i] for i in rows])
            rem = self.rems.get(cell_id)

            beams = np.full(len(rows), -1)
            reasons = [BeamReason.EMERGENCY_RSRP] * len(rows)
            if self.cfg.mode == "rem" and rem is not None and not self.gate.active:
                xy, known = self._estimate(ue_ids, rem, t)
                self._update_bias(ue_ids, xy, known, values, current, rem)
                if known.any():
                    sel = np.flatnonzero(known)
                    bias = np.array([self.bias.get(ue_ids[i], 0.0) for i in sel])
                    paths = predict_paths(xy[sel], rem, self.cfg.horizon_ticks, self.tick_s)
                    chosen, why = select_beams(rem, xy[sel], paths, current[sel], self.threshold_dbm,
                                               self.cfg.margin_db, bias)
                    for k, i in enumerate(sel):
                        beams[i] = chosen[k]
                        reasons[i] = why[k]

            for i, ue_id in enumerate(ue_ids):
                if reasons[i] is BeamReason.EMERGENCY_RSRP:
                    beams[i] = emergency_select(values[i])
                    if beams[i] == current[i]:
                        reasons[i] = BeamReason.STAY
                self.decisions[reasons[i]] += 1
                if reasons[i] is not BeamReason.STAY:
                    self.ric.submit_control(
                        self.xapp_id, ControlAction.beam_switch(ue_id, cell_id, int(beams[i]), reasons[i].value))

    def _update_bias(self, ue_ids, xy, known, measured, current, rem: RemGrid):
        """EMA of measured serving-beam RSRP minus the REM prediction; alpha 0 disables it."""
        alpha = self.cfg.bias_alpha
        served = np.flatnonzero(known & (current >= 0))
        if alpha <= 0 or not len(served):
            return
        predicted = rem.rem_at(xy[served])
        for k, i in enumerate(served):
            expected = predicted[k, current[i]]
            if np.isnan(expected):
                continue
            error = float(measured[i, current[i]] - expected)
            previous = self.bias.get(ue_ids[i])
            self.bias[ue_ids[i]] = error if previous is None else (1.0 - alpha) * previous + alpha * error

    def export(self, trace) -> Dict[str, Any]:
        windows = pd.DataFrame(self.windows, columns=["time", "failures", "emergency"])
        return {"bmm_windows": windows}

    def summary(self, trace) -> Dict[str, float]:
        users = trace.mobile_ues
        seconds = trace.duration_s
        failures = len(trace.beam_failures)
        reselections = sum(
            1 for e in trace.beam_events
            if e.old_beam is not None and e.reason in (BeamReason.LOOKAHEAD_SWITCH.value,
                                                       BeamReason.EMERGENCY_RSRP.value)
        )
        return {
            "beam_failures": float(failures),
            "failures_per_user_per_s": failures / (users * seconds) if users and seconds > 0 else 0.0,
            "reselections": float(reselections),
            "emergency_windows": float(sum(1 for _, _, active in self.windows if active)),
        }
