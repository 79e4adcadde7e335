"""
Discrete-event RAN simulator.

Cells, UEs, mobility, connection-request traffic (legitimate and
adversarial), slice PRB pools and the E2-node behavior the xApps rely on:
periodic reports, control application, TA-blacklist enforcement and
autonomous beam-failure recovery. A run is a pure function of the scenario
and its seed.
"""

import heapq
import logging
import math
from dataclasses import astuple, dataclass, field
from enum import Enum, IntEnum
from fractions import Fraction
from typing import Any, Dict, List, Mapping, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from .config import DAY_S
from .errors import RicSimError
from .policy import TaBlacklistBody, slice_key
from .ric import (
    BeamStats,
    CellLoad,
    ConnStats,
    ControlAction,
    ControlKind,
    EiKind,
    LocationReport,
    ReportKind,
    Ric,
    RsrpReport,
    SliceLoad,
    Subscription,
    XApp,
    quantize,
)
from .scenario import Placement, ScenarioConfig
from .wireless import (
    Beam,
    Position,
    PropagationParams,
    TaConfig,
    make_grid_of_beams,
    noisy_positions,
    rsrp_matrix,
    ta_index,
)
from .xapp_bmm import BeamFailureMonitor, TrainingTrace

logger = logging.getLogger(__name__)
RNG_STREAMS = ("placement", "shadowing", "traffic", "localization", "training_ssd", "training_bmm")


class UeKind(str, Enum):
    MOBILE = "MOBILE"
    IOT_LEGIT = "IOT_LEGIT"
    IOT_ADVERSARY = "IOT_ADVERSARY"


class AttemptOutcome(str, Enum):
    ACCEPTED = "ACCEPTED"
    REJECTED_BLACKLIST = "REJECTED_BLACKLIST"


class EventKind(IntEnum):
    """Same-time events are processed in this order."""
    A1_POLICY_ARRIVAL = 0
    MOVE_TICK = 1
    MEASUREMENT_TICK = 2
    CONNECTION_REQUEST = 3
    ATTACK_BURST_START = 4
    REPORT_DUE = 5
    POLICY_EXPIRY = 6


@dataclass(order=True, frozen=True)
class Event:
    time: float
    kind: EventKind
    ue_id: str
    seq: int
    payload: Any = field(default=None, compare=False)


@dataclass
class Cell:
    cell_id: str
    pos: Position
    beams: List[Beam] = field(default_factory=list)
    prb_count: int = 100
    prop: PropagationParams = field(default_factory=PropagationParams)
    ta_cfg: TaConfig = field(default_factory=TaConfig)
    per_prb_rate_bps: float = 1.0e6
    blacklist: Dict[int, float] = field(default_factory=dict)
    prb_shares: Dict[str, Fraction] = field(default_factory=dict)
    prb_alloc: Dict[str, int] = field(default_factory=dict)

    def __post_init__(self):
        if self.prb_count <= 0:
            raise RicSimError(f"cell {self.cell_id}: prb_count must be > 0")
        ids = [b.beam_id for b in self.beams]
        if len(set(ids)) != len(ids):
            raise RicSimError(f"cell {self.cell_id}: duplicate beam ids")

    def has_beam(self, beam_id: int) -> bool:
        return any(b.beam_id == beam_id for b in self.beams)

    def is_blacklisted(self, ta: int, t: float) -> bool:
        expiry = self.blacklist.get(ta)
        return expiry is not None and expiry > t

    def active_blacklist(self, t: float) -> List[int]:
        return sorted(ta for ta, expiry in self.blacklist.items() if expiry > t)


@dataclass
class Ue:
    ue_id: str
    pos: Position
    speed_mps: float = 0.0
    bearing_deg: float = 0.0
    five_qi: int = 1
    kind: UeKind = UeKind.MOBILE
    serving_cell: Optional[str] = None
    serving_beam: Optional[int] = None
    demand_bps: Optional[float] = None
    index: int = -1

    def __post_init__(self):
        if self.five_qi < 1:
            raise RicSimError(f"UE {self.ue_id}: five_qi must be >= 1")


@dataclass(frozen=True)
class ConnectionAttempt:
    time: float
    ue_id: str
    kind: str
    cell_id: str
    ta: int
    outcome: str


@dataclass(frozen=True)
class HandoverRecord:
    time: float
    ue_id: str
    from_cell: Optional[str]
    to_cell: Optional[str]
    xapp_id: str


@dataclass(frozen=True)
class BeamEvent:
    time: float
    ue_id: str
    cell_id: str
    old_beam: Optional[int]
    new_beam: int
    reason: str


@dataclass(frozen=True)
class BeamFailure:
    time: float
    ue_id: str
    cell_id: str
    beam_id: int
    rsrp_dbm: float


@dataclass(frozen=True)
class PrbAllocation:
    time: float
    cell_id: str
    slice_id: str
    share: float
    share_exact: str
    prbs: int


@dataclass(frozen=True)
class ServingRecord:
    time: float
    ue_id: str
    cell_id: Optional[str]
    beam_id: Optional[int]


@dataclass(frozen=True)
class BlacklistRecord:
    time: float
    cell_id: str
    ta: int
    expiry: float
    action: str


COLUMNS = {
    "attempts": ["time", "ue", "kind", "cell", "ta", "outcome"],
    "handovers": ["time", "ue", "from_cell", "to_cell", "xapp"],
    "beam_events": ["time", "ue", "cell", "old_beam", "new_beam", "reason"],
    "beam_failures": ["time", "ue", "cell", "beam", "rsrp_dbm"],
    "prb_alloc": ["time", "cell", "slice", "share", "share_exact", "prbs"],
    "serving": ["time", "ue", "cell", "beam"],
    "blacklist": ["time", "cell", "ta", "expiry", "action"],
    "policies": ["time", "policy_id", "policy_type", "scope", "action", "description"],
    "controls": ["time", "msg_id", "xapp", "kind", "entity", "status", "detail"],
    "conflicts": ["time", "msg_ids", "entity", "parameter", "winner", "losers"],
}


@dataclass
class SimulationTrace:
    """Everything a run produced, one list per metric family."""
    attempts: List[ConnectionAttempt] = field(default_factory=list)
    handovers: List[HandoverRecord] = field(default_factory=list)
    beam_events: List[BeamEvent] = field(default_factory=list)
    beam_failures: List[BeamFailure] = field(default_factory=list)
    prb_alloc: List[PrbAllocation] = field(default_factory=list)
    serving: List[ServingRecord] = field(default_factory=list)
    blacklist: List[BlacklistRecord] = field(default_factory=list)
    policies: list = field(default_factory=list)
    controls: list = field(default_factory=list)
    conflicts: list = field(default_factory=list)
    duration_s: float = 0.0
    n_events: int = 0
    mobile_ues: int = 0

    def is_empty(self) -> bool:
        return not any(getattr(self, name) for name in COLUMNS)

    def frame(self, name: str) -> pd.DataFrame:
        rows = []
        for record in getattr(self, name):
            row = astuple(record)
            if name == "conflicts":
                row = row[:1] + (";".join(str(m) for m in row[1]),) + row[2:5] + (";".join(row[5]),)
            rows.append(row)
        return pd.DataFrame(rows, columns=COLUMNS[name])

    def frames(self) -> Dict[str, pd.DataFrame]:
        return {name: self.frame(name) for name in COLUMNS}


# -- traffic generators ----------------------------------------------------

def _poisson_times(rate_per_s: float, duration: float, rng: np.random.Generator) -> np.ndarray:
    if duration <= 0 or rate_per_s <= 0:
        return np.empty(0)
    expected = rate_per_s * duration
    chunk = int(expected + 5.0 * math.sqrt(expected) + 16)
    times = np.cumsum(rng.exponential(1.0 / rate_per_s, size=chunk))
    while times[-1] < duration:
        more = np.cumsum(rng.exponential(1.0 / rate_per_s, size=chunk)) + times[-1]
        times = np.concatenate([times, more])
    return times[times < duration]


def legit_traffic(rate_per_hour: float, duration: float, rng: np.random.Generator) -> np.ndarray:
    """
    Connection-request times of one legitimate IoT device.

    Args:
        rate_per_hour: Mean number of requests per hour (> 0)
        duration: Horizon in seconds
        rng: Random generator

    Returns:
        Strictly increasing times in [0, duration) with i.i.d. exponential
        gaps of mean 3600 / rate_per_hour seconds
    """
    if not rate_per_hour > 0:
        raise RicSimError(f"request rate must be > 0, got {rate_per_hour}")
    return _poisson_times(rate_per_hour / 3600.0, duration, rng)


def attack_start_times(attacks_per_day: float, duration: float, rng: np.random.Generator) -> np.ndarray:
    """Poisson attack onsets with the given daily rate."""
    if attacks_per_day <= 0:
        return np.empty(0)
    return _poisson_times(attacks_per_day / DAY_S, duration, rng)


def expand_bursts(starts: np.ndarray, burst_len: int, burst_gap: float, duration: float) -> np.ndarray:
    """Request times of bursts of `burst_len` requests `burst_gap` apart."""
    if burst_len < 1:
        raise RicSimError(f"burst length must be >= 1, got {burst_len}")
    if not burst_gap > 0:
        raise RicSimError(f"burst gap must be > 0, got {burst_gap}")
    if len(starts) == 0:
        return np.empty(0)
    times = (starts[:, None] + np.arange(burst_len)[None, :] * burst_gap).ravel()
    return np.sort(times[times < duration])


def adversary_traffic(
    attacks_per_day: float,
    burst_len: int,
    burst_gap: float,
    duration: float,
    rng: np.random.Generator,
) -> np.ndarray:
    """All request times of one adversary: Poisson attacks, each a fixed-gap burst."""
    if burst_len < 1 or not burst_gap > 0:
        return expand_bursts(np.empty(0), burst_len, burst_gap, duration)
    return expand_bursts(attack_start_times(attacks_per_day, duration, rng), burst_len, burst_gap, duration)


# -- E2-node rules -----------------------------------------------------------

def handle_connection_request(cell: Cell, ue: Ue, t: float) -> ConnectionAttempt:
    """Compute the UE's TA towards `cell` and accept or reject it against the blacklist."""
    ta = ta_index(cell.pos.distance_to(ue.pos), cell.ta_cfg)
    outcome = AttemptOutcome.REJECTED_BLACKLIST if cell.is_blacklisted(ta, t) else AttemptOutcome.ACCEPTED
    return ConnectionAttempt(t, ue.ue_id, ue.kind.value, cell.cell_id, ta, outcome.value)


def largest_remainder(shares: Mapping[str, Fraction], total: int) -> Dict[str, int]:
    """
    Integer PRB counts for rational shares.

    Floors every share of `total`, then hands the remaining units to the
    largest fractional remainders (ties by slice id). Counts sum to `total`
    when the shares sum to 1 and never exceed it otherwise.
    """
    exact = {k: Fraction(v) * total for k, v in shares.items()}
    counts = {k: math.floor(v) for k, v in exact.items()}
    target = min(total, math.floor(sum(exact.values(), Fraction(0))))
    left = target - sum(counts.values())
    for k in sorted(exact, key=lambda k: (-(exact[k] - counts[k]), k))[:max(left, 0)]:
        counts[k] += 1
    return counts


def apply_control(cells: Mapping[str, Cell], ue: Optional[Ue], action: ControlAction) -> Optional[str]:
    """
    Apply one arbitrated control to the RAN state.

    Returns:
        None when applied, otherwise why the control was refused (state is
        then left unchanged)
    """
    if action.kind is ControlKind.HANDOVER:
        if ue is None:
            return f"unknown UE {action.ue_id}"
        if action.cell_id is not None and action.cell_id not in cells:
            return f"unknown cell {action.cell_id}"
        ue.serving_cell = action.cell_id
        ue.serving_beam = None
        return None

    if action.kind is ControlKind.BEAM_SWITCH:
        if ue is None:
            return f"unknown UE {action.ue_id}"
        if ue.serving_cell is None:
            return f"UE {ue.ue_id} is not served"
        if action.cell_id is not None and action.cell_id != ue.serving_cell:
            return f"UE {ue.ue_id} is served by {ue.serving_cell}, not {action.cell_id}"
        if not cells[ue.serving_cell].has_beam(action.beam_id):
            return f"unknown beam {action.beam_id} on cell {ue.serving_cell}"
        ue.serving_beam = action.beam_id
        return None

    cell = cells.get(action.cell_id)
    if cell is None:
        return f"unknown cell {action.cell_id}"
    shares = dict(action.shares)
    if sum(shares.values(), Fraction(0)) > 1 or any(v < 0 for v in shares.values()):
        return "invalid PRB shares"
    cell.prb_shares = shares
    cell.prb_alloc = largest_remainder(shares, cell.prb_count)
    return None


# -- geometry helpers --------------------------------------------------------

def place(placement: Placement, count: int, rng: np.random.Generator) -> np.ndarray:
    """(count, 2) positions drawn according to a placement rule."""
    if placement.type == "point":
        return np.tile(np.array([placement.x, placement.y], dtype=float), (count, 1))
    if placement.type == "rect":
        x = rng.uniform(placement.x_min, placement.x_max, size=count)
        y = rng.uniform(placement.y_min, placement.y_max, size=count)
        return np.column_stack([x, y])
    if placement.type == "annulus":
        # uniform over the ring's area
        inner2, outer2 = placement.min_radius_m ** 2, placement.radius_m ** 2
        r = np.sqrt(inner2 + (outer2 - inner2) * rng.uniform(0.0, 1.0, size=count))
        theta = rng.uniform(0.0, 2.0 * np.pi, size=count)
        return np.column_stack([placement.x + r * np.cos(theta), placement.y + r * np.sin(theta)])
    r = placement.radius_m * np.sqrt(rng.uniform(0.0, 1.0, size=count))
    theta = rng.uniform(0.0, 2.0 * np.pi, size=count)
    # keep UEs off the site itself
    r = np.maximum(r, placement.min_radius_m)
    return np.column_stack([placement.x + r * np.cos(theta), placement.y + r * np.sin(theta)])


def velocity_of(speed_mps: float, bearing_deg: float) -> np.ndarray:
    b = math.radians(bearing_deg)
    return np.array([speed_mps * math.cos(b), speed_mps * math.sin(b)])


def advance(xy: np.ndarray, vel: np.ndarray, dt: float, lo: np.ndarray, hi: np.ndarray,
            boundary: str) -> Tuple[np.ndarray, np.ndarray]:
    """Constant-velocity step with bounce or wrap at the scenario bounds."""
    new = xy + vel * dt
    if boundary == "wrap":
        return lo + np.mod(new - lo, hi - lo), vel
    over = new > hi
    new = np.where(over, 2.0 * hi - new, new)
    vel = np.where(over, -vel, vel)
    under = new < lo
    new = np.where(under, 2.0 * lo - new, new)
    vel = np.where(under, -vel, vel)
    return new, vel


@dataclass(frozen=True)
class Obstacle:
    cell_id: str
    beam_ids: Tuple[int, ...]
    x_min: float
    y_min: float
    x_max: float
    y_max: float
    attenuation_db: float


def obstacle_attenuation(obstacles: Sequence[Obstacle], cell: Cell, xy: np.ndarray) -> Optional[np.ndarray]:
    """(N, B) extra loss of every beam of `cell` for UEs at `xy`."""
    mine = [o for o in obstacles if o.cell_id == cell.cell_id]
    if not mine or not cell.beams:
        return None
    column = {b.beam_id: j for j, b in enumerate(cell.beams)}
    att = np.zeros((len(xy), len(cell.beams)))
    for o in mine:
        inside = (xy[:, 0] >= o.x_min) & (xy[:, 0] <= o.x_max) & (xy[:, 1] >= o.y_min) & (xy[:, 1] <= o.y_max)
        cols = [column[b] for b in o.beam_ids if b in column]
        if cols:
            att[np.ix_(inside, cols)] += o.attenuation_db
    return att


# -- simulator ---------------------------------------------------------------

@dataclass(eq=False)
class Measurement:
    time: float
    rows: np.ndarray               # UE indices of the mobile UEs
    cell_rsrp: np.ndarray          # (M, C)
    beam_rsrp: Dict[str, np.ndarray]


class Simulator:
    """
    Event loop of one scenario run; also the E2 side of the RIC.

    Args:
        cfg: Validated scenario
        xapps: xApps to register with the RIC
    """

    def __init__(self, cfg: ScenarioConfig, xapps: Sequence[XApp] = ()):
        self.cfg = cfg
        seeds = np.random.SeedSequence(cfg.seed).spawn(len(RNG_STREAMS))
        self.rngs = {name: np.random.default_rng(s) for name, s in zip(RNG_STREAMS, seeds)}
        self.now = 0.0
        self.trace = SimulationTrace(duration_s=cfg.duration_s)
        self._queue: List[Event] = []
        self._seq = 0
        self._cursors: Dict[Tuple[int, str], int] = {}
        self._tick_index = 0

        self.cells: Dict[str, Cell] = {}
        for c in cfg.cells:
            beams = make_grid_of_beams(**c.beams.as_kwargs()) if c.beams else []
            self.cells[c.cell_id] = Cell(
                cell_id=c.cell_id,
                pos=Position(c.x, c.y),
                beams=beams,
                prb_count=c.prb_count,
                prop=c.propagation or cfg.propagation,
                ta_cfg=TaConfig(c.scs_khz or cfg.ta.scs_khz),
                per_prb_rate_bps=c.per_prb_rate_bps,
            )
        self.cell_ids = list(self.cells)
        self.obstacles = [Obstacle(o.cell_id, tuple(o.beam_ids), o.x_min, o.y_min, o.x_max, o.y_max,
                                   o.attenuation_db) for o in cfg.obstacles]
        self.lo = np.array([cfg.bounds.x_min, cfg.bounds.y_min], dtype=float)
        self.hi = np.array([cfg.bounds.x_max, cfg.bounds.y_max], dtype=float)

        self.ues: List[Ue] = []
        xy, vel = self._populate(self.rngs["placement"])
        self.xy = xy
        self.vel = vel
        self.ue_index = {ue.ue_id: ue.index for ue in self.ues}
        self.mobile_rows = np.array([u.index for u in self.ues if u.kind is UeKind.MOBILE], dtype=int)
        self.moving = np.any(self.vel[self.mobile_rows] != 0.0) if len(self.mobile_rows) else False
        self.trace.mobile_ues = len(self.mobile_rows)

        sigma = np.array([cell.prop.shadowing_sigma_db for cell in self.cells.values()])
        self.shadowing = self.rngs["shadowing"].standard_normal((len(self.ues), len(self.cells))) * sigma

        bf = cfg.beam_failure
        self.monitor = BeamFailureMonitor(len(self.mobile_rows), bf.threshold_dbm, bf.n_consecutive)
        self._row_of = {int(ue_idx): row for row, ue_idx in enumerate(self.mobile_rows)}

        self.ric = Ric(self, self._schedule_report, cfg.ric.priority, cfg.ric.ei_delay_s, cfg.ric.log_messages)
        for xapp in xapps:
            self.ric.register(xapp)
        self._wants_location = any(EiKind.LOCATION in x.ei_kinds for x in xapps)
        bmm = cfg.xapps.bmm
        self._location_every = max(1, int(round(bmm.location_period_s / cfg.tick_s)))

        self.measurement: Optional[Measurement] = None
        self._measure(0.0)
        self._initial_attach()

    # -- setup -------------------------------------------------------------

    def _populate(self, rng: np.random.Generator) -> Tuple[np.ndarray, np.ndarray]:
        xy, vel = [], []
        for u in self.cfg.ues:
            self.ues.append(Ue(u.ue_id, Position(u.x, u.y), u.speed_mps, u.bearing_deg, u.five_qi,
                               UeKind(u.kind), demand_bps=u.demand_bps, index=len(self.ues)))
            xy.append([u.x, u.y])
            vel.append(velocity_of(u.speed_mps, u.bearing_deg))
        for g in self.cfg.ue_groups:
            points = place(g.placement, g.count, rng)
            for i in range(g.count):
                x, y = float(points[i, 0]), float(points[i, 1])
                self.ues.append(Ue(f"{g.prefix}{i + 1}", Position(x, y), g.speed_mps, g.bearing_deg, g.five_qi,
                                   UeKind(g.kind), demand_bps=g.demand_bps, index=len(self.ues)))
                xy.append([x, y])
                vel.append(velocity_of(g.speed_mps, g.bearing_deg))
        if not self.ues:
            return np.empty((0, 2)), np.empty((0, 2))
        return np.array(xy, dtype=float), np.array(vel, dtype=float)

    def _initial_attach(self):
        """MOBILE UEs join their strongest cell, IoT devices their nearest one."""
        m = self.measurement
        for ue in self.ues:
            if ue.kind is UeKind.MOBILE:
                row = self._row_of[ue.index]
                ue.serving_cell = self.cell_ids[int(np.argmax(m.cell_rsrp[row]))] if self.cell_ids else None
            elif self.cell_ids:
                d = [cell.pos.distance_to(ue.pos) for cell in self.cells.values()]
                ue.serving_cell = self.cell_ids[int(np.argmin(d))]

    def iot_attachments(self) -> List[Tuple[Ue, Cell, int]]:
        """(device, serving cell, TA index) of every static IoT device."""
        out = []
        for ue in self.ues:
            if ue.kind is not UeKind.MOBILE and ue.serving_cell is not None:
                cell = self.cells[ue.serving_cell]
                out.append((ue, cell, ta_index(cell.pos.distance_to(ue.pos), cell.ta_cfg)))
        return out

    def beam_training_trace(self, duration_s: float, sample_period_s: float,
                            rng: np.random.Generator) -> Dict[str, TrainingTrace]:
        """
        Drive a fresh population of the scenario's mobile UEs and record
        their per-beam RSRP for every beamformed cell.

        Positions are true positions; the REM builder adds localization error.
        """
        saved = self.ues, self.xy, self.vel
        self.ues = []
        try:
            xy, vel = self._populate(rng)
        finally:
            fresh, self.ues, self.xy, self.vel = self.ues, saved[0], saved[1], saved[2]
        rows = np.array([u.index for u in fresh if u.kind is UeKind.MOBILE], dtype=int)
        xy, vel = xy[rows], vel[rows]
        beamformed = [(j, cell) for j, cell in enumerate(self.cells.values()) if cell.beams]
        sigma = np.array([cell.prop.shadowing_sigma_db for _, cell in beamformed])
        shadowing = rng.standard_normal((len(rows), len(beamformed))) * sigma

        samples: Dict[str, List[np.ndarray]] = {cell.cell_id: [] for _, cell in beamformed}
        positions, velocities = [], []
        steps = int(math.floor(duration_s / sample_period_s + 1e-9))
        for _ in range(steps + 1):
            positions.append(xy.copy())
            velocities.append(vel.copy())
            for k, (_, cell) in enumerate(beamformed):
                extra = obstacle_attenuation(self.obstacles, cell, xy)
                _, beams = rsrp_matrix(xy, cell.pos, cell.beams, cell.prop, shadowing[:, k], extra)
                samples[cell.cell_id].append(beams)
            xy, vel = advance(xy, vel, sample_period_s, self.lo, self.hi, self.cfg.boundary)
        all_xy = np.concatenate(positions) if positions else np.empty((0, 2))
        all_vel = np.concatenate(velocities) if velocities else np.empty((0, 2))
        return {
            cell_id: TrainingTrace(all_xy, all_vel, np.concatenate(values))
            for cell_id, values in samples.items()
        }

    # -- E2Node protocol ---------------------------------------------------

    def has_ue(self, ue_id: str) -> bool:
        return ue_id in self.ue_index

    def has_cell(self, cell_id: str) -> bool:
        return cell_id in self.cells

    def ue(self, ue_id: str) -> Optional[Ue]:
        idx = self.ue_index.get(ue_id)
        return self.ues[idx] if idx is not None else None

    def apply_control(self, action: ControlAction, xapp_id: str, t: float) -> Optional[str]:
        ue = self.ue(action.ue_id) if action.ue_id is not None else None
        old_cell = ue.serving_cell if ue else None
        old_beam = ue.serving_beam if ue else None
        problem = apply_control(self.cells, ue, action)
        if problem:
            return problem

        if action.kind is ControlKind.HANDOVER:
            if old_cell != ue.serving_cell:
                self.trace.handovers.append(HandoverRecord(t, ue.ue_id, old_cell, ue.serving_cell, xapp_id))
                self._reset_monitor(ue)
        elif action.kind is ControlKind.BEAM_SWITCH:
            if old_beam != ue.serving_beam:
                self.trace.beam_events.append(
                    BeamEvent(t, ue.ue_id, ue.serving_cell, old_beam, ue.serving_beam, action.reason))
                self._reset_monitor(ue)
        else:
            cell = self.cells[action.cell_id]
            for slice_id, share in sorted(cell.prb_shares.items()):
                self.trace.prb_alloc.append(PrbAllocation(
                    t, cell.cell_id, slice_id, float(share), str(share), cell.prb_alloc[slice_id]))
        return None

    def install_policy(self, body: TaBlacklistBody, t: float):
        cell = self.cells[body.cell_id]
        expiry = quantize(t + body.ttl_s)
        for ta in body.ta_indices:
            action = "renewed" if cell.is_blacklisted(ta, t) else "installed"
            cell.blacklist[ta] = expiry
            self.trace.blacklist.append(BlacklistRecord(t, cell.cell_id, ta, expiry, action))
            self._push(expiry, EventKind.POLICY_EXPIRY, payload=(cell.cell_id, ta))
        logger.info("cell %s blacklists TA %s until t=%.1f", cell.cell_id, list(body.ta_indices), expiry)

    def build_report(self, sub: Subscription, t: float) -> Any:
        window_start = max(sub.start_s, quantize(t - sub.period_s))
        if sub.report_kind is ReportKind.RSRP_MEAS:
            return self._rsrp_report(sub.cell_ids)
        if sub.report_kind is ReportKind.CONN_STATS:
            fresh = self._since(sub.sub_id, "attempts")
            out = []
            for cell_id in sub.cell_ids:
                tas = [a.ta for a in fresh if a.cell_id == cell_id]
                values, counts = np.unique(np.array(tas, dtype=int), return_counts=True)
                out.append(ConnStats(cell_id, window_start, t, len(tas),
                                     tuple((int(v), int(c)) for v, c in zip(values, counts))))
            return tuple(out)
        if sub.report_kind is ReportKind.BEAM_STATS:
            fresh = self._since(sub.sub_id, "beam_failures")
            out = []
            for cell_id in sub.cell_ids:
                mine = [f.ue_id for f in fresh if f.cell_id == cell_id]
                per_ue: Dict[str, int] = {}
                for ue_id in mine:
                    per_ue[ue_id] = per_ue.get(ue_id, 0) + 1
                out.append(BeamStats(cell_id, window_start, t, len(mine), tuple(sorted(per_ue.items()))))
            return tuple(out)
        return tuple(self._slice_load(cell_id) for cell_id in sub.cell_ids)

    def _since(self, sub_id: int, family: str) -> list:
        records = getattr(self.trace, family)
        start = self._cursors.get((sub_id, family), 0)
        self._cursors[(sub_id, family)] = len(records)
        return records[start:]

    def _rsrp_report(self, cell_ids: Tuple[str, ...]) -> RsrpReport:
        m = self.measurement
        wanted = set(cell_ids)
        picked = [row for row, idx in enumerate(m.rows)
                  if self.ues[idx].serving_cell is None or self.ues[idx].serving_cell in wanted]
        picked = np.array(picked, dtype=int)
        cols = [self.cell_ids.index(c) for c in cell_ids]
        cell_rsrp = m.cell_rsrp[np.ix_(picked, cols)] if len(picked) else np.empty((0, len(cols)))
        cell_rsrp.setflags(write=False)
        beams = []
        for cell_id in cell_ids:
            if cell_id in m.beam_rsrp:
                values = m.beam_rsrp[cell_id][picked]
                values.setflags(write=False)
                beams.append((cell_id, values))
        ues = [self.ues[m.rows[row]] for row in picked]
        return RsrpReport(
            cell_ids=tuple(cell_ids),
            ue_ids=tuple(u.ue_id for u in ues),
            five_qi=tuple(u.five_qi for u in ues),
            serving_cell=tuple(u.serving_cell for u in ues),
            serving_beam=tuple(u.serving_beam for u in ues),
            cell_rsrp_dbm=cell_rsrp,
            beam_rsrp_dbm=tuple(beams),
        )

    def _slice_load(self, cell_id: str) -> CellLoad:
        cell = self.cells[cell_id]
        groups: Dict[int, List[Ue]] = {}
        for ue in self.ues:
            if ue.kind is UeKind.MOBILE and ue.serving_cell == cell_id:
                groups.setdefault(ue.five_qi, []).append(ue)
        slices = []
        for five_qi in sorted(groups):
            members = groups[five_qi]
            demands = [u.demand_bps for u in members]
            demand = float(sum(demands)) if all(d is not None for d in demands) else None
            slices.append(SliceLoad(slice_key(cell_id, five_qi), five_qi, tuple(u.ue_id for u in members), demand))
        return CellLoad(cell_id, cell.prb_count, cell.per_prb_rate_bps, tuple(slices))

    # -- event loop ----------------------------------------------------------

    def _push(self, t: float, kind: EventKind, ue_id: str = "", payload: Any = None):
        t = quantize(t)
        if t > self.cfg.duration_s:
            return
        heapq.heappush(self._queue, Event(t, kind, ue_id, self._seq, payload))
        self._seq += 1

    def _schedule_report(self, t: float, sub_id: int, k: int):
        self._push(t, EventKind.REPORT_DUE, payload=(sub_id, k))

    def _schedule_initial(self):
        cfg = self.cfg
        for timed in cfg.policies:
            if timed.at_s < cfg.duration_s:
                self._push(timed.at_s, EventKind.A1_POLICY_ARRIVAL, payload=timed.policy)
        if len(self.mobile_rows):
            if self.moving:
                self._push(cfg.tick_s, EventKind.MOVE_TICK, payload=1)
            self._push(cfg.tick_s, EventKind.MEASUREMENT_TICK, payload=1)

        rng = self.rngs["traffic"]
        traffic = cfg.traffic
        for ue in self.ues:
            if ue.kind is UeKind.IOT_LEGIT:
                for t in legit_traffic(traffic.legit_rate_per_hour, cfg.duration_s, rng):
                    self._push(float(t), EventKind.CONNECTION_REQUEST, ue.ue_id, ue.index)
            elif ue.kind is UeKind.IOT_ADVERSARY:
                for t in attack_start_times(traffic.attacks_per_day, cfg.duration_s, rng):
                    self._push(float(t), EventKind.ATTACK_BURST_START, ue.ue_id, ue.index)

    def run(self) -> SimulationTrace:
        """Execute the scenario from t=0 to its duration."""
        if self.cfg.duration_s <= 0:
            return self.trace
        self.ric.start(0.0)
        if self._wants_location:
            self._publish_location(0.0)
        self._schedule_initial()

        while self._queue:
            t = self._queue[0].time
            if t < self.now:
                raise RicSimError(f"event at t={t} processed after t={self.now}")
            self.now = t
            self.ric.begin_tick(t)
            measured = False
            while self._queue and self._queue[0].time == t:
                event = heapq.heappop(self._queue)
                self.trace.n_events += 1
                measured |= self._handle(event)
            self.ric.end_tick(t)
            if measured:
                self._record_serving(t)

        self.trace.policies = list(self.ric.policy_log)
        self.trace.controls = list(self.ric.control_log)
        self.trace.conflicts = list(self.ric.conflicts)
        logger.info("run %s finished: %d events", self.cfg.name, self.trace.n_events)
        return self.trace

    def _handle(self, event: Event) -> bool:
        kind = event.kind
        if kind is EventKind.A1_POLICY_ARRIVAL:
            self.ric.ingest_a1(event.payload, event.time)
        elif kind is EventKind.MOVE_TICK:
            rows = self.mobile_rows
            self.xy[rows], self.vel[rows] = advance(self.xy[rows], self.vel[rows], self.cfg.tick_s,
                                                    self.lo, self.hi, self.cfg.boundary)
            self._push((event.payload + 1) * self.cfg.tick_s, EventKind.MOVE_TICK, payload=event.payload + 1)
        elif kind is EventKind.MEASUREMENT_TICK:
            self._tick_index = event.payload
            self._measure(event.time)
            self._monitor_beams(event.time)
            if self._wants_location and event.payload % self._location_every == 0:
                self._publish_location(event.time)
            self._push((event.payload + 1) * self.cfg.tick_s, EventKind.MEASUREMENT_TICK, payload=event.payload + 1)
            return True
        elif kind is EventKind.CONNECTION_REQUEST:
            ue = self.ues[event.payload]
            if ue.serving_cell is not None:
                self.trace.attempts.append(handle_connection_request(self.cells[ue.serving_cell], ue, event.time))
        elif kind is EventKind.ATTACK_BURST_START:
            traffic = self.cfg.traffic
            times = expand_bursts(np.array([event.time]), traffic.burst_len, traffic.burst_gap_s, self.cfg.duration_s)
            for t in times:
                self._push(float(t), EventKind.CONNECTION_REQUEST, event.ue_id, event.payload)
        elif kind is EventKind.REPORT_DUE:
            sub_id, k = event.payload
            self.ric.publish_report(sub_id, k, event.time)
        elif kind is EventKind.POLICY_EXPIRY:
            cell_id, ta = event.payload
            cell = self.cells[cell_id]
            expiry = cell.blacklist.get(ta)
            if expiry is not None and expiry <= event.time:
                del cell.blacklist[ta]
                self.trace.blacklist.append(BlacklistRecord(event.time, cell_id, ta, expiry, "expired"))
                logger.debug("cell %s: TA %d blacklist expired", cell_id, ta)
        return False

    # -- per-tick work -------------------------------------------------------

    def _measure(self, t: float):
        rows = self.mobile_rows
        xy = self.xy[rows]
        cell_rsrp = np.empty((len(rows), len(self.cells)))
        beam_rsrp: Dict[str, np.ndarray] = {}
        for j, cell in enumerate(self.cells.values()):
            if not len(rows):
                if cell.beams:
                    beam_rsrp[cell.cell_id] = np.empty((0, len(cell.beams)))
                continue
            extra = obstacle_attenuation(self.obstacles, cell, xy)
            base, beams = rsrp_matrix(xy, cell.pos, cell.beams, cell.prop, self.shadowing[rows, j], extra)
            if cell.beams:
                beam_rsrp[cell.cell_id] = beams
                cell_rsrp[:, j] = beams.max(axis=1)
            else:
                cell_rsrp[:, j] = base
        self.measurement = Measurement(t, rows, cell_rsrp, beam_rsrp)

    def _reset_monitor(self, ue: Ue):
        row = self._row_of.get(ue.index)
        if row is not None:
            self.monitor.reset([row])

    def _monitor_beams(self, t: float):
        m = self.measurement
        if not m.beam_rsrp or not len(m.rows):
            return
        serving = np.full(len(m.rows), np.nan)
        for row, idx in enumerate(m.rows):
            ue = self.ues[idx]
            if ue.serving_beam is not None and ue.serving_cell in m.beam_rsrp:
                cell = self.cells[ue.serving_cell]
                col = [b.beam_id for b in cell.beams].index(ue.serving_beam)
                serving[row] = m.beam_rsrp[ue.serving_cell][row, col]
        fired = self.monitor.observe(serving)
        for row in np.flatnonzero(fired):
            ue = self.ues[m.rows[row]]
            cell = self.cells[ue.serving_cell]
            self.trace.beam_failures.append(BeamFailure(t, ue.ue_id, cell.cell_id, ue.serving_beam,
                                                        float(serving[row])))
            if self.cfg.beam_failure.recovery:
                best = cell.beams[int(np.argmax(m.beam_rsrp[cell.cell_id][row]))].beam_id
                if best != ue.serving_beam:
                    self.trace.beam_events.append(BeamEvent(t, ue.ue_id, cell.cell_id, ue.serving_beam, best,
                                                            "RECOVERY"))
                    ue.serving_beam = best

    def _publish_location(self, t: float):
        rows = self.mobile_rows
        reported = noisy_positions(self.xy[rows], self.cfg.localization, self.rngs["localization"])
        reported.setflags(write=False)
        report = LocationReport(t, tuple(self.ues[i].ue_id for i in rows), reported)
        self.ric.publish_ei(EiKind.LOCATION, report, t, source="as")

    def _record_serving(self, t: float):
        every = self.cfg.trace.serving_every
        if every <= 0 or self._tick_index % every:
            return
        for idx in self.mobile_rows:
            ue = self.ues[idx]
            self.trace.serving.append(ServingRecord(t, ue.ue_id, ue.serving_cell, ue.serving_beam))


def run(cfg: ScenarioConfig, xapps: Sequence[XApp] = ()) -> SimulationTrace:
    """Run a scenario with the given xApps attached through a fresh RIC."""
    return Simulator(cfg, xapps).run()
