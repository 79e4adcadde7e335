"""
Near-RT RIC core.

A synchronous in-process bus between the simulated E2 nodes and the xApps:
subscriptions and periodic REPORTs, CONTROL submission with end-of-tick
arbitration, E2 POLICY forwarding, A1 policy ingestion and A1 enrichment
information (EI) delivery with an optional fixed delay.
"""

import logging
from collections import defaultdict
from dataclasses import dataclass, field
from enum import Enum
from fractions import Fraction
from typing import Any, Callable, Dict, List, Mapping, Optional, Protocol, Sequence, Tuple, Union

import numpy as np

from .config import DEFAULT_XAPP_PRIORITY, TIME_RESOLUTION_DIGITS
from .errors import PolicyError, RicSimError
from .policy import A1Policy, PolicyType, TaBlacklistBody, cross_check, parse, parse_obj

logger = logging.getLogger(__name__)


class MessageKind(str, Enum):
    SUBSCRIPTION = "SUBSCRIPTION"
    REPORT = "REPORT"
    CONTROL = "CONTROL"
    POLICY = "POLICY"
    INSERT = "INSERT"
    A1_POLICY = "A1_POLICY"
    A1_EI = "A1_EI"


class ServiceModel(str, Enum):
    KPM = "KPM"
    RC = "RC"


class ReportKind(str, Enum):
    RSRP_MEAS = "RSRP_MEAS"
    CONN_STATS = "CONN_STATS"
    BEAM_STATS = "BEAM_STATS"
    SLICE_LOAD = "SLICE_LOAD"


class ControlKind(str, Enum):
    HANDOVER = "HANDOVER"
    BEAM_SWITCH = "BEAM_SWITCH"
    PRB_SPLIT = "PRB_SPLIT"


class EiKind(str, Enum):
    LOCATION = "LOCATION"
    KPI_PROFILE = "KPI_PROFILE"
    REM = "REM"


def quantize(t: float) -> float:
    return round(t, TIME_RESOLUTION_DIGITS)


@dataclass(frozen=True)
class RicMessage:
    msg_id: int
    time: float
    kind: MessageKind
    service_model: Optional[ServiceModel]
    source: str
    target: str
    payload: Any

    def to_dict(self) -> Dict[str, Any]:
        return {
            "msg_id": self.msg_id,
            "time": self.time,
            "kind": self.kind.value,
            "service_model": self.service_model.value if self.service_model else None,
            "source": self.source,
            "target": self.target,
            "payload": self.payload,
        }


@dataclass(frozen=True)
class Subscription:
    sub_id: int
    xapp_id: str
    cell_ids: Tuple[str, ...]
    report_kind: ReportKind
    period_s: float
    start_s: float = 0.0

    @property
    def key(self) -> Tuple[str, Tuple[str, ...], ReportKind, float]:
        return (self.xapp_id, self.cell_ids, self.report_kind, self.period_s)


@dataclass(frozen=True)
class ControlAction:
    """Payload of a CONTROL message."""
    kind: ControlKind
    ue_id: Optional[str] = None
    cell_id: Optional[str] = None
    beam_id: Optional[int] = None
    shares: Tuple[Tuple[str, Fraction], ...] = ()
    reason: str = ""

    @classmethod
    def handover(cls, ue_id: str, cell_id: Optional[str]) -> "ControlAction":
        """Move a UE to `cell_id`; None releases it."""
        return cls(ControlKind.HANDOVER, ue_id=ue_id, cell_id=cell_id)

    @classmethod
    def beam_switch(cls, ue_id: str, cell_id: str, beam_id: int, reason: str = "") -> "ControlAction":
        return cls(ControlKind.BEAM_SWITCH, ue_id=ue_id, cell_id=cell_id, beam_id=int(beam_id), reason=reason)

    @classmethod
    def prb_split(cls, cell_id: str, shares: Mapping[str, Fraction], reason: str = "") -> "ControlAction":
        return cls(
            ControlKind.PRB_SPLIT,
            cell_id=cell_id,
            shares=tuple(sorted((k, Fraction(v)) for k, v in shares.items())),
            reason=reason,
        )

    @property
    def conflict_key(self) -> Tuple[str, str]:
        """(entity, parameter) the control writes; handover and beam switch both set the serving link."""
        if self.kind is ControlKind.PRB_SPLIT:
            return (f"cell:{self.cell_id}", "prb_split")
        return (f"ue:{self.ue_id}", "serving")

    def to_dict(self) -> Dict[str, Any]:
        out: Dict[str, Any] = {"kind": self.kind.value}
        if self.ue_id is not None:
            out["ue_id"] = self.ue_id
        if self.cell_id is not None or self.kind is ControlKind.HANDOVER:
            out["cell_id"] = self.cell_id
        if self.beam_id is not None:
            out["beam_id"] = self.beam_id
        if self.shares:
            out["shares"] = {k: str(v) for k, v in self.shares}
        if self.reason:
            out["reason"] = self.reason
        return out


@dataclass(frozen=True)
class SubmitResult:
    accepted: bool
    reason: str = ""
    msg_id: Optional[int] = None


@dataclass(frozen=True)
class QueuedControl:
    msg_id: int
    seq: int
    xapp_id: str
    action: ControlAction


@dataclass(frozen=True)
class ConflictRecord:
    time: float
    msg_ids: Tuple[int, ...]
    entity: str
    parameter: str
    winner: str
    losers: Tuple[str, ...]


@dataclass(frozen=True)
class ControlRecord:
    time: float
    msg_id: int
    xapp_id: str
    kind: str
    entity: str
    status: str
    detail: str


@dataclass(frozen=True)
class PolicyRecord:
    time: float
    policy_id: str
    policy_type: str
    scope: str
    action: str
    description: str


# Report payloads. Arrays are handed out read-only.

@dataclass(frozen=True, eq=False)
class RsrpReport:
    """Per-UE RSRP towards every subscribed cell, plus per-beam values of beamformed cells."""
    cell_ids: Tuple[str, ...]
    ue_ids: Tuple[str, ...]
    five_qi: Tuple[int, ...]
    serving_cell: Tuple[Optional[str], ...]
    serving_beam: Tuple[Optional[int], ...]
    cell_rsrp_dbm: np.ndarray
    beam_rsrp_dbm: Tuple[Tuple[str, np.ndarray], ...] = ()

    def rsrp_of(self, row: int) -> Dict[str, float]:
        return {cell: float(self.cell_rsrp_dbm[row, j]) for j, cell in enumerate(self.cell_ids)}

    def beams_of(self, cell_id: str) -> Optional[np.ndarray]:
        for cell, values in self.beam_rsrp_dbm:
            if cell == cell_id:
                return values
        return None

    def to_dict(self) -> Dict[str, Any]:
        return {
            "cell_ids": list(self.cell_ids),
            "ue_ids": list(self.ue_ids),
            "serving_cell": list(self.serving_cell),
            "serving_beam": list(self.serving_beam),
            "cell_rsrp_dbm": self.cell_rsrp_dbm.tolist(),
            "beam_rsrp_dbm": {cell: values.tolist() for cell, values in self.beam_rsrp_dbm},
        }


@dataclass(frozen=True)
class ConnStats:
    """Connection requests seen by one cell in one report window."""
    cell_id: str
    window_start: float
    window_end: float
    request_count: int
    ta_histogram: Tuple[Tuple[int, int], ...]

    @property
    def histogram(self) -> Dict[int, int]:
        return dict(self.ta_histogram)


@dataclass(frozen=True)
class BeamStats:
    cell_id: str
    window_start: float
    window_end: float
    failures: int
    per_ue: Tuple[Tuple[str, int], ...] = ()


@dataclass(frozen=True)
class SliceLoad:
    slice_id: str
    five_qi: int
    ue_ids: Tuple[str, ...]
    demand_bps: Optional[float] = None


@dataclass(frozen=True)
class CellLoad:
    cell_id: str
    prb_count: int
    per_prb_rate_bps: float
    slices: Tuple[SliceLoad, ...]


@dataclass(frozen=True, eq=False)
class LocationReport:
    """Application Server positions of mobile UEs, with the technique's error."""
    time: float
    ue_ids: Tuple[str, ...]
    xy: np.ndarray

    def to_dict(self) -> Dict[str, Any]:
        return {"time": self.time, "ue_ids": list(self.ue_ids), "xy": self.xy.tolist()}


@dataclass(frozen=True)
class EiDocument:
    kind: EiKind
    data: Any


class E2Node(Protocol):
    """What the RIC needs from the RAN side."""

    def has_ue(self, ue_id: str) -> bool: ...

    def has_cell(self, cell_id: str) -> bool: ...

    def build_report(self, sub: Subscription, t: float) -> Any: ...

    def apply_control(self, action: ControlAction, xapp_id: str, t: float) -> Optional[str]: ...

    def install_policy(self, body: TaBlacklistBody, t: float) -> None: ...


class XApp:
    """
    Base class of the xApps hosted by the RIC.

    Subclasses set `xapp_id`, the A1 policy types they consume and the EI
    kinds they want, and override the callbacks they need.
    """
    xapp_id: str = ""
    a1_types: Tuple[PolicyType, ...] = ()
    ei_kinds: Tuple[EiKind, ...] = ()

    def __init__(self):
        self.ric: Optional["Ric"] = None

    def attach(self, ric: "Ric"):
        self.ric = ric

    def on_start(self, t: float):
        pass

    def on_report(self, msg: RicMessage):
        pass

    def on_a1_policy(self, policy: A1Policy, t: float):
        pass

    def on_ei(self, msg: RicMessage):
        pass

    def export(self, trace) -> Dict[str, Any]:
        """Per-run tables (name -> DataFrame) beyond the simulation trace."""
        return {}

    def summary(self, trace) -> Dict[str, float]:
        """Headline metrics of one run."""
        return {}


def _priority_rank(priority: Sequence[str]) -> Dict[str, int]:
    return {xapp_id: i for i, xapp_id in enumerate(priority)}


def arbitrate(
    queued: Sequence[QueuedControl],
    priority: Sequence[str],
    t: float = 0.0,
) -> Tuple[List[QueuedControl], List[ConflictRecord]]:
    """
    Resolve the controls submitted during one tick.

    Controls are grouped by the (entity, parameter) they write. Within a
    group the control of the highest-priority xApp wins; xApps missing from
    `priority` rank after every listed one, ties go to the lexicographically
    smaller xapp_id and then to the earlier submission.

    Returns:
        (winners in submission order, one ConflictRecord per contested group)
    """
    rank = _priority_rank(priority)
    groups: Dict[Tuple[str, str], List[QueuedControl]] = defaultdict(list)
    for q in queued:
        groups[q.action.conflict_key].append(q)

    winners: List[QueuedControl] = []
    conflicts: List[ConflictRecord] = []
    for (entity, parameter), group in sorted(groups.items()):
        ordered = sorted(group, key=lambda q: (rank.get(q.xapp_id, len(rank)), q.xapp_id, q.seq))
        winner = ordered[0]
        winners.append(winner)
        if len(group) > 1:
            conflicts.append(ConflictRecord(
                time=t,
                msg_ids=tuple(sorted(q.msg_id for q in group)),
                entity=entity,
                parameter=parameter,
                winner=winner.xapp_id,
                losers=tuple(q.xapp_id for q in ordered[1:]),
            ))
    winners.sort(key=lambda q: q.seq)
    return winners, conflicts


class Ric:
    """
    Message core between one simulated RAN and a set of xApps.

    Args:
        e2: The E2 side (the simulator)
        schedule_report: Callback scheduling a REPORT_DUE event (time, sub_id, k)
        priority: xApp ids by decreasing arbitration priority
        ei_delay_s: Fixed latency of A1 EI deliveries
        log_messages: Keep every message for the NDJSON export
    """

    def __init__(
        self,
        e2: E2Node,
        schedule_report: Callable[[float, int, int], None],
        priority: Optional[Sequence[str]] = None,
        ei_delay_s: float = 0.0,
        log_messages: bool = False,
    ):
        if ei_delay_s < 0:
            raise RicSimError("EI delay must be >= 0")
        self.e2 = e2
        self.schedule_report = schedule_report
        self.priority = list(priority) if priority is not None else list(DEFAULT_XAPP_PRIORITY)
        self.ei_delay_s = ei_delay_s
        self.log_messages = log_messages

        self.now = 0.0
        self.xapps: Dict[str, XApp] = {}
        self.subscriptions: Dict[int, Subscription] = {}
        self._sub_by_key: Dict[Tuple, int] = {}
        self.active_policies: Dict[Tuple, A1Policy] = {}

        self._next_msg_id = 0
        self._seq = 0
        self._controls: List[QueuedControl] = []
        self._policies: List[Tuple[int, str, TaBlacklistBody]] = []
        self._pending_ei: List[Tuple[float, RicMessage]] = []

        self.message_log: List[Dict[str, Any]] = []
        self.control_log: List[ControlRecord] = []
        self.conflicts: List[ConflictRecord] = []
        self.policy_log: List[PolicyRecord] = []

    # -- bookkeeping -----------------------------------------------------

    def _message(
        self,
        kind: MessageKind,
        source: str,
        target: str,
        payload: Any,
        service_model: Optional[ServiceModel] = None,
        time: Optional[float] = None,
    ) -> RicMessage:
        msg = RicMessage(self._next_msg_id, self.now if time is None else time, kind, service_model,
                         source, target, payload)
        self._next_msg_id += 1
        if self.log_messages:
            self.message_log.append(msg.to_dict())
        return msg

    def register(self, xapp: XApp):
        if not xapp.xapp_id:
            raise RicSimError("xApp without an id")
        if xapp.xapp_id in self.xapps:
            raise RicSimError(f"xApp {xapp.xapp_id} registered twice")
        self.xapps[xapp.xapp_id] = xapp
        xapp.attach(self)
        logger.debug("registered xApp %s", xapp.xapp_id)

    def start(self, t: float = 0.0):
        self.now = t
        for xapp in self.xapps.values():
            xapp.on_start(t)

    def begin_tick(self, t: float):
        """Advance the clock and deliver EI documents that became due."""
        self.now = t
        if not self._pending_ei:
            return
        due = [item for item in self._pending_ei if item[0] <= t]
        self._pending_ei = [item for item in self._pending_ei if item[0] > t]
        for _, msg in due:
            self._deliver_ei(msg)

    # -- E2: subscriptions and reports -----------------------------------

    def subscribe(self, xapp_id: str, cell_ids: Sequence[str], report_kind: ReportKind, period_s: float) -> int:
        """
        Subscribe an xApp to periodic reports of some cells.

        Identical subscriptions are idempotent and return the same id.

        Raises:
            RicSimError: unknown xApp or cell, or a non-positive period
        """
        if xapp_id not in self.xapps:
            raise RicSimError(f"unknown xApp {xapp_id}")
        if not period_s > 0:
            raise RicSimError(f"report period must be > 0, got {period_s}")
        cells = tuple(sorted(cell_ids))
        for cell in cells:
            if not self.e2.has_cell(cell):
                raise RicSimError(f"subscription of {xapp_id} names unknown cell {cell}")
        key = (xapp_id, cells, report_kind, period_s)
        if key in self._sub_by_key:
            return self._sub_by_key[key]

        sub = Subscription(len(self.subscriptions), xapp_id, cells, report_kind, period_s, self.now)
        self.subscriptions[sub.sub_id] = sub
        self._sub_by_key[key] = sub.sub_id
        self._message(MessageKind.SUBSCRIPTION, xapp_id, "e2", {
            "sub_id": sub.sub_id, "cell_ids": list(cells), "report_kind": report_kind.value, "period_s": period_s,
        }, ServiceModel.KPM)
        self.schedule_report(quantize(sub.start_s + period_s), sub.sub_id, 1)
        return sub.sub_id

    def publish_report(self, sub_id: int, k: int, t: float) -> RicMessage:
        """Collect the window data of a due report and hand it to the subscriber."""
        sub = self.subscriptions[sub_id]
        payload = self.e2.build_report(sub, t)
        msg = self._message(MessageKind.REPORT, "e2", sub.xapp_id, payload, ServiceModel.KPM, time=t)
        self.xapps[sub.xapp_id].on_report(msg)
        self.schedule_report(quantize(sub.start_s + (k + 1) * sub.period_s), sub_id, k + 1)
        return msg

    # -- E2: controls and policies ---------------------------------------

    def submit(self, xapp_id: str, kind: MessageKind, payload: Any) -> SubmitResult:
        """Generic E2 service request from an xApp."""
        if kind is MessageKind.CONTROL:
            return self.submit_control(xapp_id, payload)
        if kind is MessageKind.POLICY:
            return self.submit_policy(xapp_id, payload)
        reason = f"{kind.value} service not supported"
        logger.info("%s rejected for %s: %s", kind.value, xapp_id, reason)
        return SubmitResult(False, reason)

    def _validate_control(self, action: Any) -> Optional[str]:
        if not isinstance(action, ControlAction):
            return "payload is not a control action"
        if action.kind in (ControlKind.HANDOVER, ControlKind.BEAM_SWITCH):
            if action.ue_id is None or not self.e2.has_ue(action.ue_id):
                return f"unknown UE {action.ue_id}"
        if action.kind is ControlKind.HANDOVER:
            if action.cell_id is not None and not self.e2.has_cell(action.cell_id):
                return f"unknown cell {action.cell_id}"
        elif action.kind is ControlKind.BEAM_SWITCH:
            if action.beam_id is None or action.beam_id < 0:
                return "beam switch without a beam"
        else:
            if action.cell_id is None or not self.e2.has_cell(action.cell_id):
                return f"unknown cell {action.cell_id}"
            if not action.shares:
                return "empty PRB split"
            if any(share < 0 for _, share in action.shares):
                return "negative PRB share"
            if sum(share for _, share in action.shares) != 1:
                return "PRB shares do not sum to 1"
        return None

    def submit_control(self, xapp_id: str, action: ControlAction) -> SubmitResult:
        """Queue a CONTROL for end-of-tick arbitration."""
        if xapp_id not in self.xapps:
            return SubmitResult(False, f"unknown xApp {xapp_id}")
        problem = self._validate_control(action)
        payload = action.to_dict() if isinstance(action, ControlAction) else action
        msg = self._message(MessageKind.CONTROL, xapp_id, "e2", payload, ServiceModel.RC)
        if problem:
            logger.info("control %d from %s rejected: %s", msg.msg_id, xapp_id, problem)
            kind = action.kind.value if isinstance(action, ControlAction) else "?"
            self.control_log.append(ControlRecord(self.now, msg.msg_id, xapp_id, kind, "", "REJECTED", problem))
            return SubmitResult(False, problem, msg.msg_id)
        self._controls.append(QueuedControl(msg.msg_id, self._seq, xapp_id, action))
        self._seq += 1
        return SubmitResult(True, "", msg.msg_id)

    def submit_policy(self, xapp_id: str, body: TaBlacklistBody) -> SubmitResult:
        """Queue an E2 POLICY (TA blacklist) for the end of the tick."""
        if xapp_id not in self.xapps:
            return SubmitResult(False, f"unknown xApp {xapp_id}")
        if not isinstance(body, TaBlacklistBody):
            return SubmitResult(False, "payload is not a TA blacklist")
        if not self.e2.has_cell(body.cell_id):
            return SubmitResult(False, f"unknown cell {body.cell_id}")
        msg = self._message(MessageKind.POLICY, xapp_id, "e2", body.to_dict(), ServiceModel.RC)
        self._policies.append((msg.msg_id, xapp_id, body))
        return SubmitResult(True, "", msg.msg_id)

    def end_tick(self, t: float) -> List[ConflictRecord]:
        """Arbitrate and apply this tick's controls, then install queued policies."""
        self.now = t
        queued, self._controls = self._controls, []
        winners, conflicts = arbitrate(queued, self.priority, t)
        won = {q.msg_id for q in winners}

        for record in conflicts:
            logger.info(
                "conflict on %s %s at t=%.3f: %s wins over %s",
                record.entity, record.parameter, t, record.winner, ", ".join(record.losers),
            )
        self.conflicts.extend(conflicts)

        for q in queued:
            entity = q.action.conflict_key[0]
            if q.msg_id not in won:
                self.control_log.append(ControlRecord(t, q.msg_id, q.xapp_id, q.action.kind.value, entity, "LOST", ""))
                continue
            problem = self.e2.apply_control(q.action, q.xapp_id, t)
            if problem:
                logger.info("control %d from %s not applied: %s", q.msg_id, q.xapp_id, problem)
                self.control_log.append(ControlRecord(t, q.msg_id, q.xapp_id, q.action.kind.value, entity,
                                                      "REJECTED", problem))
            else:
                self.control_log.append(ControlRecord(t, q.msg_id, q.xapp_id, q.action.kind.value, entity,
                                                      "APPLIED", q.action.reason))

        policies, self._policies = self._policies, []
        for _, xapp_id, body in policies:
            self.e2.install_policy(body, t)
        return conflicts

    # -- A1 --------------------------------------------------------------

    def ingest_a1(self, doc: Union[A1Policy, str, bytes, Dict[str, Any]], t: Optional[float] = None) -> bool:
        """
        Install an A1 policy and route it to the xApps consuming its type.

        A policy replaces any active one with the same (type, scope).
        Cross-check findings are logged but do not block installation;
        documents failing validation are dropped.

        Returns:
            True if the policy was installed
        """
        if t is not None:
            self.now = t
        try:
            if isinstance(doc, A1Policy):
                policy = doc
            elif isinstance(doc, dict):
                policy = parse_obj(doc)
            else:
                policy = parse(doc)
        except PolicyError as e:
            logger.warning("A1 policy rejected: %s", e)
            self.policy_log.append(PolicyRecord(self.now, "", "", "", "rejected", str(e)))
            return False

        self._message(MessageKind.A1_POLICY, "nonrt", "ric", policy.to_dict())
        others = [p for k, p in self.active_policies.items() if k != policy.key]
        known_cells = None
        if policy.policy_type is PolicyType.TS_PREFERENCES and hasattr(self.e2, "cell_ids"):
            known_cells = self.e2.cell_ids
        for finding in cross_check(others, policy, known_cells=known_cells):
            logger.warning("policy %s: %s (%s)", policy.policy_id, finding.kind, finding.detail)

        action = "replaced" if policy.key in self.active_policies else "installed"
        self.active_policies[policy.key] = policy
        self.policy_log.append(PolicyRecord(
            self.now, policy.policy_id, policy.policy_type.value, str(policy.scope), action, policy.describe(),
        ))
        logger.info("A1 policy %s %s: %s", policy.policy_id, action, policy.describe())

        if policy.policy_type is PolicyType.TA_BLACKLIST:
            self._message(MessageKind.POLICY, "ric", "e2", policy.body.to_dict(), ServiceModel.RC)
            self.e2.install_policy(policy.body, self.now)
        for xapp in self.xapps.values():
            if policy.policy_type in xapp.a1_types:
                xapp.on_a1_policy(policy, self.now)
        return True

    def active_of(self, policy_type: PolicyType) -> List[A1Policy]:
        return [p for (ptype, _), p in self.active_policies.items() if ptype is policy_type]

    def publish_ei(self, kind: EiKind, data: Any, t: Optional[float] = None,
                   source: str = "nonrt", target: Optional[str] = None):
        """
        Send enrichment information to the xApps that asked for its kind.

        Delivery happens `ei_delay_s` later; with no delay it is immediate.
        """
        when = self.now if t is None else t
        targets = [target] if target is not None else [
            xapp_id for xapp_id, xapp in self.xapps.items() if kind in xapp.ei_kinds
        ]
        for xapp_id in targets:
            payload = EiDocument(kind, data)
            msg = self._message(MessageKind.A1_EI, source, xapp_id, payload, time=when)
            if self.ei_delay_s > 0:
                self._pending_ei.append((quantize(when + self.ei_delay_s), msg))
            else:
                self._deliver_ei(msg)

    def _deliver_ei(self, msg: RicMessage):
        xapp = self.xapps.get(msg.target)
        if xapp is None:
            logger.warning("EI message %d for unknown xApp %s dropped", msg.msg_id, msg.target)
            return
        xapp.on_ei(msg)
