"""
Traffic Steering xApp.

Picks a serving cell per UE from RSRP reports, shifted by the PREFER/AVOID
labels of the active Traffic Steering Preferences policies. FORBID removes a
cell outright.
"""

import logging
import math
from dataclasses import dataclass, field
from typing import Any, Dict, List, Mapping, Optional, Sequence, Tuple

import pandas as pd

from .errors import DomainError
from .policy import A1Policy, Label, PolicyType, ScopeKind, slice_scope_matches
from .ric import ControlAction, ReportKind, RicMessage, XApp
from .scenario import TsConfig

logger = logging.getLogger(__name__)

UNSERVED = "none"


def calibration_offset(exponent: float) -> float:
    """
    PREFER/AVOID offset moving the two-cell equal-score point to 3/4 of the
    inter-site segment under log-distance pathloss with `exponent`.
    """
    if not exponent > 0:
        raise DomainError(f"pathloss exponent must be > 0, got {exponent}")
    return 10.0 * exponent * math.log10(3.0)


@dataclass
class TsState:
    preference_offset_db: float
    hysteresis_db: float = 0.0
    ue_policies: Dict[str, A1Policy] = field(default_factory=dict)
    slice_policies: Dict[str, A1Policy] = field(default_factory=dict)
    last_decision: Dict[str, Optional[str]] = field(default_factory=dict)

    def __post_init__(self):
        if not (math.isfinite(self.preference_offset_db) and self.preference_offset_db > 0):
            raise DomainError(f"preference offset must be finite and > 0, got {self.preference_offset_db}")
        if not (math.isfinite(self.hysteresis_db) and self.hysteresis_db >= 0):
            raise DomainError(f"hysteresis must be finite and >= 0, got {self.hysteresis_db}")

    def install(self, policy: A1Policy):
        if policy.scope.kind is ScopeKind.UE:
            self.ue_policies[policy.scope.value] = policy
        elif policy.scope.kind is ScopeKind.SLICE:
            self.slice_policies[policy.scope.value] = policy
        else:
            logger.warning("TS policy %s scoped to a cell is ignored", policy.policy_id)

    def labels_for(self, ue_id: str, five_qi: Optional[int] = None,
                   serving: Optional[str] = None) -> Dict[str, Label]:
        """Effective labels of a UE: slice policies first, UE policy overriding per cell."""
        labels: Dict[str, Label] = {}
        if five_qi is not None:
            for scope in sorted(self.slice_policies):
                if slice_scope_matches(scope, serving, five_qi):
                    labels.update(self.slice_policies[scope].body.labels)
        policy = self.ue_policies.get(ue_id)
        if policy is not None:
            labels.update(policy.body.labels)
        return labels


def decide(
    ue_id: str,
    rsrp: Mapping[str, float],
    state: TsState,
    serving: Optional[str] = None,
    five_qi: Optional[int] = None,
) -> Optional[str]:
    """
    Serving-cell decision for one UE.

    Args:
        ue_id: UE being steered
        rsrp: Measured RSRP per cell (dBm)
        state: Policies and parameters
        serving: Current serving cell, if any
        five_qi: Service type of the UE, for slice-scoped policies

    Returns:
        The target cell, or None when every reported cell is FORBID
    """
    if not rsrp:
        raise DomainError(f"empty RSRP report for {ue_id}")
    labels = state.labels_for(ue_id, five_qi, serving)
    offset = state.preference_offset_db
    scores: Dict[str, float] = {}
    for cell in sorted(rsrp):
        label = labels.get(cell)
        if label is Label.FORBID:
            continue
        score = rsrp[cell]
        if label is Label.PREFER:
            score += offset
        elif label is Label.AVOID:
            score -= offset
        scores[cell] = score

    if not scores:
        target = None
    else:
        target = max(scores, key=lambda c: scores[c])
        if serving in scores and scores[target] <= scores[serving] + state.hysteresis_db:
            target = serving
    state.last_decision[ue_id] = target
    return target


class TsXApp(XApp):
    """
    Steers the UEs of every cell; issues HANDOVER controls on change.

    Args:
        cfg: TS parameters
        cell_ids: Cells to watch
        exponent: Pathloss exponent used for the default preference offset
        tick_s: Measurement cadence
    """
    xapp_id = "ts"
    a1_types = (PolicyType.TS_PREFERENCES,)

    def __init__(self, cfg: TsConfig, cell_ids: Sequence[str], exponent: float, tick_s: float):
        super().__init__()
        offset = cfg.preference_offset_db if cfg.preference_offset_db is not None else calibration_offset(exponent)
        self.state = TsState(offset, cfg.hysteresis_db)
        self.cell_ids = list(cell_ids)
        self.period_s = cfg.report_period_s or tick_s
        self.handovers = 0

    def on_start(self, t: float):
        self.ric.subscribe(self.xapp_id, self.cell_ids, ReportKind.RSRP_MEAS, self.period_s)

    def on_a1_policy(self, policy: A1Policy, t: float):
        self.state.install(policy)

    def on_report(self, msg: RicMessage):
        report = msg.payload
        for row, ue_id in enumerate(report.ue_ids):
            serving = report.serving_cell[row]
            target = decide(ue_id, report.rsrp_of(row), self.state, serving, report.five_qi[row])
            if target != serving:
                result = self.ric.submit_control(self.xapp_id, ControlAction.handover(ue_id, target))
                if result.accepted:
                    self.handovers += 1
                    logger.debug("TS moves %s: %s -> %s", ue_id, serving, target)

    def export(self, trace) -> Dict[str, Any]:
        return {"ts_association": association_table(trace, self.cell_ids)}

    def summary(self, trace) -> Dict[str, float]:
        return {"handovers": float(len(trace.handovers))}


def _phases(trace) -> List[Tuple[float, float, str]]:
    """(start, end, label) of the intervals between TS policy installations."""
    starts = [(0.0, "NONE")]
    for record in trace.policies:
        if record.policy_type == PolicyType.TS_PREFERENCES.value and record.action in ("installed", "replaced"):
            if record.time == starts[-1][0]:
                starts[-1] = (record.time, record.description)
            else:
                starts.append((record.time, record.description))
    ends = [s for s, _ in starts[1:]] + [trace.duration_s]
    return [(start, end, label) for (start, label), end in zip(starts, ends)]


def association_table(trace, cell_ids: Sequence[str]) -> pd.DataFrame:
    """
    Share of serving samples per cell within every policy phase.

    A phase starts at each TS policy installation ("NONE" before the first);
    seconds are the fraction times the phase length.
    """
    columns = ["phase", "start", "end", "cell", "samples", "fraction", "seconds"]
    serving = trace.frame("serving")
    rows = []
    for start, end, label in _phases(trace):
        inside = serving[(serving["time"] >= start) & (serving["time"] < end)]
        total = len(inside)
        cells = inside["cell"].fillna(UNSERVED)
        names = list(cell_ids) + ([UNSERVED] if (cells == UNSERVED).any() else [])
        for cell in names:
            n = int((cells == cell).sum())
            fraction = n / total if total else 0.0
            rows.append((label, start, end, cell, n, fraction, fraction * (end - start)))
    return pd.DataFrame(rows, columns=columns)
