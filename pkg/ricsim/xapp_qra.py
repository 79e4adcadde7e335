"""
QoS-based Resource Allocation xApp.

Groups the UEs of a cell into slices by 5QI and splits the cell's PRBs among
them following the allocation schema of the SLA Target policy in force
(EQUAL, PREFER_X or RESERVE), then bends the split toward the slices'
throughput targets. Shares are exact fractions.
"""

import logging
from dataclasses import dataclass
from fractions import Fraction
from typing import Any, Dict, List, Mapping, Optional, Sequence, Tuple

import pandas as pd

from .config import PREFER_X_WEIGHT
from .errors import DomainError
from .policy import (
    A1Policy,
    AllocationSchema,
    PolicyType,
    SchemaKind,
    ScopeKind,
    SlaTargetBody,
    slice_key,
)
from .ric import CellLoad, ControlAction, ReportKind, RicMessage, XApp
from .scenario import QraConfig

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class SliceView:
    """The UEs of one cell sharing a 5QI."""
    slice_id: str
    five_qi: int
    ue_ids: Tuple[str, ...]
    demand_bps: Optional[float] = None

    def __post_init__(self):
        if not self.ue_ids:
            raise DomainError(f"slice {self.slice_id} has no UE")


@dataclass(frozen=True)
class SlaAdjustment:
    shares: Dict[str, Fraction]
    feasible: bool = True
    renormalized: bool = False


def allocate(slices: Sequence[SliceView], schema: AllocationSchema) -> Dict[str, Fraction]:
    """
    Split a cell among its slices.

    EQUAL gives every slice the same share, PREFER_X weighs the slice of
    5QI X five times the others, RESERVE weighs every slice by its 5QI.

    Raises:
        DomainError: no slice, or PREFER_X with no slice of 5QI X
    """
    if not slices:
        raise DomainError("no slice to allocate")
    if schema.kind is SchemaKind.EQUAL:
        weights = [1] * len(slices)
    elif schema.kind is SchemaKind.PREFER_X:
        if not any(s.five_qi == schema.prefer_5qi for s in slices):
            raise DomainError(f"{schema} names 5QI {schema.prefer_5qi}, which has no slice")
        weights = [PREFER_X_WEIGHT if s.five_qi == schema.prefer_5qi else 1 for s in slices]
    else:
        weights = [s.five_qi for s in slices]
    total = sum(weights)
    return {s.slice_id: Fraction(w, total) for s, w in zip(slices, weights)}


def per_ue_share(slice_share: Fraction, ue_count: int) -> Fraction:
    if ue_count < 1:
        raise DomainError(f"slice needs at least one UE, got {ue_count}")
    return Fraction(slice_share) / ue_count


def _limits(
    sla: SlaTargetBody,
    demand_bps: Optional[float],
    capacity: Fraction,
    ue_count: int,
) -> Tuple[Fraction, Fraction]:
    caps = []
    if sla.max_throughput_bps is not None:
        caps.append(Fraction(sla.max_throughput_bps))
    if sla.max_ue_throughput_bps is not None:
        caps.append(Fraction(sla.max_ue_throughput_bps) * ue_count)
    cap = min(Fraction(1), min(caps) / capacity) if caps else Fraction(1)
    floor = Fraction(0)
    if sla.guaranteed_throughput_bps is not None:
        wanted = Fraction(sla.guaranteed_throughput_bps)
        if demand_bps is not None:
            wanted = min(wanted, Fraction(demand_bps))
        floor = min(wanted / capacity, cap)
    return floor, cap


def sla_adjust(
    shares: Mapping[str, Fraction],
    slas: Mapping[str, SlaTargetBody],
    demand_bps: Mapping[str, Optional[float]],
    capacity_bps: float,
    ue_counts: Mapping[str, int],
) -> SlaAdjustment:
    """
    Bend a split toward throughput targets under throughput = share * capacity.

    Slices above their maximum are capped and their excess goes pro rata to
    the others; slices below their guarantee (limited to their demand) are
    raised at the pro-rata expense of the unpinned slices. Guarantees that do
    not fit together are scaled down proportionally and the result is
    flagged infeasible.

    Args:
        shares: Split to adjust (sums to 1)
        slas: SLA targets by slice id; slices without one are unconstrained
        demand_bps: Offered load by slice id, None when unknown
        capacity_bps: Cell throughput at a share of 1
        ue_counts: UEs per slice

    Returns:
        SlaAdjustment whose shares sum to exactly 1
    """
    if not capacity_bps > 0:
        raise DomainError(f"cell capacity must be > 0, got {capacity_bps}")
    shares = {k: Fraction(v) for k, v in shares.items()}
    if not any(s.has_throughput_targets or s.max_ue_throughput_bps is not None for s in slas.values()):
        return SlaAdjustment(shares)

    capacity = Fraction(capacity_bps)
    floors: Dict[str, Fraction] = {}
    caps: Dict[str, Fraction] = {}
    for slice_id in shares:
        sla = slas.get(slice_id)
        if sla is None:
            floors[slice_id], caps[slice_id] = Fraction(0), Fraction(1)
        else:
            floors[slice_id], caps[slice_id] = _limits(sla, demand_bps.get(slice_id), capacity,
                                                       ue_counts.get(slice_id, 1))

    feasible = True
    needed = sum(floors.values(), Fraction(0))
    if needed > 1:
        feasible = False
        floors = {k: v / needed for k, v in floors.items()}
        logger.warning("guaranteed throughputs need %.1f%% of the cell; scaled down", float(needed) * 100)

    pinned: Dict[str, Fraction] = {}
    while True:
        free = [k for k in sorted(shares) if k not in pinned]
        remaining = 1 - sum(pinned.values(), Fraction(0))
        if not free:
            break
        base = sum((shares[k] for k in free), Fraction(0))
        if base > 0:
            proposed = {k: remaining * shares[k] / base for k in free}
        else:
            proposed = {k: remaining / len(free) for k in free}
        over = [k for k in free if proposed[k] > caps[k]]
        under = [k for k in free if proposed[k] < floors[k]]
        if over:
            pinned.update({k: caps[k] for k in over})
        elif under:
            pinned.update({k: floors[k] for k in under})
        else:
            pinned.update(proposed)
            break

    total = sum(pinned.values(), Fraction(0))
    renormalized = total != 1
    if renormalized:
        pinned = {k: v / total for k, v in pinned.items()}
        logger.info("SLA limits leave %.1f%% of the cell unassigned; split renormalized", float(1 - total) * 100)
    return SlaAdjustment({k: pinned[k] for k in shares}, feasible, renormalized)


class QraXApp(XApp):
    """
    Per-cell PRB split on every SLICE_LOAD report; sends PRB_SPLIT when the split changes.

    SLA Target policies scoped to a cell set its allocation schema; policies
    scoped to a slice (`<cell>/<5qi>` or `5qi:<n>`) set throughput targets.
    """
    xapp_id = "qra"
    a1_types = (PolicyType.SLA_TARGET,)

    def __init__(self, cfg: QraConfig, cell_ids: Sequence[str]):
        super().__init__()
        self.cfg = cfg
        self.cell_ids = list(cell_ids)
        self.default_schema = AllocationSchema.parse(cfg.default_schema)
        self.schemas: Dict[str, AllocationSchema] = {}
        self.slas: Dict[str, SlaTargetBody] = {}
        self.loads: Dict[str, CellLoad] = {}
        self.current: Dict[str, Dict[str, Fraction]] = {}
        self.rows: List[tuple] = []
        self.infeasible = 0

    def on_start(self, t: float):
        self.ric.subscribe(self.xapp_id, self.cell_ids, ReportKind.SLICE_LOAD, self.cfg.report_period_s)

    def on_a1_policy(self, policy: A1Policy, t: float):
        body = policy.body
        if policy.scope.kind is ScopeKind.CELL:
            if body.allocation_schema is not None:
                self.schemas[policy.scope.value] = body.allocation_schema
            if body.has_throughput_targets:
                logger.warning("policy %s: throughput targets need a slice scope", policy.policy_id)
        elif policy.scope.kind is ScopeKind.SLICE:
            self.slas[policy.scope.value] = body
        else:
            logger.warning("SLA policy %s scoped to a UE is ignored", policy.policy_id)
            return
        for cell_id in sorted(self.loads):
            self._allocate(self.loads[cell_id], t)

    def on_report(self, msg: RicMessage):
        for load in msg.payload:
            self.loads[load.cell_id] = load
            self._allocate(load, msg.time)

    def schema_for(self, cell_id: str, slices: Sequence[SliceView]) -> AllocationSchema:
        schema = self.schemas.get(cell_id, self.default_schema)
        if schema.kind is SchemaKind.PREFER_X and not any(s.five_qi == schema.prefer_5qi for s in slices):
            logger.warning("cell %s: %s has no matching slice, using EQUAL", cell_id, schema)
            return AllocationSchema(SchemaKind.EQUAL)
        return schema

    def sla_of(self, cell_id: str, five_qi: int) -> Optional[SlaTargetBody]:
        """Targets of one slice; a cell-specific scope beats a 5QI-wide one."""
        return self.slas.get(slice_key(cell_id, five_qi)) or self.slas.get(f"5qi:{five_qi}")

    def _allocate(self, load: CellLoad, t: float):
        slices = [SliceView(s.slice_id, s.five_qi, s.ue_ids, s.demand_bps) for s in load.slices if s.ue_ids]
        if not slices:
            return
        schema = self.schema_for(load.cell_id, slices)
        shares = allocate(slices, schema)
        slas = {s.slice_id: sla for s in slices if (sla := self.sla_of(load.cell_id, s.five_qi)) is not None}
        if slas:
            adjusted = sla_adjust(
                shares,
                slas,
                {s.slice_id: s.demand_bps for s in slices},
                load.prb_count * load.per_prb_rate_bps,
                {s.slice_id: len(s.ue_ids) for s in slices},
            )
            shares = adjusted.shares
            if not adjusted.feasible:
                self.infeasible += 1
        if shares == self.current.get(load.cell_id):
            return
        self.current[load.cell_id] = shares
        self.ric.submit_control(self.xapp_id, ControlAction.prb_split(load.cell_id, shares, str(schema)))
        for s in slices:
            share = per_ue_share(shares[s.slice_id], len(s.ue_ids))
            for ue_id in s.ue_ids:
                self.rows.append((t, load.cell_id, str(schema), s.slice_id, ue_id, float(share * 100), str(share)))
        logger.debug("cell %s split %s: %s", load.cell_id, schema, {k: str(v) for k, v in shares.items()})

    def export(self, trace) -> Dict[str, Any]:
        columns = ["time", "cell", "schema", "slice", "ue", "share_pct", "share_exact"]
        return {"qra_ue_shares": pd.DataFrame(self.rows, columns=columns)}

    def summary(self, trace) -> Dict[str, float]:
        return {
            "prb_splits": float(len({(r.time, r.cell_id) for r in trace.prb_alloc})),
            "infeasible_sla": float(self.infeasible),
        }
