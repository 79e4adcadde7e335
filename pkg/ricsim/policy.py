"""
A1 policy documents: parsing, validation and cross-checking.

Three policy types are understood: Traffic Steering Preferences (per-cell
PREFER/AVOID/FORBID labels), SLA Target (slice throughput targets plus the
PRB allocation schema) and TA Blacklist (timing-advance indices a cell must
reject). Documents are JSON; their shape is fixed by the schema files under
docs/schemas/.
"""

import json
import logging
import math
from dataclasses import dataclass
from enum import Enum
from functools import lru_cache
from itertools import combinations, product
from pathlib import Path
from typing import Any, Dict, Iterable, List, Optional, Tuple, Union

from jsonschema import Draft7Validator
from jsonschema.exceptions import best_match

from .config import SCHEMA_DIR
from .errors import PolicyError, json_path

logger = logging.getLogger(__name__)


class PolicyType(str, Enum):
    TS_PREFERENCES = "TS_PREFERENCES"
    SLA_TARGET = "SLA_TARGET"
    TA_BLACKLIST = "TA_BLACKLIST"


class Label(str, Enum):
    PREFER = "PREFER"
    AVOID = "AVOID"
    FORBID = "FORBID"


class ScopeKind(str, Enum):
    UE = "ue_id"
    SLICE = "slice_id"
    CELL = "cell_id"


class SchemaKind(str, Enum):
    EQUAL = "EQUAL"
    PREFER_X = "PREFER_X"
    RESERVE = "RESERVE"


BODY_SCHEMA_FILES = {
    PolicyType.TS_PREFERENCES: "ts_preferences.schema.json",
    PolicyType.SLA_TARGET: "sla_target.schema.json",
    PolicyType.TA_BLACKLIST: "ta_blacklist.schema.json",
}


@dataclass(frozen=True)
class PolicyScope:
    """Exactly one of ue_id / slice_id / cell_id."""
    kind: ScopeKind
    value: str

    def to_dict(self) -> Dict[str, str]:
        return {self.kind.value: self.value}

    def __str__(self) -> str:
        return f"{self.kind.value}={self.value}"


@dataclass(frozen=True)
class AllocationSchema:
    """PRB split rule: EQUAL, RESERVE, or PREFER_X with X a 5QI."""
    kind: SchemaKind
    prefer_5qi: Optional[int] = None

    def __post_init__(self):
        if (self.kind is SchemaKind.PREFER_X) != (self.prefer_5qi is not None):
            raise ValueError("PREFER_X needs a 5QI and only PREFER_X takes one")

    @classmethod
    def parse(cls, text: str) -> "AllocationSchema":
        if text in (SchemaKind.EQUAL.value, SchemaKind.RESERVE.value):
            return cls(SchemaKind(text))
        if text.startswith("PREFER_") and text[len("PREFER_"):].isdigit():
            return cls(SchemaKind.PREFER_X, int(text[len("PREFER_"):]))
        raise ValueError(f"unknown allocation schema {text!r}")

    def __str__(self) -> str:
        if self.kind is SchemaKind.PREFER_X:
            return f"PREFER_{self.prefer_5qi}"
        return self.kind.value


@dataclass(frozen=True)
class TsPreferenceBody:
    """Per-cell labels, kept sorted by cell id."""
    cells: Tuple[Tuple[str, Label], ...]

    def __post_init__(self):
        if not self.cells:
            raise ValueError("at least one cell must be labeled")

    @classmethod
    def from_labels(cls, labels: Dict[str, Union[str, Label]]) -> "TsPreferenceBody":
        return cls(tuple(sorted((cell, Label(label)) for cell, label in labels.items())))

    @property
    def labels(self) -> Dict[str, Label]:
        return dict(self.cells)

    def to_dict(self) -> Dict[str, Any]:
        return {"cells": {cell: label.value for cell, label in self.cells}}


@dataclass(frozen=True)
class SlaTargetBody:
    guaranteed_throughput_bps: Optional[float] = None
    max_throughput_bps: Optional[float] = None
    max_ue_throughput_bps: Optional[float] = None
    max_ues: Optional[int] = None
    allocation_schema: Optional[AllocationSchema] = None

    def __post_init__(self):
        for name in ("guaranteed_throughput_bps", "max_throughput_bps", "max_ue_throughput_bps"):
            value = getattr(self, name)
            if value is not None and not (math.isfinite(value) and value > 0):
                raise ValueError(f"{name} must be a finite positive number")
        if (
            self.guaranteed_throughput_bps is not None
            and self.max_throughput_bps is not None
            and self.guaranteed_throughput_bps > self.max_throughput_bps
        ):
            raise ValueError("guaranteed_throughput_bps exceeds max_throughput_bps")

    @property
    def has_throughput_targets(self) -> bool:
        return self.guaranteed_throughput_bps is not None or self.max_throughput_bps is not None

    def to_dict(self) -> Dict[str, Any]:
        out: Dict[str, Any] = {}
        for name in ("guaranteed_throughput_bps", "max_throughput_bps", "max_ue_throughput_bps", "max_ues"):
            value = getattr(self, name)
            if value is not None:
                out[name] = value
        if self.allocation_schema is not None:
            out["allocation_schema"] = str(self.allocation_schema)
        return out


@dataclass(frozen=True)
class TaBlacklistBody:
    cell_id: str
    ta_indices: Tuple[int, ...]
    ttl_s: float

    def __post_init__(self):
        if not self.ta_indices:
            raise ValueError("ta_indices must not be empty")
        if any(i < 0 for i in self.ta_indices):
            raise ValueError("ta_indices must be non-negative")
        if len(set(self.ta_indices)) != len(self.ta_indices):
            raise ValueError("ta_indices must be unique")
        if not (math.isfinite(self.ttl_s) and self.ttl_s > 0):
            raise ValueError("ttl_s must be a finite positive number")

    @classmethod
    def create(cls, cell_id: str, ta_indices: Iterable[int], ttl_s: float) -> "TaBlacklistBody":
        return cls(cell_id, tuple(sorted(set(int(i) for i in ta_indices))), float(ttl_s))

    def to_dict(self) -> Dict[str, Any]:
        return {"cell_id": self.cell_id, "ta_indices": list(self.ta_indices), "ttl_s": self.ttl_s}


PolicyBody = Union[TsPreferenceBody, SlaTargetBody, TaBlacklistBody]


@dataclass(frozen=True)
class A1Policy:
    """A parsed and validated A1 policy document."""
    policy_id: str
    policy_type: PolicyType
    scope: PolicyScope
    body: PolicyBody

    @property
    def key(self) -> Tuple[PolicyType, PolicyScope]:
        """Policies sharing a key replace each other."""
        return (self.policy_type, self.scope)

    def to_dict(self) -> Dict[str, Any]:
        return {
            "policy_id": self.policy_id,
            "policy_type": self.policy_type.value,
            "scope": self.scope.to_dict(),
            "body": self.body.to_dict(),
        }

    def describe(self) -> str:
        if isinstance(self.body, TsPreferenceBody):
            labels = " ".join(f"{label.value} {cell}" for cell, label in self.body.cells)
            return f"{labels} for {self.scope}"
        if isinstance(self.body, SlaTargetBody):
            return f"SLA {self.body.to_dict()} for {self.scope}"
        return f"blacklist TA {list(self.body.ta_indices)} on {self.body.cell_id}"


@dataclass(frozen=True)
class PolicyConflict:
    """One finding of `cross_check`."""
    kind: str
    policy_ids: Tuple[str, ...]
    detail: str


@lru_cache(maxsize=None)
def _validator(filename: str) -> Draft7Validator:
    with open(Path(SCHEMA_DIR) / filename, "r", encoding="utf-8") as f:
        schema = json.load(f)
    Draft7Validator.check_schema(schema)
    return Draft7Validator(schema)


def _reject_constant(name: str):
    raise ValueError(f"{name} is not a valid JSON number")


def _schema_check(validator: Draft7Validator, instance: Any, prefix: List[Any]):
    error = best_match(validator.iter_errors(instance))
    if error is not None:
        raise PolicyError(json_path(prefix + list(error.absolute_path)), error.message)


def parse(doc: Union[str, bytes]) -> A1Policy:
    """
    Parse an A1 policy from JSON text.

    Args:
        doc: JSON document, text or raw bytes

    Returns:
        The validated policy

    Raises:
        PolicyError: on any syntax, schema or invariant violation, with the
            JSON path of the offending element
    """
    try:
        if isinstance(doc, (bytes, bytearray)):
            doc = bytes(doc).decode("utf-8")
        obj = json.loads(doc, parse_constant=_reject_constant)
    except (ValueError, RecursionError) as e:
        raise PolicyError("$", f"not a JSON document: {e}") from None
    return parse_obj(obj)


def parse_obj(obj: Any) -> A1Policy:
    """Validate an already-decoded JSON value as an A1 policy."""
    _schema_check(_validator("a1_policy.schema.json"), obj, [])
    policy_type = PolicyType(obj["policy_type"])
    (kind, value), = obj["scope"].items()
    scope = PolicyScope(ScopeKind(kind), value)
    raw_body = obj["body"]
    _schema_check(_validator(BODY_SCHEMA_FILES[policy_type]), raw_body, ["body"])
    try:
        body = _build_body(policy_type, raw_body)
    except (OverflowError, ValueError) as e:
        raise PolicyError(json_path(["body"]), str(e)) from None
    return A1Policy(obj["policy_id"], policy_type, scope, body)


def _build_body(policy_type: PolicyType, raw: Dict[str, Any]) -> PolicyBody:
    if policy_type is PolicyType.TS_PREFERENCES:
        return TsPreferenceBody.from_labels(raw["cells"])

    if policy_type is PolicyType.SLA_TARGET:
        values: Dict[str, Any] = {}
        for name in ("guaranteed_throughput_bps", "max_throughput_bps", "max_ue_throughput_bps"):
            if name in raw:
                if not math.isfinite(raw[name]):
                    raise PolicyError(json_path(["body", name]), "must be finite")
                values[name] = float(raw[name])
        if "max_ues" in raw:
            values["max_ues"] = int(raw["max_ues"])
        if "allocation_schema" in raw:
            values["allocation_schema"] = AllocationSchema.parse(raw["allocation_schema"])
        guaranteed = values.get("guaranteed_throughput_bps")
        maximum = values.get("max_throughput_bps")
        if guaranteed is not None and maximum is not None and guaranteed > maximum:
            raise PolicyError(
                json_path(["body", "guaranteed_throughput_bps"]),
                f"guaranteed throughput {guaranteed:g} exceeds maximum {maximum:g}",
            )
        return SlaTargetBody(**values)

    if not math.isfinite(raw["ttl_s"]):
        raise PolicyError(json_path(["body", "ttl_s"]), "must be finite")
    return TaBlacklistBody.create(raw["cell_id"], raw["ta_indices"], raw["ttl_s"])


def serialize(policy: A1Policy) -> str:
    """Canonical JSON text of a policy; `parse(serialize(p)) == p`."""
    return json.dumps(policy.to_dict(), indent=2, sort_keys=True)


def _slice_parts(value: str) -> Tuple[Optional[str], str]:
    """(cell, 5qi) of a slice scope; the cell is None for the `5qi:<n>` form."""
    if value.startswith("5qi:"):
        return None, value[len("5qi:"):]
    cell, _, five_qi = value.rpartition("/")
    return cell, five_qi


def _reach_same_ue(a: PolicyScope, b: PolicyScope) -> bool:
    """Whether some UE can fall under both TS scopes at once."""
    if ScopeKind.CELL in (a.kind, b.kind):
        return False
    if a.kind is ScopeKind.UE and b.kind is ScopeKind.UE:
        return a.value == b.value
    if a.kind is ScopeKind.SLICE and b.kind is ScopeKind.SLICE:
        (cell_a, qi_a), (cell_b, qi_b) = _slice_parts(a.value), _slice_parts(b.value)
        return qi_a == qi_b and (cell_a is None or cell_b is None or cell_a == cell_b)
    return True


def _label_views(candidate: A1Policy, peers: List[A1Policy]) -> List[Tuple[A1Policy, ...]]:
    """
    Sets of TS documents that can apply to one UE together with `candidate`.

    A UE carries at most one UE-scoped document, one `5qi:<n>` document and
    one `<cell>/<5qi>` document.
    """
    def slot(p: A1Policy) -> int:
        if p.scope.kind is ScopeKind.UE:
            return 0
        return 1 if _slice_parts(p.scope.value)[0] is None else 2

    options: List[List[Optional[A1Policy]]] = [[None], [None], [None]]
    for p in peers:
        options[slot(p)].append(p)
    options[slot(candidate)] = [candidate]

    views = []
    for combo in product(*options):
        docs = tuple(p for p in combo if p is not None)
        if all(_reach_same_ue(a.scope, b.scope) for a, b in combinations(docs, 2)):
            views.append(docs)
    return sorted(views, key=len)


def _effective_labels(view: Tuple[A1Policy, ...]) -> Dict[str, Label]:
    """Slice documents in scope order first, the UE document overriding per cell."""
    labels: Dict[str, Label] = {}
    slices = sorted((p for p in view if p.scope.kind is ScopeKind.SLICE), key=lambda p: p.scope.value)
    for p in slices + [p for p in view if p.scope.kind is ScopeKind.UE]:
        labels.update(p.body.labels)
    return labels


def cross_check(
    active: Iterable[A1Policy],
    candidate: A1Policy,
    known_cells: Optional[Iterable[str]] = None,
) -> List[PolicyConflict]:
    """
    Verify a candidate policy against the set of active policies.

    Flags a reused policy id on a different (type, scope), a second policy
    for an already covered (type, scope), TS documents leaving a UE without
    any serviceable cell, and contradictory TS labels for a cell between
    documents that can reach the same UE. Slice-scoped and UE-scoped TS
    documents are merged the way the TS xApp applies them (UE labels
    override slice labels per cell) before looking for unserviceable UEs.

    Args:
        active: Policies currently in force (assumed mutually consistent)
        candidate: Policy about to be installed
        known_cells: Cells of the network; when given, the effective labels
            must FORBID all of them to count as leaving no serviceable cell

    Returns:
        Findings sorted by (kind, policy ids); empty means ok
    """
    found = set()
    ordered = sorted(set(active), key=lambda p: (p.policy_id, p.policy_type.value, str(p.scope)))

    for other in ordered:
        if other.policy_id == candidate.policy_id and other.key != candidate.key:
            found.add(PolicyConflict(
                "duplicate_id",
                (candidate.policy_id,),
                f"id already used for {other.policy_type.value} on {other.scope}",
            ))
        elif other.policy_id != candidate.policy_id and other.key == candidate.key:
            found.add(PolicyConflict(
                "duplicate_scope",
                tuple(sorted((other.policy_id, candidate.policy_id))),
                f"{candidate.policy_type.value} on {candidate.scope} already set",
            ))

    if isinstance(candidate.body, TsPreferenceBody):
        labels = candidate.body.labels
        peers = [
            p for p in ordered
            if isinstance(p.body, TsPreferenceBody) and p.policy_id != candidate.policy_id
            and _reach_same_ue(p.scope, candidate.scope)
        ]

        flagged: List[set] = []
        for view in _label_views(candidate, [p for p in peers if p.key != candidate.key]):
            ids = {p.policy_id for p in view}
            if any(f <= ids for f in flagged):
                continue
            merged = _effective_labels(view)
            forbidden = {cell for cell, label in merged.items() if label is Label.FORBID}
            cells = set(known_cells) if known_cells is not None else set(merged)
            if cells and cells <= forbidden:
                flagged.append(ids)
                found.add(PolicyConflict(
                    "no_serviceable_cell",
                    tuple(sorted(ids)),
                    "every cell is FORBID for " + " with ".join(str(p.scope) for p in view),
                ))

        for other in peers:
            for cell, label in other.body.labels.items():
                if cell in labels and labels[cell] is not label:
                    found.add(PolicyConflict(
                        "contradictory_label",
                        tuple(sorted((other.policy_id, candidate.policy_id))),
                        f"{cell} is {label.value} in {other.policy_id} "
                        f"but {labels[cell].value} in {candidate.policy_id}",
                    ))

    return sorted(found, key=lambda c: (c.kind, c.policy_ids, c.detail))


def load_policy_file(path: Union[str, Path]) -> A1Policy:
    """Read and parse one policy file."""
    with open(path, "rb") as f:
        return parse(f.read())


def slice_key(cell_id: str, five_qi: int) -> str:
    """Identifier of the slice grouping the UEs of one cell with one 5QI."""
    return f"{cell_id}/{five_qi}"


def slice_scope_matches(scope_value: str, cell_id: Optional[str], five_qi: int) -> bool:
    """
    Whether a slice scope covers a UE with `five_qi` served by `cell_id`.

    Two forms are understood: `<cell>/<5qi>` names one slice of one cell,
    `5qi:<n>` names the service type across every cell.
    """
    if scope_value.startswith("5qi:"):
        return scope_value[len("5qi:"):] == str(five_qi)
    return cell_id is not None and scope_value == slice_key(cell_id, five_qi)
