"""
Scenario configuration: JSON files validated against
docs/schemas/scenario.schema.json and turned into dataclasses.

Unknown keys are rejected with their JSON path. `--set key=value`
overrides address fields with dotted keys (`cells.0.prb_count`).
"""

import copy
import json
import logging
from dataclasses import asdict, dataclass, field
from functools import lru_cache
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Tuple, Union

from jsonschema import Draft7Validator

from .config import (
    DEFAULT_BLACKLIST_TTL_S,
    DEFAULT_DBSCAN_EPS,
    DEFAULT_DBSCAN_MIN_PTS,
    DEFAULT_FAILURE_THRESHOLD_DBM,
    DEFAULT_HORIZON_TICKS,
    DEFAULT_K_SIGMA,
    DEFAULT_MARGIN_DB,
    DEFAULT_N_CONSECUTIVE,
    DEFAULT_PRB_COUNT,
    DEFAULT_REM_CELL_M,
    DEFAULT_SSD_BUCKET_S,
    DEFAULT_SSD_WINDOW_S,
    DEFAULT_STD_FLOOR,
    DEFAULT_TICK_S,
    DEFAULT_XAPP_PRIORITY,
    SCHEMA_DIR,
)
from .errors import ConfigError, DomainError, PolicyError, json_path
from .policy import A1Policy, parse_obj
from .utils import parse_override, set_dotted
from .wireless import LocalizationTechnique, PropagationParams

logger = logging.getLogger(__name__)

XAPP_IDS = ("bmm", "ts", "qra", "ssd")


@dataclass
class Bounds:
    x_min: float
    y_min: float
    x_max: float
    y_max: float


@dataclass
class TaSettings:
    scs_khz: int = 15


@dataclass
class BeamLayout:
    count: int
    sector_center_deg: float = 90.0
    sector_width_deg: float = 120.0
    beamwidth_3db_deg: Optional[float] = None
    max_gain_db: float = 20.0
    max_attenuation_db: float = 30.0

    def as_kwargs(self) -> Dict[str, Any]:
        return asdict(self)


@dataclass
class CellConfig:
    cell_id: str
    x: float
    y: float
    prb_count: int = DEFAULT_PRB_COUNT
    per_prb_rate_bps: float = 1.0e6
    scs_khz: Optional[int] = None
    propagation: Optional[PropagationParams] = None
    beams: Optional[BeamLayout] = None


@dataclass
class UeConfig:
    ue_id: str
    x: float
    y: float
    speed_mps: float = 0.0
    bearing_deg: float = 0.0
    five_qi: int = 1
    kind: str = "MOBILE"
    demand_bps: Optional[float] = None


@dataclass
class Placement:
    type: str
    x: float = 0.0
    y: float = 0.0
    x_min: float = 0.0
    y_min: float = 0.0
    x_max: float = 0.0
    y_max: float = 0.0
    radius_m: float = 1.0
    min_radius_m: float = 1.0


@dataclass
class UeGroupConfig:
    prefix: str
    count: int
    placement: Placement
    kind: str = "MOBILE"
    five_qi: int = 1
    speed_mps: float = 0.0
    bearing_deg: float = 0.0
    demand_bps: Optional[float] = None


@dataclass
class TrafficConfig:
    legit_rate_per_hour: float = 5.0
    attacks_per_day: float = 3.0
    burst_len: int = 100
    burst_gap_s: float = 5.0


@dataclass
class ObstacleConfig:
    cell_id: str
    beam_ids: List[int]
    x_min: float
    y_min: float
    x_max: float
    y_max: float
    attenuation_db: float


@dataclass
class BeamFailureConfig:
    threshold_dbm: float = DEFAULT_FAILURE_THRESHOLD_DBM
    n_consecutive: int = DEFAULT_N_CONSECUTIVE
    recovery: bool = True


@dataclass
class RicConfig:
    priority: List[str] = field(default_factory=lambda: list(DEFAULT_XAPP_PRIORITY))
    ei_delay_s: float = 0.0
    log_messages: bool = False


@dataclass
class TsConfig:
    enabled: bool = False
    preference_offset_db: Optional[float] = None
    hysteresis_db: float = 0.0
    report_period_s: Optional[float] = None


@dataclass
class QraConfig:
    enabled: bool = False
    report_period_s: float = 1.0
    default_schema: str = "EQUAL"


@dataclass
class SsdConfig:
    enabled: bool = False
    window_s: float = DEFAULT_SSD_WINDOW_S
    bucket_s: float = DEFAULT_SSD_BUCKET_S
    training_days: float = 2.0
    min_training_windows: int = 10
    eps: float = DEFAULT_DBSCAN_EPS
    min_pts: int = DEFAULT_DBSCAN_MIN_PTS
    k_sigma: float = DEFAULT_K_SIGMA
    std_floor: float = DEFAULT_STD_FLOOR
    blacklist_ttl_s: float = DEFAULT_BLACKLIST_TTL_S
    min_bin_requests: int = 10


@dataclass
class BmmConfig:
    enabled: bool = False
    mode: str = "rem"
    grid_cell_m: float = DEFAULT_REM_CELL_M
    horizon_ticks: int = DEFAULT_HORIZON_TICKS
    margin_db: float = DEFAULT_MARGIN_DB
    location_period_s: float = 0.1
    report_period_s: Optional[float] = None
    stats_period_s: float = 1.0
    training_s: float = 30.0
    training_sample_period_s: float = 0.1
    speed_bin_edges: List[float] = field(default_factory=lambda: [0.0, 1.0, 5.0, 10.0, 20.0, 30.0, 50.0])
    bearing_bins: int = 8
    bias_alpha: float = 0.5
    emergency_window_limit: Optional[int] = None
    clean_windows: int = 3


@dataclass
class XAppsConfig:
    ts: TsConfig = field(default_factory=TsConfig)
    qra: QraConfig = field(default_factory=QraConfig)
    ssd: SsdConfig = field(default_factory=SsdConfig)
    bmm: BmmConfig = field(default_factory=BmmConfig)


@dataclass
class TimedPolicy:
    at_s: float
    policy: A1Policy


@dataclass
class TraceConfig:
    serving_every: int = 1


@dataclass
class ScenarioConfig:
    """A validated scenario. Build with `from_dict` or `load_scenario`."""
    name: str
    seed: int
    duration_s: float
    bounds: Bounds
    cells: List[CellConfig]
    tick_s: float = DEFAULT_TICK_S
    boundary: str = "bounce"
    ta: TaSettings = field(default_factory=TaSettings)
    localization: LocalizationTechnique = LocalizationTechnique.PERFECT
    propagation: PropagationParams = field(default_factory=PropagationParams)
    ues: List[UeConfig] = field(default_factory=list)
    ue_groups: List[UeGroupConfig] = field(default_factory=list)
    traffic: TrafficConfig = field(default_factory=TrafficConfig)
    obstacles: List[ObstacleConfig] = field(default_factory=list)
    beam_failure: BeamFailureConfig = field(default_factory=BeamFailureConfig)
    ric: RicConfig = field(default_factory=RicConfig)
    xapps: XAppsConfig = field(default_factory=XAppsConfig)
    policies: List[TimedPolicy] = field(default_factory=list)
    trace: TraceConfig = field(default_factory=TraceConfig)
    output_dir: Optional[str] = None


@lru_cache(maxsize=None)
def _validator() -> Draft7Validator:
    with open(Path(SCHEMA_DIR) / "scenario.schema.json", "r", encoding="utf-8") as f:
        return Draft7Validator(json.load(f))


def _reject_constant(name: str):
    raise ValueError(f"{name} is not a valid JSON number")


def load_document(path: Union[str, Path]) -> Dict[str, Any]:
    """Read a scenario file as a plain JSON object."""
    try:
        with open(path, "r", encoding="utf-8") as f:
            doc = json.load(f, parse_constant=_reject_constant)
    except FileNotFoundError:
        raise ConfigError.single("$", f"scenario file {path} not found") from None
    except (ValueError, UnicodeDecodeError) as e:
        raise ConfigError.single("$", f"not a JSON document: {e}") from None
    if not isinstance(doc, dict):
        raise ConfigError.single("$", "scenario must be a JSON object")
    return doc


def apply_overrides(doc: Dict[str, Any], overrides: Sequence[Union[str, Tuple[str, Any]]]) -> Dict[str, Any]:
    """Copy of `doc` with `key=value` overrides applied."""
    out = copy.deepcopy(doc)
    for item in overrides:
        try:
            key, value = parse_override(item) if isinstance(item, str) else item
        except ValueError as e:
            raise ConfigError.single("$", str(e)) from None
        try:
            set_dotted(out, key, value)
        except (KeyError, IndexError, TypeError, ValueError) as e:
            raise ConfigError.single(json_path(key.split(".")), f"cannot set override: {e}") from None
    return out


def schema_diagnostics(doc: Any) -> List[Tuple[str, str]]:
    """Every schema violation of `doc`, sorted by path."""
    errors = sorted(_validator().iter_errors(doc), key=lambda e: [str(p) for p in e.absolute_path])
    return [(json_path(list(e.absolute_path)), e.message) for e in errors]


def _semantic_diagnostics(doc: Dict[str, Any]) -> List[Tuple[str, str]]:
    out: List[Tuple[str, str]] = []
    b = doc["bounds"]
    if not b["x_min"] < b["x_max"]:
        out.append(("$.bounds.x_max", "must be greater than x_min"))
    if not b["y_min"] < b["y_max"]:
        out.append(("$.bounds.y_max", "must be greater than y_min"))

    beams_of: Dict[str, int] = {}
    for i, cell in enumerate(doc["cells"]):
        if cell["cell_id"] in beams_of:
            out.append((f"$.cells[{i}].cell_id", f"duplicate cell id {cell['cell_id']}"))
        beams_of[cell["cell_id"]] = cell.get("beams", {}).get("count", 0)

    # mobile UEs are measured by pathloss, which needs a nonzero distance
    sites = {(float(c["x"]), float(c["y"])): c["cell_id"] for c in doc["cells"]}
    seen = set()
    for i, ue in enumerate(doc.get("ues", [])):
        if ue["ue_id"] in seen:
            out.append((f"$.ues[{i}].ue_id", f"duplicate UE id {ue['ue_id']}"))
        seen.add(ue["ue_id"])
        site = sites.get((float(ue["x"]), float(ue["y"])))
        if site is not None and ue.get("kind", "MOBILE") == "MOBILE":
            out.append((f"$.ues[{i}]", f"mobile UE {ue['ue_id']} starts on the site of cell {site}"))
    required = {
        "point": ("x", "y"),
        "rect": ("x_min", "y_min", "x_max", "y_max"),
        "disk": ("x", "y", "radius_m"),
        "annulus": ("x", "y", "radius_m", "min_radius_m"),
    }
    for i, group in enumerate(doc.get("ue_groups", [])):
        placement = group["placement"]
        for key in required[placement["type"]]:
            if key not in placement:
                out.append((f"$.ue_groups[{i}].placement", f"{placement['type']} placement needs {key}"))
        if placement["type"] == "annulus" and placement.get("min_radius_m", 0.0) >= placement.get("radius_m", 0.0):
            out.append((f"$.ue_groups[{i}].placement.min_radius_m", "must be smaller than radius_m"))
        if placement["type"] == "point" and group.get("kind", "MOBILE") == "MOBILE" and group["count"] > 0:
            site = sites.get((float(placement.get("x", 0.0)), float(placement.get("y", 0.0))))
            if site is not None:
                out.append((f"$.ue_groups[{i}].placement", f"mobile UEs start on the site of cell {site}"))
        for n in range(1, group["count"] + 1):
            ue_id = f"{group['prefix']}{n}"
            if ue_id in seen:
                out.append((f"$.ue_groups[{i}].prefix", f"generated UE id {ue_id} is already taken"))
                break
            seen.add(ue_id)

    for i, o in enumerate(doc.get("obstacles", [])):
        if o["cell_id"] not in beams_of:
            out.append((f"$.obstacles[{i}].cell_id", f"unknown cell {o['cell_id']}"))
        elif any(b >= beams_of[o["cell_id"]] for b in o["beam_ids"]):
            out.append((f"$.obstacles[{i}].beam_ids", f"cell {o['cell_id']} has {beams_of[o['cell_id']]} beams"))

    for i, name in enumerate(doc.get("ric", {}).get("priority", [])):
        if name not in XAPP_IDS:
            out.append((f"$.ric.priority[{i}]", f"unknown xApp {name}"))

    edges = doc.get("xapps", {}).get("bmm", {}).get("speed_bin_edges")
    if edges is not None and any(a >= b for a, b in zip(edges, edges[1:])):
        out.append(("$.xapps.bmm.speed_bin_edges", "must be strictly increasing"))

    for i, timed in enumerate(doc.get("policies", [])):
        try:
            parse_obj(timed["document"])
        except PolicyError as e:
            out.append((f"$.policies[{i}].document{e.path[1:]}", e.message))
    return out


def _propagation(data: Optional[Dict[str, Any]]) -> Optional[PropagationParams]:
    return PropagationParams(**data) if data is not None else None


def from_dict(doc: Dict[str, Any]) -> ScenarioConfig:
    """
    Validate a scenario document and build its configuration.

    Raises:
        ConfigError: with one (path, message) diagnostic per problem
    """
    diagnostics = schema_diagnostics(doc)
    if diagnostics:
        raise ConfigError(diagnostics)
    diagnostics = _semantic_diagnostics(doc)
    if diagnostics:
        raise ConfigError(diagnostics)

    try:
        cells = []
        for c in doc["cells"]:
            c = dict(c)
            c["propagation"] = _propagation(c.get("propagation"))
            c["beams"] = BeamLayout(**c["beams"]) if "beams" in c else None
            cells.append(CellConfig(**c))
        groups = []
        for g in doc.get("ue_groups", []):
            g = dict(g)
            g["placement"] = Placement(**g["placement"])
            groups.append(UeGroupConfig(**g))
        xapps = doc.get("xapps", {})
        cfg = ScenarioConfig(
            name=doc["name"],
            seed=int(doc["seed"]),
            duration_s=float(doc["duration_s"]),
            bounds=Bounds(**doc["bounds"]),
            cells=cells,
            tick_s=float(doc.get("tick_s", DEFAULT_TICK_S)),
            boundary=doc.get("boundary", "bounce"),
            ta=TaSettings(**doc.get("ta", {})),
            localization=LocalizationTechnique(doc.get("localization", "PERFECT")),
            propagation=_propagation(doc.get("propagation")) or PropagationParams(),
            ues=[UeConfig(**u) for u in doc.get("ues", [])],
            ue_groups=groups,
            traffic=TrafficConfig(**doc.get("traffic", {})),
            obstacles=[ObstacleConfig(**o) for o in doc.get("obstacles", [])],
            beam_failure=BeamFailureConfig(**doc.get("beam_failure", {})),
            ric=RicConfig(**doc.get("ric", {})),
            xapps=XAppsConfig(
                ts=TsConfig(**xapps.get("ts", {})),
                qra=QraConfig(**xapps.get("qra", {})),
                ssd=SsdConfig(**xapps.get("ssd", {})),
                bmm=BmmConfig(**xapps.get("bmm", {})),
            ),
            policies=[TimedPolicy(float(p["at_s"]), parse_obj(p["document"])) for p in doc.get("policies", [])],
            trace=TraceConfig(**doc.get("trace", {})),
            output_dir=doc.get("output_dir"),
        )
    except DomainError as e:
        raise ConfigError.single("$", str(e)) from None
    return cfg


def load_scenario(
    path: Union[str, Path],
    seed: Optional[int] = None,
    overrides: Sequence[Union[str, Tuple[str, Any]]] = (),
) -> ScenarioConfig:
    """Read, override and validate a scenario file."""
    doc = apply_overrides(load_document(path), overrides)
    if seed is not None:
        doc["seed"] = seed
    return from_dict(doc)
