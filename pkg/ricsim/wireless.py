"""
Radio and geometry model: pathloss, grid-of-beams gains, RSRP,
timing-advance quantization and localization error.

Every function here is pure. Scalar entry points follow the per-UE
operations; the `*_matrix` / `noisy_positions` variants evaluate the same
formulas over numpy arrays for the simulator's per-tick measurements.
"""

import math
from dataclasses import dataclass
from enum import Enum
from typing import List, Optional, Tuple, Union

import numpy as np

from .config import LOCALIZATION_SIGMA_M, SUPPORTED_SCS_KHZ, TA_BASE_STEP_M
from .errors import DomainError

ArrayLike = Union[float, np.ndarray]


@dataclass(frozen=True)
class Position:
    """Planar position in meters."""
    x: float
    y: float

    def __post_init__(self):
        if not (math.isfinite(self.x) and math.isfinite(self.y)):
            raise DomainError(f"position must be finite, got ({self.x}, {self.y})")

    def distance_to(self, other: "Position") -> float:
        return math.hypot(other.x - self.x, other.y - self.y)

    def azimuth_to(self, other: "Position") -> float:
        """Azimuth in degrees [0, 360) of `other` seen from this point."""
        return math.degrees(math.atan2(other.y - self.y, other.x - self.x)) % 360.0

    def as_tuple(self) -> Tuple[float, float]:
        return (self.x, self.y)


@dataclass(frozen=True)
class PropagationParams:
    """Log-distance pathloss with optional lognormal shadowing."""
    ref_loss_db: float = 40.0
    exponent: float = 2.0
    tx_power_dbm: float = 30.0
    shadowing_sigma_db: float = 0.0

    def __post_init__(self):
        if not self.exponent > 0:
            raise DomainError(f"pathloss exponent must be > 0, got {self.exponent}")
        if not self.ref_loss_db > 0:
            raise DomainError(f"reference loss must be > 0 dB, got {self.ref_loss_db}")
        if not self.shadowing_sigma_db >= 0:
            raise DomainError(f"shadowing sigma must be >= 0, got {self.shadowing_sigma_db}")


@dataclass(frozen=True)
class Beam:
    """One direction of a Grid of Beams with a parabolic main lobe."""
    beam_id: int
    boresight_deg: float
    beamwidth_3db_deg: float
    max_gain_db: float
    max_attenuation_db: float

    def __post_init__(self):
        if self.beam_id < 0:
            raise DomainError(f"beam_id must be >= 0, got {self.beam_id}")
        if not 0.0 <= self.boresight_deg < 360.0:
            raise DomainError(f"boresight must lie in [0, 360), got {self.boresight_deg}")
        if not self.beamwidth_3db_deg > 0:
            raise DomainError("beamwidth must be > 0")
        if not self.max_attenuation_db > 0:
            raise DomainError("max attenuation must be > 0")


class LocalizationTechnique(str, Enum):
    """Positioning technique of the location Application Server."""
    PERFECT = "PERFECT"
    RTK = "RTK"
    DGPS = "DGPS"
    GPS = "GPS"

    @property
    def sigma_m(self) -> float:
        return LOCALIZATION_SIGMA_M[self.value]


@dataclass(frozen=True)
class TaConfig:
    """Numerology driving the timing-advance step."""
    scs_khz: int = 15

    def __post_init__(self):
        if self.scs_khz not in SUPPORTED_SCS_KHZ:
            raise DomainError(
                f"subcarrier spacing must be one of {SUPPORTED_SCS_KHZ} kHz, got {self.scs_khz}"
            )

    @property
    def mu(self) -> int:
        return int(round(math.log2(self.scs_khz / 15)))

    @property
    def resolution_m(self) -> float:
        return TA_BASE_STEP_M / (2 ** self.mu)


def make_grid_of_beams(
    count: int,
    sector_center_deg: float = 90.0,
    sector_width_deg: float = 120.0,
    beamwidth_3db_deg: Optional[float] = None,
    max_gain_db: float = 20.0,
    max_attenuation_db: float = 30.0,
) -> List[Beam]:
    """
    Evenly spread `count` boresights over a sector.

    Args:
        count: Number of beams (0 gives an omni cell)
        sector_center_deg: Azimuth of the sector center
        sector_width_deg: Angular width covered by all beams
        beamwidth_3db_deg: Beamwidth; defaults to the boresight spacing

    Returns:
        Beams with ids 0..count-1 ordered by increasing azimuth
    """
    if count <= 0:
        return []
    spacing = sector_width_deg / count
    width = beamwidth_3db_deg if beamwidth_3db_deg is not None else spacing
    start = sector_center_deg - sector_width_deg / 2.0
    return [
        Beam(
            beam_id=i,
            boresight_deg=(start + (i + 0.5) * spacing) % 360.0,
            beamwidth_3db_deg=width,
            max_gain_db=max_gain_db,
            max_attenuation_db=max_attenuation_db,
        )
        for i in range(count)
    ]


def wrap_angle_deg(angle: ArrayLike) -> ArrayLike:
    """Map an angle difference onto [-180, 180)."""
    return (angle + 180.0) % 360.0 - 180.0


def pathloss_db(d: ArrayLike, p: PropagationParams) -> ArrayLike:
    """Log-distance pathloss in dB; `d` in meters, scalar or array."""
    if isinstance(d, np.ndarray):
        if np.any(d <= 0):
            raise DomainError("pathloss distance must be > 0")
        return p.ref_loss_db + 10.0 * p.exponent * np.log10(d)
    if not d > 0:
        raise DomainError(f"pathloss distance must be > 0, got {d}")
    return p.ref_loss_db + 10.0 * p.exponent * math.log10(d)


def beam_gain_db(beam: Beam, azimuth_deg: ArrayLike) -> ArrayLike:
    """Parabolic main-lobe gain, floored at max_gain - max_attenuation."""
    offset = wrap_angle_deg(azimuth_deg - beam.boresight_deg)
    loss = 12.0 * (offset / beam.beamwidth_3db_deg) ** 2
    if isinstance(loss, np.ndarray):
        return beam.max_gain_db - np.minimum(loss, beam.max_attenuation_db)
    return beam.max_gain_db - min(loss, beam.max_attenuation_db)


def rsrp_dbm(
    ue_pos: Position,
    cell_pos: Position,
    beam: Optional[Beam],
    p: PropagationParams,
    shadowing_db: float = 0.0,
) -> float:
    """Received reference-signal power of one UE from one cell (optionally one beam)."""
    d = cell_pos.distance_to(ue_pos)
    if d == 0:
        raise DomainError("UE and cell positions coincide")
    gain = beam_gain_db(beam, cell_pos.azimuth_to(ue_pos)) if beam is not None else 0.0
    return p.tx_power_dbm - pathloss_db(d, p) + gain + shadowing_db


def rsrp_matrix(
    ue_xy: np.ndarray,
    cell_pos: Position,
    beams: List[Beam],
    p: PropagationParams,
    shadowing_db: np.ndarray,
    extra_attenuation_db: Optional[np.ndarray] = None,
) -> Tuple[np.ndarray, np.ndarray]:
    """
    Evaluate `rsrp_dbm` for many UEs of one cell at once.

    Args:
        ue_xy: (N, 2) UE coordinates
        cell_pos: Cell site
        beams: Beams of the cell (may be empty)
        p: Propagation parameters of the cell
        shadowing_db: (N,) per-UE shadowing towards this cell
        extra_attenuation_db: optional (N, B) obstacle losses per beam

    Returns:
        (cell_rsrp (N,), beam_rsrp (N, B))
    """
    dx = ue_xy[:, 0] - cell_pos.x
    dy = ue_xy[:, 1] - cell_pos.y
    d = np.hypot(dx, dy)
    if np.any(d == 0):
        raise DomainError("UE and cell positions coincide")
    base = p.tx_power_dbm - pathloss_db(d, p) + shadowing_db
    if not beams:
        return base, np.empty((len(d), 0))
    azimuth = np.degrees(np.arctan2(dy, dx)) % 360.0
    gains = np.stack([beam_gain_db(b, azimuth) for b in beams], axis=1)
    beam_rsrp = base[:, None] + gains
    if extra_attenuation_db is not None:
        beam_rsrp = beam_rsrp - extra_attenuation_db
    return base, beam_rsrp


def ta_index(d: float, ta: TaConfig) -> int:
    """Timing-advance index of a UE at distance `d` meters."""
    if not d >= 0:
        raise DomainError(f"distance must be >= 0, got {d}")
    step = ta.resolution_m
    k = int(math.floor(d / step))
    # keep d - k*step inside [0, step) despite rounding in the division
    if k * step > d:
        k -= 1
    elif (k + 1) * step <= d:
        k += 1
    return k


def noisy_position(true_pos: Position, tech: LocalizationTechnique, rng: np.random.Generator) -> Position:
    """Reported position: true position plus per-axis Gaussian error."""
    dx, dy = rng.normal(0.0, tech.sigma_m, size=2)
    return Position(true_pos.x + float(dx), true_pos.y + float(dy))


def noisy_positions(xy: np.ndarray, tech: LocalizationTechnique, rng: np.random.Generator) -> np.ndarray:
    """Array form of `noisy_position` for (N, 2) coordinates."""
    return xy + rng.normal(0.0, tech.sigma_m, size=xy.shape)
