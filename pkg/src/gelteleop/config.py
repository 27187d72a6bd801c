"""Pipeline configuration and its JSON file format.

A config file is a JSON object holding any subset of the top-level
scalar fields plus optional "gel", "track", "haptic", "ball" and
"experiment" sections. Omitted entries keep their defaults; unknown
keys are rejected so typos surface instead of silently doing nothing.
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass

from .flowtrack import TrackConfig
from .forceest import Calibration, calibration_for
from .gelsim import GelConfig
from .hapticmap import HapticConfig

# The pipeline's gel is the fingertip sensor of a gripper that
# routinely squeezes tens of newtons, so its gains are softer than the
# bench defaults: corner markers must stay inside the drawable region
# at the naive controller's peak force (about 27 N under the stiffest
# ball draw).
SENSOR_GEL = GelConfig(k_s=0.5, k_n=0.3, k_t=0.02)


@dataclass(frozen=True)
class BallConfig:
    """Deformable ball parameters: elastic spring with a plastic yield.

    Diameters are millimeters; ``stiffness`` is N/mm of overlap,
    ``plastic_rate`` is mm of permanent shrink per newton-second of
    force above ``yield_force``, and ``hold_min`` is the grip force
    below which a lifted ball falls.
    """

    rest_diameter: float = 40.0
    stiffness: float = 2.0
    yield_force: float = 3.0
    plastic_rate: float = 0.5
    hold_min: float = 0.5

    def __post_init__(self) -> None:
        if self.rest_diameter <= 0:
            raise ValueError("rest_diameter must be positive")
        if self.stiffness <= 0:
            raise ValueError("stiffness must be positive")
        if self.yield_force <= 0:
            raise ValueError("yield_force must be positive")
        if self.plastic_rate < 0:
            raise ValueError("plastic_rate cannot be negative")
        if self.hold_min < 0:
            raise ValueError("hold_min cannot be negative")


@dataclass(frozen=True)
class ExperimentConfig:
    """Grasp controller scripts and the randomization ranges of the A/B sweep.

    The feedback controller closes until the shaped haptic intensity
    reaches ``i_target``; the naive controller closes to
    ``naive_aperture_scale`` times the ball's rest diameter. The
    ``*_range`` pairs bound the uniform ball parameter draws.
    """

    i_target: float = 0.35
    naive_aperture_scale: float = 0.8
    close_rate_mm_s: float = 10.0
    hold_s: float = 2.0
    start_clearance_mm: float = 4.0
    diameter_range: tuple[float, float] = (35.0, 45.0)
    stiffness_range: tuple[float, float] = (1.5, 3.0)
    yield_range: tuple[float, float] = (2.0, 4.0)
    plastic_rate_range: tuple[float, float] = (0.3, 0.7)
    hold_min_range: tuple[float, float] = (0.3, 0.7)

    def __post_init__(self) -> None:
        if not 0.0 < self.i_target <= 1.0:
            raise ValueError("i_target must lie in (0, 1]")
        if not 0.0 < self.naive_aperture_scale < 1.0:
            raise ValueError("naive_aperture_scale must lie in (0, 1)")
        if self.close_rate_mm_s <= 0:
            raise ValueError("close_rate_mm_s must be positive")
        if self.hold_s < 0:
            raise ValueError("hold_s cannot be negative")
        if self.start_clearance_mm < 0:
            raise ValueError("start_clearance_mm cannot be negative")
        for name in ("diameter", "stiffness", "yield", "plastic_rate", "hold_min"):
            lo, hi = getattr(self, f"{name}_range")
            if not 0 < lo <= hi:
                raise ValueError(f"{name}_range must satisfy 0 < lo <= hi")


@dataclass(frozen=True)
class PipelineConfig:
    """Everything the full loop needs, from tick rate to wire ports.

    ``aperture_span_mm`` maps the normalized [0, 1] grip commands onto
    gripper millimeters; ``shear_fraction`` is the tangential load the
    grasped ball puts on the gel per newton of normal force.
    """

    tick_rate: float = 25.0
    aperture_span_mm: float = 60.0
    shear_fraction: float = 0.3
    grip_capacity: int = 64
    host: str = "127.0.0.1"
    raw_port: int = 7455
    ws_port: int = 7456
    gel: GelConfig = SENSOR_GEL
    track: TrackConfig = TrackConfig()
    haptic: HapticConfig = HapticConfig()
    ball: BallConfig = BallConfig()
    experiment: ExperimentConfig = ExperimentConfig()

    def __post_init__(self) -> None:
        if self.tick_rate <= 0:
            raise ValueError("tick_rate must be positive")
        if self.aperture_span_mm <= 0:
            raise ValueError("aperture_span_mm must be positive")
        if self.shear_fraction < 0:
            raise ValueError("shear_fraction cannot be negative")
        if self.grip_capacity < 1:
            raise ValueError("grip_capacity must be at least 1")
        for name in ("raw_port", "ws_port"):
            if not 0 <= getattr(self, name) <= 65535:
                raise ValueError(f"{name} must be a valid port number")
        self.gel.validate()

    @property
    def calibration(self) -> Calibration:
        """Identity calibration: the inverse mirrors the gel's own gains."""
        return calibration_for(self.gel)

    @property
    def tick_period_ns(self) -> int:
        return round(1e9 / self.tick_rate)


_SECTIONS = {
    "gel": GelConfig,
    "track": TrackConfig,
    "haptic": HapticConfig,
    "ball": BallConfig,
    "experiment": ExperimentConfig,
}


def _build(cls, overrides: dict, where: str):
    known = {f.name for f in dataclasses.fields(cls)}
    unknown = sorted(set(overrides) - known)
    if unknown:
        raise ValueError(f"unknown config key(s) in {where}: {', '.join(unknown)}")
    # JSON has no tuples; coerce lists back (finger_mask, draw ranges).
    cleaned = {k: tuple(v) if isinstance(v, list) else v for k, v in overrides.items()}
    return cls(**cleaned)


def config_from_dict(raw: dict) -> PipelineConfig:
    if not isinstance(raw, dict):
        raise ValueError("config root must be a JSON object")
    top = {}
    for key, value in raw.items():
        if key in _SECTIONS:
            if not isinstance(value, dict):
                raise ValueError(f"config section {key!r} must be an object")
            top[key] = _build(_SECTIONS[key], value, where=key)
        else:
            top[key] = value
    return _build(PipelineConfig, top, where="top level")


def config_to_dict(cfg: PipelineConfig) -> dict:
    # Normalized to JSON value types (tuples become lists) so snapshots
    # compare equal across a disk round trip.
    return json.loads(json.dumps(dataclasses.asdict(cfg)))


def load_config(path) -> PipelineConfig:
    with open(path, encoding="utf-8") as handle:
        try:
            raw = json.load(handle)
        except json.JSONDecodeError as err:
            raise ValueError(f"config file {path} is not valid JSON: {err}") from err
    return config_from_dict(raw)
