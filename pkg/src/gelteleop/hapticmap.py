"""Total force to vibration intensity shaping.

Forces below a dead-zone threshold produce no vibration at all; above
it, intensity follows a normalized logarithm, so most of the intensity
range is spent on small forces where grip discrimination matters, and
the curve saturates at 1 at the configured maximum. One shaped value is
broadcast to every participating finger: a single sensor measures one
total force, so there is nothing to differentiate fingers by.

Per-update rate limiting keeps estimator noise from turning into
perceptible buzzing.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

__all__ = ["HapticCommand", "HapticConfig", "make_command", "shape_intensity"]

FINGER_COUNT = 5


@dataclass(frozen=True)
class HapticConfig:
    """Shaping curve parameters and per-finger participation.

    ``log_scale`` controls curvature: small values concentrate the
    intensity range just above the threshold, large values flatten the
    curve toward linear.
    """

    threshold: float = 0.2
    f_max: float = 10.0
    log_scale: float = 1.0
    finger_mask: tuple[bool, ...] = field(default=(True,) * FINGER_COUNT)
    rate_limit: float = 0.2

    def __post_init__(self) -> None:
        if not 0.0 <= self.threshold < self.f_max:
            raise ValueError("need 0 <= threshold < f_max")
        if self.log_scale <= 0:
            raise ValueError("log_scale must be positive")
        if not 0.0 < self.rate_limit <= 1.0:
            raise ValueError("rate_limit must lie in (0, 1]")
        if len(self.finger_mask) != FINGER_COUNT:
            raise ValueError(f"finger_mask must have {FINGER_COUNT} entries")


@dataclass(frozen=True)
class HapticCommand:
    """Per-finger vibration intensities stamped with their source frame time."""

    intensities: tuple[float, ...]
    source_timestamp: int

    def __post_init__(self) -> None:
        if len(self.intensities) != FINGER_COUNT:
            raise ValueError(f"need {FINGER_COUNT} intensities")
        if any(not 0.0 <= v <= 1.0 for v in self.intensities):
            raise ValueError("intensities must lie in [0, 1]")


def shape_intensity(total: float, cfg: HapticConfig) -> float:
    """Map total force to [0, 1]: dead zone, then normalized log curve."""
    if not math.isfinite(total) or total < 0:
        raise ValueError("total force must be finite and nonnegative")
    if total <= cfg.threshold:
        return 0.0
    span = math.log1p((cfg.f_max - cfg.threshold) / cfg.log_scale)
    return min(1.0, math.log1p((total - cfg.threshold) / cfg.log_scale) / span)


def make_command(
    total: float, prev: HapticCommand | None, cfg: HapticConfig, ts: int
) -> HapticCommand:
    """Broadcast the shaped intensity to enabled fingers, rate limited.

    Each enabled finger moves from its previous intensity toward the
    shaped target by at most ``rate_limit`` per call; a missing previous
    command ramps up from zero rather than jolting. Masked-off fingers
    are forced to exactly 0 regardless of history.
    """
    target = shape_intensity(total, cfg)
    previous = prev.intensities if prev is not None else (0.0,) * FINGER_COUNT
    intensities = []
    for enabled, before in zip(cfg.finger_mask, previous):
        if not enabled:
            intensities.append(0.0)
            continue
        step = max(-cfg.rate_limit, min(cfg.rate_limit, target - before))
        intensities.append(before + step)
    return HapticCommand(intensities=tuple(intensities), source_timestamp=ts)
