"""Forward model of a dot-matrix tactile gel.

An applied wrench (shear, normal, torsion) displaces a uniform grid of
dark markers, and the gel is rendered as an 8-bit grayscale image of
smooth Gaussian dots on a white background. The deformation model is
deliberately linear so the flow-based force estimator has an exact
closed-form inverse:

    d_i = k_s*(fx, fy) + k_n*fn*(p_i - c)/R + k_t*tau*perp(p_i - c)/R

where c is the rest-grid centroid, R is half the rest-grid diagonal and
perp(x, y) = (-y, x).

Marker jitter uses numpy's PCG64 generator, seeded from
(config.seed, draw index): equal seeds and equal call sequences
reproduce images bit for bit.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass, replace

import numpy as np

__all__ = [
    "GelConfig",
    "GelImage",
    "GelState",
    "InvalidConfigError",
    "MarkerOutOfBoundsError",
    "Wrench",
    "apply_wrench",
    "grid_radius",
    "make_gel",
    "read_pgm",
    "render",
    "snap_back",
    "write_pgm",
]


class InvalidConfigError(ValueError):
    """Gel configuration cannot produce a drawable marker grid."""


class MarkerOutOfBoundsError(RuntimeError):
    """A marker left the drawable region; the wrench is too large for the gains."""


@dataclass(frozen=True)
class GelConfig:
    """Geometry, gains and noise of the simulated gel.

    Gains are pixels of marker motion per unit load: ``k_s`` px/N of
    shear, ``k_n`` px/N of normal force (radial divergence), ``k_t``
    px/(N*mm) of torsion. ``noise_sigma`` is the std of isotropic
    marker jitter in pixels.
    """

    rows: int = 7
    cols: int = 9
    image_width: int = 320
    image_height: int = 240
    margin: int = 30
    dot_radius: float = 4.0
    dot_contrast: float = 0.85
    k_s: float = 2.0
    k_n: float = 1.5
    k_t: float = 0.05
    noise_sigma: float = 0.0
    seed: int = 0

    def validate(self) -> None:
        if self.rows < 2 or self.cols < 2:
            raise InvalidConfigError(f"grid must be at least 2x2, got {self.rows}x{self.cols}")
        if min(self.k_s, self.k_n, self.k_t) <= 0:
            raise InvalidConfigError("all gains must be positive")
        if self.noise_sigma < 0:
            raise InvalidConfigError("noise_sigma must be non-negative")
        if not 0 < self.dot_contrast <= 1:
            raise InvalidConfigError("dot_contrast must be in (0, 1]")
        if self.dot_radius <= 0:
            raise InvalidConfigError("dot_radius must be positive")
        if self.margin < 0:
            raise InvalidConfigError("margin must be non-negative")
        if 2 * self.margin >= self.image_width or 2 * self.margin >= self.image_height:
            raise InvalidConfigError("margins leave no room for the marker grid")


@dataclass(frozen=True)
class Wrench:
    """Contact load: shear (fx, fy) in N, normal fn in N, torsion tau in N*mm."""

    fx: float = 0.0
    fy: float = 0.0
    fn: float = 0.0
    tau: float = 0.0

    def __post_init__(self) -> None:
        for name in ("fx", "fy", "fn", "tau"):
            if not math.isfinite(getattr(self, name)):
                raise ValueError(f"wrench component {name} must be finite")
        if self.fn < 0:
            raise ValueError("normal force fn cannot be negative (gel cannot be pulled)")

    @property
    def total(self) -> float:
        """Euclidean norm of the 3-axis force; torsion excluded."""
        return math.sqrt(self.fx**2 + self.fy**2 + self.fn**2)

    def __add__(self, other: "Wrench") -> "Wrench":
        return Wrench(self.fx + other.fx, self.fy + other.fy, self.fn + other.fn, self.tau + other.tau)

    def scaled(self, factor: float) -> "Wrench":
        return Wrench(self.fx * factor, self.fy * factor, max(0.0, self.fn * factor), self.tau * factor)


@dataclass(frozen=True)
class GelState:
    """Marker grid at rest and under the currently applied wrench."""

    config: GelConfig
    rest_positions: np.ndarray
    current_positions: np.ndarray
    applied: Wrench
    noise_draws: int = 0


@dataclass(frozen=True)
class GelImage:
    """8-bit grayscale raster; 0 is a dark dot core, 255 is background."""

    width: int
    height: int
    pixels: np.ndarray

    def __post_init__(self) -> None:
        if self.pixels.shape != (self.height, self.width):
            raise ValueError("pixel grid does not match declared dimensions")
        if self.pixels.dtype != np.uint8:
            raise ValueError("pixels must be 8-bit")


def grid_radius(config: GelConfig) -> float:
    """Half the diagonal of the rest-grid bounding box, the divergence normalizer R."""
    return 0.5 * math.hypot(
        config.image_width - 2 * config.margin, config.image_height - 2 * config.margin
    )


def make_gel(config: GelConfig) -> GelState:
    """Build a gel at rest: uniform marker grid, zero wrench."""
    config.validate()
    xs = np.linspace(config.margin, config.image_width - config.margin, config.cols)
    ys = np.linspace(config.margin, config.image_height - config.margin, config.rows)
    gx, gy = np.meshgrid(xs, ys)
    rest = np.column_stack([gx.ravel(), gy.ravel()]).astype(np.float64)
    return GelState(config=config, rest_positions=rest, current_positions=rest.copy(), applied=Wrench())


def apply_wrench(state: GelState, w: Wrench) -> GelState:
    """Displace every marker from rest according to the linear deformation model."""
    cfg = state.config
    rest = state.rest_positions
    centroid = rest.mean(axis=0)
    r = rest - centroid
    radius = grid_radius(cfg)

    disp = np.empty_like(rest)
    disp[:, 0] = cfg.k_s * w.fx
    disp[:, 1] = cfg.k_s * w.fy
    disp += (cfg.k_n * w.fn / radius) * r
    perp = np.column_stack([-r[:, 1], r[:, 0]])
    disp += (cfg.k_t * w.tau / radius) * perp

    draws = state.noise_draws
    if cfg.noise_sigma > 0:
        seq = np.random.SeedSequence(entropy=cfg.seed, spawn_key=(draws,))
        rng = np.random.Generator(np.random.PCG64(seq))
        disp += rng.normal(0.0, cfg.noise_sigma, size=rest.shape)

    return replace(
        state, current_positions=rest + disp, applied=w, noise_draws=draws + 1
    )


def snap_back(state: GelState, fraction: float) -> GelState:
    """Partially relax the gel, as when the grasped object slips.

    Every marker displacement and the stored wrench are scaled by
    (1 - fraction); fraction 1 returns the gel exactly to rest.
    """
    if not 0.0 <= fraction <= 1.0:
        raise ValueError("fraction must be in [0, 1]")
    keep = 1.0 - fraction
    disp = state.current_positions - state.rest_positions
    return replace(
        state,
        current_positions=state.rest_positions + keep * disp,
        applied=state.applied.scaled(keep),
    )


def render(state: GelState) -> GelImage:
    """Rasterize the gel: white background, one smooth dark blob per marker.

    Each blob is a Gaussian intensity dip of depth dot_contrast*255 and
    sigma dot_radius/2, truncated at three sigma; overlapping blobs
    composite by minimum intensity.
    """
    cfg = state.config
    width, height = cfg.image_width, cfg.image_height
    lo = cfg.dot_radius
    pos = state.current_positions
    if (
        (pos[:, 0] < lo).any()
        or (pos[:, 0] > width - 1 - lo).any()
        or (pos[:, 1] < lo).any()
        or (pos[:, 1] > height - 1 - lo).any()
    ):
        raise MarkerOutOfBoundsError(
            "marker escaped the drawable region; wrench too large for configured gains"
        )

    sigma = cfg.dot_radius / 2.0
    depth = cfg.dot_contrast * 255.0
    cut = int(math.ceil(3.0 * sigma)) + 1
    canvas = np.full((height, width), 255.0)
    inv2s2 = 1.0 / (2.0 * sigma * sigma)
    for x, y in pos:
        cx, cy = int(math.floor(x)), int(math.floor(y))
        x0, x1 = max(0, cx - cut), min(width, cx + cut + 1)
        y0, y1 = max(0, cy - cut), min(height, cy + cut + 1)
        gx = np.exp(-((np.arange(x0, x1) - x) ** 2) * inv2s2)
        gy = np.exp(-((np.arange(y0, y1) - y) ** 2) * inv2s2)
        blob = depth * np.outer(gy, gx)
        region = canvas[y0:y1, x0:x1]
        np.minimum(region, 255.0 - blob, out=region)

    return GelImage(width=width, height=height, pixels=np.rint(canvas).astype(np.uint8))


def write_pgm(image: GelImage, path) -> None:
    """Write a binary PGM (P5, maxval 255)."""
    with open(path, "wb") as fh:
        fh.write(f"P5\n{image.width} {image.height}\n255\n".encode("ascii"))
        fh.write(image.pixels.tobytes())


def read_pgm(path) -> GelImage:
    """Read a binary PGM written by :func:`write_pgm` (comments tolerated)."""
    with open(path, "rb") as fh:
        data = fh.read()
    # Strip '#' comments from the header before tokenizing.
    header_end = 0
    tokens: list[bytes] = []
    while len(tokens) < 4:
        match = re.compile(rb"\s*(#[^\n]*\n|\S+)").match(data, header_end)
        if match is None:
            raise ValueError("malformed PGM header")
        header_end = match.end()
        tok = match.group(1)
        if not tok.startswith(b"#"):
            tokens.append(tok)
    if tokens[0] != b"P5":
        raise ValueError("only binary PGM (P5) is supported")
    width, height, maxval = (int(t) for t in tokens[1:])
    if maxval != 255:
        raise ValueError("only maxval 255 is supported")
    raw = data[header_end + 1 : header_end + 1 + width * height]
    if len(raw) != width * height:
        raise ValueError("truncated PGM pixel data")
    pixels = np.frombuffer(raw, dtype=np.uint8).reshape(height, width)
    return GelImage(width=width, height=height, pixels=pixels.copy())
