"""Marker detection and windowed Lucas-Kanade tracking.

Markers are segmented by an Otsu-style bimodal threshold and connected
components, located to sub-pixel accuracy by intensity-weighted
centroids. Tracking solves, per marker, the 2x2 normal equations of the
classic Lucas-Kanade least-squares problem over a square window,
coarse-to-fine over an image pyramid for large shifts.

Sequences are tracked against the first frame (reference-frame
tracking): displacements measure total deformation from rest, which is
what the force model is defined on, and drift cannot accumulate.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .gelsim import GelImage

__all__ = [
    "CountMismatchError",
    "DimensionMismatchError",
    "FlowField",
    "MarkerSet",
    "TrackConfig",
    "detect_markers",
    "flow_from_csv",
    "flow_to_csv",
    "lk_flow",
    "track_sequence",
]


class CountMismatchError(RuntimeError):
    """Detected marker count differs from the expected count."""


class DimensionMismatchError(ValueError):
    """Frames passed to the tracker have different dimensions."""


@dataclass(frozen=True)
class TrackConfig:
    """Lucas-Kanade solver parameters.

    ``min_eigen`` thresholds the per-pixel-normalized smaller eigenvalue
    of the structure tensor; windows without two-dimensional texture
    (uniform or single-edge regions) fall below it and are rejected.
    """

    window_half: int = 7
    pyramid_levels: int = 3
    max_iterations: int = 20
    epsilon: float = 0.01
    min_eigen: float = 1.0

    def __post_init__(self) -> None:
        if self.window_half < 2:
            raise ValueError("window_half must be at least 2")
        if self.epsilon <= 0:
            raise ValueError("epsilon must be positive")
        if self.pyramid_levels < 1:
            raise ValueError("pyramid_levels must be at least 1")


@dataclass(frozen=True)
class MarkerSet:
    """Sub-pixel marker centroids, row-major sorted, plus the threshold used."""

    centroids: np.ndarray
    detection_threshold: float

    def __len__(self) -> int:
        return len(self.centroids)


@dataclass(frozen=True)
class FlowField:
    """Per-marker flow: base position, displacement, validity, residual."""

    base: np.ndarray
    delta: np.ndarray
    valid: np.ndarray
    residual: np.ndarray

    def __len__(self) -> int:
        return len(self.base)

    def valid_deltas(self) -> np.ndarray:
        return self.delta[self.valid]


def _otsu_threshold(pixels: np.ndarray) -> float:
    """Threshold maximizing between-class variance; dark class is `< threshold`."""
    hist = np.bincount(pixels.ravel(), minlength=256).astype(np.float64)
    total = hist.sum()
    omega = np.cumsum(hist)
    mu = np.cumsum(hist * np.arange(256))
    mu_total = mu[-1]
    split = (omega > 0) & (omega < total)
    if not split.any():
        return 0.0
    between = np.zeros(256)
    between[split] = (mu_total * omega[split] - total * mu[split]) ** 2 / (
        omega[split] * (total - omega[split])
    )
    t = int(np.argmax(between))
    return t + 0.5


def _weighted_centroid(weights: np.ndarray, cx: float, cy: float, radius: int) -> tuple[float, float]:
    """Centroid of `weights` over a square window, clipped to the image."""
    h, w = weights.shape
    x0, x1 = max(0, int(cx) - radius), min(w, int(cx) + radius + 1)
    y0, y1 = max(0, int(cy) - radius), min(h, int(cy) + radius + 1)
    patch = weights[y0:y1, x0:x1]
    mass = patch.sum()
    if mass <= 0:
        return cx, cy
    xs = np.arange(x0, x1)
    ys = np.arange(y0, y1)
    return float((patch.sum(axis=0) * xs).sum() / mass), float((patch.sum(axis=1) * ys).sum() / mass)


def detect_markers(
    image: GelImage, expected_count: int | None = None, min_area: int = 4
) -> MarkerSet:
    """Locate dark dot markers to sub-pixel accuracy.

    Pixels below an Otsu threshold are grouped by connected components;
    components smaller than ``min_area`` pixels are dropped. Each
    component is refined with an intensity-weighted centroid over a
    window sized to cover the blob's smooth tails (two passes, so an
    off-center first guess cannot bias the window). Assumes markers are
    separated by clearly more than their diameter, as gel renders are.
    """
    pixels = image.pixels
    threshold = _otsu_threshold(pixels)
    mask = pixels < threshold
    labels, count = ndimage.label(mask)
    weights = 255.0 - pixels.astype(np.float64)

    found = []
    for idx in range(1, count + 1):
        ys, xs = np.nonzero(labels == idx)
        area = len(xs)
        if area < min_area:
            continue
        wts = weights[ys, xs]
        cx = float((xs * wts).sum() / wts.sum())
        cy = float((ys * wts).sum() / wts.sum())
        radius = max(3, int(math.ceil(1.5 * math.sqrt(area / math.pi))) + 2)
        cx, cy = _weighted_centroid(weights, cx, cy, radius)
        cx, cy = _weighted_centroid(weights, cx, cy, radius)
        found.append((cx, cy))

    if expected_count is not None and len(found) != expected_count:
        raise CountMismatchError(f"expected {expected_count} markers, found {len(found)}")
    if not found:
        return MarkerSet(centroids=np.zeros((0, 2)), detection_threshold=threshold)

    centroids = np.array(found, dtype=np.float64)
    order = np.lexsort((centroids[:, 0], centroids[:, 1]))
    return MarkerSet(centroids=centroids[order], detection_threshold=threshold)


def _build_pyramid(pixels: np.ndarray, levels: int) -> list[np.ndarray]:
    out = [pixels.astype(np.float64)]
    for _ in range(levels - 1):
        prev = out[-1]
        h2, w2 = prev.shape[0] // 2, prev.shape[1] // 2
        if min(h2, w2) < 8:
            break
        crop = prev[: h2 * 2, : w2 * 2]
        out.append(0.25 * (crop[0::2, 0::2] + crop[1::2, 0::2] + crop[0::2, 1::2] + crop[1::2, 1::2]))
    return out


def _gradients(img: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    # Central differences with edge-replicated (clamped) borders.
    padded = np.pad(img, 1, mode="edge")
    ix = 0.5 * (padded[1:-1, 2:] - padded[1:-1, :-2])
    iy = 0.5 * (padded[2:, 1:-1] - padded[:-2, 1:-1])
    return ix, iy


def _bilinear(img: np.ndarray, xs: np.ndarray, ys: np.ndarray) -> np.ndarray:
    h, w = img.shape
    x = np.clip(xs, 0.0, w - 1.0)
    y = np.clip(ys, 0.0, h - 1.0)
    x0 = x.astype(np.intp)
    y0 = y.astype(np.intp)
    x1 = np.minimum(x0 + 1, w - 1)
    y1 = np.minimum(y0 + 1, h - 1)
    fx = x - x0
    fy = y - y0
    return (
        img[y0, x0] * (1 - fx) * (1 - fy)
        + img[y0, x1] * fx * (1 - fy)
        + img[y1, x0] * (1 - fx) * fy
        + img[y1, x1] * fx * fy
    )


def _track_points(
    prev_pyr: list[np.ndarray],
    cur_pyr: list[np.ndarray],
    grad_pyr: list[tuple[np.ndarray, np.ndarray]],
    points: np.ndarray,
    off_x: np.ndarray,
    off_y: np.ndarray,
    cfg: TrackConfig,
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Solve all points together; each point's update sequence is its own.

    Batching is purely an execution strategy: a point's iterate depends
    only on that point's window and displacement, so masked array updates
    reproduce the one-point-at-a-time algorithm exactly.
    """
    n = len(points)
    n_window = off_x.size
    d = np.zeros((n, 2))
    valid = np.ones(n, dtype=bool)
    for level in range(len(prev_pyr) - 1, -1, -1):
        scale = float(2**level)
        tx = points[:, 0, None] / scale + off_x
        ty = points[:, 1, None] / scale + off_y
        template = _bilinear(prev_pyr[level], tx, ty)
        gx = _bilinear(grad_pyr[level][0], tx, ty)
        gy = _bilinear(grad_pyr[level][1], tx, ty)
        gxx = (gx * gx).sum(axis=1)
        gxy = (gx * gy).sum(axis=1)
        gyy = (gy * gy).sum(axis=1)
        det = gxx * gyy - gxy * gxy
        min_eig = 0.5 * ((gxx + gyy) - np.hypot(gxx - gyy, 2.0 * gxy)) / n_window
        usable = (det > 0) & (min_eig >= cfg.min_eigen)

        converged = np.zeros(n, dtype=bool)
        # A coarse-level failure poisons every finer level's starting
        # point, so validity must accumulate across the whole descent.
        active = usable & valid
        for _ in range(cfg.max_iterations):
            if not active.any():
                break
            idx = np.nonzero(active)[0]
            cur = _bilinear(cur_pyr[level], tx[idx] + d[idx, 0, None], ty[idx] + d[idx, 1, None])
            diff = template[idx] - cur
            bx = (gx[idx] * diff).sum(axis=1)
            by = (gy[idx] * diff).sum(axis=1)
            step_x = (gyy[idx] * bx - gxy[idx] * by) / det[idx]
            step_y = (gxx[idx] * by - gxy[idx] * bx) / det[idx]
            d[idx, 0] += step_x
            d[idx, 1] += step_y
            done = np.hypot(step_x, step_y) < cfg.epsilon
            converged[idx[done]] = True
            active[idx[done]] = False
        valid = valid & usable & converged
        if level > 0:
            d *= 2.0

    d[~valid] = 0.0
    # Residual at the returned displacement, over the finest-level window.
    tx = points[:, 0, None] + off_x
    ty = points[:, 1, None] + off_y
    final = _bilinear(cur_pyr[0], tx + d[:, 0, None], ty + d[:, 1, None])
    residual = np.abs(_bilinear(prev_pyr[0], tx, ty) - final).mean(axis=1)
    return d, valid, residual


def lk_flow(prev: GelImage, cur: GelImage, points: MarkerSet, cfg: TrackConfig) -> FlowField:
    """Track each marker from `prev` to `cur` with pyramidal Lucas-Kanade.

    Per point and pyramid level, iterate d <- d + G^-1 b where G is the
    structure tensor of the template window and b the gradient-weighted
    temporal difference; entries with a degenerate G or no convergence
    within ``max_iterations`` at any pyramid level are marked invalid
    with zero delta. Residual is the mean absolute post-warp intensity
    difference over the window.
    """
    if (prev.width, prev.height) != (cur.width, cur.height):
        raise DimensionMismatchError(
            f"frame dimensions differ: {prev.width}x{prev.height} vs {cur.width}x{cur.height}"
        )
    prev_pyr = _build_pyramid(prev.pixels, cfg.pyramid_levels)
    cur_pyr = _build_pyramid(cur.pixels, cfg.pyramid_levels)
    grad_pyr = [_gradients(img) for img in prev_pyr]

    span = np.arange(-cfg.window_half, cfg.window_half + 1, dtype=np.float64)
    off_x, off_y = (g.ravel() for g in np.meshgrid(span, span))

    if len(points.centroids) == 0:
        empty = np.zeros((0, 2))
        return FlowField(base=empty, delta=empty.copy(), valid=np.zeros(0, dtype=bool), residual=np.zeros(0))
    delta, valid, residual = _track_points(
        prev_pyr, cur_pyr, grad_pyr, points.centroids, off_x, off_y, cfg
    )
    return FlowField(base=points.centroids.copy(), delta=delta, valid=valid, residual=residual)


def track_sequence(
    frames: list[GelImage], cfg: TrackConfig, expected_count: int | None = None
) -> list[FlowField]:
    """Detect markers on the first frame, then flow from it to each later frame."""
    if len(frames) < 2:
        raise ValueError("need at least two frames to track")
    markers = detect_markers(frames[0], expected_count)
    return [lk_flow(frames[0], frame, markers, cfg) for frame in frames[1:]]


def flow_to_csv(flow: FlowField, path) -> None:
    """Debug dump: one row per marker, columns base_x,base_y,dx,dy,valid,residual."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["base_x", "base_y", "dx", "dy", "valid", "residual"])
        for i in range(len(flow)):
            writer.writerow(
                [
                    repr(float(flow.base[i, 0])),
                    repr(float(flow.base[i, 1])),
                    repr(float(flow.delta[i, 0])),
                    repr(float(flow.delta[i, 1])),
                    int(flow.valid[i]),
                    repr(float(flow.residual[i])),
                ]
            )


def flow_from_csv(path) -> FlowField:
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    base = np.array([[float(r["base_x"]), float(r["base_y"])] for r in rows])
    delta = np.array([[float(r["dx"]), float(r["dy"])] for r in rows])
    valid = np.array([bool(int(r["valid"])) for r in rows])
    residual = np.array([float(r["residual"]) for r in rows])
    if len(rows) == 0:
        base = base.reshape(0, 2)
        delta = delta.reshape(0, 2)
    return FlowField(base=base, delta=delta, valid=valid, residual=residual)
