"""Force estimation from marker flow.

Two estimators share one interface. The closed-form inverse solves the
gel's linear deformation model directly: the mean displacement gives the
shear components, and projecting the mean-removed field onto the radial
and tangential directions isolates normal force and torsion, because
those two basis fields are pointwise orthogonal. The learned estimator
is ridge regression over six pooled flow features; it exists as the
seam where a heavier model could be swapped in, and to quantify how
much a trained linear map loses against the analytic inverse.

A baseline slip detector watches the flow history for the signature of
the gel snapping back: a sharp drop in mean displacement magnitude, or
a burst of per-marker dispersion while force is being applied.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass

import numpy as np

from .flowtrack import FlowField
from .gelsim import GelConfig, Wrench, grid_radius

__all__ = [
    "FEATURE_NAMES",
    "Calibration",
    "DegenerateDesignError",
    "ForceEstimate",
    "InsufficientFlowError",
    "RidgeModel",
    "ShapeMismatchError",
    "SlipDetectConfig",
    "SlipEvent",
    "calibration_for",
    "dataset_from_csv",
    "dataset_to_csv",
    "detect_slip",
    "estimate_from_flow",
    "fit_gains",
    "model_from_json",
    "model_to_json",
    "pool_features",
    "predict_ridge",
    "train_ridge",
]

FEATURE_NAMES = (
    "mean_dx",
    "mean_dy",
    "mean_radial",
    "mean_tangential",
    "mean_mag",
    "std_mag",
)


class InsufficientFlowError(RuntimeError):
    """Too few valid flow entries to support an estimate."""


class DegenerateDesignError(RuntimeError):
    """Unregularized training on a rank-deficient feature matrix."""


class ShapeMismatchError(ValueError):
    """Feature vector length does not match the model."""


@dataclass(frozen=True)
class Calibration:
    """Gel deformation gains plus the geometry the inverse needs.

    ``radius_norm`` is the normalization radius of the radial and
    tangential displacement terms; ``centroid`` is the rest-grid center
    those terms are measured from.
    """

    k_s: float
    k_n: float
    k_t: float
    centroid: tuple[float, float]
    radius_norm: float

    def __post_init__(self) -> None:
        if min(self.k_s, self.k_n, self.k_t) <= 0:
            raise ValueError("calibration gains must be positive")
        if self.radius_norm <= 0:
            raise ValueError("radius_norm must be positive")


@dataclass(frozen=True)
class ForceEstimate:
    """A wrench estimate with its confidence context.

    ``quality`` is the fraction of flow entries the estimate was
    computed from; downstream consumers scale trust by it.
    """

    wrench: Wrench
    total: float
    quality: float

    def __post_init__(self) -> None:
        if not 0.0 <= self.quality <= 1.0:
            raise ValueError("quality must lie in [0, 1]")


@dataclass(frozen=True)
class RidgeModel:
    """Linear map from pooled features to wrench components."""

    weights: np.ndarray  # (4, F)
    bias: np.ndarray  # (4,)
    lam: float
    feature_names: tuple[str, ...]


@dataclass(frozen=True)
class SlipDetectConfig:
    """Thresholds for the flow-discontinuity slip detector.

    ``min_drop_px`` is an absolute floor under the relative drop
    trigger: without it, sub-pixel wobble on a nearly relaxed gel
    (running max well under a pixel) fires constantly. The dispersion
    trigger only counts while estimated force exceeds ``force_floor``,
    matching the regime where slip is physically possible.
    """

    drop_ratio: float = 0.3
    min_drop_px: float = 0.5
    disp_thresh: float = 0.5
    force_floor: float = 0.2


@dataclass(frozen=True)
class SlipEvent:
    frame: int
    reason: str  # "drop" or "dispersion"


def calibration_for(config: GelConfig) -> Calibration:
    """Calibration matching a gel config exactly (synthetic ground truth)."""
    cx = 0.5 * (config.margin + (config.image_width - config.margin))
    cy = 0.5 * (config.margin + (config.image_height - config.margin))
    return Calibration(
        k_s=config.k_s,
        k_n=config.k_n,
        k_t=config.k_t,
        centroid=(cx, cy),
        radius_norm=grid_radius(config),
    )


def _valid_parts(flow: FlowField, cal: Calibration):
    valid = flow.valid
    if int(valid.sum()) < 4:
        raise InsufficientFlowError(
            f"need at least 4 valid flow entries, have {int(valid.sum())}"
        )
    d = flow.delta[valid]
    r = flow.base[valid] - np.asarray(cal.centroid)
    return d, r, float(valid.sum()) / len(valid)


def estimate_from_flow(flow: FlowField, cal: Calibration) -> ForceEstimate:
    """Invert the linear deformation model over the valid flow entries.

    Shear comes from the mean displacement. Removing that mean leaves
    the radial and tangential fields, which are pointwise orthogonal,
    so projecting onto each recovers normal force and torsion
    independently; with exact model-generated deltas the recovery is
    exact. Normal force is clamped at zero: the gel cannot be pulled.
    """
    d, r, quality = _valid_parts(flow, cal)
    d_mean = d.mean(axis=0)
    fx = d_mean[0] / cal.k_s
    fy = d_mean[1] / cal.k_s

    centered = d - d_mean
    r_sq = float((r * r).sum())
    if r_sq <= 0:
        raise InsufficientFlowError("all valid markers coincide with the centroid")
    perp = np.column_stack([-r[:, 1], r[:, 0]])
    fn = cal.radius_norm / cal.k_n * float((centered * r).sum()) / r_sq
    tau = cal.radius_norm / cal.k_t * float((centered * perp).sum()) / r_sq

    wrench = Wrench(fx=float(fx), fy=float(fy), fn=max(float(fn), 0.0), tau=float(tau))
    return ForceEstimate(wrench=wrench, total=wrench.total, quality=quality)


def pool_features(flow: FlowField, cal: Calibration) -> np.ndarray:
    """Six pooled flow statistics, the learned estimator's input.

    Mean displacement (2), mean radial and tangential projections of
    the mean-removed field (2), and the mean and standard deviation of
    displacement magnitude (2). Markers sitting on the centroid have no
    defined radial direction and contribute zero projection.
    """
    d, r, _ = _valid_parts(flow, cal)
    d_mean = d.mean(axis=0)
    centered = d - d_mean

    norms = np.hypot(r[:, 0], r[:, 1])
    safe = np.where(norms > 1e-12, norms, 1.0)
    unit = r / safe[:, None]
    unit[norms <= 1e-12] = 0.0
    unit_perp = np.column_stack([-unit[:, 1], unit[:, 0]])

    mags = np.hypot(d[:, 0], d[:, 1])
    return np.array(
        [
            d_mean[0],
            d_mean[1],
            float((centered * unit).sum(axis=1).mean()),
            float((centered * unit_perp).sum(axis=1).mean()),
            float(mags.mean()),
            float(mags.std()),
        ]
    )


def train_ridge(dataset: list[tuple[np.ndarray, Wrench]], lam: float = 1e-6) -> RidgeModel:
    """Closed-form ridge regression, one linear map for all four outputs.

    Features and targets are centered before solving, so the
    regularizer shrinks only the slopes; as lam grows the weights go to
    zero and predictions collapse to the per-component output mean.
    """
    if lam < 0:
        raise ValueError("lam must be nonnegative")
    n_features = len(FEATURE_NAMES)
    if len(dataset) < n_features + 1:
        if lam == 0:
            raise DegenerateDesignError(
                f"{len(dataset)} samples cannot determine {n_features} unregularized weights"
            )
        raise ValueError(f"need at least {n_features + 1} samples, have {len(dataset)}")

    x = np.array([np.asarray(f, dtype=np.float64) for f, _ in dataset])
    if x.shape[1] != n_features:
        raise ShapeMismatchError(f"expected {n_features} features, got {x.shape[1]}")
    if not np.isfinite(x).all():
        raise ValueError("features must be finite")
    y = np.array([[w.fx, w.fy, w.fn, w.tau] for _, w in dataset])

    x_mean = x.mean(axis=0)
    y_mean = y.mean(axis=0)
    xc = x - x_mean
    yc = y - y_mean
    gram = xc.T @ xc
    if lam == 0 and np.linalg.matrix_rank(gram) < n_features:
        raise DegenerateDesignError("feature covariance is singular and lam is 0")
    weights_t = np.linalg.solve(gram + lam * np.eye(n_features), xc.T @ yc)
    weights = weights_t.T
    bias = y_mean - weights @ x_mean
    return RidgeModel(weights=weights, bias=bias, lam=lam, feature_names=FEATURE_NAMES)


def predict_ridge(model: RidgeModel, features: np.ndarray, quality: float = 1.0) -> ForceEstimate:
    """Apply a trained model; quality is carried from the source flow."""
    features = np.asarray(features, dtype=np.float64)
    if features.shape != (model.weights.shape[1],):
        raise ShapeMismatchError(
            f"expected {model.weights.shape[1]} features, got shape {features.shape}"
        )
    out = model.weights @ features + model.bias
    wrench = Wrench(fx=float(out[0]), fy=float(out[1]), fn=max(float(out[2]), 0.0), tau=float(out[3]))
    return ForceEstimate(wrench=wrench, total=wrench.total, quality=quality)


def fit_gains(dataset: list[tuple[np.ndarray, Wrench]], config: GelConfig) -> Calibration:
    """Recover k_s, k_n, k_t from labeled pooled features.

    Each gain is a one-dimensional least-squares slope through the
    origin: mean displacement against shear, and the radial and
    tangential projections against normal force and torsion, scaled by
    the grid geometry factor mean|r|/R that pooling introduces.
    """
    x = np.array([np.asarray(f, dtype=np.float64) for f, _ in dataset])
    y = np.array([[w.fx, w.fy, w.fn, w.tau] for _, w in dataset])

    shear_energy = float((y[:, 0] ** 2 + y[:, 1] ** 2).sum())
    fn_energy = float((y[:, 2] ** 2).sum())
    tau_energy = float((y[:, 3] ** 2).sum())
    if min(shear_energy, fn_energy, tau_energy) <= 0:
        raise ValueError("dataset must excite shear, normal, and torsion components")

    cal = calibration_for(config)
    xs = np.linspace(config.margin, config.image_width - config.margin, config.cols)
    ys = np.linspace(config.margin, config.image_height - config.margin, config.rows)
    gx, gy = np.meshgrid(xs, ys)
    r = np.column_stack([gx.ravel(), gy.ravel()]) - np.asarray(cal.centroid)
    geometry = float(np.hypot(r[:, 0], r[:, 1]).mean()) / cal.radius_norm

    k_s = float((x[:, 0] * y[:, 0] + x[:, 1] * y[:, 1]).sum()) / shear_energy
    k_n = float((x[:, 2] * y[:, 2]).sum()) / fn_energy / geometry
    k_t = float((x[:, 3] * y[:, 3]).sum()) / tau_energy / geometry
    return Calibration(
        k_s=k_s, k_n=k_n, k_t=k_t, centroid=cal.centroid, radius_norm=cal.radius_norm
    )


def detect_slip(
    estimates: list[ForceEstimate], flows: list[FlowField], cfg: SlipDetectConfig
) -> list[SlipEvent]:
    """Flag frames where the flow history shows a slip signature.

    Two triggers, checked per frame against the previous one. Drop: the
    mean displacement magnitude falls by more than ``drop_ratio`` of
    its running maximum (and by at least ``min_drop_px``) in a single
    frame. Dispersion: the spread of per-marker displacements about
    their mean crosses ``disp_thresh`` while estimated total force is
    above ``force_floor``; this trigger is edge-sensitive so a slip
    that stays dispersed reports once, not every frame.
    """
    if len(estimates) != len(flows):
        raise ValueError("estimates and flows must be the same length")
    if len(flows) < 2:
        raise ValueError("need at least 2 history entries")

    def mean_mag(flow: FlowField) -> float:
        d = flow.valid_deltas()
        if len(d) == 0:
            return 0.0
        return float(np.hypot(d[:, 0], d[:, 1]).mean())

    def dispersion(flow: FlowField) -> float:
        d = flow.valid_deltas()
        if len(d) < 2:
            return 0.0
        centered = d - d.mean(axis=0)
        return float(np.hypot(centered[:, 0], centered[:, 1]).std())

    events: list[SlipEvent] = []
    run_max = mean_mag(flows[0])
    prev_mag = run_max
    prev_dispersed = (
        dispersion(flows[0]) > cfg.disp_thresh and estimates[0].total > cfg.force_floor
    )
    for t in range(1, len(flows)):
        mag = mean_mag(flows[t])
        dropped = prev_mag - mag > max(cfg.drop_ratio * run_max, cfg.min_drop_px)
        dispersed = (
            dispersion(flows[t]) > cfg.disp_thresh
            and estimates[t].total > cfg.force_floor
        )
        if dropped:
            events.append(SlipEvent(frame=t, reason="drop"))
        elif dispersed and not prev_dispersed:
            events.append(SlipEvent(frame=t, reason="dispersion"))
        run_max = max(run_max, mag)
        prev_mag = mag
        prev_dispersed = dispersed
    return events


def dataset_to_csv(dataset: list[tuple[np.ndarray, Wrench]], path) -> None:
    """Feature columns then label columns, one training sample per row."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(list(FEATURE_NAMES) + ["fx", "fy", "fn", "tau"])
        for features, wrench in dataset:
            row = [repr(float(v)) for v in features]
            row += [repr(float(v)) for v in (wrench.fx, wrench.fy, wrench.fn, wrench.tau)]
            writer.writerow(row)


def dataset_from_csv(path) -> list[tuple[np.ndarray, Wrench]]:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        expected = list(FEATURE_NAMES) + ["fx", "fy", "fn", "tau"]
        if header != expected:
            raise ValueError(f"bad dataset header: {header}")
        dataset = []
        for row in reader:
            values = [float(v) for v in row]
            features = np.array(values[: len(FEATURE_NAMES)])
            fx, fy, fn, tau = values[len(FEATURE_NAMES) :]
            dataset.append((features, Wrench(fx=fx, fy=fy, fn=fn, tau=tau)))
    return dataset


def model_to_json(model: RidgeModel, path) -> None:
    doc = {
        "weights": [[float(v) for v in row] for row in model.weights],
        "bias": [float(v) for v in model.bias],
        "lambda": model.lam,
        "feature_names": list(model.feature_names),
    }
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=2)
        fh.write("\n")


def model_from_json(path) -> RidgeModel:
    with open(path) as fh:
        doc = json.load(fh)
    weights = np.array(doc["weights"], dtype=np.float64)
    bias = np.array(doc["bias"], dtype=np.float64)
    if weights.shape != (4, len(doc["feature_names"])) or bias.shape != (4,):
        raise ValueError("malformed model document")
    return RidgeModel(
        weights=weights,
        bias=bias,
        lam=float(doc["lambda"]),
        feature_names=tuple(doc["feature_names"]),
    )
