"""Figure rendering for the CLI's report outputs.

Every figure maker returns a matplotlib Figure so callers decide the
file format; the Agg backend keeps everything headless.
"""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

from .flowtrack import FlowField
from .gelsim import GelImage
from .session import SessionRecord


def flow_figure(flow: FlowField, image: GelImage | None = None):
    """Quiver of marker displacements; rejected tracks drawn as red dots."""
    fig, ax = plt.subplots(figsize=(6.4, 4.8))
    if image is not None:
        ax.imshow(image.pixels, cmap="gray", vmin=0, vmax=255)
    good = flow.valid
    ax.quiver(
        flow.base[good, 0],
        flow.base[good, 1],
        flow.delta[good, 0],
        flow.delta[good, 1],
        angles="xy",
        scale_units="xy",
        scale=1.0,
        color="tab:blue",
        width=0.004,
    )
    bad = ~good
    if bad.any():
        ax.plot(flow.base[bad, 0], flow.base[bad, 1], "r.", markersize=8)
    ax.set_xlabel("x (px)")
    ax.set_ylabel("y (px)")
    mean_residual = float(flow.residual[good].mean()) if good.any() else float("nan")
    ax.set_title(f"marker flow, mean residual {mean_residual:.3f}")
    if image is None:
        ax.invert_yaxis()
    ax.set_aspect("equal")
    return fig


def slip_bench_figure(rows):
    """Measured slip force against the analytic oracle, one dot per cell.

    ``rows`` are (mu_s, normal, measured, oracle) tuples, as written to
    the slip-bench CSV.
    """
    fig, ax = plt.subplots(figsize=(5.5, 5))
    oracle = np.array([r[3] for r in rows])
    measured = np.array([r[2] for r in rows])
    lim = max(1.0, float(oracle.max()) * 1.1)
    ax.plot([0, lim], [0, lim], "k--", linewidth=1, label="oracle")
    ax.plot(oracle, measured, "o", color="tab:orange", label="measured")
    ax.set_xlabel("static friction limit (N)")
    ax.set_ylabel("measured slip force (N)")
    ax.set_title("slip force vs analytic oracle")
    ax.legend()
    ax.set_aspect("equal")
    return fig


def session_figure(record: SessionRecord):
    """Force, haptic intensity and ball diameter over a session."""
    times = [t.time_s for t in record.ticks]
    fig, axes = plt.subplots(3, 1, figsize=(7, 7), sharex=True)
    axes[0].plot(times, [t.contact_force for t in record.ticks], label="contact", color="tab:gray")
    axes[0].plot(
        times,
        [t.estimated_total if t.estimated_total is not None else np.nan for t in record.ticks],
        label="estimated",
        color="tab:blue",
    )
    axes[0].set_ylabel("force (N)")
    axes[0].legend()
    axes[1].plot(times, [max(t.intensities) for t in record.ticks], color="tab:green")
    axes[1].set_ylabel("intensity")
    axes[1].set_ylim(-0.05, 1.05)
    axes[2].plot(times, [t.ball_diameter for t in record.ticks], color="tab:red")
    axes[2].set_ylabel("diameter (mm)")
    axes[2].set_xlabel("time (s)")
    ratio = record.summary.final_deformation_ratio
    fig.suptitle(f"deformation {ratio:.1%}, peak {record.summary.peak_force:.2f} N")
    return fig


def experiment_figure(naive: SessionRecord, feedback: SessionRecord):
    """Paired A/B sessions: ball diameter and contact force side by side."""
    fig, axes = plt.subplots(2, 1, figsize=(7, 6), sharex=True)
    for record, label, color in ((naive, "naive", "tab:red"), (feedback, "feedback", "tab:blue")):
        times = [t.time_s for t in record.ticks]
        axes[0].plot(times, [t.ball_diameter for t in record.ticks], label=label, color=color)
        axes[1].plot(times, [t.contact_force for t in record.ticks], label=label, color=color)
    axes[0].set_ylabel("ball diameter (mm)")
    axes[0].legend()
    axes[1].set_ylabel("contact force (N)")
    axes[1].set_xlabel("time (s)")
    reduction = 1.0 - (
        feedback.summary.final_deformation_ratio
        / max(naive.summary.final_deformation_ratio, 1e-12)
    )
    fig.suptitle(f"feedback reduces deformation by {reduction:.0%}")
    return fig


def save_figure(fig, path) -> None:
    fig.savefig(path, dpi=120, bbox_inches="tight")
    plt.close(fig)
