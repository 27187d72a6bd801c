"""Stick-slip friction rig for slip-force measurement and labeled data.

A test object is clamped against the gel with a constant normal force; a
motor pulls it sideways through a slack wire and spring, collapsed into
one tension-only spring. The friction model is quasi-static and
event-based: the object stays put while spring tension is at or below
the static limit mu_static * clamp_normal, and when a motor step pushes
tension past that limit the object jumps forward within the step to the
kinetic equilibrium where tension equals mu_kinetic * clamp_normal.
No inertia means the static limit is an exact analytic oracle for the
measured slip force.

The measurement protocol mirrors a tension-release test: pull to a
commanded tension (or until slip), release fully, and call it a slip if
the object ended up displaced. The rig also drives the gel simulator to
emit marker-image sequences with per-frame ground-truth slip labels for
benchmarking slip detectors.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

from .gelsim import GelConfig, GelImage, GelState, Wrench, apply_wrench, make_gel, render, snap_back, write_pgm

__all__ = [
    "NoSlipBelowCapError",
    "RigConfig",
    "RigState",
    "SequenceLabel",
    "TrialResult",
    "find_slip_force",
    "generate_labeled_sequence",
    "initial_rig_state",
    "run_trial",
    "step_rig",
    "telemetry_to_csv",
    "write_labeled_sequence",
]

# Float-accumulation guard on the static friction limit: motor positions
# are sums of many dt-sized steps, so a tension meant to sit exactly at
# the limit can land a few ulp above it.
STICK_TOL = 1e-9


class NoSlipBelowCapError(RuntimeError):
    """Escalation passed the safety cap without producing a slip."""


@dataclass(frozen=True)
class RigConfig:
    """Rig geometry, friction pair, and measurement protocol parameters.

    ``tension_step`` is the escalation increment between trials;
    ``slip_epsilon`` is the smallest object displacement counted as a
    slip when a trial is judged after release.
    """

    spring_k: float = 1.0  # N/mm
    wire_slack_len: float = 2.0  # mm
    clamp_normal: float = 5.0  # N
    mu_static: float = 0.8
    mu_kinetic: float = 0.6
    motor_speed: float = 5.0  # mm/s
    dt: float = 0.004  # s
    slip_epsilon: float = 0.01  # mm
    tension_step: float = 0.5  # N

    def __post_init__(self) -> None:
        if self.spring_k <= 0:
            raise ValueError("spring_k must be positive")
        if not 0 < self.mu_kinetic <= self.mu_static:
            raise ValueError("need 0 < mu_kinetic <= mu_static")
        if self.clamp_normal <= 0:
            raise ValueError("clamp_normal must be positive")
        if self.dt <= 0 or self.motor_speed <= 0:
            raise ValueError("dt and motor_speed must be positive")
        if self.slip_epsilon <= 0 or self.tension_step <= 0:
            raise ValueError("slip_epsilon and tension_step must be positive")
        if self.wire_slack_len < 0:
            raise ValueError("wire_slack_len must be nonnegative")

    @property
    def tension_quantum(self) -> float:
        """Tension change per motor step; the protocol's resolution floor."""
        return self.spring_k * self.motor_speed * self.dt


@dataclass(frozen=True)
class RigState:
    """One telemetry sample.

    ``regime`` describes what happened during the step that produced
    this state: "slipping" when the object moved, "stuck" otherwise.
    ``tension`` is derived from the positions (wire cannot push, so it
    floors at zero); ``shear_reading`` is the same value, named for the
    sensor that would report it.
    """

    motor_pos: float
    object_pos: float
    time: float
    regime: str
    tension: float
    normal_reading: float

    @property
    def shear_reading(self) -> float:
        return self.tension


@dataclass(frozen=True)
class TrialResult:
    slipped: bool
    commanded_tension: float
    slip_force: float | None
    slip_time: float | None
    object_displacement: float


@dataclass(frozen=True)
class SequenceLabel:
    frame: int
    slip: bool
    tension: float


def _tension(motor_pos: float, object_pos: float, cfg: RigConfig) -> float:
    return cfg.spring_k * max(0.0, motor_pos - object_pos - cfg.wire_slack_len)


def initial_rig_state(cfg: RigConfig) -> RigState:
    return RigState(
        motor_pos=0.0,
        object_pos=0.0,
        time=0.0,
        regime="stuck",
        tension=_tension(0.0, 0.0, cfg),
        normal_reading=cfg.clamp_normal,
    )


def step_rig(state: RigState, motor_velocity: float, cfg: RigConfig) -> RigState:
    """Advance the motor one step and resolve the object quasi-statically."""
    if abs(motor_velocity) > cfg.motor_speed * (1 + 1e-12):
        raise ValueError(f"|motor_velocity| must not exceed {cfg.motor_speed}")
    motor = state.motor_pos + motor_velocity * cfg.dt
    obj = state.object_pos
    tension = _tension(motor, obj, cfg)
    regime = "stuck"
    if tension > cfg.mu_static * cfg.clamp_normal + STICK_TOL:
        # The object advances within the step until the spring relaxes to
        # the kinetic equilibrium; mu_kinetic <= mu_static guarantees the
        # jump is forward.
        obj = motor - cfg.wire_slack_len - cfg.mu_kinetic * cfg.clamp_normal / cfg.spring_k
        tension = _tension(motor, obj, cfg)
        regime = "slipping"
    return RigState(
        motor_pos=motor,
        object_pos=obj,
        time=state.time + cfg.dt,
        regime=regime,
        tension=tension,
        normal_reading=cfg.clamp_normal,
    )


def run_trial(cfg: RigConfig, commanded_tension: float) -> tuple[TrialResult, list[RigState]]:
    """One tension-release measurement from rest.

    Pull until tension reaches the commanded value or the object slips,
    whichever comes first, then release until the wire goes slack. The
    verdict comes from the position-change test after release, exactly as
    a rig with only position sensing would decide it. ``slip_force`` is
    the spring tension at the instant the static limit was exceeded,
    read before the object moved.
    """
    if commanded_tension < 0:
        raise ValueError("commanded_tension must be nonnegative")
    state = initial_rig_state(cfg)
    telemetry = [state]
    slip_force = None
    slip_time = None

    # Accumulated motor steps can land a hair under the commanded value;
    # without the tolerance a commanded tension equal to the static limit
    # would overshoot by one quantum and slip.
    while state.tension < commanded_tension - STICK_TOL and state.regime == "stuck":
        prev = state
        state = step_rig(state, cfg.motor_speed, cfg)
        if state.regime == "slipping" and slip_force is None:
            slip_force = _tension(state.motor_pos, prev.object_pos, cfg)
            slip_time = state.time
        telemetry.append(state)

    while state.tension > 0.0:
        state = step_rig(state, -cfg.motor_speed, cfg)
        telemetry.append(state)

    displacement = state.object_pos
    return (
        TrialResult(
            slipped=abs(displacement) > cfg.slip_epsilon,
            commanded_tension=commanded_tension,
            slip_force=slip_force,
            slip_time=slip_time,
            object_displacement=displacement,
        ),
        telemetry,
    )


def find_slip_force(cfg: RigConfig, max_trials: int = 200) -> float:
    """Escalate commanded tension by tension_step until a trial slips.

    The cap at 10x the static limit (and the trial-count backstop for
    configs whose limit is itself absurd) turns a non-terminating
    protocol into a diagnosable configuration error.
    """
    cap = 10.0 * cfg.mu_static * cfg.clamp_normal
    for trial in range(1, max_trials + 1):
        commanded = trial * cfg.tension_step
        if commanded > cap:
            raise NoSlipBelowCapError(
                f"no slip below safety cap {cap:.3g} N (static limit "
                f"{cfg.mu_static * cfg.clamp_normal:.3g} N never exceeded)"
            )
        result, _ = run_trial(cfg, commanded)
        if result.slipped:
            assert result.slip_force is not None
            return result.slip_force
    raise NoSlipBelowCapError(f"no slip within {max_trials} escalation trials")


def generate_labeled_sequence(
    cfg: RigConfig,
    gel: GelConfig,
    commanded_tension: float,
    frame_stride: int = 8,
) -> tuple[list[GelImage], list[SequenceLabel]]:
    """Run one trial with the rig driving the gel; render labeled frames.

    Spring tension couples to gel shear along +y. On a slip step the gel
    snaps back by 1 - mu_kinetic/mu_static, which lands its shear at the
    kinetic tension, consistent with the rig. Every ``frame_stride``-th
    rig step is rendered; a frame is labeled slip if any step since the
    previous frame was in the slipping regime, so a mid-window slip is
    attributed to the frame where it becomes visible.
    """
    if frame_stride < 1:
        raise ValueError("frame_stride must be at least 1")
    if commanded_tension < 0:
        raise ValueError("commanded_tension must be nonnegative")

    state = initial_rig_state(cfg)
    gel_state = make_gel(gel)
    frames = [render(gel_state)]
    labels = [SequenceLabel(frame=0, slip=False, tension=state.tension)]
    snap_fraction = 1.0 - cfg.mu_kinetic / cfg.mu_static

    def advance(gel_state: GelState, state: RigState) -> GelState:
        if state.regime == "slipping":
            return snap_back(gel_state, snap_fraction)
        return apply_wrench(gel_state, Wrench(fx=0.0, fy=state.tension, fn=0.0, tau=0.0))

    steps_since_frame = 0
    window_slipped = False

    def emit(gel_state: GelState, state: RigState) -> None:
        frames.append(render(gel_state))
        labels.append(
            SequenceLabel(frame=len(frames) - 1, slip=window_slipped, tension=state.tension)
        )

    phases = [
        (cfg.motor_speed, lambda s: s.tension < commanded_tension - STICK_TOL and s.regime == "stuck"),
        (-cfg.motor_speed, lambda s: s.tension > 0.0),
    ]
    for velocity, keep_going in phases:
        while keep_going(state):
            state = step_rig(state, velocity, cfg)
            gel_state = advance(gel_state, state)
            window_slipped = window_slipped or state.regime == "slipping"
            steps_since_frame += 1
            if steps_since_frame == frame_stride:
                emit(gel_state, state)
                steps_since_frame = 0
                window_slipped = False
    if steps_since_frame > 0:
        emit(gel_state, state)
    return frames, labels


def telemetry_to_csv(telemetry: list[RigState], path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["time", "motor_pos", "object_pos", "tension", "normal", "regime"])
        for s in telemetry:
            writer.writerow(
                [
                    repr(s.time),
                    repr(s.motor_pos),
                    repr(s.object_pos),
                    repr(s.tension),
                    repr(s.normal_reading),
                    s.regime,
                ]
            )


def write_labeled_sequence(
    directory, frames: list[GelImage], labels: list[SequenceLabel]
) -> None:
    """PGM frames plus a labels table, the on-disk benchmark format."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    for i, frame in enumerate(frames):
        write_pgm(frame, directory / f"frame_{i:04d}.pgm")
    with open(directory / "labels.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["frame", "slip", "tension"])
        for label in labels:
            writer.writerow([label.frame, int(label.slip), repr(label.tension)])
