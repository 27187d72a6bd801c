"""Full-loop orchestration: gripper squeezes ball, gel sees it, wire carries it.

One pipeline thread owns all simulation state. Wire I/O runs on server
threads that communicate with the pipeline only through channels: grip
and control messages arrive over a bounded fifo, published frames leave
over latest-wins slots. The session recorder is the sole file writer.
"""

from __future__ import annotations

import math
import threading
import time
from dataclasses import dataclass, field, replace

import numpy as np

from .config import BallConfig, ExperimentConfig, PipelineConfig, config_from_dict, config_to_dict
from .flowtrack import MarkerSet, detect_markers, lk_flow
from .forceest import Calibration, InsufficientFlowError, estimate_from_flow
from .gelsim import GelImage, GelState, MarkerOutOfBoundsError, Wrench, apply_wrench, make_gel, render
from .hapticmap import FINGER_COUNT, HapticCommand, make_command
from .session import SessionRecord, SessionRecorder, TickLog
from .wire import (
    CONTROL_FEEDBACK_OFF,
    CONTROL_FEEDBACK_ON,
    CONTROL_START,
    CONTROL_STOP,
    ControlMsg,
    Disconnected,
    ForceMsg,
    GripCmdMsg,
    HapticCmdMsg,
    Heartbeat,
    RawFrameServer,
    SensorFrame,
    WebServer,
    channel,
    encode,
)


@dataclass(frozen=True)
class BallState:
    """A plasticine ball between the jaws: elastic contact, plastic memory.

    Contact is a linear spring on jaw-ball overlap; force above
    ``yield_force`` permanently shrinks the diameter at ``plastic_rate``
    mm per newton-second of excess. A lifted ball held below
    ``hold_min`` falls and stays fallen.
    """

    rest_diameter: float
    current_diameter: float
    stiffness: float
    yield_force: float
    plastic_rate: float
    hold_min: float
    lifted: bool = False
    dropped: bool = False

    def __post_init__(self) -> None:
        if not 0.0 < self.current_diameter <= self.rest_diameter:
            raise ValueError("current diameter must lie in (0, rest_diameter]")
        if self.dropped and not self.lifted:
            raise ValueError("a ball cannot drop before it was lifted")

    @property
    def deformation_ratio(self) -> float:
        return (self.rest_diameter - self.current_diameter) / self.rest_diameter


def ball_from_config(cfg: BallConfig) -> BallState:
    return BallState(
        rest_diameter=cfg.rest_diameter,
        current_diameter=cfg.rest_diameter,
        stiffness=cfg.stiffness,
        yield_force=cfg.yield_force,
        plastic_rate=cfg.plastic_rate,
        hold_min=cfg.hold_min,
    )


def step_ball(ball: BallState, aperture: float, dt: float) -> tuple[BallState, float]:
    """Advance the ball one step under a jaw aperture in millimeters.

    Returns the new state and the contact force. A dropped ball is out
    of the gripper, so it sees no further contact.
    """
    if aperture < 0:
        raise ValueError("aperture cannot be negative")
    if ball.dropped:
        return ball, 0.0
    overlap = max(0.0, ball.current_diameter - aperture)
    force = ball.stiffness * overlap
    diameter = ball.current_diameter
    if force > ball.yield_force:
        shrink = ball.plastic_rate * (force - ball.yield_force) * dt
        diameter = max(0.1 * ball.rest_diameter, diameter - shrink)
    dropped = ball.lifted and force < ball.hold_min
    return replace(ball, current_diameter=diameter, dropped=dropped), force


@dataclass
class PipelineContext:
    """Mutable loop state; owned by exactly one thread."""

    config: PipelineConfig
    gel: GelState
    reference: GelImage
    markers: MarkerSet
    calibration: Calibration
    ball: BallState
    recorder: SessionRecorder
    aperture: float = 1.0
    feedback_enabled: bool = True
    prev_haptic: HapticCommand | None = None
    tick_index: int = 0
    grips_consumed: int = 0
    published_seq: int = 0
    stop_requested: bool = False
    wall_clock: bool = False
    grip_consumer: object | None = None
    publishers: dict | None = None
    pending_events: list[str] = field(default_factory=list)


def make_context(
    config: PipelineConfig,
    *,
    grip_consumer=None,
    publishers=None,
    wall_clock: bool = False,
    record_path=None,
) -> PipelineContext:
    """Build the loop state: rest gel, reference frame, detected markers."""
    gel = make_gel(config.gel)
    reference = render(gel)
    markers = detect_markers(reference, expected_count=config.gel.rows * config.gel.cols)
    return PipelineContext(
        config=config,
        gel=gel,
        reference=reference,
        markers=markers,
        calibration=config.calibration,
        ball=ball_from_config(config.ball),
        recorder=SessionRecorder(config_to_dict(config), path=record_path),
        grip_consumer=grip_consumer,
        publishers=publishers,
        wall_clock=wall_clock,
    )


def _apply_control(ctx: PipelineContext, code: int) -> str:
    if code == CONTROL_FEEDBACK_ON:
        ctx.feedback_enabled = True
        return "control:feedback_on"
    if code == CONTROL_FEEDBACK_OFF:
        ctx.feedback_enabled = False
        return "control:feedback_off"
    if code == CONTROL_STOP:
        ctx.stop_requested = True
        return "control:stop"
    if code == CONTROL_START:
        return "control:start"
    return f"control:unknown({code})"


def _drain_inputs(ctx: PipelineContext, events: list[str]) -> int | None:
    """Consume every queued grip/control message; return earliest grip stamp."""
    enqueue_ns = None
    while True:
        try:
            ok, item = ctx.grip_consumer.try_get()
        except Disconnected:
            return enqueue_ns
        if not ok:
            return enqueue_ns
        msg, ts = item
        if isinstance(msg, GripCmdMsg):
            if not math.isfinite(msg.aperture):
                events.append("grip_rejected")
                continue
            ctx.aperture = min(1.0, max(0.0, msg.aperture))
            ctx.grips_consumed += 1
            enqueue_ns = ts if enqueue_ns is None else min(enqueue_ns, ts)
            events.append("grip")
        elif isinstance(msg, ControlMsg):
            events.append(_apply_control(ctx, msg.code))


def _publish(ctx: PipelineContext, image, estimate, command, now_ns: int) -> None:
    if ctx.publishers is None:
        return
    w = estimate.wrench
    frames = {
        "sensor": SensorFrame(
            width=image.width, height=image.height, pixels=image.pixels.tobytes()
        ),
        "force": ForceMsg(
            fx=w.fx,
            fy=w.fy,
            fn=w.fn,
            tau=w.tau,
            total=estimate.total,
            quality_percent=round(estimate.quality * 100),
        ),
        "haptic": HapticCmdMsg.from_intensities(command.intensities),
    }
    for name, msg in frames.items():
        producer = ctx.publishers.get(name)
        if producer is not None:
            try:
                producer.put((msg, ctx.tick_index, now_ns))
            except Disconnected:
                pass  # sender side is shutting down
    ctx.published_seq = ctx.tick_index


def run_pipeline_tick(ctx: PipelineContext) -> TickLog:
    """One full loop pass: inputs, ball, gel, track, estimate, haptic, publish.

    A stage fault (markers out of range, too few usable tracks) logs
    the tick with the fault event and publishes nothing; the physical
    ball still advanced.
    """
    cfg = ctx.config
    dt = 1.0 / cfg.tick_rate
    start = time.perf_counter()
    events: list[str] = list(ctx.pending_events)
    ctx.pending_events.clear()
    enqueue_ns = None
    if ctx.grip_consumer is not None:
        enqueue_ns = _drain_inputs(ctx, events)

    ctx.tick_index += 1
    now_ns = time.time_ns() if ctx.wall_clock else ctx.tick_index * cfg.tick_period_ns
    was_dropped = ctx.ball.dropped
    ctx.ball, contact = step_ball(ctx.ball, ctx.aperture * cfg.aperture_span_mm, dt)
    if ctx.ball.dropped and not was_dropped:
        events.append("dropped")

    estimated_total = None
    intensities = (0.0,) * FINGER_COUNT
    wrench = Wrench(fx=0.0, fy=cfg.shear_fraction * contact, fn=contact, tau=0.0)
    try:
        gel = apply_wrench(ctx.gel, wrench)
        image = render(gel)
        flow = lk_flow(ctx.reference, image, ctx.markers, cfg.track)
        estimate = estimate_from_flow(flow, ctx.calibration)
    except (MarkerOutOfBoundsError, InsufficientFlowError) as err:
        events.append(f"fault:{err}")
    else:
        ctx.gel = gel
        if ctx.feedback_enabled:
            command = make_command(estimate.total, ctx.prev_haptic, cfg.haptic, now_ns)
        else:
            command = HapticCommand((0.0,) * FINGER_COUNT, source_timestamp=now_ns)
        ctx.prev_haptic = command
        estimated_total = estimate.total
        intensities = command.intensities
        _publish(ctx, image, estimate, command, now_ns)

    if enqueue_ns is not None and ctx.wall_clock:
        latency_s = (time.time_ns() - enqueue_ns) / 1e9
    else:
        latency_s = time.perf_counter() - start
    tick = TickLog(
        time_s=ctx.tick_index * dt,
        aperture=ctx.aperture,
        contact_force=contact,
        estimated_total=estimated_total,
        intensities=intensities,
        ball_diameter=ctx.ball.current_diameter,
        events=tuple(events),
        latency_s=latency_s,
    )
    ctx.recorder.append(tick)
    return tick


def finish_session(ctx: PipelineContext) -> SessionRecord:
    return ctx.recorder.finish(ctx.ball.rest_diameter)


def _felt_intensity(ctx: PipelineContext) -> float:
    return max(ctx.prev_haptic.intensities) if ctx.prev_haptic is not None else 0.0


def run_controller_experiment(
    config: PipelineConfig, mode: str, *, record_path=None
) -> SessionRecord:
    """One scripted grasp: close, lift, hold.

    The naive controller closes at a fixed rate to a fixed fraction of
    the ball's rest diameter and is blind to what the gel reports. The
    feedback controller closes at the same rate but stops as soon as
    the haptic intensity it would feel reaches the target.
    """
    if mode not in ("naive", "feedback"):
        raise ValueError(f"mode must be 'naive' or 'feedback', got {mode!r}")
    ctx = make_context(config, record_path=record_path)
    exp = config.experiment
    span = config.aperture_span_mm
    close_step = exp.close_rate_mm_s / config.tick_rate / span
    start_mm = min(span, config.ball.rest_diameter + exp.start_clearance_mm)
    ctx.aperture = start_mm / span

    if mode == "naive":
        target = exp.naive_aperture_scale * config.ball.rest_diameter / span
        while ctx.aperture > target:
            ctx.aperture = max(target, ctx.aperture - close_step)
            run_pipeline_tick(ctx)
    else:
        while _felt_intensity(ctx) < exp.i_target and ctx.aperture > 0.0:
            ctx.aperture = max(0.0, ctx.aperture - close_step)
            run_pipeline_tick(ctx)

    ctx.ball = replace(ctx.ball, lifted=True)
    ctx.pending_events.append("lift")
    for _ in range(round(exp.hold_s * config.tick_rate)):
        run_pipeline_tick(ctx)
    return finish_session(ctx)


def draw_ball_config(rng: np.random.Generator, exp: ExperimentConfig) -> BallConfig:
    def pick(bounds: tuple[float, float]) -> float:
        return float(rng.uniform(bounds[0], bounds[1]))

    return BallConfig(
        rest_diameter=pick(exp.diameter_range),
        stiffness=pick(exp.stiffness_range),
        yield_force=pick(exp.yield_range),
        plastic_rate=pick(exp.plastic_rate_range),
        hold_min=pick(exp.hold_min_range),
    )


def run_ab_sweep(
    config: PipelineConfig, draws: int = 20, seed: int = 0
) -> list[tuple[SessionRecord, SessionRecord]]:
    """Paired naive/feedback sessions over randomized ball parameters."""
    rng = np.random.default_rng(seed)
    pairs = []
    for _ in range(draws):
        cfg = replace(config, ball=draw_ball_config(rng, config.experiment))
        pairs.append(
            (
                run_controller_experiment(cfg, "naive"),
                run_controller_experiment(cfg, "feedback"),
            )
        )
    return pairs


def replay_session(record: SessionRecord) -> SessionRecord:
    """Re-run a session's recorded inputs through a fresh pipeline.

    Each tick's commanded aperture plus its lift and feedback-toggle
    events are re-applied; with the same config (and so the same seed)
    the simulation-side summary reproduces exactly. Wall-clock latency
    is a measurement, not an input, and is not expected to match.
    """
    config = config_from_dict(record.config)
    ctx = make_context(config)
    for tick in record.ticks:
        if "lift" in tick.events:
            ctx.ball = replace(ctx.ball, lifted=True)
            ctx.pending_events.append("lift")
        for event in tick.events:
            if event == "control:feedback_on":
                ctx.feedback_enabled = True
            elif event == "control:feedback_off":
                ctx.feedback_enabled = False
        ctx.aperture = tick.aperture
        run_pipeline_tick(ctx)
    return finish_session(ctx)


class TeleopDaemon:
    """The serve loop: live pipeline behind raw TCP and websocket endpoints.

    Reader threads push grip/control frames into the fifo; the pipeline
    thread ticks at the configured rate; one sender thread per
    latest-wins channel broadcasts published frames to every connected
    client. ``max_staleness`` tracks, per channel, how many items the
    sender was behind the pipeline at pickup.
    """

    def __init__(self, config: PipelineConfig, *, web_root=None, record_path=None):
        self.config = config
        self._grip_producer, grip_consumer = channel("fifo", capacity=config.grip_capacity)
        self._channels = {name: channel("latest_wins") for name in ("sensor", "force", "haptic")}
        publishers = {name: pair[0] for name, pair in self._channels.items()}
        self.ctx = make_context(
            config,
            grip_consumer=grip_consumer,
            publishers=publishers,
            wall_clock=True,
            record_path=record_path,
        )
        self.raw_server = RawFrameServer(config.host, config.raw_port, on_frame=self._on_frame)
        self.web_server = WebServer(
            config.host, config.ws_port, web_root=web_root, on_frame=self._on_frame
        )
        self.max_staleness = {name: 0 for name in self._channels}
        self._stop = threading.Event()
        self._threads: list[threading.Thread] = []
        self._record: SessionRecord | None = None

    @property
    def raw_port(self) -> int:
        return self.raw_server.port

    @property
    def ws_port(self) -> int:
        return self.web_server.port

    @property
    def grips_consumed(self) -> int:
        return self.ctx.grips_consumed

    def _on_frame(self, client_id, msg, seq, timestamp_ns) -> None:
        if isinstance(msg, (GripCmdMsg, ControlMsg)):
            self._grip_producer.put((msg, timestamp_ns), timeout=5.0)
        elif isinstance(msg, Heartbeat):
            # Echo so a connecting console can confirm the link is live
            # before the first pipeline broadcast reaches it.
            frame = encode(Heartbeat(), seq=self.ctx.published_seq, timestamp_ns=time.time_ns())
            self.raw_server.broadcast(frame)
            self.web_server.broadcast(frame)

    def _pipeline_loop(self) -> None:
        period = 1.0 / self.config.tick_rate
        next_tick = time.perf_counter() + period
        while not self._stop.is_set() and not self.ctx.stop_requested:
            run_pipeline_tick(self.ctx)
            delay = next_tick - time.perf_counter()
            if delay > 0:
                time.sleep(delay)
                next_tick += period
            else:
                next_tick = time.perf_counter() + period  # overran; no catch-up burst

    def _sender_loop(self, name: str, consumer) -> None:
        while not self._stop.is_set():
            try:
                msg, seq, timestamp_ns = consumer.get(timeout=0.2)
            except TimeoutError:
                continue
            except Disconnected:
                return
            lag = self.ctx.published_seq - seq
            if lag > self.max_staleness[name]:
                self.max_staleness[name] = lag
            frame = encode(msg, seq=seq, timestamp_ns=timestamp_ns)
            self.raw_server.broadcast(frame)
            self.web_server.broadcast(frame)

    def start(self) -> None:
        self.raw_server.start()
        self.web_server.start()
        self._threads = [threading.Thread(target=self._pipeline_loop, name="pipeline", daemon=True)]
        for name, (_, consumer) in self._channels.items():
            self._threads.append(
                threading.Thread(
                    target=self._sender_loop, args=(name, consumer), name=f"send-{name}", daemon=True
                )
            )
        for thread in self._threads:
            thread.start()

    def stop(self) -> SessionRecord:
        """Stop threads and servers; close out and return the session."""
        if self._record is not None:
            return self._record
        self._stop.set()
        for thread in self._threads:
            thread.join(timeout=10.0)
        self.raw_server.stop()
        self.web_server.stop()
        self._record = finish_session(self.ctx)
        return self._record
