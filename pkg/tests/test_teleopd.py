"""Ball physics, pipeline loop, experiments, replay and the serve daemon."""

import json
import math
import time
from dataclasses import replace

import numpy as np
import pytest

from gelteleop.config import (
    BallConfig,
    ExperimentConfig,
    PipelineConfig,
    config_from_dict,
    config_to_dict,
    load_config,
)
from gelteleop.forceest import calibration_for
from gelteleop.session import (
    SessionRecord,
    SessionSummary,
    TickLog,
    read_session,
    summaries_match,
    write_session,
)
from gelteleop.teleopd import (
    BallState,
    TeleopDaemon,
    ball_from_config,
    make_context,
    finish_session,
    replay_session,
    run_ab_sweep,
    run_controller_experiment,
    run_pipeline_tick,
    step_ball,
)
from gelteleop.wire import (
    CONTROL_FEEDBACK_OFF,
    ControlMsg,
    GripCmdMsg,
    HapticCmdMsg,
    Heartbeat,
    SensorFrame,
    connect_raw,
    decode_prefix,
    encode,
)


def default_ball() -> BallState:
    return ball_from_config(BallConfig())


class TestBall:
    def test_no_contact_above_diameter(self):
        ball = default_ball()
        after, force = step_ball(ball, aperture=45.0, dt=0.04)
        assert force == 0.0
        assert after == ball

    def test_linear_spring(self):
        _, force = step_ball(default_ball(), aperture=39.0, dt=0.04)
        assert force == pytest.approx(2.0)

    def test_plastic_flow_integrates(self):
        # Hold force at yield+1 N for one second by tracking the
        # shrinking diameter with the jaw; flow rule gives 0.5 mm.
        ball = default_ball()
        dt = 0.01
        hold = ball.yield_force + 1.0
        for _ in range(100):
            aperture = ball.current_diameter - hold / ball.stiffness
            ball, force = step_ball(ball, aperture, dt)
            assert force == pytest.approx(hold)
        assert ball.rest_diameter - ball.current_diameter == pytest.approx(0.5, rel=1e-9)

    def test_no_flow_at_or_below_yield(self):
        ball = default_ball()
        aperture = ball.current_diameter - ball.yield_force / ball.stiffness
        after, force = step_ball(ball, aperture, dt=1.0)
        assert force == pytest.approx(ball.yield_force)
        assert after.current_diameter == ball.current_diameter

    def test_diameter_clamped_above_tenth(self):
        ball = replace(default_ball(), stiffness=100.0, plastic_rate=10.0)
        for _ in range(200):
            ball, _ = step_ball(ball, aperture=0.0, dt=0.1)
        assert ball.current_diameter == pytest.approx(0.1 * ball.rest_diameter)

    def test_drop_requires_lift(self):
        ball = default_ball()
        after, _ = step_ball(ball, aperture=45.0, dt=0.04)
        assert not after.dropped
        lifted, _ = step_ball(replace(ball, lifted=True), aperture=45.0, dt=0.04)
        assert lifted.dropped

    def test_dropped_ball_leaves_the_gripper(self):
        ball = replace(default_ball(), lifted=True)
        ball, _ = step_ball(ball, aperture=45.0, dt=0.04)
        assert ball.dropped
        after, force = step_ball(ball, aperture=10.0, dt=0.04)
        assert force == 0.0
        assert after.dropped

    def test_hold_above_minimum_keeps_the_ball(self):
        ball = replace(default_ball(), lifted=True)
        # 1 mm overlap -> 2 N, well above the 0.5 N hold threshold.
        after, _ = step_ball(ball, aperture=39.0, dt=0.04)
        assert not after.dropped

    def test_deformation_never_heals(self):
        rng = np.random.default_rng(7)
        ball = default_ball()
        last = ball.current_diameter
        for _ in range(300):
            ball, _ = step_ball(ball, aperture=float(rng.uniform(20, 45)), dt=0.02)
            assert ball.current_diameter <= last + 1e-15
            last = ball.current_diameter

    def test_invariants_enforced(self):
        with pytest.raises(ValueError):
            BallState(40.0, 41.0, 2.0, 3.0, 0.5, 0.5)
        with pytest.raises(ValueError):
            BallState(40.0, 40.0, 2.0, 3.0, 0.5, 0.5, lifted=False, dropped=True)
        with pytest.raises(ValueError):
            step_ball(default_ball(), aperture=-1.0, dt=0.04)


class TestConfig:
    def test_dict_round_trip(self):
        cfg = PipelineConfig()
        assert config_from_dict(config_to_dict(cfg)) == cfg

    def test_load_with_overrides(self, tmp_path):
        path = tmp_path / "cfg.json"
        path.write_text(json.dumps({"tick_rate": 50.0, "gel": {"rows": 5}}))
        cfg = load_config(path)
        assert cfg.tick_rate == 50.0
        assert cfg.gel.rows == 5
        assert cfg.gel.cols == PipelineConfig().gel.cols

    def test_unknown_keys_rejected(self, tmp_path):
        for payload in ({"tick_rat": 50.0}, {"gel": {"rowz": 5}}):
            path = tmp_path / "bad.json"
            path.write_text(json.dumps(payload))
            with pytest.raises(ValueError, match="unknown config key"):
                load_config(path)

    def test_invalid_values_rejected(self):
        with pytest.raises(ValueError):
            config_from_dict({"tick_rate": 0.0})
        with pytest.raises(ValueError):
            ExperimentConfig(i_target=0.0)
        with pytest.raises(ValueError):
            BallConfig(rest_diameter=-1.0)

    def test_finger_mask_list_coerced(self):
        cfg = config_from_dict({"haptic": {"finger_mask": [True, False, True, True, True]}})
        assert cfg.haptic.finger_mask == (True, False, True, True, True)

    def test_calibration_mirrors_gel(self):
        cfg = PipelineConfig()
        assert cfg.calibration == calibration_for(cfg.gel)

    def test_non_json_file(self, tmp_path):
        path = tmp_path / "broken.json"
        path.write_text("{not json")
        with pytest.raises(ValueError, match="not valid JSON"):
            load_config(path)


class TestSessionIO:
    def make_record(self) -> SessionRecord:
        ticks = tuple(
            TickLog(
                time_s=0.04 * (i + 1),
                aperture=0.5,
                contact_force=float(i),
                estimated_total=float(i) if i else None,
                intensities=(0.1 * i,) * 5,
                ball_diameter=40.0 - i,
                events=("lift",) if i == 2 else (),
                latency_s=0.01,
            )
            for i in range(4)
        )
        summary = SessionSummary(3.0, 3.0 / 40.0, False, 0.01)
        return SessionRecord(config=config_to_dict(PipelineConfig()), ticks=ticks, summary=summary)

    def test_write_read_round_trip(self, tmp_path):
        record = self.make_record()
        path = tmp_path / "session.jsonl"
        write_session(record, path)
        assert read_session(path) == record

    def test_lines_are_independent_json(self, tmp_path):
        path = tmp_path / "session.jsonl"
        write_session(self.make_record(), path)
        kinds = [json.loads(line)["kind"] for line in path.read_text().splitlines()]
        assert kinds == ["config", "tick", "tick", "tick", "tick", "summary"]

    def test_truncated_log_still_summarizes(self, tmp_path):
        path = tmp_path / "session.jsonl"
        write_session(self.make_record(), path)
        lines = path.read_text().splitlines()
        path.write_text("\n".join(lines[:-2]) + "\n")  # drop a tick and the summary
        recovered = read_session(path)
        assert len(recovered.ticks) == 3
        assert recovered.summary.peak_force == 2.0

    def test_times_must_increase(self):
        record = self.make_record()
        with pytest.raises(ValueError, match="strictly increasing"):
            SessionRecord(
                config=record.config,
                ticks=record.ticks + (record.ticks[-1],),
                summary=record.summary,
            )

    def test_summaries_match_ignores_latency(self):
        a = SessionSummary(1.0, 0.1, False, 0.010)
        b = SessionSummary(1.0, 0.1, False, 0.025)
        assert summaries_match(a, b)
        assert not summaries_match(a, SessionSummary(1.0, 0.2, False, 0.010))


class TestPipelineTick:
    def test_open_gripper_publishes_exact_zero(self):
        ctx = make_context(PipelineConfig())
        tick = run_pipeline_tick(ctx)
        assert tick.contact_force == 0.0
        assert tick.estimated_total == 0.0
        assert tick.intensities == (0.0,) * 5

    def test_grasp_estimate_within_five_percent(self):
        cfg = PipelineConfig()
        ctx = make_context(cfg)
        # 1 mm overlap -> 2 N normal, plus the configured shear coupling.
        ctx.aperture = 39.0 / cfg.aperture_span_mm
        for _ in range(2):
            tick = run_pipeline_tick(ctx)
        truth = math.hypot(cfg.shear_fraction * tick.contact_force, tick.contact_force)
        assert tick.estimated_total == pytest.approx(truth, rel=0.05)

    def test_feedback_off_gates_haptics_not_force(self):
        cfg = PipelineConfig()
        from gelteleop.wire import channel

        producers = {name: channel("latest_wins") for name in ("force", "haptic")}
        ctx = make_context(cfg, publishers={k: p for k, (p, _) in producers.items()})
        ctx.aperture = 39.0 / cfg.aperture_span_mm
        ctx.feedback_enabled = False
        tick = run_pipeline_tick(ctx)
        assert tick.intensities == (0.0,) * 5
        _, force_consumer = producers["force"]
        _, haptic_consumer = producers["haptic"]
        force_msg, _, _ = force_consumer.get(timeout=1)
        haptic_msg, _, _ = haptic_consumer.get(timeout=1)
        assert force_msg.total > 1.0
        assert haptic_msg.intensities_fixed == (0,) * 5

    def test_grip_commands_drain_and_clamp(self):
        from gelteleop.wire import channel

        producer, consumer = channel("fifo", capacity=8)
        ctx = make_context(PipelineConfig(), grip_consumer=consumer)
        producer.put((GripCmdMsg(aperture=0.9, max_rate=1.0), 111))
        producer.put((GripCmdMsg(aperture=1.7, max_rate=1.0), 222))
        tick = run_pipeline_tick(ctx)
        assert ctx.grips_consumed == 2
        assert tick.aperture == 1.0  # last command wins, clamped into [0, 1]
        assert "grip" in tick.events

    def test_control_stop_and_feedback_events(self):
        from gelteleop.wire import channel

        producer, consumer = channel("fifo", capacity=8)
        ctx = make_context(PipelineConfig(), grip_consumer=consumer)
        producer.put((ControlMsg(code=CONTROL_FEEDBACK_OFF), 0))
        tick = run_pipeline_tick(ctx)
        assert "control:feedback_off" in tick.events
        assert not ctx.feedback_enabled

    def test_faulted_tick_publishes_nothing(self):
        from gelteleop.wire import channel

        cfg = replace(PipelineConfig(), ball=BallConfig(stiffness=100.0))
        producer_pair = channel("latest_wins")
        ctx = make_context(cfg, publishers={"force": producer_pair[0]})
        ctx.aperture = 0.0  # 40 mm overlap at 100 N/mm: far beyond the gel
        tick = run_pipeline_tick(ctx)
        assert any(e.startswith("fault:") for e in tick.events)
        assert tick.estimated_total is None
        ok, _ = producer_pair[1].try_get()
        assert not ok

    def test_tick_times_strictly_increase(self):
        ctx = make_context(PipelineConfig())
        times = [run_pipeline_tick(ctx).time_s for _ in range(5)]
        assert all(b > a for a, b in zip(times, times[1:]))
        record = finish_session(ctx)
        assert len(record.ticks) == 5

    def test_tick_well_under_period(self):
        cfg = PipelineConfig()
        ctx = make_context(cfg)
        ctx.aperture = 39.0 / cfg.aperture_span_mm
        run_pipeline_tick(ctx)  # warm the caches before timing
        start = time.perf_counter()
        n = 10
        for _ in range(n):
            run_pipeline_tick(ctx)
        mean = (time.perf_counter() - start) / n
        assert mean < 1.0 / cfg.tick_rate


class TestExperiment:
    def test_feedback_beats_naive_under_defaults(self):
        cfg = PipelineConfig()
        naive = run_controller_experiment(cfg, "naive")
        feedback = run_controller_experiment(cfg, "feedback")
        assert naive.summary.final_deformation_ratio > 0.05
        assert (
            feedback.summary.final_deformation_ratio
            <= 0.6 * naive.summary.final_deformation_ratio
        )
        assert not naive.summary.dropped
        assert not feedback.summary.dropped

    def test_naive_deep_squeeze_deforms_without_drop(self):
        cfg = replace(PipelineConfig(), experiment=ExperimentConfig(naive_aperture_scale=0.7))
        record = run_controller_experiment(cfg, "naive")
        assert record.summary.final_deformation_ratio > 0.1
        assert not record.summary.dropped

    def test_timid_grip_drops_the_ball(self):
        # Stopping at the first flicker of feedback leaves the grip
        # below the hold threshold, so the lift sheds the ball.
        cfg = replace(
            PipelineConfig(),
            ball=BallConfig(hold_min=1.5),
            experiment=ExperimentConfig(i_target=0.01),
        )
        record = run_controller_experiment(cfg, "feedback")
        assert record.summary.dropped
        assert any("dropped" in t.events for t in record.ticks)

    def test_diameter_monotone_within_session(self):
        record = run_controller_experiment(PipelineConfig(), "naive")
        diameters = [t.ball_diameter for t in record.ticks]
        assert all(b <= a for a, b in zip(diameters, diameters[1:]))

    def test_bad_mode_rejected(self):
        with pytest.raises(ValueError):
            run_controller_experiment(PipelineConfig(), "ninja")

    def test_session_written_to_disk(self, tmp_path):
        path = tmp_path / "run.jsonl"
        record = run_controller_experiment(PipelineConfig(), "feedback", record_path=path)
        assert read_session(path) == record

    def test_sweep_pairs_share_ball_draw(self):
        pairs = run_ab_sweep(PipelineConfig(), draws=2, seed=5)
        assert len(pairs) == 2
        for naive, feedback in pairs:
            assert naive.config["ball"] == feedback.config["ball"]
            assert (
                feedback.summary.final_deformation_ratio
                < naive.summary.final_deformation_ratio
            )


class TestReplay:
    def test_replay_reproduces_summary_bit_exactly(self):
        record = run_controller_experiment(PipelineConfig(), "feedback")
        replayed = replay_session(record)
        assert summaries_match(record.summary, replayed.summary)
        assert replayed.summary.peak_force == record.summary.peak_force
        assert (
            replayed.summary.final_deformation_ratio
            == record.summary.final_deformation_ratio
        )

    def test_replay_survives_disk_round_trip(self, tmp_path):
        path = tmp_path / "session.jsonl"
        record = run_controller_experiment(PipelineConfig(), "naive", record_path=path)
        replayed = replay_session(read_session(path))
        assert summaries_match(record.summary, replayed.summary)


class TestDaemon:
    def test_live_loop_over_raw_socket(self):
        cfg = replace(PipelineConfig(), raw_port=0, ws_port=0)
        daemon = TeleopDaemon(cfg)
        daemon.start()
        try:
            sock = connect_raw(cfg.host, daemon.raw_port)
            sock.settimeout(5.0)
            sock.sendall(encode(Heartbeat(), seq=0, timestamp_ns=time.time_ns()))
            sock.sendall(
                encode(GripCmdMsg(aperture=0.55, max_rate=1.0), seq=1, timestamp_ns=time.time_ns())
            )
            deadline = time.time() + 5.0
            buffer = b""
            seen = set()
            while time.time() < deadline and not {"sensor", "haptic", "heartbeat"} <= seen:
                buffer += sock.recv(65536)
                while (got := decode_prefix(buffer)) is not None:
                    (msg, _, _), used = got
                    buffer = buffer[used:]
                    if isinstance(msg, SensorFrame):
                        assert msg.width == cfg.gel.image_width
                        seen.add("sensor")
                    elif isinstance(msg, HapticCmdMsg):
                        seen.add("haptic")
                    elif isinstance(msg, Heartbeat):
                        seen.add("heartbeat")  # echo of the one we sent
            assert {"sensor", "haptic", "heartbeat"} <= seen
            while daemon.grips_consumed < 1 and time.time() < deadline:
                time.sleep(0.01)  # command is queued; let a tick drain it
            sock.close()
        finally:
            record = daemon.stop()
        assert daemon.grips_consumed == 1
        assert any(t.aperture == pytest.approx(0.55, abs=1e-6) for t in record.ticks)
        assert max(daemon.max_staleness.values()) <= 1

    def test_feedback_toggle_over_the_wire(self):
        cfg = replace(PipelineConfig(), raw_port=0, ws_port=0)
        daemon = TeleopDaemon(cfg)
        daemon.start()
        try:
            sock = connect_raw(cfg.host, daemon.raw_port)
            sock.sendall(encode(ControlMsg(code=CONTROL_FEEDBACK_OFF), seq=1, timestamp_ns=0))
            deadline = time.time() + 5.0
            while daemon.ctx.feedback_enabled and time.time() < deadline:
                time.sleep(0.02)
            assert not daemon.ctx.feedback_enabled
            sock.close()
        finally:
            record = daemon.stop()
        assert any("control:feedback_off" in t.events for t in record.ticks)
