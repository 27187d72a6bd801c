"""Command-line front end.

Exit codes: 0 success, 1 runtime fault (message on stderr), 2 usage
error (argparse). Subcommands that emit tables write CSV; pass the
plotting flags to render matplotlib figures next to them.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
import time
from dataclasses import replace
from pathlib import Path

from . import report
from .config import PipelineConfig, load_config
from .flowtrack import flow_from_csv, flow_to_csv, track_sequence
from .forceest import (
    dataset_from_csv,
    estimate_from_flow,
    fit_gains,
    model_from_json,
    model_to_json,
    pool_features,
    predict_ridge,
    train_ridge,
)
from .gelsim import Wrench, apply_wrench, make_gel, read_pgm, render, write_pgm
from .session import read_session, summaries_match, write_session
from .sliprig import RigConfig, find_slip_force, generate_labeled_sequence, write_labeled_sequence
from .teleopd import TeleopDaemon, replay_session, run_ab_sweep, run_controller_experiment

# Full factorial bench grid; covers weak grip on light contact through
# strong grip on heavy contact.
BENCH_MU_S = (0.3, 0.5, 0.8, 1.2)
BENCH_NORMAL = (1.0, 2.0, 5.0, 10.0)


def _load_pipeline_config(args) -> PipelineConfig:
    cfg = load_config(args.config) if args.config else PipelineConfig()
    overrides = {}
    for field_name, arg_name in (("raw_port", "raw_port"), ("ws_port", "ws_port"), ("host", "host")):
        value = getattr(args, arg_name, None)
        if value is not None:
            overrides[field_name] = value
    return replace(cfg, **overrides) if overrides else cfg


def _floats(text: str) -> list[float]:
    return [float(part) for part in text.split(",") if part.strip()]


def cmd_gen(args) -> int:
    out = Path(args.out)
    cfg = _load_pipeline_config(args)
    gel_cfg = replace(cfg.gel, noise_sigma=args.noise, seed=args.seed)
    if args.mode == "slip":
        rig = RigConfig(mu_static=args.mu_s, mu_kinetic=args.mu_k)
        frames, labels = generate_labeled_sequence(
            rig, gel_cfg, commanded_tension=args.commanded, frame_stride=args.stride
        )
        write_labeled_sequence(out, frames, labels)
        slips = sum(label.slip for label in labels)
        print(f"wrote {len(frames)} frames to {out} ({slips} slip-labeled)")
        return 0
    out.mkdir(parents=True, exist_ok=True)
    state = make_gel(gel_cfg)
    rows = []
    for i in range(args.frames):
        fy = args.max_shear * i / max(1, args.frames - 1)
        state = apply_wrench(state, Wrench(fy=fy))
        write_pgm(render(state), out / f"frame_{i:04d}.pgm")
        rows.append((i, 0.0, fy, 0.0, 0.0))
    with open(out / "forces.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["frame", "fx", "fy", "fn", "tau"])
        writer.writerows(rows)
    print(f"wrote {args.frames} ramp frames to {out}")
    return 0


def cmd_track(args) -> int:
    frame_paths = sorted(Path(args.frames).glob("frame_*.pgm"))
    if len(frame_paths) < 2:
        print(f"error: need at least two frame_*.pgm files in {args.frames}", file=sys.stderr)
        return 1
    frames = [read_pgm(p) for p in frame_paths]
    cfg = _load_pipeline_config(args)
    flows = track_sequence(frames, cfg.track, expected_count=args.expected)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    for i, flow in enumerate(flows, start=1):
        flow_to_csv(flow, out / f"flow_{i:04d}.csv")
        if args.plot:
            report.save_figure(report.flow_figure(flow, frames[i]), out / f"flow_{i:04d}.png")
    print(f"tracked {len(flows)} frames into {out}")
    return 0


def cmd_estimate(args) -> int:
    cfg = _load_pipeline_config(args)
    model = model_from_json(args.model) if args.model else None
    writer = csv.writer(sys.stdout)
    writer.writerow(["source", "fx", "fy", "fn", "tau", "total", "quality"])
    for path in args.flow:
        flow = flow_from_csv(path)
        if model is not None:
            estimate = predict_ridge(
                model, pool_features(flow, cfg.calibration), quality=flow.valid.mean()
            )
        else:
            estimate = estimate_from_flow(flow, cfg.calibration)
        w = estimate.wrench
        writer.writerow(
            [path]
            + [f"{v:.6f}" for v in (w.fx, w.fy, w.fn, w.tau, estimate.total, estimate.quality)]
        )
    return 0


def cmd_calibrate(args) -> int:
    dataset = dataset_from_csv(args.data)
    if args.mode == "ridge":
        model = train_ridge(dataset, lam=args.lam)
        model_to_json(model, args.out)
        print(f"ridge model ({len(dataset)} samples) written to {args.out}")
        return 0
    cfg = _load_pipeline_config(args)
    cal = fit_gains(dataset, cfg.gel)
    payload = {
        "k_s": cal.k_s,
        "k_n": cal.k_n,
        "k_t": cal.k_t,
        "centroid": list(cal.centroid),
        "radius_norm": cal.radius_norm,
    }
    with open(args.out, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=2)
        fh.write("\n")
    print(f"gains k_s={cal.k_s:.4f} k_n={cal.k_n:.4f} k_t={cal.k_t:.4f} written to {args.out}")
    return 0


def cmd_slip_bench(args) -> int:
    rows = []
    for mu_s in args.mu_s:
        for normal in args.normal:
            rig = RigConfig(
                mu_static=mu_s, mu_kinetic=args.mu_k_ratio * mu_s, clamp_normal=normal
            )
            measured = find_slip_force(rig)
            rows.append((mu_s, normal, measured, mu_s * normal))
    handle = open(args.out, "w", newline="") if args.out else sys.stdout
    try:
        writer = csv.writer(handle)
        writer.writerow(["mu_s", "normal", "slip_force", "oracle"])
        for row in rows:
            writer.writerow([repr(float(v)) for v in row])
    finally:
        if args.out:
            handle.close()
    if args.plot:
        report.save_figure(report.slip_bench_figure(rows), args.plot)
    worst = max(abs(m - o) / o for _, _, m, o in rows)
    print(f"{len(rows)} cells, worst relative error {worst:.4f}", file=sys.stderr)
    return 0


def cmd_serve(args) -> int:
    cfg = _load_pipeline_config(args)
    daemon = TeleopDaemon(cfg, web_root=args.web_root, record_path=args.session)
    daemon.start()
    print(f"raw frames on {cfg.host}:{daemon.raw_port}, console on http://{cfg.host}:{daemon.ws_port}")
    try:
        if args.duration > 0:
            time.sleep(args.duration)
        else:
            while not daemon.ctx.stop_requested:
                time.sleep(0.2)
    except KeyboardInterrupt:
        pass
    record = daemon.stop()
    s = record.summary
    print(
        f"session: {len(record.ticks)} ticks, peak {s.peak_force:.2f} N, "
        f"mean latency {s.mean_latency_s * 1e3:.1f} ms"
    )
    return 0


def cmd_experiment(args) -> int:
    cfg = _load_pipeline_config(args)
    out_dir = Path(args.out_dir) if args.out_dir else None
    if out_dir:
        out_dir.mkdir(parents=True, exist_ok=True)

    if args.sweep:
        pairs = run_ab_sweep(cfg, draws=args.sweep, seed=args.seed)
        wins = 0
        for i, (naive, feedback) in enumerate(pairs):
            n, f = naive.summary, feedback.summary
            won = f.final_deformation_ratio < n.final_deformation_ratio
            wins += won
            print(
                f"draw {i:2d}: naive {n.final_deformation_ratio:.4f} "
                f"feedback {f.final_deformation_ratio:.4f} {'<' if won else '>='}"
            )
        print(f"feedback wins {wins}/{len(pairs)}")
        return 0

    modes = ("naive", "feedback") if args.mode == "both" else (args.mode,)
    records = {}
    for mode in modes:
        path = out_dir / f"{mode}.jsonl" if out_dir else None
        records[mode] = run_controller_experiment(cfg, mode, record_path=path)
        s = records[mode].summary
        print(
            f"{mode}: deformation {s.final_deformation_ratio:.4f}, peak {s.peak_force:.2f} N, "
            f"dropped {s.dropped}"
        )
    if len(records) == 2:
        naive, feedback = records["naive"], records["feedback"]
        reduction = 1.0 - feedback.summary.final_deformation_ratio / max(
            naive.summary.final_deformation_ratio, 1e-12
        )
        print(f"deformation reduction {reduction:.1%}")
        if args.plot:
            report.save_figure(report.experiment_figure(naive, feedback), args.plot)
    return 0


def cmd_replay(args) -> int:
    record = read_session(args.session)
    replayed = replay_session(record)
    if args.out:
        write_session(replayed, args.out)
    if summaries_match(record.summary, replayed.summary):
        print("replay matches: summary reproduced bit-exactly")
        return 0
    print("replay MISMATCH:", file=sys.stderr)
    print(f"  recorded: {record.summary}", file=sys.stderr)
    print(f"  replayed: {replayed.summary}", file=sys.stderr)
    return 1


def _add_config_arg(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", help="JSON pipeline config file")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="gelteleop", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen", help="generate synthetic image sequences")
    _add_config_arg(p)
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--mode", choices=("slip", "ramp"), default="slip")
    p.add_argument("--commanded", type=float, default=6.0, help="slip: commanded tension (N)")
    p.add_argument("--mu-s", type=float, default=0.8, help="slip: static friction")
    p.add_argument("--mu-k", type=float, default=0.4, help="slip: kinetic friction")
    p.add_argument("--stride", type=int, default=8, help="slip: rig steps per frame")
    p.add_argument("--frames", type=int, default=30, help="ramp: frame count")
    p.add_argument("--max-shear", type=float, default=2.0, help="ramp: peak shear (N)")
    p.add_argument("--noise", type=float, default=0.0, help="marker jitter sigma (px)")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_gen)

    p = sub.add_parser("track", help="track markers across a frame directory")
    _add_config_arg(p)
    p.add_argument("--frames", required=True, help="directory of frame_*.pgm")
    p.add_argument("--out-dir", required=True)
    p.add_argument("--expected", type=int, default=None, help="expected marker count")
    p.add_argument("--plot", action="store_true", help="also render quiver PNGs")
    p.set_defaults(func=cmd_track)

    p = sub.add_parser("estimate", help="estimate wrenches from flow CSVs")
    _add_config_arg(p)
    p.add_argument("--flow", nargs="+", required=True, help="flow CSV file(s)")
    p.add_argument("--model", help="ridge model JSON (default: closed form)")
    p.set_defaults(func=cmd_estimate)

    p = sub.add_parser("calibrate", help="fit gains or a ridge model from a labeled CSV")
    _add_config_arg(p)
    p.add_argument("--data", required=True, help="pooled-feature dataset CSV")
    p.add_argument("--mode", choices=("ridge", "gains"), default="ridge")
    p.add_argument("--lam", type=float, default=1e-6, help="ridge regularization")
    p.add_argument("--out", required=True, help="output JSON path")
    p.set_defaults(func=cmd_calibrate)

    p = sub.add_parser("slip-bench", help="sweep the rig grid against the analytic oracle")
    p.add_argument("--mu-s", type=_floats, default=list(BENCH_MU_S), help="comma-separated")
    p.add_argument("--normal", type=_floats, default=list(BENCH_NORMAL), help="comma-separated")
    p.add_argument("--mu-k-ratio", type=float, default=0.75, help="kinetic as fraction of static")
    p.add_argument("--out", help="CSV path (default stdout)")
    p.add_argument("--plot", help="scatter PNG path")
    p.set_defaults(func=cmd_slip_bench)

    p = sub.add_parser("serve", help="run the live pipeline with wire endpoints")
    _add_config_arg(p)
    p.add_argument("--host", default=None)
    p.add_argument("--raw-port", type=int, default=None)
    p.add_argument("--ws-port", type=int, default=None)
    p.add_argument("--web-root", default=None, help="static files for the console")
    p.add_argument("--duration", type=float, default=0.0, help="seconds; 0 = until interrupt")
    p.add_argument("--session", default=None, help="session JSONL output path")
    p.set_defaults(func=cmd_serve)

    p = sub.add_parser("experiment", help="scripted feedback-vs-naive grasp sessions")
    _add_config_arg(p)
    p.add_argument("--mode", choices=("naive", "feedback", "both"), default="both")
    p.add_argument("--out-dir", help="write per-mode session JSONL here")
    p.add_argument("--plot", help="paired-curves PNG path (mode both)")
    p.add_argument("--sweep", type=int, default=0, help="run N randomized A/B draws instead")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_experiment)

    p = sub.add_parser("replay", help="re-run a recorded session and verify its summary")
    p.add_argument("--session", required=True, help="session JSONL path")
    p.add_argument("--out", help="write the replayed session here")
    p.set_defaults(func=cmd_replay)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except KeyboardInterrupt:
        return 1
    except (OSError, ValueError, RuntimeError) as err:
        print(f"error: {err}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
