"""Regenerate the codec parity fixtures from the server-side codec.

Run from the repository root with the package installed:

    python3 frontend/scripts/make_fixtures.py

Writes frontend/tests/fixtures/frames.json. Each record carries the
frame bytes as hex plus the decoded fields, so the TypeScript codec can
be checked for byte-identical round trips in both directions.
"""

import json
from pathlib import Path

from gelteleop.wire import (
    ControlMsg,
    FlowFieldMsg,
    ForceMsg,
    GripCmdMsg,
    HapticCmdMsg,
    Heartbeat,
    RigTelemetryMsg,
    SensorFrame,
    UnknownMessage,
    encode,
)

OUT = Path(__file__).resolve().parent.parent / "tests" / "fixtures" / "frames.json"


def field_dict(msg):
    if isinstance(msg, SensorFrame):
        return {"width": msg.width, "height": msg.height, "format": msg.format,
                "pixels_hex": msg.pixels.hex()}
    if isinstance(msg, FlowFieldMsg):
        return {"entries": [list(e) for e in msg.entries]}
    if isinstance(msg, ForceMsg):
        return {"fx": msg.fx, "fy": msg.fy, "fn": msg.fn, "tau": msg.tau,
                "total": msg.total, "quality_percent": msg.quality_percent}
    if isinstance(msg, HapticCmdMsg):
        return {"intensities_fixed": list(msg.intensities_fixed)}
    if isinstance(msg, GripCmdMsg):
        return {"aperture": msg.aperture, "max_rate": msg.max_rate}
    if isinstance(msg, RigTelemetryMsg):
        return {"time_s": msg.time_s, "motor_pos": msg.motor_pos,
                "object_pos": msg.object_pos, "tension": msg.tension,
                "normal": msg.normal, "slipping": msg.slipping}
    if isinstance(msg, ControlMsg):
        return {"code": msg.code}
    if isinstance(msg, Heartbeat):
        return {}
    if isinstance(msg, UnknownMessage):
        return {"payload_hex": msg.payload.hex()}
    raise TypeError(type(msg).__name__)


def main():
    cases = [
        ("heartbeat_golden", Heartbeat(), 0, 0, False),
        ("heartbeat_stamped", Heartbeat(), 7, 123456789, True),
        ("sensor_3x2", SensorFrame(width=3, height=2, pixels=bytes(range(6))), 42, 10**15, False),
        ("sensor_crc", SensorFrame(width=2, height=2, pixels=b"\x00\x7f\x80\xff"), 43, 10**15 + 1, True),
        ("sensor_empty", SensorFrame(width=0, height=0, pixels=b""), 44, 0, False),
        ("flow_two_entries",
         FlowFieldMsg(entries=((30.0, 30.0, 0.5, -0.25, True), (62.5, 30.0, 0.0, 0.0, False))),
         1, 2, False),
        ("flow_empty", FlowFieldMsg(entries=()), 2, 3, True),
        ("force_typical",
         ForceMsg(fx=0.125, fy=-0.5, fn=1.5, tau=-12.25, total=1.625, quality_percent=98),
         9, 4 * 10**7, False),
        ("force_crc",
         ForceMsg(fx=0.0, fy=0.0, fn=0.0, tau=0.0, total=0.0, quality_percent=0),
         10, 0, True),
        ("haptic_zero", HapticCmdMsg(intensities_fixed=(0, 0, 0, 0, 0)), 11, 5, False),
        ("haptic_half", HapticCmdMsg.from_intensities([0.5] * 5), 12, 6, False),
        ("haptic_full", HapticCmdMsg(intensities_fixed=(65535,) * 5), 13, 7, True),
        ("grip_half", GripCmdMsg(aperture=0.5, max_rate=1.0), 100, 1_700_000_000_000_000_000, False),
        ("grip_crc", GripCmdMsg(aperture=0.25, max_rate=2.5), 101, 2**63, True),
        ("rig_slipping",
         RigTelemetryMsg(time_s=1.5, motor_pos=7.5, object_pos=6.25, tension=4.0,
                         normal=5.0, slipping=1.0),
         55, 8, False),
        ("control_start", ControlMsg(code=1), 0, 0, False),
        ("control_feedback_off", ControlMsg(code=4), 3, 9, True),
        ("unknown_passthrough", UnknownMessage(msg_type=0x7f, payload=b"\x01\x02\x03"), 77, 88, False),
        ("seq_ts_extremes", ControlMsg(code=2), 2**32 - 1, 2**64 - 1, False),
    ]
    records = []
    for name, msg, seq, ts, with_crc in cases:
        frame = encode(msg, seq=seq, timestamp_ns=ts, with_crc=with_crc)
        records.append({
            "name": name,
            "type": type(msg).__name__,
            "seq": seq,
            "timestamp_ns": str(ts),  # u64 exceeds JSON-safe integers
            "with_crc": with_crc,
            "frame_hex": frame.hex(),
            "fields": field_dict(msg),
        })
    OUT.parent.mkdir(parents=True, exist_ok=True)
    OUT.write_text(json.dumps(records, indent=1) + "\n")
    print(f"{len(records)} fixtures written to {OUT}")


if __name__ == "__main__":
    main()
