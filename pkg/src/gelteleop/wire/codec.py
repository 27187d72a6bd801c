"""Binary frame codec.

Every frame is a fixed 21-byte little-endian header followed by a
type-specific payload and, when flagged, a CRC32 of the payload. The
layout is deliberately dumb: fixed-width fields, no varints, no
alignment tricks, so a byte-for-byte identical decoder is a few dozen
lines in any language.

Header: magic 0x54 0x54, version (=1), msg_type, flags (bit0 = CRC32
present), seq u32, timestamp_ns u64, payload_len u32.

The decoder is total: arbitrary input bytes produce either a decoded
message or a DecodeError subclass, never a crash, hang, or an
allocation larger than the payload cap.
"""

from __future__ import annotations

import struct
import zlib
from dataclasses import dataclass, field

__all__ = [
    "CONTROL_FEEDBACK_OFF",
    "CONTROL_FEEDBACK_ON",
    "CONTROL_START",
    "CONTROL_STOP",
    "HEADER",
    "MAGIC",
    "MAX_PAYLOAD",
    "PROTOCOL_VERSION",
    "BadMagicError",
    "BadVersionError",
    "ControlMsg",
    "CrcMismatchError",
    "DecodeError",
    "FlowFieldMsg",
    "ForceMsg",
    "GripCmdMsg",
    "HapticCmdMsg",
    "Heartbeat",
    "MalformedPayloadError",
    "OversizeError",
    "RigTelemetryMsg",
    "SensorFrame",
    "TrailingDataError",
    "TruncatedError",
    "UnknownMessage",
    "decode",
    "decode_prefix",
    "encode",
]

MAGIC = b"\x54\x54"
PROTOCOL_VERSION = 1
HEADER = struct.Struct("<2sBBBIQI")  # magic, version, msg_type, flags, seq, ts, len
MAX_PAYLOAD = 16 * 1024 * 1024
FLAG_CRC = 0x01

TYPE_SENSOR_FRAME = 0x01
TYPE_FLOW_FIELD = 0x02
TYPE_FORCE = 0x03
TYPE_HAPTIC_CMD = 0x04
TYPE_GRIP_CMD = 0x05
TYPE_RIG_TELEMETRY = 0x06
TYPE_CONTROL = 0x07
TYPE_HEARTBEAT = 0x08

CONTROL_START = 0x01
CONTROL_STOP = 0x02
CONTROL_FEEDBACK_ON = 0x03
CONTROL_FEEDBACK_OFF = 0x04

_SENSOR_HEAD = struct.Struct("<HHB")
_FLOW_COUNT = struct.Struct("<H")
_FLOW_ENTRY = struct.Struct("<ffffB")
_FORCE = struct.Struct("<fffffB")
_HAPTIC_HEAD = struct.Struct("<B")
_HAPTIC_FINGER = struct.Struct("<H")
_GRIP = struct.Struct("<ff")
_RIG = struct.Struct("<6f")
_CONTROL = struct.Struct("<B")
_CRC = struct.Struct("<I")


class DecodeError(ValueError):
    """Base for everything the decoder can reject."""


class BadMagicError(DecodeError):
    pass


class BadVersionError(DecodeError):
    pass


class TruncatedError(DecodeError):
    pass


class TrailingDataError(DecodeError):
    """Bytes left over after a complete frame in strict one-frame decode."""


class CrcMismatchError(DecodeError):
    pass


class OversizeError(ValueError):
    """Payload larger than the 16 MiB cap, on either codec direction."""


class MalformedPayloadError(DecodeError):
    """Payload bytes inconsistent with the message type's layout."""


@dataclass(frozen=True)
class SensorFrame:
    width: int
    height: int
    pixels: bytes
    format: int = 0  # 0 = gray8, the only defined format


@dataclass(frozen=True)
class FlowFieldMsg:
    """Entries are (base_x, base_y, dx, dy, valid), all f32 on the wire."""

    entries: tuple[tuple[float, float, float, float, bool], ...]


@dataclass(frozen=True)
class ForceMsg:
    fx: float
    fy: float
    fn: float
    tau: float
    total: float
    quality_percent: int


@dataclass(frozen=True)
class HapticCmdMsg:
    """Fixed-point intensities: round(intensity * 65535), one per finger.

    Integers on the wire keep the protocol free of float-rounding
    disagreements between languages.
    """

    intensities_fixed: tuple[int, ...]

    @classmethod
    def from_intensities(cls, intensities) -> "HapticCmdMsg":
        return cls(intensities_fixed=tuple(round(v * 65535) for v in intensities))

    @property
    def intensities(self) -> tuple[float, ...]:
        return tuple(v / 65535 for v in self.intensities_fixed)


@dataclass(frozen=True)
class GripCmdMsg:
    aperture: float  # normalized [0, 1]
    max_rate: float  # aperture units per second


@dataclass(frozen=True)
class RigTelemetryMsg:
    time_s: float
    motor_pos: float
    object_pos: float
    tension: float
    normal: float
    slipping: float  # 0.0 or 1.0; f32 keeps the layout uniform


@dataclass(frozen=True)
class ControlMsg:
    code: int


@dataclass(frozen=True)
class Heartbeat:
    pass


@dataclass(frozen=True)
class UnknownMessage:
    """A frame whose type this build does not know; payload preserved.

    Exists so intermediaries can skip or forward messages from newer
    peers using payload_len alone.
    """

    msg_type: int
    payload: bytes = field(repr=False)


Message = (
    SensorFrame
    | FlowFieldMsg
    | ForceMsg
    | HapticCmdMsg
    | GripCmdMsg
    | RigTelemetryMsg
    | ControlMsg
    | Heartbeat
    | UnknownMessage
)


def _check_u(value: int, bits: int, name: str) -> int:
    if not isinstance(value, int) or not 0 <= value < (1 << bits):
        raise ValueError(f"{name} must be an unsigned {bits}-bit integer, got {value!r}")
    return value


def _encode_payload(msg: Message) -> tuple[int, bytes]:
    if isinstance(msg, SensorFrame):
        _check_u(msg.width, 16, "width")
        _check_u(msg.height, 16, "height")
        if msg.format != 0:
            raise ValueError("only format 0 (gray8) is defined")
        if len(msg.pixels) != msg.width * msg.height:
            raise ValueError("pixel buffer does not match width*height")
        return TYPE_SENSOR_FRAME, _SENSOR_HEAD.pack(msg.width, msg.height, msg.format) + bytes(msg.pixels)
    if isinstance(msg, FlowFieldMsg):
        n = _check_u(len(msg.entries), 16, "entry count")
        parts = [_FLOW_COUNT.pack(n)]
        for bx, by, dx, dy, valid in msg.entries:
            parts.append(_FLOW_ENTRY.pack(bx, by, dx, dy, 1 if valid else 0))
        return TYPE_FLOW_FIELD, b"".join(parts)
    if isinstance(msg, ForceMsg):
        _check_u(msg.quality_percent, 8, "quality_percent")
        if msg.quality_percent > 100:
            raise ValueError("quality_percent must be at most 100")
        return TYPE_FORCE, _FORCE.pack(
            msg.fx, msg.fy, msg.fn, msg.tau, msg.total, msg.quality_percent
        )
    if isinstance(msg, HapticCmdMsg):
        if len(msg.intensities_fixed) != 5:
            raise ValueError("need exactly 5 finger intensities")
        parts = [_HAPTIC_HEAD.pack(5)]
        for v in msg.intensities_fixed:
            parts.append(_HAPTIC_FINGER.pack(_check_u(v, 16, "intensity_fixed")))
        return TYPE_HAPTIC_CMD, b"".join(parts)
    if isinstance(msg, GripCmdMsg):
        return TYPE_GRIP_CMD, _GRIP.pack(msg.aperture, msg.max_rate)
    if isinstance(msg, RigTelemetryMsg):
        return TYPE_RIG_TELEMETRY, _RIG.pack(
            msg.time_s, msg.motor_pos, msg.object_pos, msg.tension, msg.normal, msg.slipping
        )
    if isinstance(msg, ControlMsg):
        return TYPE_CONTROL, _CONTROL.pack(_check_u(msg.code, 8, "code"))
    if isinstance(msg, Heartbeat):
        return TYPE_HEARTBEAT, b""
    if isinstance(msg, UnknownMessage):
        _check_u(msg.msg_type, 8, "msg_type")
        return msg.msg_type, bytes(msg.payload)
    raise TypeError(f"not a wire message: {type(msg).__name__}")


def encode(msg: Message, seq: int, timestamp_ns: int, with_crc: bool = False) -> bytes:
    """Serialize one frame; byte-exact and deterministic."""
    _check_u(seq, 32, "seq")
    _check_u(timestamp_ns, 64, "timestamp_ns")
    msg_type, payload = _encode_payload(msg)
    if len(payload) > MAX_PAYLOAD:
        raise OversizeError(f"payload of {len(payload)} bytes exceeds {MAX_PAYLOAD}")
    flags = FLAG_CRC if with_crc else 0
    header = HEADER.pack(MAGIC, PROTOCOL_VERSION, msg_type, flags, seq, timestamp_ns, len(payload))
    if with_crc:
        return header + payload + _CRC.pack(zlib.crc32(payload))
    return header + payload


def _decode_payload(msg_type: int, payload: bytes) -> Message:
    try:
        if msg_type == TYPE_SENSOR_FRAME:
            if len(payload) < _SENSOR_HEAD.size:
                raise MalformedPayloadError("sensor frame payload too short")
            width, height, fmt = _SENSOR_HEAD.unpack_from(payload)
            if fmt != 0:
                raise MalformedPayloadError(f"unknown pixel format {fmt}")
            pixels = payload[_SENSOR_HEAD.size :]
            if len(pixels) != width * height:
                raise MalformedPayloadError("pixel count does not match dimensions")
            return SensorFrame(width=width, height=height, pixels=pixels)
        if msg_type == TYPE_FLOW_FIELD:
            if len(payload) < _FLOW_COUNT.size:
                raise MalformedPayloadError("flow payload too short")
            (n,) = _FLOW_COUNT.unpack_from(payload)
            expected = _FLOW_COUNT.size + n * _FLOW_ENTRY.size
            if len(payload) != expected:
                raise MalformedPayloadError(f"flow payload length {len(payload)} != {expected}")
            entries = []
            for i in range(n):
                bx, by, dx, dy, valid = _FLOW_ENTRY.unpack_from(
                    payload, _FLOW_COUNT.size + i * _FLOW_ENTRY.size
                )
                entries.append((bx, by, dx, dy, valid != 0))
            return FlowFieldMsg(entries=tuple(entries))
        if msg_type == TYPE_FORCE:
            if len(payload) != _FORCE.size:
                raise MalformedPayloadError("force payload must be 21 bytes")
            fx, fy, fn, tau, total, quality = _FORCE.unpack(payload)
            return ForceMsg(fx=fx, fy=fy, fn=fn, tau=tau, total=total, quality_percent=quality)
        if msg_type == TYPE_HAPTIC_CMD:
            if len(payload) != _HAPTIC_HEAD.size + 5 * _HAPTIC_FINGER.size:
                raise MalformedPayloadError("haptic payload must be 11 bytes")
            (n,) = _HAPTIC_HEAD.unpack_from(payload)
            if n != 5:
                raise MalformedPayloadError(f"haptic command must carry 5 fingers, got {n}")
            fixed = tuple(
                _HAPTIC_FINGER.unpack_from(payload, _HAPTIC_HEAD.size + 2 * i)[0] for i in range(5)
            )
            return HapticCmdMsg(intensities_fixed=fixed)
        if msg_type == TYPE_GRIP_CMD:
            if len(payload) != _GRIP.size:
                raise MalformedPayloadError("grip payload must be 8 bytes")
            aperture, max_rate = _GRIP.unpack(payload)
            return GripCmdMsg(aperture=aperture, max_rate=max_rate)
        if msg_type == TYPE_RIG_TELEMETRY:
            if len(payload) != _RIG.size:
                raise MalformedPayloadError("rig telemetry payload must be 24 bytes")
            return RigTelemetryMsg(*_RIG.unpack(payload))
        if msg_type == TYPE_CONTROL:
            if len(payload) != _CONTROL.size:
                raise MalformedPayloadError("control payload must be 1 byte")
            return ControlMsg(code=payload[0])
        if msg_type == TYPE_HEARTBEAT:
            if payload:
                raise MalformedPayloadError("heartbeat carries no payload")
            return Heartbeat()
    except struct.error as exc:  # unpack beyond buffer: length checks should prevent this
        raise MalformedPayloadError(str(exc)) from exc
    return UnknownMessage(msg_type=msg_type, payload=payload)


def decode_prefix(data: bytes) -> tuple[tuple[Message, int, int], int] | None:
    """Decode one frame off the front of a stream buffer.

    Returns ((message, seq, timestamp_ns), bytes_consumed), or None when
    the buffer holds only part of a frame and more bytes are needed.
    Malformed bytes raise; the caller decides whether to drop the
    connection or resynchronize.
    """
    if len(data) < HEADER.size:
        return None
    magic, version, msg_type, flags, seq, timestamp_ns, payload_len = HEADER.unpack_from(data)
    if magic != MAGIC:
        raise BadMagicError(f"bad magic {magic!r}")
    if version != PROTOCOL_VERSION:
        raise BadVersionError(f"unsupported version {version}")
    if payload_len > MAX_PAYLOAD:
        raise OversizeError(f"declared payload of {payload_len} bytes exceeds {MAX_PAYLOAD}")
    total = HEADER.size + payload_len + (_CRC.size if flags & FLAG_CRC else 0)
    if len(data) < total:
        return None
    payload = bytes(data[HEADER.size : HEADER.size + payload_len])
    if flags & FLAG_CRC:
        (stated,) = _CRC.unpack_from(data, HEADER.size + payload_len)
        actual = zlib.crc32(payload)
        if stated != actual:
            raise CrcMismatchError(f"crc {actual:#010x} != stated {stated:#010x}")
    return (_decode_payload(msg_type, payload), seq, timestamp_ns), total


def decode(data: bytes) -> tuple[Message, int, int]:
    """Strict single-frame decode: the buffer must be exactly one frame."""
    result = decode_prefix(data)
    if result is None:
        raise TruncatedError(f"need a complete frame, have {len(data)} bytes")
    decoded, consumed = result
    if consumed != len(data):
        raise TrailingDataError(f"{len(data) - consumed} bytes after frame end")
    return decoded
