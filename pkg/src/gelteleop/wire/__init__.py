"""Wire protocol: frame codec, delivery channels, socket transports."""

from .channels import ChannelConsumer, ChannelProducer, Disconnected, channel
from .codec import (
    CONTROL_FEEDBACK_OFF,
    CONTROL_FEEDBACK_ON,
    CONTROL_START,
    CONTROL_STOP,
    HEADER,
    MAGIC,
    MAX_PAYLOAD,
    PROTOCOL_VERSION,
    BadMagicError,
    BadVersionError,
    ControlMsg,
    CrcMismatchError,
    DecodeError,
    FlowFieldMsg,
    ForceMsg,
    GripCmdMsg,
    HapticCmdMsg,
    Heartbeat,
    MalformedPayloadError,
    OversizeError,
    RigTelemetryMsg,
    SensorFrame,
    TrailingDataError,
    TruncatedError,
    UnknownMessage,
    decode,
    decode_prefix,
    encode,
)
from .transport import RawFrameServer, WebServer, WebSocketClient, connect_raw

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
    "ChannelConsumer",
    "ChannelProducer",
    "ControlMsg",
    "CrcMismatchError",
    "DecodeError",
    "Disconnected",
    "FlowFieldMsg",
    "ForceMsg",
    "GripCmdMsg",
    "HapticCmdMsg",
    "Heartbeat",
    "MalformedPayloadError",
    "OversizeError",
    "RawFrameServer",
    "RigTelemetryMsg",
    "SensorFrame",
    "TrailingDataError",
    "TruncatedError",
    "UnknownMessage",
    "WebServer",
    "WebSocketClient",
    "channel",
    "connect_raw",
    "decode",
    "decode_prefix",
    "encode",
]
