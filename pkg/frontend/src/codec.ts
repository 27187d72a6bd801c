// Binary frame codec, byte-identical to the server side.
//
// Header (21 bytes, little-endian): magic 0x54 0x54, version (=1),
// msg_type, flags (bit0 = CRC32 of payload appended), seq u32,
// timestamp u64, payload_len u32. Timestamps ride as bigint because
// nanosecond epochs exceed Number.MAX_SAFE_INTEGER.

export const MAGIC0 = 0x54;
export const MAGIC1 = 0x54;
export const PROTOCOL_VERSION = 1;
export const HEADER_SIZE = 21;
export const MAX_PAYLOAD = 16 * 1024 * 1024;
export const FLAG_CRC = 0x01;

export const TYPE_SENSOR_FRAME = 0x01;
export const TYPE_FLOW_FIELD = 0x02;
export const TYPE_FORCE = 0x03;
export const TYPE_HAPTIC_CMD = 0x04;
export const TYPE_GRIP_CMD = 0x05;
export const TYPE_RIG_TELEMETRY = 0x06;
export const TYPE_CONTROL = 0x07;
export const TYPE_HEARTBEAT = 0x08;

export const CONTROL_START = 0x01;
export const CONTROL_STOP = 0x02;
export const CONTROL_FEEDBACK_ON = 0x03;
export const CONTROL_FEEDBACK_OFF = 0x04;

export class DecodeError extends Error {
  constructor(message: string) {
    super(message);
    this.name = new.target.name;
  }
}
export class BadMagicError extends DecodeError {}
export class BadVersionError extends DecodeError {}
export class TruncatedError extends DecodeError {}
export class TrailingDataError extends DecodeError {}
export class CrcMismatchError extends DecodeError {}
export class MalformedPayloadError extends DecodeError {}
export class OversizeError extends Error {
  constructor(message: string) {
    super(message);
    this.name = "OversizeError";
  }
}

export interface FlowEntry {
  baseX: number;
  baseY: number;
  dx: number;
  dy: number;
  valid: boolean;
}

export type Message =
  | { kind: "sensor_frame"; width: number; height: number; format: number; pixels: Uint8Array }
  | { kind: "flow_field"; entries: FlowEntry[] }
  | { kind: "force"; fx: number; fy: number; fn: number; tau: number; total: number; qualityPercent: number }
  | { kind: "haptic_cmd"; intensitiesFixed: number[] }
  | { kind: "grip_cmd"; aperture: number; maxRate: number }
  | { kind: "rig_telemetry"; timeS: number; motorPos: number; objectPos: number; tension: number; normal: number; slipping: number }
  | { kind: "control"; code: number }
  | { kind: "heartbeat" }
  | { kind: "unknown"; msgType: number; payload: Uint8Array };

export interface Frame {
  msg: Message;
  seq: number;
  timestampNs: bigint;
}

// Standard CRC-32 (the zlib/PNG polynomial), table-driven.
const CRC_TABLE = (() => {
  const table = new Uint32Array(256);
  for (let n = 0; n < 256; n++) {
    let c = n;
    for (let k = 0; k < 8; k++) {
      c = c & 1 ? 0xedb88320 ^ (c >>> 1) : c >>> 1;
    }
    table[n] = c >>> 0;
  }
  return table;
})();

export function crc32(data: Uint8Array): number {
  let c = 0xffffffff;
  for (let i = 0; i < data.length; i++) {
    c = CRC_TABLE[(c ^ data[i]) & 0xff] ^ (c >>> 8);
  }
  return (c ^ 0xffffffff) >>> 0;
}

function checkU(value: number, bits: number, name: string): number {
  if (!Number.isInteger(value) || value < 0 || value >= 2 ** bits) {
    throw new RangeError(`${name} must be an unsigned ${bits}-bit integer, got ${value}`);
  }
  return value;
}

function encodePayload(msg: Message): { msgType: number; payload: Uint8Array } {
  switch (msg.kind) {
    case "sensor_frame": {
      checkU(msg.width, 16, "width");
      checkU(msg.height, 16, "height");
      if (msg.format !== 0) throw new RangeError("only format 0 (gray8) is defined");
      if (msg.pixels.length !== msg.width * msg.height) {
        throw new RangeError("pixel buffer does not match width*height");
      }
      const payload = new Uint8Array(5 + msg.pixels.length);
      const view = new DataView(payload.buffer);
      view.setUint16(0, msg.width, true);
      view.setUint16(2, msg.height, true);
      view.setUint8(4, msg.format);
      payload.set(msg.pixels, 5);
      return { msgType: TYPE_SENSOR_FRAME, payload };
    }
    case "flow_field": {
      const n = checkU(msg.entries.length, 16, "entry count");
      const payload = new Uint8Array(2 + n * 17);
      const view = new DataView(payload.buffer);
      view.setUint16(0, n, true);
      msg.entries.forEach((e, i) => {
        const at = 2 + i * 17;
        view.setFloat32(at, e.baseX, true);
        view.setFloat32(at + 4, e.baseY, true);
        view.setFloat32(at + 8, e.dx, true);
        view.setFloat32(at + 12, e.dy, true);
        view.setUint8(at + 16, e.valid ? 1 : 0);
      });
      return { msgType: TYPE_FLOW_FIELD, payload };
    }
    case "force": {
      checkU(msg.qualityPercent, 8, "quality_percent");
      if (msg.qualityPercent > 100) throw new RangeError("quality_percent must be at most 100");
      const payload = new Uint8Array(21);
      const view = new DataView(payload.buffer);
      view.setFloat32(0, msg.fx, true);
      view.setFloat32(4, msg.fy, true);
      view.setFloat32(8, msg.fn, true);
      view.setFloat32(12, msg.tau, true);
      view.setFloat32(16, msg.total, true);
      view.setUint8(20, msg.qualityPercent);
      return { msgType: TYPE_FORCE, payload };
    }
    case "haptic_cmd": {
      if (msg.intensitiesFixed.length !== 5) throw new RangeError("need exactly 5 finger intensities");
      const payload = new Uint8Array(11);
      const view = new DataView(payload.buffer);
      view.setUint8(0, 5);
      msg.intensitiesFixed.forEach((v, i) => {
        view.setUint16(1 + 2 * i, checkU(v, 16, "intensity_fixed"), true);
      });
      return { msgType: TYPE_HAPTIC_CMD, payload };
    }
    case "grip_cmd": {
      const payload = new Uint8Array(8);
      const view = new DataView(payload.buffer);
      view.setFloat32(0, msg.aperture, true);
      view.setFloat32(4, msg.maxRate, true);
      return { msgType: TYPE_GRIP_CMD, payload };
    }
    case "rig_telemetry": {
      const payload = new Uint8Array(24);
      const view = new DataView(payload.buffer);
      const values = [msg.timeS, msg.motorPos, msg.objectPos, msg.tension, msg.normal, msg.slipping];
      values.forEach((v, i) => view.setFloat32(4 * i, v, true));
      return { msgType: TYPE_RIG_TELEMETRY, payload };
    }
    case "control": {
      const payload = new Uint8Array(1);
      payload[0] = checkU(msg.code, 8, "code");
      return { msgType: TYPE_CONTROL, payload };
    }
    case "heartbeat":
      return { msgType: TYPE_HEARTBEAT, payload: new Uint8Array(0) };
    case "unknown":
      checkU(msg.msgType, 8, "msg_type");
      return { msgType: msg.msgType, payload: msg.payload };
  }
}

export function encode(msg: Message, seq: number, timestampNs: bigint, withCrc = false): Uint8Array {
  checkU(seq, 32, "seq");
  if (timestampNs < 0n || timestampNs >= 1n << 64n) {
    throw new RangeError(`timestamp_ns must be an unsigned 64-bit integer, got ${timestampNs}`);
  }
  const { msgType, payload } = encodePayload(msg);
  if (payload.length > MAX_PAYLOAD) {
    throw new OversizeError(`payload of ${payload.length} bytes exceeds ${MAX_PAYLOAD}`);
  }
  const flags = withCrc ? FLAG_CRC : 0;
  const frame = new Uint8Array(HEADER_SIZE + payload.length + (withCrc ? 4 : 0));
  const view = new DataView(frame.buffer);
  view.setUint8(0, MAGIC0);
  view.setUint8(1, MAGIC1);
  view.setUint8(2, PROTOCOL_VERSION);
  view.setUint8(3, msgType);
  view.setUint8(4, flags);
  view.setUint32(5, seq, true);
  view.setBigUint64(9, timestampNs, true);
  view.setUint32(17, payload.length, true);
  frame.set(payload, HEADER_SIZE);
  if (withCrc) {
    view.setUint32(HEADER_SIZE + payload.length, crc32(payload), true);
  }
  return frame;
}

function decodePayload(msgType: number, payload: Uint8Array): Message {
  const view = new DataView(payload.buffer, payload.byteOffset, payload.byteLength);
  switch (msgType) {
    case TYPE_SENSOR_FRAME: {
      if (payload.length < 5) throw new MalformedPayloadError("sensor frame payload too short");
      const width = view.getUint16(0, true);
      const height = view.getUint16(2, true);
      const format = view.getUint8(4);
      if (format !== 0) throw new MalformedPayloadError(`unknown pixel format ${format}`);
      const pixels = payload.slice(5);
      if (pixels.length !== width * height) {
        throw new MalformedPayloadError("pixel count does not match dimensions");
      }
      return { kind: "sensor_frame", width, height, format, pixels };
    }
    case TYPE_FLOW_FIELD: {
      if (payload.length < 2) throw new MalformedPayloadError("flow payload too short");
      const n = view.getUint16(0, true);
      const expected = 2 + n * 17;
      if (payload.length !== expected) {
        throw new MalformedPayloadError(`flow payload length ${payload.length} != ${expected}`);
      }
      const entries: FlowEntry[] = [];
      for (let i = 0; i < n; i++) {
        const at = 2 + i * 17;
        entries.push({
          baseX: view.getFloat32(at, true),
          baseY: view.getFloat32(at + 4, true),
          dx: view.getFloat32(at + 8, true),
          dy: view.getFloat32(at + 12, true),
          valid: view.getUint8(at + 16) !== 0,
        });
      }
      return { kind: "flow_field", entries };
    }
    case TYPE_FORCE: {
      if (payload.length !== 21) throw new MalformedPayloadError("force payload must be 21 bytes");
      return {
        kind: "force",
        fx: view.getFloat32(0, true),
        fy: view.getFloat32(4, true),
        fn: view.getFloat32(8, true),
        tau: view.getFloat32(12, true),
        total: view.getFloat32(16, true),
        qualityPercent: view.getUint8(20),
      };
    }
    case TYPE_HAPTIC_CMD: {
      if (payload.length !== 11) throw new MalformedPayloadError("haptic payload must be 11 bytes");
      const n = view.getUint8(0);
      if (n !== 5) throw new MalformedPayloadError(`haptic command must carry 5 fingers, got ${n}`);
      const intensitiesFixed = [];
      for (let i = 0; i < 5; i++) intensitiesFixed.push(view.getUint16(1 + 2 * i, true));
      return { kind: "haptic_cmd", intensitiesFixed };
    }
    case TYPE_GRIP_CMD: {
      if (payload.length !== 8) throw new MalformedPayloadError("grip payload must be 8 bytes");
      return { kind: "grip_cmd", aperture: view.getFloat32(0, true), maxRate: view.getFloat32(4, true) };
    }
    case TYPE_RIG_TELEMETRY: {
      if (payload.length !== 24) throw new MalformedPayloadError("rig telemetry payload must be 24 bytes");
      return {
        kind: "rig_telemetry",
        timeS: view.getFloat32(0, true),
        motorPos: view.getFloat32(4, true),
        objectPos: view.getFloat32(8, true),
        tension: view.getFloat32(12, true),
        normal: view.getFloat32(16, true),
        slipping: view.getFloat32(20, true),
      };
    }
    case TYPE_CONTROL: {
      if (payload.length !== 1) throw new MalformedPayloadError("control payload must be 1 byte");
      return { kind: "control", code: payload[0] };
    }
    case TYPE_HEARTBEAT: {
      if (payload.length !== 0) throw new MalformedPayloadError("heartbeat carries no payload");
      return { kind: "heartbeat" };
    }
    default:
      return { kind: "unknown", msgType, payload };
  }
}

// One frame off the front of a stream buffer; null = need more bytes.
export function decodePrefix(data: Uint8Array): { frame: Frame; consumed: number } | null {
  if (data.length < HEADER_SIZE) return null;
  const view = new DataView(data.buffer, data.byteOffset, data.byteLength);
  if (view.getUint8(0) !== MAGIC0 || view.getUint8(1) !== MAGIC1) {
    throw new BadMagicError(`bad magic ${view.getUint8(0)},${view.getUint8(1)}`);
  }
  const version = view.getUint8(2);
  if (version !== PROTOCOL_VERSION) throw new BadVersionError(`unsupported version ${version}`);
  const msgType = view.getUint8(3);
  const flags = view.getUint8(4);
  const seq = view.getUint32(5, true);
  const timestampNs = view.getBigUint64(9, true);
  const payloadLen = view.getUint32(17, true);
  if (payloadLen > MAX_PAYLOAD) {
    throw new OversizeError(`declared payload of ${payloadLen} bytes exceeds ${MAX_PAYLOAD}`);
  }
  const total = HEADER_SIZE + payloadLen + (flags & FLAG_CRC ? 4 : 0);
  if (data.length < total) return null;
  const payload = data.slice(HEADER_SIZE, HEADER_SIZE + payloadLen);
  if (flags & FLAG_CRC) {
    const stated = view.getUint32(HEADER_SIZE + payloadLen, true);
    const actual = crc32(payload);
    if (stated !== actual) {
      throw new CrcMismatchError(`crc ${actual.toString(16)} != stated ${stated.toString(16)}`);
    }
  }
  return { frame: { msg: decodePayload(msgType, payload), seq, timestampNs }, consumed: total };
}

// Strict single-frame decode: the buffer must be exactly one frame.
export function decode(data: Uint8Array): Frame {
  const result = decodePrefix(data);
  if (result === null) throw new TruncatedError(`need a complete frame, have ${data.length} bytes`);
  if (result.consumed !== data.length) {
    throw new TrailingDataError(`${data.length - result.consumed} bytes after frame end`);
  }
  return result.frame;
}
