// Operator-console state: latest-wins frame coalescing, grip command
// rate limiting, the haptic gauge, staleness marking, and the local
// tick log. No DOM access here so all of it runs under the test
// runner; main.ts owns rendering and the actual websocket.

import {
  CONTROL_FEEDBACK_OFF,
  CONTROL_FEEDBACK_ON,
  Frame,
  Message,
  decodePrefix,
  encode,
} from "./codec.js";

export const GRIP_RATE_HZ = 60;
export const STALE_AFTER_MS = 500;
export const HEARTBEAT_DEADLINE_MS = 1000;

// Displayed percent is defined as round(fixed / 655.35) so that the
// fixed-point endpoints 0, 32767/32768, 65535 read 0, 50, 100.
export function gaugePercent(intensityFixed: number): number {
  return Math.round(intensityFixed / 655.35);
}

export function clampAperture(value: number): number | null {
  if (!Number.isFinite(value)) return null;
  return Math.min(1, Math.max(0, value));
}

export type ConnectionState =
  | "connecting"
  | "live"
  | "no-heartbeat"
  | "version-mismatch"
  | "closed";

export interface TickRecord {
  time_s: number;
  aperture: number;
  contact_force: number;
  estimated_total: number | null;
  intensities: number[];
  ball_diameter: number;
  events: string[];
  latency_s: number;
}

interface Stamped<M> {
  msg: M;
  seq: number;
  timestampNs: bigint;
  receivedAtMs: number;
}

export interface ViewModel {
  connection: ConnectionState;
  feedbackEnabled: boolean;
  sensor: Extract<Message, { kind: "sensor_frame" }> | null;
  flow: Extract<Message, { kind: "flow_field" }> | null;
  force: Extract<Message, { kind: "force" }> | null;
  gaugePercent: number;
  // Max intensity in [0,1] for vibration, zeroed when feedback is off.
  vibration: number;
  stale: boolean;
  lastSeq: number;
}

export class ConsoleSession {
  feedbackEnabled = true;
  private connection: ConnectionState = "connecting";
  private readonly latest = new Map<string, Stamped<Message>>();
  private buffer = new Uint8Array(0);
  private lastFrameAtMs = -Infinity;
  private heartbeatSeen = false;
  private readonly openedAtMs: number;
  private lastGripSentMs = -Infinity;
  private pendingAperture: number | null = null;
  private lastAperture = 1.0;
  private sendSeq = 0;
  private readonly ticks: TickRecord[] = [];
  private readonly sender: (frame: Uint8Array) => void;

  constructor(send: (frame: Uint8Array) => void, nowMs: number) {
    this.sender = send;
    this.openedAtMs = nowMs;
  }

  // Feed raw websocket bytes. Frames may arrive split or batched, so
  // this keeps a reassembly buffer just like the raw TCP client does.
  handleData(data: Uint8Array, nowMs: number): void {
    const merged = new Uint8Array(this.buffer.length + data.length);
    merged.set(this.buffer, 0);
    merged.set(data, this.buffer.length);
    this.buffer = merged;
    for (;;) {
      let result;
      try {
        result = decodePrefix(this.buffer);
      } catch (err) {
        if (err instanceof Error && err.name === "BadVersionError") {
          this.connection = "version-mismatch";
          this.buffer = new Uint8Array(0);
          return;
        }
        throw err;
      }
      if (result === null) return;
      this.buffer = this.buffer.slice(result.consumed);
      this.acceptFrame(result.frame, nowMs);
    }
  }

  private acceptFrame(frame: Frame, nowMs: number): void {
    this.lastFrameAtMs = nowMs;
    if (frame.msg.kind === "heartbeat") this.heartbeatSeen = true;
    if (this.connection === "connecting" || this.connection === "no-heartbeat") {
      this.connection = "live";
    }
    this.latest.set(frame.msg.kind, {
      msg: frame.msg,
      seq: frame.seq,
      timestampNs: frame.timestampNs,
      receivedAtMs: nowMs,
    });
    if (frame.msg.kind === "haptic_cmd" || frame.msg.kind === "force") {
      this.logTick(frame.timestampNs);
    }
  }

  markClosed(): void {
    if (this.connection !== "version-mismatch") this.connection = "closed";
  }

  // Latest aperture wins; at most one GRIP_CMD leaves per 1/60 s.
  commandGrip(aperture: number, nowMs: number): void {
    const clamped = clampAperture(aperture);
    if (clamped === null) return;
    const interval = 1000 / GRIP_RATE_HZ;
    if (nowMs - this.lastGripSentMs >= interval) {
      this.sendGrip(clamped, nowMs);
    } else {
      this.pendingAperture = clamped;
    }
  }

  // Call regularly (e.g. per animation frame) to flush a held command
  // once the rate window reopens.
  poll(nowMs: number): void {
    if (this.pendingAperture === null) return;
    if (nowMs - this.lastGripSentMs >= 1000 / GRIP_RATE_HZ) {
      this.sendGrip(this.pendingAperture, nowMs);
    }
  }

  private sendGrip(aperture: number, nowMs: number): void {
    this.lastGripSentMs = nowMs;
    this.pendingAperture = null;
    this.lastAperture = aperture;
    const ns = BigInt(Math.round(nowMs)) * 1_000_000n;
    this.sender(encode({ kind: "grip_cmd", aperture, maxRate: 1.0 }, this.nextSeq(), ns));
  }

  // Presentation only: gates the gauge/vibration locally and never
  // touches the outgoing command stream.
  setFeedback(enabled: boolean): void {
    this.feedbackEnabled = enabled;
  }

  // Explicit study-condition switch; this one does talk to the server.
  sendCondition(feedbackOn: boolean, nowMs: number): void {
    const code = feedbackOn ? CONTROL_FEEDBACK_ON : CONTROL_FEEDBACK_OFF;
    const ns = BigInt(Math.round(nowMs)) * 1_000_000n;
    this.sender(encode({ kind: "control", code }, this.nextSeq(), ns));
  }

  sendHeartbeat(nowMs: number): void {
    const ns = BigInt(Math.round(nowMs)) * 1_000_000n;
    this.sender(encode({ kind: "heartbeat" }, this.nextSeq(), ns));
  }

  private nextSeq(): number {
    const seq = this.sendSeq;
    this.sendSeq = (this.sendSeq + 1) >>> 0;
    return seq;
  }

  view(nowMs: number): ViewModel {
    if (
      this.connection === "connecting" &&
      !this.heartbeatSeen &&
      nowMs - this.openedAtMs > HEARTBEAT_DEADLINE_MS
    ) {
      this.connection = "no-heartbeat";
    }
    const sensor = this.latest.get("sensor_frame") as Stamped<
      Extract<Message, { kind: "sensor_frame" }>
    > | undefined;
    const flow = this.latest.get("flow_field") as Stamped<
      Extract<Message, { kind: "flow_field" }>
    > | undefined;
    const force = this.latest.get("force") as Stamped<
      Extract<Message, { kind: "force" }>
    > | undefined;
    const haptic = this.latest.get("haptic_cmd") as Stamped<
      Extract<Message, { kind: "haptic_cmd" }>
    > | undefined;
    const fixed = haptic ? Math.max(...haptic.msg.intensitiesFixed) : 0;
    const shown = this.feedbackEnabled ? fixed : 0;
    return {
      connection: this.connection,
      feedbackEnabled: this.feedbackEnabled,
      sensor: sensor?.msg ?? null,
      flow: flow?.msg ?? null,
      force: force?.msg ?? null,
      gaugePercent: gaugePercent(shown),
      vibration: shown / 65535,
      stale: this.connection === "live" && nowMs - this.lastFrameAtMs > STALE_AFTER_MS,
      lastSeq: sensor?.seq ?? 0,
    };
  }

  private logTick(timestampNs: bigint): void {
    const force = this.latest.get("force") as Stamped<
      Extract<Message, { kind: "force" }>
    > | undefined;
    const haptic = this.latest.get("haptic_cmd") as Stamped<
      Extract<Message, { kind: "haptic_cmd" }>
    > | undefined;
    const timeS = Number(timestampNs) / 1e9;
    const last = this.ticks[this.ticks.length - 1];
    if (last !== undefined && timeS <= last.time_s) return;
    this.ticks.push({
      time_s: timeS,
      aperture: this.lastAperture,
      contact_force: force ? force.msg.total : 0,
      estimated_total: force ? force.msg.total : null,
      intensities: haptic ? haptic.msg.intensitiesFixed.map((v) => v / 65535) : [0, 0, 0, 0, 0],
      ball_diameter: 0,
      events: [],
      latency_s: 0,
    });
  }

  // Line-delimited JSON in the recorder's tick schema.
  exportLog(): string {
    return this.ticks.map((t) => JSON.stringify({ kind: "tick", ...t })).join("\n") + "\n";
  }

  get tickCount(): number {
    return this.ticks.length;
  }
}
