// Browser wiring: websocket transport, canvas rendering, and the three
// input sources (slider, keyboard, gamepad). All decisions about what
// to draw or send live in ConsoleSession; this file only moves bytes
// and pixels.

import { ConsoleSession, ViewModel } from "./session.js";

const canvas = document.getElementById("gel") as HTMLCanvasElement;
const ctx = canvas.getContext("2d")!;
const gaugeFill = document.getElementById("gauge-fill") as HTMLDivElement;
const gaugeLabel = document.getElementById("gauge-label") as HTMLSpanElement;
const forceLabel = document.getElementById("force") as HTMLSpanElement;
const stateLabel = document.getElementById("state") as HTMLSpanElement;
const staleLabel = document.getElementById("stale") as HTMLSpanElement;
const slider = document.getElementById("aperture") as HTMLInputElement;
const apertureLabel = document.getElementById("aperture-label") as HTMLSpanElement;
const feedbackBox = document.getElementById("feedback") as HTMLInputElement;
const conditionOn = document.getElementById("cond-on") as HTMLButtonElement;
const conditionOff = document.getElementById("cond-off") as HTMLButtonElement;
const downloadBtn = document.getElementById("download") as HTMLButtonElement;

const proto = location.protocol === "https:" ? "wss" : "ws";
const ws = new WebSocket(`${proto}://${location.host}/ws`);
ws.binaryType = "arraybuffer";

const session = new ConsoleSession((frame) => {
  if (ws.readyState === WebSocket.OPEN) ws.send(frame);
}, performance.now());

ws.onopen = () => session.sendHeartbeat(performance.now());
ws.onmessage = (event) => session.handleData(new Uint8Array(event.data), performance.now());
ws.onclose = () => session.markClosed();

slider.addEventListener("input", () => {
  session.commandGrip(Number(slider.value), performance.now());
});

// [ and ] nudge the aperture; space releases fully.
document.addEventListener("keydown", (event) => {
  let value = Number(slider.value);
  if (event.key === "[") value -= 0.02;
  else if (event.key === "]") value += 0.02;
  else if (event.key === " ") value = 1.0;
  else return;
  slider.value = String(Math.min(1, Math.max(0, value)));
  session.commandGrip(Number(slider.value), performance.now());
});

feedbackBox.addEventListener("change", () => session.setFeedback(feedbackBox.checked));
conditionOn.addEventListener("click", () => session.sendCondition(true, performance.now()));
conditionOff.addEventListener("click", () => session.sendCondition(false, performance.now()));

downloadBtn.addEventListener("click", () => {
  const blob = new Blob([session.exportLog()], { type: "application/jsonl" });
  const a = document.createElement("a");
  a.href = URL.createObjectURL(blob);
  a.download = "console-log.jsonl";
  a.click();
  URL.revokeObjectURL(a.href);
});

let imageData: ImageData | null = null;

function drawSensor(view: ViewModel): void {
  const frame = view.sensor;
  if (!frame || frame.width === 0) return;
  if (canvas.width !== frame.width || canvas.height !== frame.height) {
    canvas.width = frame.width;
    canvas.height = frame.height;
    imageData = null;
  }
  if (!imageData) imageData = ctx.createImageData(frame.width, frame.height);
  const rgba = imageData.data;
  for (let i = 0; i < frame.pixels.length; i++) {
    const v = frame.pixels[i];
    rgba[4 * i] = v;
    rgba[4 * i + 1] = v;
    rgba[4 * i + 2] = v;
    rgba[4 * i + 3] = 255;
  }
  ctx.putImageData(imageData, 0, 0);
  if (view.flow) {
    ctx.strokeStyle = "#2e8bff";
    ctx.lineWidth = 1.5;
    ctx.beginPath();
    for (const e of view.flow.entries) {
      if (!e.valid) continue;
      ctx.moveTo(e.baseX, e.baseY);
      ctx.lineTo(e.baseX + 4 * e.dx, e.baseY + 4 * e.dy); // arrows scaled x4
    }
    ctx.stroke();
  }
}

function rumble(intensity: number): void {
  // Best-effort: rumble on whatever gamepad exposes an actuator.
  for (const pad of navigator.getGamepads ? navigator.getGamepads() : []) {
    const actuator = (pad as any)?.vibrationActuator;
    if (actuator?.playEffect) {
      actuator.playEffect("dual-rumble", {
        duration: 50,
        strongMagnitude: intensity,
        weakMagnitude: intensity,
      });
    }
  }
}

function pollGamepad(): void {
  const pads = navigator.getGamepads ? navigator.getGamepads() : [];
  for (const pad of pads) {
    if (!pad || pad.axes.length < 2) continue;
    // Right trigger closes the grip; stick Y as fallback.
    const trigger = pad.buttons[7]?.value ?? 0;
    const axis = Math.abs(pad.axes[1]) > 0.15 ? pad.axes[1] : 0;
    if (trigger > 0.02) {
      slider.value = String(1 - trigger);
      session.commandGrip(1 - trigger, performance.now());
    } else if (axis !== 0) {
      const value = Math.min(1, Math.max(0, Number(slider.value) - axis * 0.01));
      slider.value = String(value);
      session.commandGrip(value, performance.now());
    }
    break;
  }
}

function tick(): void {
  const now = performance.now();
  pollGamepad();
  session.poll(now);
  const view = session.view(now);
  drawSensor(view);
  gaugeFill.style.width = `${view.gaugePercent}%`;
  gaugeLabel.textContent = `${view.gaugePercent}%`;
  forceLabel.textContent = view.force
    ? `|F| ${view.force.total.toFixed(2)} N  (fx ${view.force.fx.toFixed(2)}, fy ${view.force.fy.toFixed(2)}, fn ${view.force.fn.toFixed(2)}, tau ${view.force.tau.toFixed(1)})  q ${view.force.qualityPercent}%`
    : "no force data";
  stateLabel.textContent = view.connection;
  stateLabel.className = view.connection === "live" ? "ok" : "bad";
  staleLabel.hidden = !view.stale;
  apertureLabel.textContent = Number(slider.value).toFixed(2);
  if (view.vibration > 0) rumble(view.vibration);
  requestAnimationFrame(tick);
}

requestAnimationFrame(tick);
