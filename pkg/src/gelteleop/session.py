"""Session records: per-tick logs, summaries and line-delimited JSON.

A session file is append-only JSONL: one ``config`` line, one ``tick``
line per pipeline tick, one final ``summary`` line. Crash-safe (a
truncated file still parses up to the cut) and trivially consumed by
the operator console or a pandas one-liner.
"""

from __future__ import annotations

import json
import math
import threading
from dataclasses import asdict, dataclass

from .wire import Disconnected, channel


@dataclass(frozen=True)
class TickLog:
    """One pipeline tick: commanded input, physical truth, published outputs.

    ``estimated_total`` is None on a faulted tick (nothing was
    published). ``latency_s`` is wall-clock enqueue-to-haptic time when
    a grip command was consumed, otherwise the tick's compute time.
    """

    time_s: float
    aperture: float
    contact_force: float
    estimated_total: float | None
    intensities: tuple[float, ...]
    ball_diameter: float
    events: tuple[str, ...]
    latency_s: float


@dataclass(frozen=True)
class SessionSummary:
    peak_force: float
    final_deformation_ratio: float
    dropped: bool
    mean_latency_s: float


@dataclass(frozen=True)
class SessionRecord:
    """A full session: config snapshot, tick log, summary."""

    config: dict
    ticks: tuple[TickLog, ...]
    summary: SessionSummary

    def __post_init__(self) -> None:
        times = [t.time_s for t in self.ticks]
        if any(b <= a for a, b in zip(times, times[1:])):
            raise ValueError("tick times must be strictly increasing")


def build_summary(ticks, rest_diameter: float) -> SessionSummary:
    if not ticks:
        return SessionSummary(0.0, 0.0, False, 0.0)
    final_diameter = ticks[-1].ball_diameter
    return SessionSummary(
        peak_force=max(t.contact_force for t in ticks),
        final_deformation_ratio=(rest_diameter - final_diameter) / rest_diameter,
        dropped=any("dropped" in t.events for t in ticks),
        mean_latency_s=math.fsum(t.latency_s for t in ticks) / len(ticks),
    )


def summaries_match(a: SessionSummary, b: SessionSummary) -> bool:
    """Bit-exact comparison of the simulation-derived summary fields.

    Mean latency is wall-clock measurement, not simulation output, so
    two runs of the same inputs legitimately differ there.
    """
    return (
        a.peak_force == b.peak_force
        and a.final_deformation_ratio == b.final_deformation_ratio
        and a.dropped == b.dropped
    )


class SessionRecorder:
    """Collects ticks over a fifo channel; the sole writer of the log file.

    The pipeline thread calls :meth:`append`; a dedicated writer thread
    drains the channel so file I/O never stalls a tick. Without a path
    the ticks are only accumulated in memory.
    """

    def __init__(self, config_snapshot: dict, path=None):
        self.config_snapshot = config_snapshot
        self._ticks: list[TickLog] = []
        self._producer, consumer = channel("fifo", capacity=256)
        self._file = open(path, "w", encoding="utf-8") if path is not None else None
        if self._file is not None:
            self._write_line({"kind": "config", "config": config_snapshot})
        self._writer = threading.Thread(
            target=self._drain, args=(consumer,), name="session-writer", daemon=True
        )
        self._writer.start()

    def _write_line(self, obj: dict) -> None:
        self._file.write(json.dumps(obj) + "\n")
        self._file.flush()

    def _drain(self, consumer) -> None:
        while True:
            try:
                tick = consumer.get(timeout=0.5)
            except TimeoutError:
                continue
            except Disconnected:
                return
            self._ticks.append(tick)
            if self._file is not None:
                self._write_line({"kind": "tick", **asdict(tick)})

    def append(self, tick: TickLog) -> None:
        self._producer.put(tick, timeout=5.0)

    def finish(self, rest_diameter: float) -> SessionRecord:
        """Stop the writer, emit the summary line, return the record."""
        self._producer.close()
        self._writer.join(timeout=10.0)
        summary = build_summary(self._ticks, rest_diameter)
        if self._file is not None:
            self._write_line({"kind": "summary", **asdict(summary)})
            self._file.close()
            self._file = None
        return SessionRecord(
            config=self.config_snapshot, ticks=tuple(self._ticks), summary=summary
        )


def _tick_from_dict(raw: dict) -> TickLog:
    return TickLog(
        time_s=raw["time_s"],
        aperture=raw["aperture"],
        contact_force=raw["contact_force"],
        estimated_total=raw["estimated_total"],
        intensities=tuple(raw["intensities"]),
        ball_diameter=raw["ball_diameter"],
        events=tuple(raw["events"]),
        latency_s=raw["latency_s"],
    )


def write_session(record: SessionRecord, path) -> None:
    with open(path, "w", encoding="utf-8") as handle:
        handle.write(json.dumps({"kind": "config", "config": record.config}) + "\n")
        for tick in record.ticks:
            handle.write(json.dumps({"kind": "tick", **asdict(tick)}) + "\n")
        handle.write(json.dumps({"kind": "summary", **asdict(record.summary)}) + "\n")


def read_session(path) -> SessionRecord:
    config = None
    ticks: list[TickLog] = []
    summary = None
    with open(path, encoding="utf-8") as handle:
        for line_no, line in enumerate(handle, start=1):
            if not line.strip():
                continue
            try:
                raw = json.loads(line)
                kind = raw.pop("kind")
            except (json.JSONDecodeError, KeyError) as err:
                raise ValueError(f"{path}:{line_no}: not a session line: {err}") from err
            if kind == "config":
                config = raw["config"]
            elif kind == "tick":
                ticks.append(_tick_from_dict(raw))
            elif kind == "summary":
                summary = SessionSummary(**raw)
            else:
                raise ValueError(f"{path}:{line_no}: unknown line kind {kind!r}")
    if config is None:
        raise ValueError(f"{path}: missing config line")
    if summary is None:
        # Crash-truncated log: summarize what made it to disk.
        rest = config.get("ball", {}).get("rest_diameter", 1.0)
        summary = build_summary(ticks, rest)
    return SessionRecord(config=config, ticks=tuple(ticks), summary=summary)
