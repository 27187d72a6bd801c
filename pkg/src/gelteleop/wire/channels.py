"""In-process channels with the pipeline's two delivery contracts.

latest_wins is a single-slot mailbox: the producer overwrites without
ever blocking, and the consumer takes the freshest value, so a slow
consumer sees bounded staleness (at most one item behind) instead of a
growing queue of stale sensor data. fifo is a bounded queue with
blocking backpressure and no loss, for commands that must all arrive.

Both ends can close; the other side observes Disconnected once nothing
buffered remains (fifo drains first, a mailbox value is still taken).
"""

from __future__ import annotations

import threading
from collections import deque

__all__ = ["Disconnected", "channel", "ChannelConsumer", "ChannelProducer"]


class Disconnected(Exception):
    """The peer closed and no buffered value remains."""


class _Core:
    def __init__(self, policy: str, capacity: int):
        self.policy = policy
        self.capacity = capacity
        self.items: deque = deque()
        self.lock = threading.Lock()
        self.readable = threading.Condition(self.lock)
        self.writable = threading.Condition(self.lock)
        self.producer_closed = False
        self.consumer_closed = False


class ChannelProducer:
    def __init__(self, core: _Core):
        self._core = core

    def put(self, item, timeout: float | None = None) -> None:
        """Hand one item to the consumer.

        latest_wins never blocks: a pending item is replaced. fifo
        blocks while full, raising TimeoutError when the wait expires.
        """
        core = self._core
        with core.lock:
            if core.consumer_closed:
                raise Disconnected("consumer is gone")
            if core.producer_closed:
                raise RuntimeError("producer already closed")
            if core.policy == "latest_wins":
                core.items.clear()
                core.items.append(item)
                core.readable.notify()
                return
            while len(core.items) >= core.capacity:
                if not core.writable.wait(timeout):
                    raise TimeoutError("channel full")
                if core.consumer_closed:
                    raise Disconnected("consumer is gone")
            core.items.append(item)
            core.readable.notify()

    def close(self) -> None:
        core = self._core
        with core.lock:
            core.producer_closed = True
            core.readable.notify_all()


class ChannelConsumer:
    def __init__(self, core: _Core):
        self._core = core

    def get(self, timeout: float | None = None):
        """Take the next item, blocking until one arrives.

        Raises Disconnected once the producer has closed and the buffer
        is empty; TimeoutError when the wait expires first.
        """
        core = self._core
        with core.lock:
            while not core.items:
                if core.producer_closed:
                    raise Disconnected("producer is gone")
                if not core.readable.wait(timeout):
                    raise TimeoutError("channel empty")
            item = core.items.popleft()
            core.writable.notify()
            return item

    def try_get(self):
        """Non-blocking variant: (True, item) or (False, None)."""
        core = self._core
        with core.lock:
            if core.items:
                item = core.items.popleft()
                core.writable.notify()
                return True, item
            if core.producer_closed:
                raise Disconnected("producer is gone")
            return False, None

    def close(self) -> None:
        core = self._core
        with core.lock:
            core.consumer_closed = True
            core.writable.notify_all()

    def __len__(self) -> int:
        with self._core.lock:
            return len(self._core.items)


def channel(policy: str, capacity: int = 1) -> tuple[ChannelProducer, ChannelConsumer]:
    """Create a producer/consumer pair with the given delivery policy."""
    if policy not in ("latest_wins", "fifo"):
        raise ValueError(f"unknown policy {policy!r}")
    if capacity < 1:
        raise ValueError("capacity must be at least 1")
    core = _Core(policy, capacity)
    return ChannelProducer(core), ChannelConsumer(core)
