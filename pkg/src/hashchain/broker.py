"""In-process ordered log standing in for the streaming cluster.

Each topic is a single append-only partition.  Producers append records and
get back contiguous offsets; consumers read from any offset.  A topic may carry
a batch trigger: records published to it are also buffered, and
:meth:`Broker.check_flush` releases the buffer as one batch once a count,
interval or size threshold is reached.
"""
from __future__ import annotations

import threading
from dataclasses import dataclass, field
from typing import Callable

from .errors import AlreadyExists, InvalidArgument, NotFound

CROSSINGS = "crossings"
BLOCKS = "blocks"


@dataclass(frozen=True)
class Record:
    offset: int
    payload: bytes
    produced_at: int


@dataclass(frozen=True)
class BatchTrigger:
    max_count: int | None = None
    max_interval: int | None = None  # ms
    max_bytes: int | None = None

    def __post_init__(self):
        if self.max_count is None and self.max_interval is None and self.max_bytes is None:
            raise InvalidArgument("a batch trigger needs at least one threshold")
        for name in ("max_count", "max_bytes"):
            v = getattr(self, name)
            if v is not None and v < 1:
                raise InvalidArgument(f"{name} must be positive")
        if self.max_interval is not None and self.max_interval < 0:
            raise InvalidArgument("max_interval must be non-negative")


@dataclass
class Topic:
    name: str
    log: list[Record] = field(default_factory=list)
    trigger: BatchTrigger | None = None
    on_flush: Callable[[list[Record], int], None] | None = None
    buffer: list[Record] = field(default_factory=list)
    buffered_bytes: int = 0

    @property
    def next_offset(self) -> int:
        return len(self.log)


@dataclass(frozen=True)
class Flush:
    batch: list[Record]
    reason: str


HOLD = None


class Broker:
    def __init__(self):
        self._topics: dict[str, Topic] = {}
        self._lock = threading.Lock()

    def create_topic(self, name: str, trigger: BatchTrigger | None = None, on_flush=None) -> Topic:
        with self._lock:
            if name in self._topics:
                raise AlreadyExists(f"topic {name!r} already exists")
            topic = self._topics[name] = Topic(name, trigger=trigger, on_flush=on_flush)
            return topic

    def topic(self, name: str) -> Topic:
        try:
            return self._topics[name]
        except KeyError:
            raise NotFound(f"no topic {name!r}") from None

    def has_topic(self, name: str) -> bool:
        return name in self._topics

    def set_trigger(self, name: str, trigger: BatchTrigger, on_flush=None) -> None:
        topic = self.topic(name)
        with self._lock:
            topic.trigger = trigger
            topic.on_flush = on_flush

    def publish(self, name: str, payload: bytes, now: int) -> int:
        topic = self.topic(name)
        with self._lock:
            record = Record(topic.next_offset, bytes(payload), now)
            topic.log.append(record)
            if topic.trigger is not None:
                topic.buffer.append(record)
                topic.buffered_bytes += len(record.payload)
            return record.offset

    def poll(self, consumer: str, name: str, from_offset: int = 0) -> list[Record]:
        """Records at or after ``from_offset``; ``consumer`` is informational only."""
        topic = self.topic(name)
        # list slicing over an append-only list needs no lock for a consistent prefix
        return topic.log[max(from_offset, 0):]

    def end_offset(self, name: str) -> int:
        return self.topic(name).next_offset

    def oldest_buffered_at(self, name: str) -> int | None:
        buf = self.topic(name).buffer
        return buf[0].produced_at if buf else None

    def check_flush(self, name: str, now: int) -> Flush | None:
        """Release one batch if any trigger threshold is met, else return ``HOLD``.

        A count-triggered flush takes exactly ``max_count`` records; interval and
        size flushes take the whole buffer (capped at ``max_count`` when set).
        The registered callback, if any, receives ``(batch, now)``.
        """
        topic = self.topic(name)
        trig = topic.trigger
        if trig is None:
            raise InvalidArgument(f"topic {name!r} has no batch trigger")
        with self._lock:
            buf = topic.buffer
            if not buf:
                return HOLD
            if trig.max_count is not None and len(buf) >= trig.max_count:
                reason = "count"
            elif trig.max_interval is not None and now - buf[0].produced_at >= trig.max_interval:
                reason = "interval"
            elif trig.max_bytes is not None and topic.buffered_bytes >= trig.max_bytes:
                reason = "bytes"
            else:
                return HOLD
            take = len(buf) if trig.max_count is None else min(len(buf), trig.max_count)
            batch, topic.buffer = buf[:take], buf[take:]
            topic.buffered_bytes -= sum(len(r.payload) for r in batch)
        if topic.on_flush is not None:
            topic.on_flush(batch, now)
        return Flush(batch, reason)

    def dump(self, name: str) -> str:
        return "".join(f"{r.offset} {r.produced_at} {r.payload.hex()}\n" for r in self.topic(name).log)


def parse_dump(text: str) -> list[Record]:
    out = []
    for line in text.splitlines():
        if not line.strip():
            continue
        off, ts, payload = line.split(" ")
        out.append(Record(int(off), bytes.fromhex(payload), int(ts)))
    return out
