"""Discrete-event engine: integer-nanosecond clock, ordered queue, seeded streams."""
from __future__ import annotations

import heapq
import itertools
import zlib
from dataclasses import dataclass
from fractions import Fraction
from typing import Any, Callable

import numpy as np

NS = 1
US = 1_000
MS = 1_000_000
S = 1_000_000_000


def us(value) -> int:
    """Convert microseconds to integer ns; raises if the value is not on the 1 ns grid."""
    ns = Fraction(str(value)) * 1000
    if ns.denominator != 1:
        raise ValueError(f"{value} us is not a whole number of nanoseconds")
    return int(ns)


def to_us(ns: int) -> float:
    return ns / US


class SchedulingError(ValueError):
    pass


@dataclass(frozen=True, order=True)
class TraceEntry:
    fire_at: int
    seq: int
    tag: str

    def line(self) -> str:
        return f"{self.fire_at} {self.seq} {self.tag}"


def stream_id(node: str, purpose: str) -> int:
    """Stable 64-bit id for a (node, purpose) pair, independent of creation order."""
    return (zlib.crc32(node.encode()) << 32) | zlib.crc32(purpose.encode())


def rng_stream(seed: int, sid: int) -> np.random.Generator:
    """PCG64 generator for ``(seed, sid)``; identical draws on every platform."""
    ss = np.random.SeedSequence([int(seed) & (2**64 - 1), sid & 0xFFFFFFFF, sid >> 32])
    return np.random.Generator(np.random.PCG64(ss))


def derive_seed(master: int, index: int) -> int:
    ss = np.random.SeedSequence(int(master) & (2**64 - 1), spawn_key=(index,))
    return int(ss.generate_state(1, np.uint64)[0])


class Engine:
    """Single-threaded event loop.

    Events at equal times fire in the order they were scheduled.
    """

    def __init__(self, seed: int = 0):
        self.seed = seed
        self.now = 0
        self.trace: list[TraceEntry] = []
        self._queue: list[tuple[int, int]] = []
        self._events: dict[int, tuple[str, Callable, tuple]] = {}
        self._seq = itertools.count()
        self._streams: dict[int, np.random.Generator] = {}

    def schedule(self, fire_at: int, action: Callable[..., Any], *args, tag: str = "") -> int:
        fire_at = int(fire_at)
        if fire_at < self.now:
            raise SchedulingError(f"cannot schedule at {fire_at} ns, now is {self.now} ns")
        seq = next(self._seq)
        heapq.heappush(self._queue, (fire_at, seq))
        self._events[seq] = (tag or getattr(action, "__name__", "event"), action, args)
        return seq

    def after(self, delay: int, action: Callable[..., Any], *args, tag: str = "") -> int:
        return self.schedule(self.now + delay, action, *args, tag=tag)

    def cancel(self, event_id: int) -> bool:
        return self._events.pop(event_id, None) is not None

    def pending(self) -> int:
        return len(self._events)

    def run_until(self, t_end: int) -> list[TraceEntry]:
        """Dispatch every event with ``fire_at <= t_end``; the clock ends at ``t_end``."""
        dispatched = []
        while self._queue and self._queue[0][0] <= t_end:
            fire_at, seq = heapq.heappop(self._queue)
            ev = self._events.pop(seq, None)
            if ev is None:
                continue
            tag, action, args = ev
            self.now = fire_at
            entry = TraceEntry(fire_at, seq, tag)
            self.trace.append(entry)
            dispatched.append(entry)
            action(*args)
        self.now = max(self.now, int(t_end))
        return dispatched

    def run(self) -> list[TraceEntry]:
        """Run until the queue drains."""
        dispatched = []
        while self._events:
            t_next = self._queue[0][0]
            dispatched.extend(self.run_until(t_next))
        return dispatched

    def rng(self, node: str, purpose: str) -> np.random.Generator:
        sid = stream_id(node, purpose)
        if sid not in self._streams:
            self._streams[sid] = rng_stream(self.seed, sid)
        return self._streams[sid]

    def trace_text(self) -> str:
        return "".join(e.line() + "\n" for e in self.trace)
