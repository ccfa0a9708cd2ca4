from __future__ import annotations

import heapq
from dataclasses import dataclass
from enum import Enum
from typing import Any, Callable

from ccgym.core.errors import SchedulerError


# Simulation clock: integer nanoseconds.
SimTime = int


class EventKind(str, Enum):
    FLOW_SCHEDULED = "FlowScheduled"
    PACKET_ARRIVE_SWITCH = "PacketArriveSwitch"
    PACKET_DEPART_SWITCH = "PacketDepartSwitch"
    PACKET_ARRIVE_DEST = "PacketArriveDest"
    PROBE_RETURN = "ProbeReturn"
    TIMER_FIRE = "TimerFire"


@dataclass(slots=True)
class SimEvent:
    time: SimTime
    kind: EventKind
    payload: Any = None
    seq: int = -1


EventHandler = Callable[[SimEvent], None]


class EventQueue:
    """Deterministic event heap with per-kind handlers.

    Events pop in (time, seq) order; seq is assigned on push so equal-time
    events keep insertion order.
    """

    def __init__(self) -> None:
        self._heap: list[tuple[int, int, SimEvent]] = []
        self._next_seq = 0
        self._handlers: dict[EventKind, EventHandler] = {}
        self.now: SimTime = 0
        self.dispatched = 0

    def __len__(self) -> int:
        return len(self._heap)

    def on(self, kind: EventKind, handler: EventHandler) -> None:
        self._handlers[kind] = handler

    def push(self, ev: SimEvent) -> SimEvent:
        if ev.time < self.now:
            raise SchedulerError(f"event {ev.kind.value} at t={ev.time} is before now={self.now}")
        ev.seq = self._next_seq
        self._next_seq += 1
        heapq.heappush(self._heap, (ev.time, ev.seq, ev))
        return ev

    def schedule(self, time: SimTime, kind: EventKind, payload: Any = None) -> SimEvent:
        return self.push(SimEvent(int(time), kind, payload))

    def pop(self) -> SimEvent | None:
        """Next event, advancing the clock; None signals end of simulation."""
        if not self._heap:
            return None
        _t, _s, ev = heapq.heappop(self._heap)
        self.now = ev.time
        return ev

    def pending(self) -> list[SimEvent]:
        return [entry[2] for entry in self._heap]

    def run(self, until: SimTime | None = None) -> int:
        """Dispatch events up to and including `until`; returns the count dispatched."""
        count = 0
        heap = self._heap
        handlers = self._handlers
        while heap:
            if until is not None and heap[0][0] > until:
                break
            _t, _s, ev = heapq.heappop(heap)
            self.now = ev.time
            handler = handlers.get(ev.kind)
            if handler is None:
                raise SchedulerError(f"no handler for {ev.kind.value}")
            handler(ev)
            count += 1
        if until is not None and until > self.now:
            self.now = until
        self.dispatched += count
        return count


def push_event(queue: EventQueue, ev: SimEvent) -> None:
    """Insert an already-built event; raises SchedulerError if it lies in the past."""
    queue.push(ev)
