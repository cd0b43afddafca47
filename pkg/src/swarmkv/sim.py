"""Single-threaded discrete-event scheduler.

Logical clients are generator coroutines. A coroutine yields an :class:`Event`
and is resumed with the event's value once it fires. Every event carries a
``depth``: the length, in fabric roundtrips, of the causal chain that produced
it. A process adopts the depth of each event it resumes from, so the number of
roundtrips an operation incurred is ``depth_at_end - depth_at_start`` no matter
how many requests were fanned out in parallel.
"""

from __future__ import annotations

import heapq
import itertools
import random
from typing import Any, Callable, Generator, Iterable, Optional

Coroutine = Generator["Event", Any, Any]


class Event:
    __slots__ = ("callbacks", "triggered", "value", "depth")

    def __init__(self) -> None:
        self.callbacks: Optional[list] = []
        self.triggered = False
        self.value: Any = None
        self.depth = 0

    def succeed(self, value: Any = None, depth: int = 0) -> None:
        if self.triggered:
            raise RuntimeError("event already triggered")
        self.triggered = True
        self.value = value
        self.depth = depth
        callbacks, self.callbacks = self.callbacks, None
        for cb in callbacks:
            cb(self)

    def add_callback(self, cb: Callable[["Event"], None]) -> None:
        if self.triggered:
            cb(self)
        else:
            self.callbacks.append(cb)


class Quorum(Event):
    """Fires once ``need`` children fired, or once ``predicate()`` holds.

    The predicate is re-evaluated each time a child fires. The value is a dict
    ``index -> child value`` of the children that had fired at trigger time,
    and the depth is the largest depth among them.
    """

    __slots__ = ("events", "done", "need", "predicate", "_max_depth")

    def __init__(self, events: Iterable[Event], need: Optional[int] = None,
                 predicate: Optional[Callable[[], bool]] = None) -> None:
        super().__init__()
        self.events = list(events)
        self.done: dict[int, Any] = {}
        self.need = len(self.events) if need is None and predicate is None else need
        self.predicate = predicate
        self._max_depth = 0
        if self._satisfied():
            self.succeed({}, 0)
            return
        for idx, ev in enumerate(self.events):
            if self.triggered:
                break
            ev.add_callback(lambda e, idx=idx: self._on_child(idx, e))

    def _satisfied(self) -> bool:
        if self.need is not None and len(self.done) >= self.need:
            return True
        return self.predicate is not None and self.predicate()

    def _on_child(self, idx: int, ev: Event) -> None:
        if self.triggered:
            return
        self.done[idx] = ev.value
        if ev.depth > self._max_depth:
            self._max_depth = ev.depth
        if self._satisfied():
            self.succeed(dict(self.done), self._max_depth)

    def recheck(self) -> None:
        if not self.triggered and self._satisfied():
            self.succeed(dict(self.done), self._max_depth)


class Process(Event):
    """A running coroutine; the process itself is the event fired on return."""

    __slots__ = ("sim", "gen", "client", "cur_depth", "name")

    def __init__(self, sim: "Simulator", gen: Coroutine, client: Any = None,
                 depth: int = 0, name: str = "") -> None:
        super().__init__()
        self.sim = sim
        self.gen = gen
        self.client = client
        self.cur_depth = depth
        self.name = name
        self._step(None)

    def _resume(self, ev: Event) -> None:
        if ev.depth > self.cur_depth:
            self.cur_depth = ev.depth
        self._step(ev.value)

    def _step(self, value: Any) -> None:
        sim = self.sim
        prev, sim.active = sim.active, self
        try:
            while True:
                try:
                    target = self.gen.send(value)
                except StopIteration as stop:
                    sim.active = prev
                    self.succeed(stop.value, self.cur_depth)
                    return
                if target.triggered:
                    if target.depth > self.cur_depth:
                        self.cur_depth = target.depth
                    value = target.value
                    continue
                target.callbacks.append(self._resume)
                return
        finally:
            sim.active = prev


class Simulator:
    """Seeded event loop. Identical seed and inputs give an identical run."""

    def __init__(self, seed: int = 0) -> None:
        self.now = 0.0
        self.rng = random.Random(seed)
        self.active: Optional[Process] = None
        self._heap: list = []
        self._seq = itertools.count()
        self.events_processed = 0

    def schedule(self, delay: float, fn: Callable, *args: Any) -> None:
        if delay < 0:
            raise ValueError("negative delay")
        heapq.heappush(self._heap, (self.now + delay, next(self._seq), fn, args))

    def schedule_at(self, when: float, fn: Callable, *args: Any) -> None:
        self.schedule(max(0.0, when - self.now), fn, *args)

    def timeout(self, delay: float, value: Any = None) -> Event:
        ev = Event()
        self.schedule(delay, ev.succeed, value, 0)
        return ev

    def spawn(self, gen: Coroutine, client: Any = None, name: str = "") -> Process:
        """Start ``gen`` now; it inherits the current process's depth and client."""
        parent = self.active
        depth = parent.cur_depth if parent is not None else 0
        if client is None and parent is not None:
            client = parent.client
        return Process(self, gen, client=client, depth=depth, name=name)

    @property
    def depth(self) -> int:
        return self.active.cur_depth if self.active is not None else 0

    def run(self, until: Optional[float] = None,
            stop: Optional[Callable[[], bool]] = None) -> None:
        heap = self._heap
        while heap:
            when = heap[0][0]
            if until is not None and when > until:
                self.now = until
                return
            _, _, fn, args = heapq.heappop(heap)
            self.now = when
            fn(*args)
            self.events_processed += 1
            if stop is not None and stop():
                return

    @property
    def idle(self) -> bool:
        return not self._heap
