"""Reliable wait-free max register over 2f+1 unreliable per-node max registers.

Each client keeps a cache of the last value it knows each node register holds.
``write(v)`` pushes ``v`` to nodes whose cache is below it and returns once a
majority of the cache is at least ``v``. ``read()`` collects a majority of node
values, takes the max over the whole cache and writes it back the same way.

Per-node registers are reached through a driver (see :class:`AtomicDriver` for
the trivial test implementation and ``innout.InNOutDriver`` for the real one).
Phases contact a preferred majority first and widen to every node when the
majority does not answer within ``widen_after`` time units.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any, Callable, Optional

from .sim import Event, Quorum, Simulator
from .monitor import Monitor


class ValueUnavailable(RuntimeError):
    """A driver cannot produce the payload of ``value`` any more.

    ``seen`` maps node -> register value observed while looking; callers fold
    it into their cache and move on to the newer maximum.
    """

    def __init__(self, value, seen: Optional[dict] = None):
        super().__init__(f"value of {value!r} is unreachable")
        self.value = value
        self.seen = seen or {}


@dataclass
class QuorumPolicy:
    majority_first: bool = True
    widen_after: float = 2.0


@dataclass
class Inflight:
    value: Any
    event: Event


class RegClient:
    """Client-local state for one register: the quorum cache and suspicion list."""

    def __init__(self, client: int, n: int, bottom: Any):
        self.client = client
        self.cache = [bottom] * n
        self.inflight: dict[int, Inflight] = {}
        self.suspects: set[int] = set()
        self.driver_state: dict = {}


class ReliableMaxRegister:
    def __init__(self, sim: Simulator, driver, n: int, preferred: Optional[list[int]] = None,
                 policy: Optional[QuorumPolicy] = None, monitor: Optional[Monitor] = None,
                 name: str = "M"):
        self.sim = sim
        self.driver = driver
        self.n = n
        self.majority = n // 2 + 1
        self.preferred = list(preferred) if preferred is not None else list(range(n))
        self.policy = policy or QuorumPolicy()
        self.monitor = monitor or Monitor()
        self.name = name
        self.bottom = driver.bottom
        self.combine: Callable = driver.combine
        self.stats = {"read": 0, "weak_read": 0, "write": 0, "write_back": 0, "widen": 0}
        self._clients: dict[int, RegClient] = {}

    def client_state(self, client: int) -> RegClient:
        cs = self._clients.get(client)
        if cs is None:
            cs = self._clients[client] = RegClient(client, self.n, self.bottom)
        return cs

    def forget(self, client: int) -> None:
        self._clients.pop(client, None)

    # -- quorum machinery -------------------------------------------------

    def _targets(self, cs: RegClient) -> list[int]:
        order = [m for m in self.preferred if m not in cs.suspects]
        order += [m for m in self.preferred if m in cs.suspects]
        if not self.policy.majority_first:
            return order
        return order[:self.majority]

    def _count_ge(self, cs: RegClient, v) -> int:
        return sum(1 for c in cs.cache if c >= v)

    def _phase(self, cs: RegClient, issue: Callable[[int], Optional[Event]],
               satisfied: Callable[[], bool]):
        """Issue to the preferred majority, widen on timeout; returns once ``satisfied()``."""
        first = self._targets(cs)
        contacted = set(first)
        responded: set[int] = set()
        events = []

        def track(node: int, ev: Event) -> None:
            def done(_e, node=node):
                responded.add(node)
                cs.suspects.discard(node)
            ev.add_callback(done)
            events.append(ev)

        for node in first:
            ev = issue(node)
            if ev is not None:
                track(node, ev)
        q = Quorum(events, predicate=satisfied)
        if q.triggered:
            return
        if len(contacted) == self.n:
            yield q
            return
        timer = self.sim.timeout(self.policy.widen_after)
        yield Quorum([q, timer], need=1)
        if q.triggered:
            return
        self.stats["widen"] += 1
        self.monitor.count("widen")
        for node in first:
            if node not in responded:
                cs.suspects.add(node)
        for node in self.preferred:
            if node not in contacted:
                contacted.add(node)
                ev = issue(node)
                if ev is not None:
                    track(node, ev)
        yield Quorum(events, predicate=satisfied)

    def _issue_write(self, cs: RegClient, node: int, v) -> Optional[Event]:
        if cs.cache[node] >= v:
            return None
        pending = cs.inflight.get(node)
        if pending is not None and not pending.event.triggered and pending.value >= v:
            return pending.event
        ev = self.driver.write(node, v, cs)
        self._watch_write(cs, node, v, ev)
        return ev

    def _watch_write(self, cs: RegClient, node: int, v, ev: Event) -> None:
        cs.inflight[node] = Inflight(v, ev)

        def done(_e):
            if cs.cache[node] < v:
                cs.cache[node] = v
            cur = cs.inflight.get(node)
            if cur is not None and cur.event is ev:
                del cs.inflight[node]
        ev.add_callback(done)

    def _absorb(self, cs: RegClient, node: int, ev: Event) -> None:
        def got(e):
            cs.cache[node] = self.combine(cs.cache[node], e.value)
        ev.add_callback(got)

    # -- operations ---------------------------------------------------------

    def _inner_write(self, cs: RegClient, v):
        """Returns the number of phases waited (0 or 1)."""
        if self._count_ge(cs, v) >= self.majority:
            for node in self._targets(cs):
                self._issue_write(cs, node, v)
            return 0
        yield from self._phase(cs, lambda node: self._issue_write(cs, node, v),
                               lambda: self._count_ge(cs, v) >= self.majority)
        return 1

    def write(self, client: int, v):
        cs = self.client_state(client)
        self.stats["write"] += 1
        phases = yield from self._inner_write(cs, v)
        self.monitor.check(phases in (0, 1), "maxreg.write_phases",
                           f"{self.name}: write took {phases} phases")
        return phases

    def _collect(self, cs: RegClient):
        answered: set[int] = set()

        def issue(node: int) -> Event:
            ev = self.driver.read(node, cs)
            self._absorb(cs, node, ev)
            ev.add_callback(lambda _e, node=node: answered.add(node))
            return ev

        yield from self._phase(cs, issue, lambda: len(answered) >= self.majority)

    def _max_cache(self, cs: RegClient):
        v = cs.cache[0]
        for c in cs.cache[1:]:
            v = self.combine(v, c)
        return v

    def read(self, client: int):
        """Linearizable read; returns ``(value, phases)``."""
        cs = self.client_state(client)
        self.stats["read"] += 1
        yield from self._collect(cs)
        v = self._max_cache(cs)
        extra, v = yield from self._write_back(cs, v)
        phases = 1 + extra
        self.monitor.check(phases in (1, 2), "maxreg.read_phases",
                           f"{self.name}: read took {phases} phases")
        return v, phases

    def _write_back(self, cs: RegClient, v):
        if self._count_ge(cs, v) >= self.majority:
            if any(cs.cache[node] < v for node in self._targets(cs)):
                self.sim.spawn(self._resolve_then_write(cs, v), name="writeback-bg")
            return 0, v
        self.stats["write_back"] += 1
        v = yield from self._resolve(cs, v)
        if self._count_ge(cs, v) >= self.majority:
            return 0, v
        return (yield from self._inner_write(cs, v)), v

    def _resolve(self, cs: RegClient, v):
        """Driver resolve; if the payload is gone, continue with the newer max."""
        while True:
            try:
                return (yield from self.driver.resolve(v, cs))
            except ValueUnavailable as exc:
                for node, seen in exc.seen.items():
                    cs.cache[node] = self.combine(cs.cache[node], seen)
                newer = self._max_cache(cs)
                if not newer > v:
                    raise
                self.stats["superseded"] = self.stats.get("superseded", 0) + 1
                v = newer

    def resolve(self, client: int, v):
        return (yield from self._resolve(self.client_state(client), v))

    def _resolve_then_write(self, cs: RegClient, v):
        try:
            v = yield from self._resolve(cs, v)
        except ValueUnavailable:
            return
        yield from self._inner_write(cs, v)

    def weak_read(self, client: int):
        """One phase, no write-back: a fresh-timestamp hint only."""
        cs = self.client_state(client)
        self.stats["weak_read"] += 1
        yield from self._collect(cs)
        return self._max_cache(cs), 1

    def write_and_read(self, client: int, w, weak: bool = False):
        """Write ``w`` and read the register in the same phase.

        Per node, the driver piggybacks a read on the write. Returns ``(m,
        phases)`` where ``m`` is what the read part returned; the write part has
        reached a majority when this returns.
        """
        cs = self.client_state(client)
        answered: set[int] = set()

        def issue(node: int) -> Event:
            read_ev, write_ev = self.driver.write_read(node, w, cs)
            if write_ev is not None:
                self._watch_write(cs, node, w, write_ev)
            self._absorb(cs, node, read_ev)
            read_ev.add_callback(lambda _e, node=node: answered.add(node))
            return read_ev

        yield from self._phase(cs, issue, lambda: len(answered) >= self.majority)
        m = self._max_cache(cs)
        if weak:
            self.stats["weak_read"] += 1
        else:
            self.stats["read"] += 1
        need_m = not weak and self._count_ge(cs, m) < self.majority
        need_w = self._count_ge(cs, w) < self.majority
        phases = 1
        if not weak and not need_m:
            if any(cs.cache[node] < m for node in self._targets(cs)):
                self.sim.spawn(self._resolve_then_write(cs, m), name="writeback-bg")
        if need_m or need_w:
            phases = 2
            if need_m:
                self.stats["write_back"] += 1
                m = yield from self._resolve(cs, m)

            def issue_rest(node: int) -> Optional[Event]:
                evs = [self._issue_write(cs, node, v) for v in ((m, w) if need_m else (w,))]
                evs = [e for e in evs if e is not None]
                if not evs:
                    return None
                return evs[0] if len(evs) == 1 else Quorum(evs)

            yield from self._phase(cs, issue_rest,
                                   lambda: (weak or self._count_ge(cs, m) >= self.majority)
                                   and self._count_ge(cs, w) >= self.majority)
        self.monitor.check(phases in (1, 2), "maxreg.read_phases",
                           f"{self.name}: combined write/read took {phases} phases")
        return m, phases


class AtomicDriver:
    """Per-node registers held atomically at the node; for testing the quorum logic alone."""

    def __init__(self, fabric, reg_id: Any = "reg", bottom: Any = 0,
                 combine: Callable = max):
        self.fabric = fabric
        self.reg_id = reg_id
        self.bottom = bottom
        self.combine = combine

    def _get(self, node):
        return node.state.get(self.reg_id, self.bottom)

    def read(self, node: int, cs) -> Event:
        return self.fabric.apply(node, self._get)

    def write(self, node: int, v, cs) -> Event:
        def fn(mem):
            cur = self._get(mem)
            mem.state[self.reg_id] = self.combine(cur, v)
        return self.fabric.apply(node, fn)

    def write_read(self, node: int, v, cs):
        def fn(mem):
            cur = self.combine(self._get(mem), v)
            mem.state[self.reg_id] = cur
            return cur
        ev = self.fabric.apply(node, fn)
        return ev, ev

    def resolve(self, v, cs):
        return v
        yield  # pragma: no cover

    def remember(self, cs, v) -> None:
        pass
