"""Simulated disaggregated memory.

Memory nodes expose raw byte READ/WRITE, an atomic 64-bit CAS and FIFO
pipelining of requests issued by one client to one node. Large READs and WRITEs
are applied one 8-byte word at a time, reads faster than writes, so a READ
racing a WRITE on the same range can overtake it and return a word-granular
mixture of both versions. Single words are
never torn.

A request's response event has ``depth = issuer depth + 1``: every batch of
requests submitted together costs one roundtrip regardless of fan-out.
Requests to crashed nodes are dropped silently and their events never fire.
"""

from __future__ import annotations

import json
import math
import struct
from dataclasses import dataclass, field
from typing import Any, Callable, Optional, Sequence, Union

from .sim import Event, Quorum, Simulator

WORD = 8
MASK64 = (1 << 64) - 1


class FabricError(Exception):
    """Programming error against the fabric (bad address, bad alignment)."""


class ConfigError(ValueError):
    pass


@dataclass
class FabricConfig:
    f: int = 1
    node_count: Optional[int] = None
    latency: float = 0.5            # one-way base delay, in time units
    jitter: float = 0.05            # mean of the exponential extra delay
    word_time: float = 0.002        # time to apply one 8-byte word of a write
    read_word_time: Optional[float] = None   # per word of a read; default word_time / 2
    memory_size: int = 1 << 30
    node_latency: dict = field(default_factory=dict)   # node -> base override
    link_latency: dict = field(default_factory=dict)   # (client, node) -> base override

    def __post_init__(self):
        if self.node_count is None:
            self.node_count = 2 * self.f + 1
        if self.node_count != 2 * self.f + 1:
            raise ConfigError(f"node_count must be 2f+1 = {2 * self.f + 1}, got {self.node_count}")
        if self.read_word_time is None:
            self.read_word_time = self.word_time / 2
        if self.latency < 0 or self.jitter < 0 or self.word_time < 0 or self.read_word_time < 0:
            raise ConfigError("delays must be non-negative")

    @property
    def majority(self) -> int:
        return self.node_count // 2 + 1


@dataclass
class FaultSchedule:
    crashes: list = field(default_factory=list)     # (time, node)
    slowdowns: list = field(default_factory=list)   # (time, node, extra delay)

    def validate(self, node_count: int, f: int) -> None:
        crashed = set()
        for t, node in sorted(self.crashes):
            if not 0 <= node < node_count:
                raise ConfigError(f"crash of unknown node {node}")
            crashed.add(node)
            if len(crashed) > f:
                raise ConfigError(
                    f"fault schedule crashes {len(crashed)} nodes at t={t}; at most f={f} may fail")
        for t, node, extra in self.slowdowns:
            if not 0 <= node < node_count:
                raise ConfigError(f"slowdown of unknown node {node}")
            if extra < 0:
                raise ConfigError("slowdown must be non-negative")


# -- requests ---------------------------------------------------------------

@dataclass(frozen=True)
class Read:
    node: int
    offset: int
    length: int


@dataclass(frozen=True)
class Write:
    node: int
    offset: int
    data: bytes


@dataclass(frozen=True)
class Cas:
    node: int
    offset: int
    expected: int
    new: int


@dataclass(frozen=True)
class Apply:
    """Run ``fn(node)`` atomically at the node. Used by service endpoints and test doubles."""
    node: int
    fn: Callable


@dataclass(frozen=True)
class Pair:
    """Two updates executed in order at one node; if the second is visible so is the first."""
    first: Union[Write, Cas]
    second: Union[Write, Cas]

    @property
    def node(self) -> int:
        return self.first.node


Request = Union[Read, Write, Cas, Apply, Pair]


class PhaseHandle:
    """The requests of one submit; each completes independently."""

    def __init__(self, requests: Sequence[Request], events: list[Event]):
        self.requests = list(requests)
        self.events = events

    def all(self) -> Quorum:
        return Quorum(self.events)

    def majority(self, quorum: Optional[int] = None) -> Quorum:
        need = quorum if quorum is not None else len(self.events) // 2 + 1
        return Quorum(self.events, need=need)


class MemoryNode:
    def __init__(self, node_id: int, size: int, base_latency: float, crashable: bool = True):
        self.id = node_id
        self.size = size
        self.mem = bytearray()
        self.base_latency = base_latency
        self.extra_delay = 0.0
        self.crashed = False
        self.crashable = crashable
        self.brk = 0                      # bump allocator
        self.state: dict = {}             # Apply-level state (service endpoints, test registers)

    def check(self, offset: int, length: int) -> None:
        if offset < 0 or length < 0 or offset + length > self.size:
            raise FabricError(f"node {self.id}: access [{offset}, {offset + length}) out of range")
        if offset + length > len(self.mem):
            self.mem.extend(bytes(offset + length - len(self.mem)))

    def alloc(self, length: int, align: int = WORD) -> int:
        start = -(-self.brk // align) * align
        self.check(start, length)
        self.brk = start + length
        return start

    def load_word(self, offset: int) -> int:
        return int.from_bytes(self.mem[offset:offset + WORD], "little")

    def store_word(self, offset: int, value: int) -> None:
        self.mem[offset:offset + WORD] = value.to_bytes(WORD, "little")


class Fabric:
    """Memory nodes plus the request engine. Node ids ``0..n-1`` are the
    crashable memory nodes; extra service nodes can be appended with
    :meth:`add_service_node` and are never crashed."""

    def __init__(self, sim: Simulator, config: FabricConfig,
                 faults: Optional[FaultSchedule] = None, log_events: bool = False):
        self.sim = sim
        self.config = config
        self.nodes = [MemoryNode(i, config.memory_size, config.node_latency.get(i, config.latency))
                      for i in range(config.node_count)]
        self._channel_ready: dict = {}
        self._inflight: list[dict] = [{} for _ in self.nodes]   # node -> id(state) -> state
        self.log_events = log_events
        self.event_log: list = []
        self.cas_listeners: list[Callable] = []
        self.stats = {"read": 0, "write": 0, "cas": 0, "apply": 0, "pair": 0,
                      "dropped": 0, "bytes_read": 0, "bytes_written": 0}
        self.faults = faults or FaultSchedule()
        self.faults.validate(config.node_count, config.f)
        for t, node in self.faults.crashes:
            sim.schedule_at(t, self._scheduled_crash, node)
        for t, node, extra in self.faults.slowdowns:
            sim.schedule_at(t, self._slow, node, extra)

    # -- configuration ------------------------------------------------------

    @property
    def n(self) -> int:
        return self.config.node_count

    @property
    def majority(self) -> int:
        return self.config.majority

    def add_service_node(self, latency: Optional[float] = None) -> int:
        node = MemoryNode(len(self.nodes), self.config.memory_size,
                          self.config.latency if latency is None else latency, crashable=False)
        self.nodes.append(node)
        self._inflight.append({})
        return node.id

    def crashed_nodes(self) -> list[int]:
        return [n.id for n in self.nodes if n.crashed]

    def crash_now(self, node: int) -> None:
        target = self.nodes[node]
        if not target.crashable:
            raise ConfigError(f"node {node} is a service node and cannot crash")
        if target.crashed:
            return
        if len(self.crashed_nodes()) + 1 > self.config.f:
            raise ConfigError("crashing this node would leave a minority alive")
        target.crashed = True
        self._log("crash", node=node)

    def inject_fault(self, schedule: FaultSchedule) -> None:
        merged = FaultSchedule(self.faults.crashes + list(schedule.crashes),
                               self.faults.slowdowns + list(schedule.slowdowns))
        merged.validate(self.n, self.config.f)
        self.faults = merged
        for t, node in schedule.crashes:
            self.sim.schedule_at(t, self._scheduled_crash, node)
        for t, node, extra in schedule.slowdowns:
            self.sim.schedule_at(t, self._slow, node, extra)

    def _scheduled_crash(self, node: int) -> None:
        self.crash_now(node)

    def _slow(self, node: int, extra: float) -> None:
        self.nodes[node].extra_delay += extra
        self._log("slowdown", node=node, extra=extra)

    # -- request engine -------------------------------------------------------

    def _delay(self, node: MemoryNode, client=None) -> float:
        d = self.config.link_latency.get((client, node.id), node.base_latency) + node.extra_delay
        if self.config.jitter > 0:
            d += self.sim.rng.expovariate(1.0 / self.config.jitter)
        return d

    def submit(self, requests: Sequence[Request]) -> PhaseHandle:
        """Issue all requests concurrently; together they cost one roundtrip."""
        return PhaseHandle(requests, [self._issue(r) for r in requests])

    def read(self, node: int, offset: int, length: int) -> Event:
        return self._issue(Read(node, offset, length))

    def write(self, node: int, offset: int, data: bytes) -> Event:
        return self._issue(Write(node, offset, bytes(data)))

    def cas(self, node: int, offset: int, expected: int, new: int) -> Event:
        return self._issue(Cas(node, offset, expected, new))

    def apply(self, node: int, fn: Callable) -> Event:
        return self._issue(Apply(node, fn))

    def pair(self, first, second) -> Event:
        return self._issue(Pair(first, second))

    def await_majority(self, handle: PhaseHandle, quorum: Optional[int] = None) -> Quorum:
        return handle.majority(quorum)

    def _validate(self, req) -> None:
        node = self.nodes[req.node]
        if isinstance(req, Read):
            node.check(req.offset, req.length)
        elif isinstance(req, Write):
            node.check(req.offset, len(req.data))
        elif isinstance(req, Cas):
            if req.offset % WORD:
                raise FabricError("CAS target must be 8-byte aligned")
            node.check(req.offset, WORD)
            if not (0 <= req.expected <= MASK64 and 0 <= req.new <= MASK64):
                raise FabricError("CAS operands must be 64-bit unsigned")
        elif isinstance(req, Pair):
            if req.first.node != req.second.node:
                raise FabricError("pipelined pair must target one node")
            if isinstance(req.first, (Read, Apply)) or isinstance(req.second, (Read, Apply)):
                raise FabricError("pipelined pair holds two updates")
            self._validate(req.first)
            self._validate(req.second)

    def _issue(self, req: Request) -> Event:
        self._validate(req)
        sim = self.sim
        node = self.nodes[req.node]
        client = sim.active.client if sim.active is not None else None
        ev = Event()
        depth = sim.depth + 1
        out_delay = self._delay(node, client)
        back_delay = self._delay(node, client)
        key = (client, node.id)
        arrival = max(sim.now + out_delay, self._channel_ready.get(key, 0.0))
        steps = self._step_count(req)
        wt = self.config.read_word_time if isinstance(req, Read) else self.config.word_time
        done_at = arrival + max(steps - 1, 0) * wt
        self._channel_ready[key] = done_at + wt
        state = {"req": req, "ev": ev, "depth": depth, "back": back_delay, "client": client,
                 "i": 0, "steps": steps, "wt": wt, "buf": None, "result": None}
        self._log("issue", node=node.id, client=client, req=type(req).__name__.lower())
        state["next"] = arrival
        state["span"] = self._span(req)
        self._inflight[node.id][id(state)] = state
        sim.schedule_at(arrival, self._substep, state)
        return ev

    @staticmethod
    def _words(length: int) -> int:
        return max(1, -(-length // WORD))

    def _step_count(self, req) -> int:
        if isinstance(req, Read):
            return self._words(req.length)
        if isinstance(req, Write):
            return self._words(len(req.data))
        if isinstance(req, Pair):
            return self._step_count(req.first) + self._step_count(req.second)
        return 1

    def _min_arrival(self, node: MemoryNode) -> float:
        """Lower bound on the one-way delay of any request issued to ``node`` from now on."""
        links = [d for (_c, n), d in self.config.link_latency.items() if n == node.id]
        return min([node.base_latency] + links) + node.extra_delay

    @classmethod
    def _span(cls, req) -> tuple:
        """(lo, hi, writes) byte footprint of a request; Apply touches everything."""
        if isinstance(req, Read):
            return (req.offset, req.offset + req.length, False)
        if isinstance(req, Write):
            return (req.offset, req.offset + len(req.data), True)
        if isinstance(req, Cas):
            return (req.offset, req.offset + WORD, True)
        if isinstance(req, Pair):
            a, b = cls._span(req.first), cls._span(req.second)
            return (min(a[0], b[0]), max(a[1], b[1]), True)
        return (0, 1 << 62, True)

    @staticmethod
    def _conflict(a: tuple, b: tuple) -> bool:
        return (a[2] or b[2]) and a[0] < b[1] and b[0] < a[1]

    def _quiet_until(self, node: MemoryNode, state: dict) -> float:
        """Nothing but ``state`` can touch its bytes on ``node`` strictly before the returned time."""
        now = self.sim.now
        t = now + self._min_arrival(node)
        span = state["span"]
        for other in self._inflight[node.id].values():
            if other is not state and other["next"] < t and self._conflict(span, other["span"]):
                t = other["next"]
        for ct, n in self.faults.crashes:
            if n == node.id and now < ct < t:
                t = ct
        return t

    def _substep(self, state: dict) -> None:
        req = state["req"]
        node = self.nodes[req.node]
        if node.crashed:
            self.stats["dropped"] += 1
            del self._inflight[node.id][id(state)]
            self._log("drop", node=node.id, client=state["client"])
            return
        wt = state["wt"]
        i, steps = state["i"], state["steps"]
        hi = steps
        if wt > 0 and steps - i > 1:
            # Words that land before anything else can touch the node are
            # applied together: nobody can observe the difference.
            quiet = self._quiet_until(node, state) - self.sim.now
            extra = max(0, math.ceil(quiet / wt) - 1)     # largest k with k * wt < quiet
            hi = min(steps, i + 1 + extra)
        self._apply_range(state, i, hi)
        state["i"] = hi
        if hi < steps:
            delay = (hi - i) * wt
            state["next"] = self.sim.now + delay
            self.sim.schedule(delay, self._substep, state)
        else:
            del self._inflight[node.id][id(state)]
            self.sim.schedule((hi - 1 - i) * wt + state["back"], self._deliver, state)

    def _apply_range(self, state: dict, lo: int, hi: int) -> None:
        req = state["req"]
        if isinstance(req, Pair):
            n1 = self._step_count(req.first)
            if lo < n1:
                r1 = self._apply_simple(req.first, state, "first", lo, min(hi, n1))
                if r1 is not None:
                    state["r1"] = r1
            if hi > n1:
                r2 = self._apply_simple(req.second, state, "second", max(lo, n1) - n1, hi - n1)
                if r2 is not None:
                    state["result"] = (state.get("r1"), r2)
            return
        res = self._apply_simple(req, state, "only", lo, hi)
        if res is not None:
            state["result"] = res

    def _apply_simple(self, req, state: dict, slot: str, lo: int, hi: int):
        node = self.nodes[req.node]
        if isinstance(req, Read):
            bufkey = "buf_" + slot
            buf = state.get(bufkey)
            if buf is None:
                buf = state[bufkey] = bytearray(req.length)
            a = lo * WORD
            b = min(hi * WORD, req.length)
            buf[a:b] = node.mem[req.offset + a:req.offset + b]
            if hi * WORD >= req.length:
                self.stats["read"] += 1
                self.stats["bytes_read"] += req.length
                return bytes(buf)
            return None
        if isinstance(req, Write):
            a = lo * WORD
            b = min(hi * WORD, len(req.data))
            node.mem[req.offset + a:req.offset + b] = req.data[a:b]
            if hi * WORD >= len(req.data):
                self.stats["write"] += 1
                self.stats["bytes_written"] += len(req.data)
                return True
            return None
        if isinstance(req, Cas):
            prev = node.load_word(req.offset)
            self.stats["cas"] += 1
            if prev == req.expected:
                node.store_word(req.offset, req.new)
                for listener in self.cas_listeners:
                    listener(node.id, req.offset, prev, req.new, state["client"], self.sim.now)
                self._log("cas", node=node.id, client=state["client"], off=req.offset,
                          prev=prev, new=req.new)
            if slot == "first":
                state["r1"] = prev
            return prev
        if isinstance(req, Apply):
            self.stats["apply"] += 1
            return ("ok", req.fn(node))
        raise FabricError(f"unknown request {req!r}")

    def _deliver(self, state: dict) -> None:
        node = self.nodes[state["req"].node]
        if node.crashed:
            self.stats["dropped"] += 1
            self._log("drop", node=node.id, client=state["client"])
            return
        result = state["result"]
        if isinstance(state["req"], Apply):
            result = result[1]
        elif isinstance(state["req"], Pair):
            self.stats["pair"] += 1
        self._log("deliver", node=node.id, client=state["client"])
        state["ev"].succeed(result, state["depth"])

    # -- event log ------------------------------------------------------------

    def _log(self, what: str, **fields: Any) -> None:
        if self.log_events:
            rec = {"t": round(self.sim.now, 9), "ev": what}
            rec.update(fields)
            self.event_log.append(rec)

    def export_log(self, path) -> None:
        with open(path, "w") as fh:
            for rec in self.event_log:
                fh.write(json.dumps(rec, sort_keys=True) + "\n")

    def log_lines(self) -> list[str]:
        return [json.dumps(rec, sort_keys=True) for rec in self.event_log]


def u64(data: bytes, offset: int = 0) -> int:
    return struct.unpack_from("<Q", data, offset)[0]
