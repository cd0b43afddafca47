"""Replicated key-value store: one Safe-Guess register per key over In-n-Out replicas.

An always-available index service maps keys to replica sets. Clients cache
locations (and, with them, their per-register quorum state). Inserts write the
value and set the index in the same phase; deletes look the key up in the
index (never the cache), write an all-ones timestamp that no later write can
beat, then mark the index entry deleted.

Every operation is journaled twice: per key with the key-level model below
(absent covers both "never written" and "deleted"), and per replica set at the
register level with timestamps for the construction checker.

=================  ============================
operation          key-level model
=================  ============================
insert             write(v)
update ok          write(v)
update missing     read() -> ABSENT
get                read() -> value or ABSENT
delete ok          write(ABSENT)
delete missing     read() -> ABSENT
=================  ============================
"""

from __future__ import annotations

from collections import OrderedDict
from dataclasses import dataclass, field
from typing import Optional

import xxhash

from . import values as V
from .fabric import Fabric
from .history import ABSENT, TOMBSTONE, Recorder
from .innout import InNOutDriver, OopPool, RegisterLayout
from .maxreg import QuorumPolicy, ReliableMaxRegister
from .monitor import Monitor
from .safeguess import DeletedError, GuessClock, SafeGuessConfig, SafeGuessRegister, WriteResult
from .tslock import TimestampLock


class NoSuchKey(Exception):
    pass


@dataclass
class KVConfig:
    clients: int = 4
    slots: Optional[int] = None             # meta slots per register; default one per client
    value_size: int = 64
    inplace_cap: Optional[int] = None       # default value_size; 0 disables in-place reads
    cache_capacity: int = 100_000
    protocol: str = "swarm"                 # "swarm" | "abd"
    abd_weak_read: bool = True
    poisoned_hash: bool = False
    safeguess: SafeGuessConfig = field(default_factory=SafeGuessConfig)
    policy: QuorumPolicy = field(default_factory=QuorumPolicy)
    skew: dict = field(default_factory=dict)          # client -> clock skew
    resync: str = "floor"
    clock_resolution: int = 1000

    def __post_init__(self):
        if self.slots is None:
            self.slots = self.clients
        if self.inplace_cap is None:
            self.inplace_cap = self.value_size
        if not 1 <= self.clients < V.SENTINEL_TID:
            raise ValueError(f"clients must be in [1, {V.SENTINEL_TID - 1}]")
        if self.slots < 1:
            raise ValueError("need at least one meta slot")
        if self.protocol not in ("swarm", "abd"):
            raise ValueError(f"unknown protocol {self.protocol!r}")


class AbdRegister:
    """Classic two-phase writes over the same max register: fetch a timestamp, then write."""

    def __init__(self, sim, maxreg: ReliableMaxRegister, weak: bool = True,
                 recorder: Optional[Recorder] = None, name=None):
        self.sim = sim
        self.M = maxreg
        self.weak = weak
        self.recorder = recorder
        self.name = name
        self.monitor = maxreg.monitor

    def write(self, client: int, value: bytes, clock=None):
        rec = self.recorder.invoke(client, "write", value, obj=self.name) if self.recorder else None
        d0 = self.sim.depth
        if self.weak:
            m, _ = yield from self.M.weak_read(client)
        else:
            m, _ = yield from self.M.read(client)
        stages = {"read": self.sim.depth - d0}
        if m.is_sentinel:
            if rec is not None:
                rec.kind = "read"
                self.recorder.respond(rec, TOMBSTONE, path="deleted")
            raise DeletedError()
        nv = V.make(V.Timestamp(m.i + 1, client), V.VERIFIED, value)
        self.M.driver.remember(self.M.client_state(client), nv)
        d1 = self.sim.depth
        yield from self.M.write(client, nv)
        stages["write"] = self.sim.depth - d1
        phases = self.sim.depth - d0
        if rec is not None:
            rec.ts = (nv.i, nv.tid)
            self.recorder.respond(rec, path="abd", rtt=phases)
        return WriteResult("abd", (nv.i, nv.tid), (nv.i, nv.tid), phases, stages=stages)

    def write_sentinel(self, client: int):
        rec = self.recorder.invoke(client, "write", TOMBSTONE, obj=self.name) if self.recorder else None
        d0 = self.sim.depth
        yield from self.M.write(client, V.sentinel())
        phases = self.sim.depth - d0
        if rec is not None:
            s = V.sentinel()
            rec.ts = (s.i, s.tid)
            self.recorder.respond(rec, path="delete", rtt=phases)
        return phases

    def read(self, client: int):
        rec = self.recorder.invoke(client, "read", obj=self.name) if self.recorder else None
        d0 = self.sim.depth
        m, _ = yield from self.M.read(client)
        m = yield from self.M.resolve(client, m)
        value = None if m.is_bottom else TOMBSTONE if m.is_sentinel else m.value
        phases = self.sim.depth - d0
        if rec is not None:
            self.recorder.respond(rec, value, path="abd", rtt=phases, ts=(m.i, m.tid))
        return value, {"path": "abd", "phases": phases, "iterations": 1}


@dataclass
class ReplicaSet:
    id: int
    key: bytes
    nodes: list                 # preferred order; nodes[0] holds the in-place block
    layout: RegisterLayout
    register: object            # SafeGuessRegister or AbdRegister

    @property
    def designated(self) -> int:
        return self.nodes[0]


class IndexService:
    """Linearizable key -> replica-set map on a node outside the fault schedule.

    Each call is one atomic request to that node, i.e. one roundtrip.
    """

    def __init__(self, fabric: Fabric):
        self.fabric = fabric
        self.node = fabric.add_service_node()
        self.table: dict = {}           # key -> [rs_id, deleted]

    def _call(self, fn):
        return self.fabric.apply(self.node, lambda _mem: fn())

    def get(self, key):
        def fn():
            entry = self.table.get(key)
            if entry is None or entry[1]:
                return None
            return entry[0]
        return self._call(fn)

    def insert_or_get(self, key, rs_id: int):
        def fn():
            entry = self.table.get(key)
            if entry is None or entry[1]:
                self.table[key] = [rs_id, False]
                return ("inserted", rs_id)
            return ("exists", entry[0])
        return self._call(fn)

    def mark_deleted(self, key, rs_id: int):
        def fn():
            entry = self.table.get(key)
            if entry is not None and entry[0] == rs_id:
                entry[1] = True
        return self._call(fn)

    def remove_if(self, key, rs_id: int):
        def fn():
            entry = self.table.get(key)
            if entry is not None and entry[0] == rs_id:
                del self.table[key]
        return self._call(fn)


class LocationCache:
    """Bounded key -> replica set hints with least-frequently-used eviction."""

    def __init__(self, capacity: int):
        self.capacity = capacity
        self.entries: OrderedDict = OrderedDict()      # key -> [rs, hits]
        self.hits = 0
        self.misses = 0

    def get(self, key) -> Optional[ReplicaSet]:
        entry = self.entries.get(key)
        if entry is None:
            self.misses += 1
            return None
        self.hits += 1
        entry[1] += 1
        return entry[0]

    def put(self, key, rs: ReplicaSet) -> Optional[ReplicaSet]:
        """Insert; returns the evicted replica set, if any."""
        evicted = None
        if key not in self.entries and len(self.entries) >= self.capacity:
            victim = min(self.entries, key=lambda k: self.entries[k][1])
            evicted = self.entries.pop(victim)[0]
        old = self.entries.get(key)
        self.entries[key] = [rs, old[1] if old and old[0] is rs else 1]
        return evicted

    def flush(self, key) -> Optional[ReplicaSet]:
        entry = self.entries.pop(key, None)
        return entry[0] if entry else None


class KVStore:
    """Shared state of one simulated deployment: index, replicas, recorders."""

    def __init__(self, sim, fabric: Fabric, config: Optional[KVConfig] = None,
                 monitor: Optional[Monitor] = None):
        self.sim = sim
        self.fabric = fabric
        self.config = config or KVConfig()
        self.monitor = monitor or Monitor()
        self.index = IndexService(fabric)
        self.pool = OopPool(fabric, self.config.value_size)
        self.replica_sets: dict[int, ReplicaSet] = {}
        self.kv_history = Recorder(sim)
        self.reg_history = Recorder(sim)
        self.lock_journal: list = []
        self.clients = [KVClient(self, c) for c in range(self.config.clients)]

    def placement(self, key: bytes) -> list[int]:
        n = self.fabric.n
        start = xxhash.xxh3_64_intdigest(key) % n
        return [(start + j) % n for j in range(n)]

    def meta_regions(self) -> dict:
        """register name -> {node: (start, end)} of its meta slots, for trace audits."""
        out = {}
        for rs in self.replica_sets.values():
            lay = rs.layout
            out[rs.register.name] = {n: (lay.meta_slot(n, 0), lay.meta_slot(n, lay.slots))
                                     for n in lay.base}
        return out

    def new_replicas(self, key: bytes) -> ReplicaSet:
        """Carve cleared replicas out of the nodes' arenas; no fabric traffic."""
        cfg = self.config
        nodes = self.placement(key)
        layout = RegisterLayout.allocate(self.fabric, nodes, cfg.clients, cfg.slots, nodes[0],
                                         min(cfg.inplace_cap, cfg.value_size))
        rs_id = len(self.replica_sets) + 1
        name = (key, rs_id)
        driver = InNOutDriver(self.fabric, layout, self.pool, monitor=self.monitor,
                              poisoned_hash=cfg.poisoned_hash)
        maxreg = ReliableMaxRegister(self.sim, driver, self.fabric.n, preferred=nodes,
                                     policy=cfg.policy, monitor=self.monitor, name=str(name))
        if cfg.protocol == "abd":
            reg = AbdRegister(self.sim, maxreg, weak=cfg.abd_weak_read,
                              recorder=self.reg_history, name=name)
        else:
            locks = {tid: TimestampLock(self.sim, self.fabric,
                                        {node: layout.lock_cell(node, tid) for node in nodes},
                                        (name, tid), monitor=self.monitor, journal=self.lock_journal)
                     for tid in range(cfg.clients)}
            reg = SafeGuessRegister(self.sim, maxreg, locks, writers=cfg.clients,
                                    config=cfg.safeguess, monitor=self.monitor,
                                    recorder=self.reg_history, name=name)
        rs = ReplicaSet(rs_id, key, nodes, layout, reg)
        self.replica_sets[rs_id] = rs
        return rs


class KVClient:
    def __init__(self, store: KVStore, cid: int):
        self.store = store
        self.cid = cid
        self.sim = store.sim
        cfg = store.config
        self.clock = GuessClock(self.sim, cid, skew=cfg.skew.get(cid, 0.0),
                                resolution=cfg.clock_resolution, policy=cfg.resync)
        self.cache = LocationCache(cfg.cache_capacity)
        self.last: dict = {}        # details of the last operation, for metrics

    # -- location handling --------------------------------------------------

    def _remember(self, key, rs: ReplicaSet) -> None:
        evicted = self.cache.put(key, rs)
        if evicted is not None and evicted is not rs:
            evicted.register.M.forget(self.cid)

    def _flush(self, key) -> None:
        rs = self.cache.flush(key)
        if rs is not None:
            rs.register.M.forget(self.cid)

    def _locate(self, key):
        """Returns (replica set or None, came_from_cache)."""
        rs = self.cache.get(key)
        if rs is not None:
            return rs, True
        rs_id = yield self.store.index.get(key)
        if rs_id is None:
            return None, False
        rs = self.store.replica_sets[rs_id]
        self._remember(key, rs)
        return rs, False

    def _begin(self, op: str, key, value=None):
        kind = "read" if op == "get" else "write"
        rec = self.store.kv_history.invoke(self.cid, kind, value, obj=key)
        rec.info["op"] = op
        self.last = {"op": op, "key": key, "d0": self.sim.depth, "t0": self.sim.now,
                     "retries": 0, "cold": False}
        return rec

    def _end(self, rec, outcome: str, read_value=None, **info):
        if outcome in ("no_such_key",):
            rec.kind = "read"
            read_value = ABSENT
        self.store.kv_history.respond(rec, read_value, outcome=outcome, **info)
        self.last["outcome"] = outcome
        self.last["rtt"] = self.sim.depth - self.last["d0"]
        rec.info["rtt"] = self.last["rtt"]
        rec.info["cold"] = self.last["cold"]

    # -- operations -----------------------------------------------------------

    def insert(self, key: bytes, value: bytes):
        self._check_value(value)
        rec = self._begin("insert", key, value)
        while True:
            fresh = self.store.new_replicas(key)
            set_ev = self.store.index.insert_or_get(key, fresh.id)
            write = self.sim.spawn(self._fresh_write(fresh, value), name="insert-write")
            status, rs_id = yield set_ev
            if status == "inserted":
                overwritten = yield write
                self._remember(key, fresh)
                # a delete that found the new entry may already have sealed the set
                self.last["path"] = "insert_deleted" if overwritten else "insert"
                self._end(rec, "ok")
                return "ok"
            # the key is live: the fresh replicas are abandoned and this becomes an update
            rs = self.store.replica_sets[rs_id]
            self._remember(key, rs)
            try:
                yield from self._write_existing(rs, value)
            except DeletedError:
                self.last["retries"] += 1
                self._flush(key)
                yield self.store.index.remove_if(key, rs.id)
                continue
            self.last["path"] = "insert_as_update"
            self._end(rec, "ok")
            return "updated"

    def _fresh_write(self, rs: ReplicaSet, value: bytes):
        """True when a concurrent delete got to the new set first."""
        try:
            yield from rs.register.write(self.cid, value, self.clock)
        except DeletedError:
            return True
        return False

    def _write_existing(self, rs: ReplicaSet, value: bytes):
        M = rs.register.M
        if self.cid not in M._clients:
            # no quorum state for this register: learn the current slot contents first
            self.last["cold"] = True
            yield from M.weak_read(self.cid)
        res = yield from rs.register.write(self.cid, value, self.clock)
        self.last["path"] = res.path
        self.last["stages"] = res.stages
        return res

    def update(self, key: bytes, value: bytes):
        self._check_value(value)
        rec = self._begin("update", key, value)
        for _ in range(8):
            rs, cached = yield from self._locate(key)
            if not cached:
                self.last["cold"] = True
            if rs is None:
                self._end(rec, "no_such_key")
                return "no_such_key"
            try:
                yield from self._write_existing(rs, value)
            except DeletedError:
                self.last["retries"] += 1
                self._flush(key)
                yield self.store.index.remove_if(key, rs.id)
                continue
            self._end(rec, "ok")
            return "ok"
        raise RuntimeError("update kept hitting deleted replicas")

    def get(self, key: bytes):
        rec = self._begin("get", key)
        for attempt in range(2):
            rs, cached = yield from self._locate(key)
            if not cached:
                self.last["cold"] = True
            if rs is None:
                self._end(rec, "not_found", ABSENT)
                return None
            value, info = yield from rs.register.read(self.cid)
            self.last["path"] = info["path"]
            self.last["iterations"] = info["iterations"]
            if value is TOMBSTONE and cached and attempt == 0:
                self.last["retries"] += 1
                self._flush(key)
                continue
            if value is None or value is TOMBSTONE:
                self._end(rec, "not_found", ABSENT)
                return None
            self._end(rec, "ok", value)
            return value
        raise AssertionError("unreachable")

    def delete(self, key: bytes):
        rec = self._begin("delete", key, ABSENT)
        # always ask the index: sealing a cached but already replaced incarnation
        # would take effect at no point inside this operation
        rs_id = yield self.store.index.get(key)
        if rs_id is None:
            self._flush(key)
            self._end(rec, "no_such_key")
            return "no_such_key"
        rs = self.store.replica_sets[rs_id]
        self._remember(key, rs)
        yield from rs.register.write_sentinel(self.cid)
        yield self.store.index.mark_deleted(key, rs.id)
        self.last["path"] = "delete"
        self._end(rec, "ok")
        return "ok"

    def _check_value(self, value: bytes) -> None:
        if len(value) > self.store.config.value_size:
            raise ValueError(f"value of {len(value)} bytes exceeds {self.store.config.value_size}")
