"""One-roundtrip unreliable max registers for large values.

Per register and per node the layout is one contiguous region::

    [ lock cells: one word per writer ][ meta slots: k words ][ in-place block ]

The in-place block ``[hash | len | value]`` only exists on the register's
designated node. A write fills a fresh out-of-place buffer and then CASes the
writer's meta slot, pipelined so the slot never points at an unfilled buffer.
Verified tuples are also copied to the in-place block together with a hash over
(meta word, value); a reader that reads the region in one request returns the
in-place value when the hash matches the largest slot and otherwise has to
fetch the out-of-place buffer.

Out-of-place buffers are written once and never recycled.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional

import xxhash

from . import values as V
from .fabric import WORD, Cas, Fabric, Pair, Read, Write, u64
from .maxreg import ValueUnavailable
from .monitor import Monitor
from .sim import Event, Quorum

Digest = Callable[[int, bytes], int]


def xxh3_digest(word: int, value: bytes) -> int:
    return xxhash.xxh3_64_intdigest(word.to_bytes(WORD, "little") + value)


class ArenaExhausted(RuntimeError):
    pass


class OopPool:
    """Fixed-size out-of-place buffers. Clients reserve chunks locally, so
    allocation never touches the fabric; a buffer's index is its address
    divided by the buffer size."""

    def __init__(self, fabric: Fabric, value_size: int, chunk: int = 64):
        self.fabric = fabric
        self.value_size = value_size
        self.buf_size = -(-(WORD + value_size) // WORD) * WORD
        self.chunk = chunk
        self._free: dict = {}           # (client, node) -> [next, end]

    def allocate(self, client, node: int) -> int:
        span = self._free.get((client, node))
        if span is None or span[0] >= span[1]:
            mem = self.fabric.nodes[node]
            if mem.brk == 0:
                mem.alloc(WORD)         # index 0 stays "empty"
            addr = mem.alloc(self.chunk * self.buf_size, align=self.buf_size)
            first = addr // self.buf_size
            if first + self.chunk > V.OOP_MASK:
                raise ArenaExhausted(f"node {node}: out-of-place index space exhausted")
            span = self._free[(client, node)] = [first, first + self.chunk]
        index = span[0]
        span[0] += 1
        return index

    def address(self, index: int) -> int:
        return index * self.buf_size


@dataclass
class RegisterLayout:
    base: dict                  # node -> region offset
    writers: int                # lock cells, one per writer tid
    slots: int                  # k meta slots
    designated: int             # node holding the in-place block
    inplace_cap: int

    def lock_cell(self, node: int, tid: int) -> int:
        return self.base[node] + WORD * tid

    def meta_slot(self, node: int, slot: int) -> int:
        return self.base[node] + WORD * (self.writers + slot)

    def inplace(self, node: int) -> int:
        return self.base[node] + WORD * (self.writers + self.slots)

    def has_inplace(self, node: int) -> bool:
        return node == self.designated and self.inplace_cap > 0

    def region_len(self, node: int) -> int:
        n = WORD * (self.writers + self.slots)
        if self.has_inplace(node):
            n += 2 * WORD + self.inplace_cap
        return n

    @classmethod
    def allocate(cls, fabric: Fabric, nodes, writers: int, slots: int, designated: int,
                 inplace_cap: int) -> "RegisterLayout":
        base = {}
        for node in nodes:
            n = WORD * (writers + slots)
            if node == designated and inplace_cap > 0:
                n += 2 * WORD + inplace_cap
            mem = fabric.nodes[node]
            if mem.brk == 0:
                mem.alloc(WORD)
            base[node] = mem.alloc(n)
        return cls(base, writers, slots, designated, inplace_cap)


@dataclass
class SlotState:
    known: int = 0                          # largest value this client saw in its slot
    pending: Optional[tuple] = None         # (target word, event) of the newest CAS in flight


@dataclass
class DriverClient:
    slots: dict = field(default_factory=dict)          # node -> SlotState
    locks: dict = field(default_factory=dict)          # tid -> {node: cell word}
    values: dict = field(default_factory=dict)         # tuple key -> bytes


class InNOutDriver:
    """Per-node register driver plugged into the reliable max register."""

    def __init__(self, fabric: Fabric, layout: RegisterLayout, pool: OopPool,
                 digest: Digest = xxh3_digest, monitor: Optional[Monitor] = None,
                 poisoned_hash: bool = False, fetch_timeout: float = 3.0, fetch_attempts: int = 8):
        self.fabric = fabric
        self.sim = fabric.sim
        self.layout = layout
        self.pool = pool
        self.digest = digest
        self.monitor = monitor or Monitor()
        self.poisoned_hash = poisoned_hash
        self.fetch_timeout = fetch_timeout
        self.fetch_attempts = fetch_attempts
        self.bottom = V.bottom()
        self.combine = V.merge
        self.stats = {"inplace_hit": 0, "inplace_miss": 0, "oop_fetch": 0, "cas_retry": 0,
                      "writes": 0, "reads": 0}

    # -- client state -----------------------------------------------------

    @staticmethod
    def state(cs) -> DriverClient:
        st = cs.driver_state.get("innout")
        if st is None:
            st = cs.driver_state["innout"] = DriverClient()
        return st

    def slot_of(self, client: int) -> int:
        return client % self.layout.slots

    def remember(self, cs, mv: V.MValue) -> None:
        """A writer knows the bytes behind its own tuples."""
        if mv.resolved and mv.value is not None:
            self.state(cs).values[mv.key] = mv.value

    def lock_view(self, cs, tid: int) -> dict:
        return self.state(cs).locks.setdefault(tid, {})

    # -- reads ------------------------------------------------------------

    def _parse(self, node: int, data: bytes, cs) -> V.MValue:
        lay = self.layout
        st = self.state(cs)
        for tid in range(lay.writers):
            word = u64(data, WORD * tid)
            if word:
                view = st.locks.setdefault(tid, {})
                if word > view.get(node, 0):
                    view[node] = word
        best = 0
        mine = self.slot_of(cs.client)
        for s in range(lay.slots):
            word = u64(data, WORD * (lay.writers + s))
            if s == mine:
                slot = st.slots.setdefault(node, SlotState())
                if word > slot.known:
                    slot.known = word
            if V.meta_field(word) > V.meta_field(best):
                best = word
        if best == 0:
            return V.bottom()
        mv = V.unpack_meta(best)
        if mv.is_sentinel:
            mv.value = None
            return mv
        known = st.values.get(mv.key)
        if known is not None:
            mv.value = known
            return mv
        if lay.has_inplace(node):
            off = WORD * (lay.writers + lay.slots)
            h = u64(data, off)
            ln = u64(data, off + WORD)
            if ln <= lay.inplace_cap and not self.poisoned_hash:
                val = bytes(data[off + 2 * WORD: off + 2 * WORD + ln])
                if h == self.digest(best, val):
                    self.stats["inplace_hit"] += 1
                    mv.value = val
                    st.values[mv.key] = val
                    return mv
            self.stats["inplace_miss"] += 1
        mv.sources = [(node, V.meta_oop(best))]
        return mv

    def read(self, node: int, cs) -> Event:
        """Read all slots and the in-place block in one request."""
        self.stats["reads"] += 1
        return self.sim.spawn(self._read(node, cs), name="inout-read")

    def _read(self, node: int, cs):
        lay = self.layout
        data = yield self.fabric.read(node, lay.base[node], lay.region_len(node))
        return self._parse(node, data, cs)

    def resolve(self, mv: V.MValue, cs):
        """Fetch the bytes of ``mv`` from an out-of-place buffer if needed."""
        if mv.resolved or mv.is_bottom or mv.is_sentinel:
            return mv
        st = self.state(cs)
        known = st.values.get(mv.key)
        if known is not None:
            return V.MValue(mv.i, mv.tid, mv.flag, known)
        sources = list(mv.sources)
        tried: set = set()
        fetches: list = []
        seen: dict = {}
        for _attempt in range(self.fetch_attempts):
            fresh = [s for s in sources if s not in tried]
            tried.update(fresh)
            for node, idx in fresh:
                self.stats["oop_fetch"] += 1
                fetches.append(self.fabric.read(node, self.pool.address(idx), self.pool.buf_size))
            if fetches:
                # slow copies stay in the race; a timeout only adds more candidates
                yield Quorum([Quorum(fetches, need=1), self.sim.timeout(self.fetch_timeout)], need=1)
                for ev in fetches:
                    if ev.triggered:
                        ln = u64(ev.value, 0)
                        val = bytes(ev.value[WORD:WORD + ln])
                        st.values[mv.key] = val
                        return V.MValue(mv.i, mv.tid, mv.flag, val)
            # look for more holders of this tuple
            reads = [self.read(node, cs) for node in range(self.fabric.n)]
            yield Quorum(reads, need=self.fabric.majority)
            for node, ev in enumerate(reads):
                if not ev.triggered:
                    continue
                seen[node] = V.merge(seen[node], ev.value) if node in seen else ev.value
                if ev.value == mv:
                    if ev.value.resolved:
                        return ev.value
                    sources.extend(s for s in ev.value.sources if s not in sources)
            if any(v > mv for v in seen.values()) and not fetches:
                break
        self.stats["unavailable"] = self.stats.get("unavailable", 0) + 1
        raise ValueUnavailable(mv, seen)

    # -- writes -----------------------------------------------------------

    def write(self, node: int, mv: V.MValue, cs) -> Event:
        self.stats["writes"] += 1
        return self.sim.spawn(self._write(node, mv, cs, None), name="inout-write")

    def write_read(self, node: int, mv: V.MValue, cs):
        """Write ``mv`` and, pipelined behind it on the same channel, read the region."""
        self.stats["writes"] += 1
        self.stats["reads"] += 1
        box: dict = {}
        write_ev = self.sim.spawn(self._write(node, mv, cs, box), name="inout-write")
        read_ev = self.sim.spawn(self._read_after(node, cs, box), name="inout-read")
        return read_ev, write_ev

    def _read_after(self, node: int, cs, box: dict):
        data = yield box["read"]
        return self._parse(node, data, cs)

    def _write(self, node: int, mv: V.MValue, cs, box: Optional[dict]):
        """CAS loop emulating MAX on the writer's own slot; the first attempt is
        pipelined behind the out-of-place fill."""
        lay = self.layout
        st = self.state(cs)
        slot = st.slots.setdefault(node, SlotState())
        slot_addr = lay.meta_slot(node, self.slot_of(cs.client))
        target_field = mv.field()
        buffer_written = mv.is_sentinel
        oop = 0
        rounds = 0
        while True:
            if V.meta_field(slot.known) >= target_field and box is None:
                return slot.known
            pend = slot.pending
            if pend is not None and V.meta_field(pend[0]) >= target_field:
                if box is not None:
                    # still owe the caller a pipelined read
                    box["read"] = self.fabric.read(node, lay.base[node], lay.region_len(node))
                    box = None
                yield pend[1]
                continue
            expected = pend[0] if pend is not None else slot.known
            if V.meta_field(slot.known) >= target_field:
                expected = None
            if not buffer_written:
                oop = self.pool.allocate(cs.client, node)
            packed = V.pack_meta(mv, oop)
            reqs = []
            if expected is not None:
                if not buffer_written:
                    payload = len(mv.value).to_bytes(WORD, "little") + mv.value
                    reqs.append(Pair(Write(node, self.pool.address(oop), payload),
                                     Cas(node, slot_addr, expected, packed)))
                    buffer_written = True
                else:
                    reqs.append(Cas(node, slot_addr, expected, packed))
            read_idx = None
            if box is not None:
                read_idx = len(reqs)
                reqs.append(Read(node, lay.base[node], lay.region_len(node)))
            if (expected is not None and mv.verified and lay.has_inplace(node)
                    and not mv.is_sentinel and len(mv.value) <= lay.inplace_cap):
                block = (self.digest(packed, mv.value).to_bytes(WORD, "little")
                         + len(mv.value).to_bytes(WORD, "little") + mv.value)
                reqs.append(Write(node, lay.inplace(node), block))
            handle = self.fabric.submit(reqs)
            if read_idx is not None:
                box["read"] = handle.events[read_idx]
                box = None
            if expected is None:
                return slot.known
            ev = handle.events[0]
            slot.pending = (packed, ev)
            res = yield ev
            rounds += 1
            if rounds > 1:
                self.stats["cas_retry"] += 1
            prev = res[1] if isinstance(res, tuple) else res
            if slot.pending is not None and slot.pending[1] is ev:
                slot.pending = None
            if prev == expected:
                if packed > slot.known:
                    slot.known = packed
                return packed
            if prev > slot.known:
                slot.known = prev
            if V.meta_field(prev) >= target_field:
                return prev
            self.monitor.check(rounds <= 64, "innout.cas_rounds", f"{rounds} CAS rounds on one slot")
