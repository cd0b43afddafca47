"""Timestamps, register tuples and their 64-bit packings."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

GUESSED = 0
VERIFIED = 1

TS_I_BITS = 31
TID_BITS = 8
FLAG_BITS = 1
OOP_BITS = 24
TS_FIELD_BITS = TS_I_BITS + TID_BITS + FLAG_BITS          # 40
MAX_I = (1 << TS_I_BITS) - 1
MAX_TID = (1 << TID_BITS) - 1
SENTINEL_FIELD = (1 << TS_FIELD_BITS) - 1
OOP_MASK = (1 << OOP_BITS) - 1
SENTINEL_TID = MAX_TID        # reserved; clients use tids below it


class TimestampOverflow(RuntimeError):
    pass


@dataclass(frozen=True, order=True)
class Timestamp:
    i: int
    tid: int

    def lock_value(self) -> int:
        """Integer with the same order, used as a timestamp-lock key."""
        return (self.i << TID_BITS) | self.tid


class Unresolved:
    """Marker for a tuple whose value bytes have not been fetched yet."""

    __slots__ = ()

    def __repr__(self) -> str:
        return "<unresolved>"


UNRESOLVED = Unresolved()


@dataclass(eq=False)
class MValue:
    """A (timestamp, flag, value) tuple. Ordering and equality use (i, tid, flag)
    only; two writes never share a timestamp, so the bytes are determined by it.

    ``value`` may be :data:`UNRESOLVED`, in which case ``sources`` lists
    ``(node, oop_index)`` places the bytes can be fetched from.
    """

    i: int
    tid: int
    flag: int
    value: object = None
    sources: list = field(default_factory=list)

    @property
    def key(self) -> tuple:
        return (self.i, self.tid, self.flag)

    @property
    def ts(self) -> Timestamp:
        return Timestamp(self.i, self.tid)

    @property
    def verified(self) -> bool:
        return self.flag == VERIFIED

    @property
    def is_sentinel(self) -> bool:
        return self.field() == SENTINEL_FIELD

    @property
    def is_bottom(self) -> bool:
        return self.i == 0

    @property
    def resolved(self) -> bool:
        return self.value is not UNRESOLVED

    def field(self) -> int:
        return (self.i << (TID_BITS + FLAG_BITS)) | (self.tid << FLAG_BITS) | self.flag

    def with_flag(self, flag: int) -> "MValue":
        return MValue(self.i, self.tid, flag, self.value, list(self.sources))

    def __eq__(self, other) -> bool:
        return isinstance(other, MValue) and self.key == other.key

    def __lt__(self, other: "MValue") -> bool:
        return self.key < other.key

    def __le__(self, other: "MValue") -> bool:
        return self.key <= other.key

    def __gt__(self, other: "MValue") -> bool:
        return self.key > other.key

    def __ge__(self, other: "MValue") -> bool:
        return self.key >= other.key

    def __hash__(self) -> int:
        return hash(self.key)

    def __repr__(self) -> str:
        if self.is_bottom:
            return "MValue(⊥)"
        if self.is_sentinel:
            return "MValue(DELETED)"
        flag = "V" if self.flag else "G"
        return f"MValue({self.i},{self.tid},{flag},{self.value!r})"


def bottom() -> MValue:
    return MValue(0, 0, VERIFIED, None)


def sentinel() -> MValue:
    return MValue(MAX_I, SENTINEL_TID, VERIFIED, None)


def make(ts: Timestamp, flag: int, value) -> MValue:
    if ts.i > MAX_I or (ts.i == MAX_I and ts.tid == SENTINEL_TID):
        raise TimestampOverflow(f"timestamp counter {ts.i} exceeds {TS_I_BITS} bits")
    if not 0 <= ts.tid < SENTINEL_TID:
        raise ValueError(f"tid {ts.tid} out of range")
    return MValue(ts.i, ts.tid, flag, value)


def merge(a: MValue, b: MValue) -> MValue:
    """Max of two tuples, pooling value knowledge when they are equal."""
    if a.key != b.key:
        return a if a > b else b
    if a.resolved:
        return a
    if b.resolved:
        return b
    out = MValue(a.i, a.tid, a.flag, a.value, list(a.sources))
    for src in b.sources:
        if src not in out.sources:
            out.sources.append(src)
    return out


# -- packed In-n-Out metadata word ------------------------------------------

def pack_meta(mv: MValue, oop_index: int) -> int:
    if not 0 <= oop_index <= OOP_MASK:
        raise ValueError("oop index does not fit")
    return (mv.field() << OOP_BITS) | oop_index


def meta_field(word: int) -> int:
    return word >> OOP_BITS


def meta_oop(word: int) -> int:
    return word & OOP_MASK


def unpack_meta(word: int) -> Optional[MValue]:
    """Decode a metadata word; ``None`` for an empty slot."""
    if word == 0:
        return None
    fld = word >> OOP_BITS
    return MValue(fld >> (TID_BITS + FLAG_BITS), (fld >> FLAG_BITS) & MAX_TID, fld & 1, UNRESOLVED)


# -- timestamp-lock cell ------------------------------------------------------

READ = 0
WRITE = 1


def pack_cell(ts: int, mode: int) -> int:
    return (ts << 1) | mode


def cell_ts(word: int) -> int:
    return word >> 1


def cell_mode(word: int) -> int:
    return word & 1
