"""Invocation/response records consumed by the linearizability checker."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from typing import Any, Optional


class _Marker:
    def __init__(self, name: str):
        self.name = name

    def __repr__(self) -> str:
        return self.name

    def __reduce__(self):
        return (_marker, (self.name,))


_MARKERS: dict = {}


def _marker(name: str) -> _Marker:
    if name not in _MARKERS:
        _MARKERS[name] = _Marker(name)
    return _MARKERS[name]


TOMBSTONE = _marker("TOMBSTONE")     # value written by a delete
ABSENT = _marker("ABSENT")           # key-level "not found", for ⊥ and tombstone alike


@dataclass
class HistoryEvent:
    client: int
    kind: str                          # "read" | "write"
    value: Any                         # bytes, None (⊥) or a marker
    invoke: float
    response: Optional[float] = None   # None while pending
    ts: Optional[tuple] = None         # (i, tid) for writes; sentinel writes use the max
    guessed: Optional[tuple] = None
    obj: Any = None                    # register or key this operation targets
    info: dict = field(default_factory=dict)

    @property
    def pending(self) -> bool:
        return self.response is None

    def to_json(self) -> str:
        d = asdict(self)
        d["value"] = encode_value(self.value)
        d["obj"] = None if self.obj is None else str(self.obj)
        return json.dumps(d, sort_keys=True)

    @classmethod
    def from_json(cls, line: str) -> "HistoryEvent":
        d = json.loads(line)
        d["value"] = decode_value(d["value"])
        for k in ("ts", "guessed"):
            if d.get(k) is not None:
                d[k] = tuple(d[k])
        return cls(**d)


def encode_value(v: Any):
    if v is None:
        return None
    if isinstance(v, _Marker):
        return {"marker": v.name}
    if isinstance(v, (bytes, bytearray)):
        return {"hex": bytes(v).hex()}
    return {"repr": v}


def decode_value(v: Any):
    if v is None:
        return None
    if "marker" in v:
        return _marker(v["marker"])
    if "hex" in v:
        return bytes.fromhex(v["hex"])
    return v["repr"]


class Recorder:
    """Appends events; operations open an event at invocation and close it at response."""

    def __init__(self, sim):
        self.sim = sim
        self.events: list[HistoryEvent] = []

    def invoke(self, client: int, kind: str, value: Any = None, obj: Any = None) -> HistoryEvent:
        ev = HistoryEvent(client, kind, value, self.sim.now, obj=obj)
        self.events.append(ev)
        return ev

    def respond(self, ev: HistoryEvent, value: Any = None, **info) -> None:
        ev.response = self.sim.now
        if ev.kind == "read":
            ev.value = value
        ev.info.update(info)

    def by_object(self) -> dict:
        out: dict = {}
        for ev in self.events:
            out.setdefault(ev.obj, []).append(ev)
        return out


def dump_jsonl(events, path) -> None:
    with open(path, "w") as fh:
        for ev in events:
            fh.write(ev.to_json() + "\n")


def load_jsonl(path) -> list[HistoryEvent]:
    with open(path) as fh:
        return [HistoryEvent.from_json(line) for line in fh if line.strip()]
