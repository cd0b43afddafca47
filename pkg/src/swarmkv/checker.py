"""Offline linearizability checking for register histories, plus trace audits.

Two independent checkers:

* :func:`check_bruteforce` searches for a legal sequential order consistent
  with real-time precedence (depth-first, memoized on the set of placed
  operations and the register value).
* :func:`check_construction` builds one specific order from the writes'
  timestamps: writes by timestamp, every read right after the write it
  returned (reads of ⊥ first), same-write reads by invocation. Then it only
  has to verify real-time order, in linear time after sorting.

Delete writes all carry the same all-ones timestamp. They go last, the
earliest-invoked one first, with tombstone reads placed after it.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Any, Iterable, Optional

from .history import TOMBSTONE, HistoryEvent
from .values import MAX_I, READ, SENTINEL_TID, TID_BITS, WRITE

SENTINEL_TS = (MAX_I, SENTINEL_TID)
INF = float("inf")


class BoundExceeded(ValueError):
    """Too many operations for the brute-force search; shard the history."""


class MissingAnnotation(ValueError):
    """The construction needs a timestamp on every write and on every read of a write."""


@dataclass
class CheckResult:
    valid: bool
    method: str
    order: Optional[list] = None        # witness: indices into the input events
    detail: str = ""
    prefix: list = field(default_factory=list)   # deepest legal prefix found, on violation

    def to_dict(self) -> dict:
        return {"valid": self.valid, "method": self.method, "order": self.order,
                "detail": self.detail, "prefix": self.prefix}


def _well_formed(events: list[HistoryEvent]) -> Optional[str]:
    last: dict = {}
    for idx in sorted(range(len(events)), key=lambda k: events[k].invoke):
        e = events[idx]
        if e.response is not None and e.response < e.invoke:
            return f"event {idx} responds before it is invoked"
        prev = last.get(e.client)
        if prev is not None:
            p = events[prev]
            if p.response is None or p.response > e.invoke:
                return f"client {e.client} has overlapping operations {prev} and {idx}"
        last[e.client] = idx
    return None


def _resp(e: HistoryEvent) -> float:
    return INF if e.response is None else e.response


def check_bruteforce(events: Iterable[HistoryEvent], initial: Any = None,
                     bound: int = 40) -> CheckResult:
    events = list(events)
    bad = _well_formed(events)
    if bad:
        return CheckResult(False, "bruteforce", detail="malformed history: " + bad)
    # pending reads are dropped, pending writes may or may not take effect
    ops = [i for i, e in enumerate(events) if not (e.pending and e.kind == "read")]
    if len(ops) > bound:
        raise BoundExceeded(f"{len(ops)} operations exceed the bound of {bound}")
    ops.sort(key=lambda i: events[i].invoke)
    n = len(ops)
    inv = [events[i].invoke for i in ops]
    resp = [_resp(events[i]) for i in ops]
    is_write = [events[i].kind == "write" for i in ops]
    vals = [events[i].value for i in ops]
    required = 0
    for j in range(n):
        if resp[j] != INF:
            required |= 1 << j

    failed: set = set()
    order: list[int] = []
    best: list = []

    def dfs(mask: int, value) -> bool:
        nonlocal best
        if mask & required == required:
            return True
        key = (mask, value)
        if key in failed:
            return False
        if len(order) > len(best):
            best = list(order)
        horizon = min(resp[j] for j in range(n) if not mask >> j & 1)
        for j in range(n):
            if mask >> j & 1:
                continue
            if inv[j] > horizon:
                break               # some unplaced operation finished before this one started
            if is_write[j]:
                nxt = vals[j]
            elif vals[j] == value:
                nxt = value
            else:
                continue
            order.append(j)
            if dfs(mask | 1 << j, nxt):
                return True
            order.pop()
        failed.add(key)
        return False

    if dfs(0, initial):
        return CheckResult(True, "bruteforce", order=[ops[j] for j in order])
    return CheckResult(False, "bruteforce", detail="no legal order respects real time",
                       prefix=[ops[j] for j in best])


def _read_ts(e: HistoryEvent):
    ts = e.ts if e.ts is not None else e.info.get("ts")
    return tuple(ts) if ts is not None else None


def check_construction(events: Iterable[HistoryEvent], initial: Any = None) -> CheckResult:
    events = list(events)
    bad = _well_formed(events)
    if bad:
        return CheckResult(False, "construction", detail="malformed history: " + bad)
    writes = [i for i, e in enumerate(events) if e.kind == "write"]
    reads = [i for i, e in enumerate(events) if e.kind == "read" and not e.pending]
    for i in writes:
        if not events[i].pending and events[i].ts is None:
            raise MissingAnnotation(f"write {i} has no timestamp")

    normal: dict = {}
    sentinels = []
    for i in writes:
        e = events[i]
        if e.ts is None:
            continue                     # pending and never observed
        ts = tuple(e.ts)
        if ts == SENTINEL_TS:
            sentinels.append(i)
            continue
        if ts in normal:
            return CheckResult(False, "construction",
                               detail=f"writes {normal[ts]} and {i} share timestamp {ts}")
        normal[ts] = i
    guessed = {}
    for ts, i in normal.items():
        g = events[i].guessed
        if g is not None and tuple(g) not in normal:
            guessed[tuple(g)] = i

    before_first: list = []
    after: dict = {i: [] for i in normal.values()}
    tomb_reads = []
    referenced = set()
    for r in reads:
        e = events[r]
        if e.value is initial:
            before_first.append(r)
            continue
        if e.value is TOMBSTONE:
            tomb_reads.append(r)
            continue
        ts = _read_ts(e)
        if ts is None:
            raise MissingAnnotation(f"read {r} has no timestamp")
        w = normal.get(ts, guessed.get(ts))
        if w is None or events[w].value != e.value:
            return CheckResult(False, "construction",
                               detail=f"read {r} returns a value no write with timestamp {ts} wrote")
        after[w].append(r)
        referenced.add(w)
    if tomb_reads and not sentinels:
        return CheckResult(False, "construction", detail="tombstone read without a delete")

    by_inv = lambda i: (events[i].invoke, i)
    order = sorted(before_first, key=by_inv)
    for ts in sorted(normal):
        w = normal[ts]
        if events[w].pending and w not in referenced:
            continue
        order.append(w)
        order.extend(sorted(after[w], key=by_inv))
    if sentinels:
        live = [i for i in sentinels if not events[i].pending] or sentinels
        first = min(live, key=by_inv)
        order.append(first)
        rest = [i for i in sentinels if i != first and not events[i].pending]
        order.extend(sorted(rest + tomb_reads, key=by_inv))

    # real time: nothing placed later may have responded before something earlier was invoked
    latest_inv = -INF
    latest_at = None
    for pos, i in enumerate(order):
        e = events[i]
        if _resp(e) < latest_inv:
            return CheckResult(False, "construction", prefix=order[:pos],
                               detail=f"event {i} precedes event {latest_at} in real time "
                                      f"but is linearized after it")
        if e.invoke > latest_inv:
            latest_inv, latest_at = e.invoke, i
    return CheckResult(True, "construction", order=order)


# -- audits --------------------------------------------------------------------


@dataclass
class AuditReport:
    violations: list = field(default_factory=list)
    checked: dict = field(default_factory=dict)

    @property
    def clean(self) -> bool:
        return not self.violations

    def flag(self, rule: str, detail: str) -> None:
        self.violations.append({"rule": rule, "detail": detail})

    def to_dict(self) -> dict:
        return {"clean": self.clean, "violations": self.violations, "checked": self.checked}


class CasRecorder:
    """Fabric listener collecting successful CASes for the monotonicity audit."""

    def __init__(self):
        self.entries: list = []

    def __call__(self, node, offset, prev, new, client, now) -> None:
        self.entries.append({"node": node, "offset": offset, "prev": prev, "new": new,
                             "client": client, "t": now})


def audit_cas(entries, report: AuditReport) -> None:
    """Lock cells and meta slots only grow."""
    last: dict = {}
    for e in entries:
        loc = (e["node"], e["offset"])
        if e["prev"] < last.get(loc, 0):
            report.flag("cas.regression", f"{loc}: observed {e['prev']:#x} after {last[loc]:#x}")
        if e["new"] <= e["prev"]:
            report.flag("cas.regression", f"{loc}: {e['prev']:#x} replaced by {e['new']:#x}")
        last[loc] = max(last.get(loc, 0), e["new"])
    report.checked["cas"] = report.checked.get("cas", 0) + len(entries)


def audit_locks(journal, report: AuditReport) -> None:
    """Opposite-mode exclusion and a justification for every False."""
    by_lock: dict = {}
    for rec in journal:
        if rec.responded is not None:
            by_lock.setdefault(rec.lock, []).append(rec)
    for lock, recs in by_lock.items():
        winners: dict = {}
        for r in recs:
            if r.result:
                winners.setdefault(r.ts, set()).add(r.mode)
        for ts, modes in winners.items():
            if len(modes) > 1:
                report.flag("tslock.exclusion", f"lock {lock!r}: both modes won ts {ts}")
        for r in recs:
            if r.result:
                continue
            justified = any(a is not r and a.invoked <= r.responded
                            and (a.ts > r.ts or (a.ts == r.ts and a.mode != r.mode))
                            for a in journal if a.lock == lock)
            if not justified:
                report.flag("tslock.unjustified_false", f"lock {lock!r}: ts {r.ts} failed alone")
    report.checked["trylock"] = report.checked.get("trylock", 0) + sum(map(len, by_lock.values()))


def audit_register(events, writers: int, report: AuditReport, max_write_rtt: Optional[int] = None,
                   max_read_rtt: Optional[int] = None) -> None:
    """Iteration and roundtrip bounds, and the double-read implication."""
    bound = 2 * writers + 1
    for e in events:
        it = e.info.get("iterations")
        if it is not None and it > bound:
            report.flag("read.iterations", f"read by {e.client} took {it} iterations > {bound}")
        rtt = e.info.get("rtt")
        if rtt is None:
            continue
        limit = max_read_rtt if e.kind == "read" else max_write_rtt
        if limit is not None and rtt > limit:
            report.flag("rtt.bound", f"{e.kind} by {e.client} took {rtt} roundtrips > {limit}")
    # two sequential reads of the same write: no write of a larger timestamp
    # may finish before that write started
    reads_of: dict = {}
    for e in events:
        if e.kind == "read" and not e.pending:
            ts = _read_ts(e)
            if ts is not None and e.value is not TOMBSTONE and e.value is not None:
                reads_of.setdefault(ts, []).append(e)
    write_by_ts = {}
    for e in events:
        if e.kind == "write" and e.ts is not None:
            write_by_ts.setdefault(tuple(e.ts), e)
            if e.guessed is not None:
                write_by_ts.setdefault(tuple(e.guessed), e)
    completed_writes = sorted((e for e in events if e.kind == "write" and e.ts is not None
                               and not e.pending), key=lambda e: e.response)
    for ts, rs in reads_of.items():
        if min(r.response for r in rs) >= max(r.invoke for r in rs):
            continue
        w = write_by_ts.get(ts)
        if w is None:
            continue
        for b in completed_writes:
            if b.response >= w.invoke:
                break
            if tuple(b.ts) > ts:
                report.flag("double_read", f"write {b.ts} finished before write {ts} started, "
                                           f"yet two sequential reads returned {ts}")
                break
    report.checked["register_events"] = report.checked.get("register_events", 0) + len(events)


def _lock_key(ts) -> int:
    return (ts[0] << TID_BITS) | ts[1]


def audit_guesses(obj, events, lock_journal, report: AuditReport) -> None:
    """Guesses need a lock to be returned or abandoned.

    A read may return an unverified tuple only after winning the reader lock
    on it, or after seeing a later tuple of the same writer. A write may move
    off its guessed timestamp only after winning the writer lock on it.
    """
    wins: dict = {}
    for r in lock_journal:
        if r.result and r.lock[0] == obj:
            wins.setdefault((r.lock[1], r.ts, r.mode), []).append(r)

    def won(tid, ts, mode, client, t0, t1) -> bool:
        return any(r.client == client and r.invoked >= t0 and r.responded <= t1
                   for r in wins.get((tid, _lock_key(ts), mode), ()))

    def saw_later(g, e) -> bool:
        for w in events:
            if w.client != g[1] or w.invoke > e.response:
                continue
            if w.kind == "read":
                # a write that met the delete sentinel still left its guess behind
                sealed = w.info.get("guessed")
                if sealed is not None and tuple(sealed) > g:
                    return True
                continue
            if w.guessed is not None and tuple(w.guessed) == g:
                # the write of g itself, moved up: only after its writer lock came back
                if w.ts is not None and tuple(w.ts) != g and any(
                        r.client == w.client and r.responded <= e.response
                        for r in wins.get((w.client, _lock_key(g), WRITE), ())):
                    return True
            elif w.ts is None or tuple(w.ts) > g:
                return True
        return False

    for e in events:
        if e.kind != "read" or e.pending or e.info.get("verified", True):
            continue
        g = _read_ts(e)
        if g is None or e.value is None or e.value is TOMBSTONE:
            continue
        if not saw_later(g, e) and not won(g[1], g, READ, e.client, e.invoke, e.response):
            report.flag("guess.unjustified_read",
                        f"{obj!r}: read by {e.client} returned guess {g} without its reader lock")
    for w in events:
        if w.kind != "write" or w.pending or w.guessed is None or w.ts is None:
            continue
        g, ts = tuple(w.guessed), tuple(w.ts)
        if ts != g and not won(w.client, g, WRITE, w.client, w.invoke, w.response):
            report.flag("guess.unjustified_rewrite",
                        f"{obj!r}: write by {w.client} left guess {g} for {ts} without its writer lock")


def audit_replication(cas_entries, regions: dict, histories: dict, report: AuditReport,
                      field_shift: int = 24) -> None:
    """Every returned tuple sits at a majority of nodes when its read returns.

    ``regions`` maps register -> {node: (start, end)} offsets of its meta
    slots; the meta word's timestamp field starts at bit ``field_shift``.
    """
    by_loc: dict = {}
    for obj, nodes in regions.items():
        for node, (lo, hi) in nodes.items():
            by_loc.setdefault(node, []).append((lo, hi, obj))
    grows: dict = {}                  # (obj, node) -> [(t, field)]
    for e in cas_entries:
        for lo, hi, obj in by_loc.get(e["node"], ()):
            if lo <= e["offset"] < hi:
                grows.setdefault((obj, e["node"]), []).append((e["t"], e["new"] >> field_shift))
                break
    for obj, events in histories.items():
        nodes = regions.get(obj)
        if not nodes:
            continue
        majority = len(nodes) // 2 + 1
        for e in events:
            ts = _read_ts(e)
            if e.kind != "read" or e.pending or ts is None or ts == (0, 0):
                continue
            need = (ts[0] << (TID_BITS + 1)) | (ts[1] << 1)
            holders = sum(1 for node in nodes
                          if any(t <= e.response and f >= need for t, f in grows.get((obj, node), ())))
            if holders < majority:
                report.flag("read.unreplicated", f"{obj!r}: read by {e.client} returned {ts} "
                                                 f"held by {holders} node(s)")
    report.checked["replication"] = report.checked.get("replication", 0) + sum(map(len, histories.values()))


def audit_trace(cas_entries=(), lock_journal=(), register_histories=None, writers: int = 1,
                monitor=None, max_write_rtt: Optional[int] = None,
                max_read_rtt: Optional[int] = None, regions: Optional[dict] = None) -> AuditReport:
    report = AuditReport()
    journal = list(lock_journal)
    audit_cas(cas_entries, report)
    audit_locks(journal, report)
    for obj, events in (register_histories or {}).items():
        audit_register(events, writers, report, max_write_rtt, max_read_rtt)
        if journal:
            audit_guesses(obj, events, journal, report)
    if regions:
        audit_replication(cas_entries, regions, register_histories or {}, report)
    if monitor is not None:
        for v in monitor.violations:
            report.flag("runtime." + v[0], v[1])
    return report


# -- whole-run checking ------------------------------------------------------------


def check_objects(histories: dict, initial: Any = None, construction: bool = True,
                  bound: int = 40) -> dict:
    """Check every object's history; returns a machine-readable report."""
    out = {"objects": 0, "violations": [], "disagreements": [], "skipped": []}
    for obj, events in histories.items():
        out["objects"] += 1
        try:
            bf = check_bruteforce(events, initial, bound)
        except BoundExceeded as exc:
            bf = None
            out["skipped"].append({"object": str(obj), "reason": str(exc)})
        ct = check_construction(events, initial) if construction else None
        for res in (bf, ct):
            if res is not None and not res.valid:
                out["violations"].append({"object": str(obj), **res.to_dict()})
        if bf is not None and ct is not None and bf.valid != ct.valid:
            out["disagreements"].append(str(obj))
    out["valid"] = not out["violations"]
    return out


def report_json(report: dict) -> str:
    return json.dumps(report, sort_keys=True, indent=2, default=str)
