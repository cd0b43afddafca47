"""Linearizable wait-free MWMR register that writes in one phase when it guesses
a fresh timestamp.

A write stores ``(guess, GUESSED, v)`` and reads the max register in the same
phase. Reading back nothing larger proves the guess fresh; the VERIFIED copy is
then written in the background. Otherwise the writer tries to lock readers out
of the guessed timestamp and, if that works, rewrites with a timestamp above
what it read.

A read returns the first VERIFIED tuple it sees. A GUESSED tuple is returned
once it has been read twice and the reader locked its timestamp in read mode,
or once a second, different tuple from the same writer shows up (the first
write must be over by then).
"""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass, field
from typing import Optional

from . import values as V
from .history import TOMBSTONE, Recorder
from .maxreg import ReliableMaxRegister, ValueUnavailable
from .monitor import Monitor
from .tslock import TimestampLock


@dataclass
class SafeGuessConfig:
    # read half of the combined write+read step: "weak" is one phase (the region
    # read pipelined behind the write), "full" also writes the max back
    write_read_mode: str = "weak"
    verify_in_background: bool = True
    # protocol mutants, used only to show the checkers catch them
    mutant_reader_skips_lock: bool = False
    mutant_writer_ignores_lock: bool = False
    mutant_weak_read_loop: bool = False
    unavailable_retries: int = 4

    def __post_init__(self):
        if self.write_read_mode not in ("weak", "full"):
            raise ValueError(f"write_read_mode must be weak or full, got {self.write_read_mode!r}")


class GuessClock:
    """Per-writer timestamp source: a skewed view of simulated time, strictly increasing.

    ``policy`` decides what happens after a stale guess: ``"floor"`` never
    guesses at or below the largest counter seen again, ``"offset"`` also shifts
    the clock so later samples catch up, ``"none"`` keeps guessing blindly.
    """

    def __init__(self, sim, tid: int, skew: float = 0.0, resolution: int = 1000,
                 policy: str = "floor"):
        if policy not in ("floor", "offset", "none"):
            raise ValueError(f"unknown resync policy {policy!r}")
        self.sim = sim
        self.tid = tid
        self.skew = skew
        self.resolution = resolution
        self.policy = policy
        self.last = 0
        self.floor = 0
        self.offset = 0
        self.guesses = 0
        self.stale = 0

    def sample(self) -> int:
        return max(0, int((self.sim.now + self.skew) * self.resolution)) + self.offset

    def guess(self) -> V.Timestamp:
        g = max(self.sample(), self.last + 1, self.floor)
        if g > V.MAX_I - 1:
            raise V.TimestampOverflow(f"writer {self.tid}: counter {g} exhausted the timestamp width")
        self.last = g
        self.guesses += 1
        return V.Timestamp(g, self.tid)

    def saw_stale(self, observed_i: int) -> None:
        self.stale += 1
        if self.policy == "none":
            return
        self.floor = max(self.floor, observed_i + 1)
        if self.policy == "offset":
            behind = observed_i + 1 - self.sample()
            if behind > 0:
                self.offset += behind

    def observe(self, used_i: int) -> None:
        self.last = max(self.last, used_i)


@dataclass
class WriteResult:
    path: str               # fast | slow_rewrite | slow_locked | deleted
    ts: tuple
    guessed: tuple
    phases: int
    lock_cause: Optional[str] = None
    stages: dict = field(default_factory=dict)      # roundtrips spent per step


class DeletedError(Exception):
    """The register holds the delete sentinel; the write had no effect."""


class SafeGuessRegister:
    def __init__(self, sim, maxreg: ReliableMaxRegister, locks: dict, writers: int,
                 config: Optional[SafeGuessConfig] = None, monitor: Optional[Monitor] = None,
                 recorder: Optional[Recorder] = None, name=None):
        self.sim = sim
        self.M = maxreg
        self.locks: dict[int, TimestampLock] = locks
        self.writers = writers
        self.config = config or SafeGuessConfig()
        self.monitor = monitor or maxreg.monitor
        self.recorder = recorder
        self.name = name

    # -- helpers ----------------------------------------------------------

    def _lock_view(self, client: int, tid: int) -> dict:
        cs = self.M.client_state(client)
        lock_view = getattr(self.M.driver, "lock_view", None)
        if lock_view is not None:
            return lock_view(cs, tid)
        return cs.driver_state.setdefault("locks", {}).setdefault(tid, {})

    def _trylock(self, client: int, ts: V.Timestamp, mode: int):
        lock = self.locks[ts.tid]
        return (yield from lock.trylock(client, ts.lock_value(), mode,
                                        self._lock_view(client, ts.tid)))

    def _lock_cause(self, tid: int, ts: V.Timestamp) -> str:
        lock = self.locks[tid]
        key = ts.lock_value()
        for rec in reversed(lock.journal):
            if rec.ts > key:
                return "higher_ts"
            if rec.ts == key and rec.mode == V.READ:
                return "reader_lock"
        return "unknown"

    def _resolve(self, client: int, mv: V.MValue):
        cs = self.M.client_state(client)
        return (yield from self.M.driver.resolve(mv, cs))

    def _prefetch(self, client: int, mv: V.MValue):
        try:
            return (yield from self._resolve(client, mv))
        except ValueUnavailable:
            return None

    @staticmethod
    def _visible(mv: V.MValue):
        if mv.is_bottom:
            return None
        if mv.is_sentinel:
            return TOMBSTONE
        return mv.value

    # -- write ------------------------------------------------------------

    def write(self, client: int, value: bytes, clock: GuessClock):
        rec = self.recorder.invoke(client, "write", value, obj=self.name) if self.recorder else None
        d0 = self.sim.depth
        w = V.make(clock.guess(), V.GUESSED, value)
        cs = self.M.client_state(client)
        self.M.driver.remember(cs, w)
        m, _ = yield from self.M.write_and_read(client, w, weak=self.config.write_read_mode == "weak")
        stages = {"write_read": self.sim.depth - d0}
        if m <= w:
            self.monitor.count("write_fast")
            vw = w.with_flag(V.VERIFIED)
            if self.config.verify_in_background:
                self.sim.spawn(self.M.write(client, vw), name="verify-bg")
            result = WriteResult("fast", (w.i, w.tid), (w.i, w.tid), 0)
        else:
            if not m.is_sentinel:
                clock.saw_stale(m.i)
            d1 = self.sim.depth
            locked = yield from self._trylock(client, w.ts, V.WRITE)
            stages["trylock"] = self.sim.depth - d1
            if m.is_sentinel:
                if locked:
                    # no reader can ever return w, and w sits below the sentinel forever
                    self.monitor.count("write_deleted")
                    result = WriteResult("deleted", None, (w.i, w.tid), 0)
                else:
                    self.monitor.count("write_slow_locked")
                    result = WriteResult("slow_locked", (w.i, w.tid), (w.i, w.tid), 0, "reader_lock")
            elif locked or self.config.mutant_writer_ignores_lock:
                nv = V.make(V.Timestamp(m.i + 1, clock.tid), V.VERIFIED, value)
                clock.observe(nv.i)
                self.M.driver.remember(cs, nv)
                d2 = self.sim.depth
                yield from self.M.write(client, nv)
                stages["rewrite"] = self.sim.depth - d2
                self.monitor.count("write_slow_rewrite")
                result = WriteResult("slow_rewrite", (nv.i, nv.tid), (w.i, w.tid), 0)
            else:
                self.monitor.count("write_slow_locked")
                cause = self._lock_cause(clock.tid, w.ts)
                self.monitor.count("lock_cause:" + cause)
                result = WriteResult("slow_locked", (w.i, w.tid), (w.i, w.tid), 0, cause)
        result.phases = self.sim.depth - d0
        result.stages = stages
        if rec is not None:
            if result.path == "deleted":
                rec.kind = "read"
                self.recorder.respond(rec, TOMBSTONE, path=result.path, rtt=result.phases,
                                      guessed=result.guessed)
            else:
                rec.ts = result.ts
                rec.guessed = result.guessed
                self.recorder.respond(rec, path=result.path, rtt=result.phases)
        if result.path == "deleted":
            raise DeletedError()
        return result

    def write_sentinel(self, client: int):
        """Delete: the all-ones timestamp wins every comparison, so this is a plain max write."""
        rec = self.recorder.invoke(client, "write", TOMBSTONE, obj=self.name) if self.recorder else None
        d0 = self.sim.depth
        yield from self.M.write(client, V.sentinel())
        phases = self.sim.depth - d0
        if rec is not None:
            s = V.sentinel()
            rec.ts = (s.i, s.tid)
            self.recorder.respond(rec, path="delete", rtt=phases)
        return phases

    # -- read -------------------------------------------------------------

    def _choose(self, client: int, bound: int):
        seen: dict[int, V.MValue] = {}
        per_writer: Counter = Counter()
        fetches: dict = {}
        iters = 0

        def prefetch(mv: V.MValue):
            if not mv.resolved and mv.key not in fetches:
                fetches[mv.key] = self.sim.spawn(self._prefetch(client, mv), name="prefetch")

        while True:
            iters += 1
            self.monitor.check(iters <= bound, "safeguess.read_iterations",
                               f"read by {client} at iteration {iters} > {bound}")
            if self.config.mutant_weak_read_loop:
                m, _ = yield from self.M.weak_read(client)
            else:
                m, _ = yield from self.M.read(client)
            if m.verified:
                return m, "verified", iters
            per_writer[m.tid] += 1
            prefetch(m)
            prev = seen.get(m.tid)
            chosen = path = None
            if prev is not None and prev == m:
                ok = True
                if not self.config.mutant_reader_skips_lock:
                    ok = yield from self._trylock(client, m.ts, V.READ)
                if ok:
                    chosen, path = m, "locked"
            elif prev is not None:
                chosen, path = prev, "waitfree"
            if chosen is not None:
                if not chosen.resolved:
                    fetch = fetches.get(chosen.key)
                    if fetch is not None:
                        got = yield fetch
                        if got is None:
                            raise ValueUnavailable(chosen)
                        chosen = got
                return chosen, path, iters
            self.monitor.check(per_writer[m.tid] < 3, "safeguess.third_iteration",
                               f"read by {client} saw writer {m.tid} three times without returning")
            seen[m.tid] = m

    def read(self, client: int):
        """Returns ``(value, info)``; value is bytes, None for ⊥ or TOMBSTONE."""
        rec = self.recorder.invoke(client, "read", obj=self.name) if self.recorder else None
        d0 = self.sim.depth
        bound = 2 * self.writers + 1
        restarts = 0
        for attempt in range(self.config.unavailable_retries + 1):
            try:
                chosen, path, iters = yield from self._choose(client, bound)
                if not chosen.resolved:
                    chosen = yield from self._resolve(client, chosen)
                break
            except ValueUnavailable:
                # the payload went away with a crashed node: start over on newer values
                self.monitor.count("read_restart")
                restarts += 1
                if attempt == self.config.unavailable_retries:
                    raise
        if path == "locked":
            self.sim.spawn(self.M.write(client, chosen.with_flag(V.VERIFIED)), name="verify-bg")
        self.monitor.count("read_" + path)
        self.monitor.count(f"read_iterations:{iters}")
        value = self._visible(chosen)
        phases = self.sim.depth - d0
        if rec is not None:
            self.recorder.respond(rec, value, path=path, rtt=phases, iterations=iters,
                                  ts=(chosen.i, chosen.tid), verified=chosen.verified)
        return value, {"path": path, "phases": phases, "iterations": iters, "restarts": restarts}
