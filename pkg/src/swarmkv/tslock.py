"""Wait-free timestamp lock over one fallible CAS cell per memory node.

``trylock(ts, mode)`` races to install ``(ts, mode)`` in every cell. Each cell's
loop stops once the cell holds a timestamp at least ``ts``. When a majority of
loops are done the lock fails if any cell shows a higher timestamp or ``ts``
with the opposite mode. Locks are never released.

Cells are 64-bit words ``ts << 1 | mode`` with WRITE = 1 and READ = 0, and 0
meaning empty. A cell's value only grows and never flips mode for a fixed ts.

The per-cell step and the decision are pure functions so that
:func:`explore_exclusion` can enumerate every interleaving of two lockers with
exactly the code used at runtime.
"""

from __future__ import annotations

from dataclasses import dataclass
from itertools import combinations_with_replacement, product
from typing import Optional

from .monitor import Monitor
from .sim import Quorum
from .values import READ, WRITE, cell_mode, cell_ts, pack_cell


def needs_cas(read: int, ts: int) -> bool:
    return cell_ts(read) < ts


def after_cas(expected: int, prev: int, new: int) -> tuple[int, bool]:
    """New local view of a cell after a CAS response, and whether the loop ends."""
    if prev == expected:
        return new, True
    return prev, not needs_cas(prev, ts=cell_ts(new))


def decide(reads, ts: int, mode: int) -> bool:
    for r in reads:
        if cell_ts(r) > ts:
            return False
        if r != 0 and cell_ts(r) == ts and cell_mode(r) != mode:
            return False
    return True


@dataclass
class TrylockRecord:
    lock: tuple
    client: int
    ts: int
    mode: int
    invoked: float
    responded: Optional[float] = None
    result: Optional[bool] = None
    phases: int = 0


class TimestampLock:
    """One lock instance: a cell address per node."""

    def __init__(self, sim, fabric, cells: dict[int, int], lock_id: tuple,
                 monitor: Optional[Monitor] = None, journal: Optional[list] = None):
        self.sim = sim
        self.fabric = fabric
        self.cells = dict(cells)            # node -> offset
        self.lock_id = lock_id
        self.majority = len(self.cells) // 2 + 1
        self.monitor = monitor or Monitor()
        self.journal = journal if journal is not None else []

    def trylock(self, client: int, ts: int, mode: int, view: Optional[dict] = None):
        """``view`` maps node -> last observed cell value (a client-side cache)."""
        if ts <= 0:
            raise ValueError("lock timestamps must be positive")
        view = view if view is not None else {}
        rec = TrylockRecord(self.lock_id, client, ts, mode, self.sim.now)
        self.journal.append(rec)
        reads = {node: view.get(node, 0) for node in self.cells}
        new = pack_cell(ts, mode)
        d0 = self.sim.depth

        def cell_loop(node: int):
            iters = 0
            while needs_cas(reads[node], ts):
                expected = reads[node]
                prev = yield self.fabric.cas(node, self.cells[node], expected, new)
                iters += 1
                if prev > view.get(node, 0):
                    view[node] = prev
                reads[node], done = after_cas(expected, prev, new)
                if prev == expected and new > view.get(node, 0):
                    view[node] = new
                if done:
                    break
            self.monitor.check(iters <= ts + 1, "tslock.iterations",
                               f"cell {node}: {iters} CAS rounds for ts {ts}")
            return iters

        loops = [self.sim.spawn(cell_loop(node), name="trylock-cell") for node in self.cells]
        yield Quorum(loops, need=self.majority)
        rec.result = decide(reads.values(), ts, mode)
        rec.responded = self.sim.now
        rec.phases = self.sim.depth - d0
        return rec.result


# -- exhaustive interleaving model -------------------------------------------
# A locker is the tuple (reads, pending, decided). ``pending[c]`` is "done",
# ("flight", expected) for a CAS not yet executed at the cell, or
# ("resp", expected, prev) for an executed CAS whose response is undelivered.


def _start(reads: tuple, ts: int) -> tuple:
    return tuple(("flight", r) if needs_cas(r, ts) else "done" for r in reads)


def explore_exclusion(ts: int = 2, cells: int = 3, allow_crash: bool = True,
                      initial_values=None, cached: tuple = (False, True)) -> dict:
    """Enumerate all interleavings of ``trylock(ts, READ)`` and ``trylock(ts, WRITE)``.

    Every CAS execution at a cell and every response delivery is a separate
    step; each locker may decide at any point after a majority of its cell
    loops finished; at most one cell may crash at any point. Initial cell
    contents range over ``initial_values`` and each locker starts either from
    empty views or from the true initial contents (a warm cache).

    Returns counts of explored states and terminal outcomes, and the terminal
    states (if any) in which both lockers returned True.
    """
    if initial_values is None:
        initial_values = (0, pack_cell(ts - 1, READ), pack_cell(ts - 1, WRITE))
    majority = cells // 2 + 1
    news = (pack_cell(ts, READ), pack_cell(ts, WRITE))
    stats = {"states": 0, "terminals": 0, "both_true": 0, "outcomes": {}, "configs": 0}
    bad = []

    # cells are symmetric, so multisets of initial contents cover every placement
    for init in combinations_with_replacement(initial_values, cells):
        for warm in product(cached, repeat=2):
            stats["configs"] += 1
            lockers = []
            for who in range(2):
                reads = tuple(init) if warm[who] else (0,) * cells
                lockers.append((reads, _start(reads, ts), None))
            seen = set()
            stack = [(tuple(init), tuple(lockers), -1)]
            while stack:
                state = stack.pop()
                if state in seen:
                    continue
                seen.add(state)
                succ = _successors(state, ts, news, majority, allow_crash)
                if not succ:
                    stats["terminals"] += 1
                    results = (state[1][0][2], state[1][1][2])
                    stats["outcomes"][results] = stats["outcomes"].get(results, 0) + 1
                    if results == (True, True):
                        stats["both_true"] += 1
                        bad.append(state)
                    continue
                stack.extend(succ)
            stats["states"] += len(seen)
    stats["violations"] = bad
    return stats


def _successors(state, ts, news, majority, allow_crash):
    mem, lockers, crashed = state
    out = []
    for who in (0, 1):
        reads, pending, decided = lockers[who]
        new = news[who]
        if decided is None and pending.count("done") >= majority:
            nl = list(lockers)
            nl[who] = (reads, pending, decide(reads, ts, who))
            out.append((mem, tuple(nl), crashed))
        for c, p in enumerate(pending):
            if p == "done" or c == crashed:
                continue
            pend = list(pending)
            nl = list(lockers)
            if p[0] == "flight":
                expected = p[1]
                prev = mem[c]
                nm = mem
                if prev == expected:
                    nm = mem[:c] + (new,) + mem[c + 1:]
                pend[c] = ("resp", expected, prev)
                nl[who] = (reads, tuple(pend), decided)
                out.append((nm, tuple(nl), crashed))
            else:
                view, finished = after_cas(p[1], p[2], new)
                pend[c] = "done" if finished else ("flight", view)
                nl[who] = (reads[:c] + (view,) + reads[c + 1:], tuple(pend), decided)
                out.append((mem, tuple(nl), crashed))
    if allow_crash and crashed < 0:
        for c in range(len(mem)):
            out.append((mem, lockers, c))
    return out
