"""Per-operation records and their aggregates (roundtrip histograms, path tallies)."""

from __future__ import annotations

import csv
import json
import statistics
from collections import Counter
from dataclasses import asdict, dataclass, fields
from pathlib import Path
from typing import Optional


@dataclass
class OpRecord:
    client: int
    op: str
    key: str
    phase: str                  # load | warmup | measure
    t0: float
    t1: Optional[float] = None  # None: never completed
    rtt: Optional[int] = None
    path: Optional[str] = None
    outcome: str = "pending"
    cold: bool = False
    retries: int = 0
    iterations: Optional[int] = None
    after_crash: bool = False
    error: str = ""

    @property
    def failed(self) -> bool:
        return self.t1 is None or self.outcome == "error"


class Metrics:
    def __init__(self, records: list[OpRecord], counters: Optional[dict] = None,
                 phase: str = "measure"):
        self.all = records
        self.records = [r for r in records if r.phase == phase]
        self.counters = dict(counters or {})

    def of(self, op: str) -> list[OpRecord]:
        return [r for r in self.records if r.op == op]

    def completed(self, op: Optional[str] = None) -> list[OpRecord]:
        recs = self.records if op is None else self.of(op)
        return [r for r in recs if not r.failed]

    def failed(self) -> list[OpRecord]:
        return [r for r in self.records if r.failed]

    def rtt_histogram(self) -> dict:
        hist: dict = {}
        for r in self.completed():
            hist.setdefault(r.op, Counter())[r.rtt] += 1
        return hist

    def fraction_at(self, op: str, rtt: int = 1) -> Optional[float]:
        done = self.completed(op)
        if not done:
            return None
        return sum(1 for r in done if r.rtt == rtt) / len(done)

    def max_rtt(self, op: str) -> Optional[int]:
        done = self.completed(op)
        return max((r.rtt for r in done), default=None)

    def median_rtt(self, op: str) -> Optional[float]:
        done = self.completed(op)
        return statistics.median(r.rtt for r in done) if done else None

    def path_tallies(self) -> dict:
        """Every operation lands in exactly one bucket per op kind."""
        out: dict = {}
        for r in self.records:
            if r.failed:
                bucket = "failed"
            else:
                bucket = r.path or r.outcome
            out.setdefault(r.op, Counter())[bucket] += 1
        return out

    def summary(self) -> dict:
        ops = sorted({r.op for r in self.records})
        per_op = {}
        for op in ops:
            per_op[op] = {
                "count": len(self.of(op)),
                "failed": sum(1 for r in self.of(op) if r.failed),
                "one_rtt_fraction": self.fraction_at(op, 1),
                "median_rtt": self.median_rtt(op),
                "max_rtt": self.max_rtt(op),
                "paths": dict(self.path_tallies().get(op, {})),
                "rtt_histogram": {str(k): v for k, v in sorted(self.rtt_histogram().get(op, {}).items())},
            }
        return {"ops": len(self.records), "failed": len(self.failed()), "per_op": per_op,
                "counters": self.counters}

    # -- export -----------------------------------------------------------------

    def write_ops_csv(self, path) -> None:
        names = [f.name for f in fields(OpRecord)]
        with open(path, "w", newline="") as fh:
            w = csv.DictWriter(fh, fieldnames=names)
            w.writeheader()
            for r in self.all:
                w.writerow(asdict(r))

    def write_histogram_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["op", "rtt", "count"])
            for op, hist in sorted(self.rtt_histogram().items()):
                for rtt, count in sorted(hist.items()):
                    w.writerow([op, rtt, count])

    def write_json(self, path) -> None:
        Path(path).write_text(json.dumps(self.summary(), indent=2, sort_keys=True, default=str))

    def text(self) -> str:
        s = self.summary()
        lines = [f"{s['ops']} measured operations, {s['failed']} failed"]
        for op, d in s["per_op"].items():
            frac = d["one_rtt_fraction"]
            frac_s = "n/a" if frac is None else f"{100 * frac:.2f}%"
            lines.append(f"  {op:<7} n={d['count']:<6} 1-RTT {frac_s:>8}  median {d['median_rtt']}  "
                         f"max {d['max_rtt']}  paths {dict(d['paths'])}")
        return "\n".join(lines)


def stale_guesses(events, client: int) -> tuple[int, int]:
    """(stale, total) over ``client``'s register writes.

    A guess is stale when it is not above every write that completed before
    the guessing write was invoked.
    """
    done = sorted((e.response, e.ts) for e in events
                  if e.kind == "write" and e.ts is not None and e.response is not None)
    stale = total = 0
    for e in events:
        if e.client != client or e.guessed is None:
            continue
        total += 1
        # guessed is recorded on writes and on writes that found the key deleted
        floor = max((ts for t, ts in done if t < e.invoke), default=None)
        if floor is not None and tuple(e.guessed) <= tuple(floor):
            stale += 1
    return stale, total
