"""Runtime invariant checks and coverage counters shared by the protocol layers."""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass, field


class InvariantViolation(AssertionError):
    pass


@dataclass
class Monitor:
    """Collects violated invariants. With ``strict`` set, the first violation raises."""

    strict: bool = True
    violations: list = field(default_factory=list)
    counters: Counter = field(default_factory=Counter)

    def check(self, ok: bool, rule: str, detail: str = "") -> bool:
        if ok:
            return True
        self.violations.append((rule, detail))
        self.counters["violation:" + rule] += 1
        if self.strict:
            raise InvariantViolation(f"{rule}: {detail}")
        return False

    def count(self, name: str, n: int = 1) -> None:
        self.counters[name] += n
