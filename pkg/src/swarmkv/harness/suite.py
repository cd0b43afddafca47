"""Randomized adversarial scenarios for linearizability and mutant hunting."""

from __future__ import annotations

import dataclasses
import random
from dataclasses import dataclass, field
from typing import Optional

from ..fabric import FabricConfig, FaultSchedule
from ..maxreg import QuorumPolicy
from ..safeguess import SafeGuessConfig
from .runner import RunResult, run_scenario
from .scenario import Scenario
from .workload import WorkloadSpec

MUTANTS = ("reader_skips_lock", "writer_ignores_lock", "weak_read_loop")


def random_scenario(seed: int, mutant: Optional[str] = None) -> Scenario:
    """3-5 clients, 1-3 keys, 20-40 operations per key, with a seeded mix of
    clock skew, contention, slow word-by-word transfers and at most one crash.

    Half the scenarios use lopsided links: each client reaches each node with
    its own base delay, so one writer's tuple can sit on a single node while a
    fast reader polls the other two. That is where lock mistakes show.
    """
    rng = random.Random(seed)
    clients = rng.randint(3, 5)
    keys = rng.randint(1, 3)
    total = sum(rng.randint(20, 40) for _ in range(keys))
    per_client = -(-total // clients)
    value_size = rng.choice((16, 32, 64))
    lopsided = rng.random() < 0.5
    skew = {}
    links = {}
    if lopsided:
        skew = {c: rng.uniform(-3.0, 3.0) for c in range(clients)}
        links = {(c, n): rng.choice((0.1, 1.0, 5.0)) for c in range(clients) for n in range(3)}
        jitter = rng.choice((0.05, 0.1))
    else:
        if rng.random() < 0.5:
            skew = {c: rng.uniform(-5.0, 5.0) for c in range(clients)}
        jitter = rng.choice((0.05, 0.3, 1.0))
    if rng.random() < 0.15:
        skew[rng.randrange(clients)] = -50.0
    crashes = []
    if rng.random() < 0.3:
        crashes = [(rng.uniform(0.0, 30.0), rng.randrange(3))]
    sg = {}
    if mutant is not None:
        if mutant not in MUTANTS:
            raise ValueError(f"unknown mutant {mutant!r}")
        sg["mutant_" + mutant] = True
    wr_mode = rng.choice(("weak", "full") if lopsided else ("weak", "weak", "full"))
    return Scenario(
        name=f"random-{seed}" + (f"-{mutant}" if mutant else ""),
        seed=seed,
        preload=False,
        warmup=False,
        think_time=rng.choice((0.0, 0.0, 0.5, 2.0)),
        workload=WorkloadSpec(read_fraction=0.4, insert_fraction=0.15, delete_fraction=0.08,
                              keys=keys, distribution="uniform", value_size=value_size,
                              clients=clients, ops_per_client=per_client, seed=seed),
        fabric=FabricConfig(jitter=jitter, word_time=rng.choice((0.002, 0.02, 0.1)),
                            link_latency=links),
        faults=FaultSchedule(crashes=crashes),
        kv={"slots": rng.randint(1, clients),
            "inplace_cap": rng.choice((value_size, value_size, 0))},
        safeguess=SafeGuessConfig(write_read_mode=wr_mode, **sg),
        policy=QuorumPolicy(majority_first=not lopsided and rng.random() < 0.7,
                            widen_after=rng.choice((2.0, 4.0))),
        skew=skew,
        check_bound=64,
    )


@dataclass
class SuiteReport:
    runs: int = 0
    invalid: list = field(default_factory=list)        # seeds with a linearizability violation
    disagreements: list = field(default_factory=list)  # seeds where the two checkers differ
    audit: list = field(default_factory=list)          # seeds with audit findings
    failed_ops: list = field(default_factory=list)
    skipped_bruteforce: int = 0
    counters: dict = field(default_factory=dict)

    @property
    def detected(self) -> int:
        return len(set(self.invalid) | set(self.audit))


def run_suite(seeds, mutant: Optional[str] = None, keep: bool = False) -> SuiteReport:
    rep = SuiteReport()
    results = []
    for seed in seeds:
        res: RunResult = run_scenario(random_scenario(seed, mutant))
        rep.runs += 1
        chk = res.check
        if not chk["valid"]:
            rep.invalid.append(seed)
        if chk["registers"]["disagreements"]:
            rep.disagreements.append(seed)
        if not res.audit["clean"]:
            rep.audit.append(seed)
        if res.metrics.failed() or res.aborted:
            rep.failed_ops.append(seed)
        rep.skipped_bruteforce += len(chk["kv"]["skipped"]) + len(chk["registers"]["skipped"])
        for k, v in res.monitor.counters.items():
            rep.counters[k] = rep.counters.get(k, 0) + v
        if keep:
            results.append(res)
    if keep:
        rep.results = results
    return rep
