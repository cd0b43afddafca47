"""Drives a scenario through the simulator and checks what it recorded."""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

from ..checker import CasRecorder, audit_trace, check_objects
from ..fabric import Fabric, FaultSchedule
from ..history import ABSENT, dump_jsonl
from ..kvstore import KVStore
from ..monitor import Monitor
from ..sim import Simulator
from .metrics import Metrics, OpRecord
from .scenario import Scenario
from .workload import generate, key_name, make_value


@dataclass
class RunResult:
    scenario: Scenario
    records: list
    store: KVStore
    monitor: Monitor
    cas: CasRecorder
    crash_at: Optional[float] = None
    check: dict = field(default_factory=dict)
    audit: dict = field(default_factory=dict)
    aborted: str = ""

    @property
    def metrics(self) -> Metrics:
        return Metrics(self.records, self.counters())

    def counters(self) -> dict:
        store = self.store
        out = dict(self.monitor.counters)
        drv = {}
        for rs in store.replica_sets.values():
            for k, v in rs.register.M.driver.stats.items():
                drv[k] = drv.get(k, 0) + v
        out.update({"driver." + k: v for k, v in drv.items()})
        locks = {"trylock.true": 0, "trylock.false": 0}
        for rec in store.lock_journal:
            if rec.result is not None:
                locks["trylock." + str(rec.result).lower()] += 1
        out.update(locks)
        out["widen"] = out.get("widen", 0)
        out["cache.hits"] = sum(c.cache.hits for c in store.clients)
        out["cache.misses"] = sum(c.cache.misses for c in store.clients)
        return out

    @property
    def ok(self) -> bool:
        return (not self.aborted and not self.metrics.failed()
                and self.check.get("valid", True) and self.audit.get("clean", True))

    def write(self, out_dir) -> None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        m = self.metrics
        m.write_ops_csv(out / "ops.csv")
        m.write_histogram_csv(out / "rtt_histogram.csv")
        summary = m.summary()
        summary.update({"scenario": self.scenario.name, "seed": self.scenario.seed,
                        "protocol": self.scenario.protocol, "aborted": self.aborted,
                        "check": _brief(self.check), "audit": self.audit})
        (out / "metrics.json").write_text(json.dumps(summary, indent=2, sort_keys=True, default=str))
        dump_jsonl(self.store.kv_history.events, out / "history_kv.jsonl")
        dump_jsonl(self.store.reg_history.events, out / "history_registers.jsonl")
        if self.check:
            (out / "check.json").write_text(json.dumps(self.check, indent=2, sort_keys=True, default=str))
        if self.scenario.log_events:
            self.store.fabric.export_log(out / "fabric_log.jsonl")

    def text(self) -> str:
        lines = [f"scenario {self.scenario.name} seed {self.scenario.seed} ({self.scenario.protocol})",
                 self.metrics.text()]
        if self.aborted:
            lines.append(f"  ABORTED: {self.aborted}")
        if self.check:
            c = self.check
            lines.append(f"  linearizability: {'ok' if c['valid'] else 'VIOLATION'} "
                         f"({c['kv']['objects']} keys, {c['registers']['objects']} registers, "
                         f"{len(c['kv']['skipped']) + len(c['registers']['skipped'])} too long for brute force)")
        if self.audit:
            lines.append(f"  audit: {'clean' if self.audit['clean'] else self.audit['violations'][:3]}")
        return "\n".join(lines)


def _brief(check: dict) -> dict:
    if not check:
        return {}
    return {"valid": check["valid"],
            "kv_violations": len(check["kv"]["violations"]),
            "register_violations": len(check["registers"]["violations"]),
            "disagreements": check["registers"]["disagreements"]}


def run_scenario(sc: Scenario, check: Optional[bool] = None) -> RunResult:
    sim = Simulator(sc.seed)
    fabric = Fabric(sim, sc.fabric, log_events=sc.log_events)
    monitor = Monitor(strict=False)
    cas = CasRecorder()
    fabric.cas_listeners.append(cas)
    store = KVStore(sim, fabric, sc.kv_config(), monitor=monitor)
    wl = sc.workload
    records: list[OpRecord] = []
    result = RunResult(sc, records, store, monitor, cas)

    def drive(cid: int, ops, phase: str, start: float = 0.0, pace: float = 0.0,
              stagger: float = 0.0, think: float = 0.0):
        cl = store.clients[cid]
        for k, (op, key, value) in enumerate(ops):
            if pace > 0:
                due = start + stagger * cid + k * pace
                if due > sim.now:
                    yield sim.timeout(due - sim.now)
            if think > 0:
                yield sim.timeout(sim.rng.expovariate(1.0 / think))
            rec = OpRecord(cid, op, key.decode(), phase, sim.now)
            if result.crash_at is not None and sim.now >= result.crash_at:
                rec.after_crash = True
            records.append(rec)
            args = (key,) if value is None else (key, value)
            try:
                yield from getattr(cl, op)(*args)
            except Exception as exc:                  # noqa: BLE001 - journaled as a failed op
                # the operation may be half done: this client stops, like a crashed one
                rec.outcome, rec.error, rec.t1 = "error", repr(exc), sim.now
                return
            last = cl.last
            rec.t1 = sim.now
            rec.rtt = last.get("rtt")
            rec.path = last.get("path")
            rec.outcome = last.get("outcome", "ok")
            rec.cold = last.get("cold", False)
            rec.retries = last.get("retries", 0)
            rec.iterations = last.get("iterations")

    def run_phase(per_client, phase, **kw):
        for cid, ops in enumerate(per_client):
            if ops:
                sim.spawn(drive(cid, ops, phase, **kw), client=cid, name=f"{phase}-{cid}")
        sim.run(until=sim.now + sc.max_time)

    try:
        if sc.preload:
            load = [[] for _ in range(wl.clients)]
            for i in range(wl.keys):
                load[i % wl.clients].append(("insert", key_name(i), make_value(i % wl.clients, -1 - i, wl.value_size)))
            run_phase(load, "load")
        if sc.warmup:
            run_phase([[("get", key_name(i), None) for i in range(wl.keys)]
                       for _ in range(wl.clients)], "warmup")
        t0 = sim.now
        if sc.faults.crashes or sc.faults.slowdowns:
            shifted = FaultSchedule([(t0 + t, n) for t, n in sc.faults.crashes],
                                    [(t0 + t, n, x) for t, n, x in sc.faults.slowdowns])
            fabric.inject_fault(shifted)
            if sc.faults.crashes:
                result.crash_at = t0 + min(t for t, _ in sc.faults.crashes)
        stagger = sc.stagger if sc.stagger is not None else (sc.pace / wl.clients if sc.pace else 0.0)
        run_phase(generate(wl), "measure", start=t0, pace=sc.pace, stagger=stagger,
                  think=sc.think_time)
    except Exception as exc:                           # noqa: BLE001 - background failure
        result.aborted = repr(exc)

    for rec in records:
        if rec.t1 is None:
            rec.outcome = "lost_liveness"
    do_check = sc.check if check is None else check
    if do_check:
        result.check = check_run(store, sc.check_bound)
        result.audit = audit_trace(cas.entries, store.lock_journal, store.reg_history.by_object(),
                                   writers=wl.clients, monitor=monitor,
                                   regions=store.meta_regions()).to_dict()
    return result


def check_run(store: KVStore, bound: int = 40) -> dict:
    kv = check_objects(store.kv_history.by_object(), initial=ABSENT, construction=False, bound=bound)
    regs = check_objects(store.reg_history.by_object(), initial=None, construction=True, bound=bound)
    return {"valid": kv["valid"] and regs["valid"] and not regs["disagreements"],
            "kv": kv, "registers": regs}


def run_abd_comparator(sc: Scenario, check: Optional[bool] = None) -> dict:
    """Same workload under both protocols."""
    swarm = run_scenario(dataclasses.replace(sc, protocol="swarm"), check)
    abd = run_scenario(dataclasses.replace(sc, protocol="abd"), check)
    return {"swarm": swarm, "abd": abd}


def sweep_buffers(sc: Scenario, ks, seeds, check: Optional[bool] = False) -> list[dict]:
    """1-roundtrip update fraction per meta slot count ``k`` and seed."""
    writers = sc.workload.clients
    for k in ks:
        # each slot is shared by the same number of writers, or every writer has its own
        if k < 1 or (k < writers and writers % k):
            raise ValueError(f"k={k} neither divides nor covers {writers} writers")
    rows = []
    for k in ks:
        for seed in seeds:
            run = run_scenario(dataclasses.replace(sc.with_seed(seed), kv={**sc.kv, "slots": k}), check)
            m = run.metrics
            rows.append({"k": k, "seed": seed, "updates": len(m.completed("update")),
                         "one_rtt_fraction": m.fraction_at("update", 1),
                         "max_rtt": m.max_rtt("update"), "failed": len(m.failed())})
    return rows
