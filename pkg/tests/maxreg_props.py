"""Drives a ReliableMaxRegister with concurrent clients and checks its properties."""

from dataclasses import dataclass, field

from swarmkv.fabric import Fabric, FabricConfig, FaultSchedule
from swarmkv.maxreg import AtomicDriver, QuorumPolicy, ReliableMaxRegister
from swarmkv.monitor import Monitor
from swarmkv.sim import Simulator


@dataclass
class Op:
    client: int
    kind: str            # write | read | weak_read
    arg: int
    invoke: float
    response: float = None
    result: int = None
    phases: int = None


@dataclass
class Run:
    ops: list = field(default_factory=list)
    monitor: Monitor = None
    reg: ReliableMaxRegister = None


def run_plan(plan, seed=0, crash=None, jitter=0.5, majority_first=True):
    """``plan`` is a list per client of (kind, value, think) tuples."""
    sim = Simulator(seed)
    faults = FaultSchedule(crashes=[crash]) if crash else None
    fab = Fabric(sim, FabricConfig(jitter=jitter), faults)
    mon = Monitor(strict=True)
    reg = ReliableMaxRegister(sim, AtomicDriver(fab), 3, monitor=mon,
                              policy=QuorumPolicy(majority_first=majority_first))
    out = Run(monitor=mon, reg=reg)

    def client(c, steps):
        for kind, value, think in steps:
            if think:
                yield sim.timeout(think)
            op = Op(c, kind, value, sim.now)
            out.ops.append(op)
            if kind == "write":
                op.phases = yield from reg.write(c, value)
            elif kind == "read":
                op.result, op.phases = yield from reg.read(c)
            else:
                op.result, op.phases = yield from reg.weak_read(c)
            op.response = sim.now

    for c, steps in enumerate(plan):
        sim.spawn(client(c, steps), client=c)
    sim.run()
    return out


def violations(run: Run) -> list:
    """Validity, read-read and write-read monotonicity, and phase counts."""
    bad = []
    ops = run.ops
    writes = [o for o in ops if o.kind == "write"]
    reads = [o for o in ops if o.kind == "read"]
    for o in ops:
        if o.response is None:
            bad.append(("liveness", o))
    for r in reads + [o for o in ops if o.kind == "weak_read"]:
        if r.response is None:
            continue
        if r.result != 0 and not any(w.arg == r.result and w.invoke <= r.response for w in writes):
            bad.append(("validity", r))
    for r in reads:
        if r.response is None:
            continue
        for w in writes:
            if w.response is not None and w.response < r.invoke and r.result < w.arg:
                bad.append(("write-read", r, w))
        for r0 in reads:
            if r0.response is not None and r0.response < r.invoke and r.result < r0.result:
                bad.append(("read-read", r0, r))
    for o in ops:
        if o.response is None:
            continue
        allowed = {"write": (0, 1), "read": (1, 2), "weak_read": (1,)}[o.kind]
        if o.phases not in allowed:
            bad.append(("phases", o))
    return bad
