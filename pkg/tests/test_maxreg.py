from hypothesis import given, settings, strategies as st

from maxreg_props import run_plan, violations
from swarmkv.fabric import Fabric, FabricConfig
from swarmkv.maxreg import AtomicDriver, ReliableMaxRegister
from swarmkv.sim import Simulator


def single(gen_fn):
    sim = Simulator(0)
    fab = Fabric(sim, FabricConfig(jitter=0.0))
    reg = ReliableMaxRegister(sim, AtomicDriver(fab), 3)
    proc = sim.spawn(gen_fn(sim, reg), client=0)
    sim.run()
    return proc.value


def test_fresh_write_takes_one_phase():
    def body(sim, reg):
        return (yield from reg.write(0, 5))
    assert single(body) == 1


def test_write_known_to_a_majority_takes_none():
    def body(sim, reg):
        yield from reg.write(0, 5)
        return (yield from reg.write(0, 5)), (yield from reg.write(0, 3))
    assert single(body) == (0, 0)


def test_lower_write_does_not_lower_the_max():
    def body(sim, reg):
        yield from reg.write(0, 5)
        yield from reg.write(0, 3)
        v, _ = yield from reg.read(0)
        return v
    assert single(body) == 5


def test_uncontended_read_is_one_phase():
    def body(sim, reg):
        yield from reg.write(0, 9)
        return (yield from reg.read(0))
    assert single(body) == (9, 1)


def test_read_on_empty_register_returns_bottom():
    def body(sim, reg):
        return (yield from reg.read(0))
    assert single(body) == (0, 1)


def test_read_writes_back_what_only_a_minority_holds():
    sim = Simulator(0)
    fab = Fabric(sim, FabricConfig(jitter=0.0))
    reg = ReliableMaxRegister(sim, AtomicDriver(fab), 3)
    fab.nodes[0].state["reg"] = 7          # a write that reached one node, then stopped

    def body():
        return (yield from reg.read(1))

    proc = sim.spawn(body(), client=1)
    sim.run()
    assert proc.value == (7, 2)
    assert sum(n.state.get("reg", 0) == 7 for n in fab.nodes) >= 2


def test_weak_read_is_one_phase_and_skips_write_back():
    sim = Simulator(0)
    fab = Fabric(sim, FabricConfig(jitter=0.0))
    reg = ReliableMaxRegister(sim, AtomicDriver(fab), 3)
    fab.nodes[0].state["reg"] = 7

    def body():
        return (yield from reg.weak_read(1))

    proc = sim.spawn(body(), client=1)
    sim.run()
    assert proc.value == (7, 1)
    assert sum(n.state.get("reg", 0) == 7 for n in fab.nodes) == 1


def test_survives_one_crash_by_widening():
    plan = [[("write", 4, 0), ("read", 0, 5)], [("read", 0, 1), ("write", 6, 0), ("read", 0, 0)]]
    run = run_plan(plan, crash=(0.2, 0))
    assert violations(run) == []
    assert run.reg.stats["widen"] >= 1


steps = st.lists(
    st.tuples(st.sampled_from(("write", "read", "read", "weak_read")),
              st.integers(1, 50), st.sampled_from((0.0, 0.0, 0.3, 2.0))),
    min_size=1, max_size=6)


@settings(max_examples=150, deadline=None)
@given(plan=st.lists(steps, min_size=1, max_size=4), seed=st.integers(0, 10_000),
       crash=st.one_of(st.none(), st.tuples(st.floats(0, 5), st.integers(0, 2))),
       majority_first=st.booleans())
def test_properties_hold_under_concurrency(plan, seed, crash, majority_first):
    run = run_plan(plan, seed=seed, crash=crash, majority_first=majority_first)
    assert violations(run) == []
    assert run.monitor.violations == []


def test_property_checker_flags_planted_violations():
    from maxreg_props import Op, Run
    run = Run(ops=[Op(0, "write", 5, 0.0, 1.0, None, 1),
                   Op(1, "read", 0, 2.0, 3.0, 0, 1),          # misses a completed write
                   Op(2, "read", 0, 0.5, 1.5, 5, 1),
                   Op(2, "read", 0, 4.0, 5.0, 9, 3)])         # invented value, 3 phases
    kinds = {v[0] for v in violations(run)}
    assert kinds == {"write-read", "read-read", "validity", "phases"}
