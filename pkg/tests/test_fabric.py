import pytest

from swarmkv.fabric import (Cas, ConfigError, Fabric, FabricConfig, FabricError, FaultSchedule,
                            Pair, Read, Write, u64)
from swarmkv.sim import Quorum, Simulator


def make(seed=0, **kw):
    sim = Simulator(seed)
    return sim, Fabric(sim, FabricConfig(**kw))


def run(sim, gen, client=0):
    proc = sim.spawn(gen, client=client)
    sim.run()
    assert proc.triggered, "process did not finish"
    return proc.value


def word(v):
    return v.to_bytes(8, "little")


def test_one_batch_is_one_roundtrip():
    sim, fab = make()

    def op():
        d0 = sim.depth
        yield fab.submit([Write(n, 0, word(7)) for n in range(3)]).all()
        one = sim.depth - d0
        yield fab.read(0, 0, 8)
        yield fab.read(1, 0, 8)
        return one, sim.depth - d0

    assert run(sim, op()) == (1, 3)


def test_majority_wait_ignores_the_slow_node():
    sim, fab = make(jitter=0.0, node_latency={2: 100.0})

    def op():
        yield fab.await_majority(fab.submit([Write(n, 0, word(1)) for n in range(3)]))
        return sim.now

    assert run(sim, op()) < 10


def test_cas_semantics():
    sim, fab = make()

    def op():
        first = yield fab.cas(0, 0, 0, 5)
        second = yield fab.cas(0, 0, 0, 9)
        third = yield fab.cas(0, 0, 5, 9)
        return first, second, third, fab.nodes[0].load_word(0)

    assert run(sim, op()) == (0, 5, 5, 9)


def test_cas_must_be_aligned_and_in_range():
    sim, fab = make(memory_size=64)
    with pytest.raises(FabricError):
        fab.cas(0, 3, 0, 1)
    with pytest.raises(FabricError):
        fab.read(0, 60, 16)
    with pytest.raises(FabricError):
        fab.cas(0, 0, 0, 1 << 64)


def test_pair_must_stay_on_one_node():
    sim, fab = make()
    with pytest.raises(FabricError):
        fab.pair(Write(0, 0, b"x"), Cas(1, 0, 0, 1))


def test_racing_read_can_see_a_torn_value():
    # slow words, no jitter: the read starts while the write is half applied
    sim, fab = make(jitter=0.0, word_time=1.0, latency=0.5)
    fab.nodes[0].check(0, 64)
    out = {}

    def writer():
        yield fab.write(0, 0, b"\x01" * 64)

    def reader():
        yield sim.timeout(3.0)
        out["data"] = yield fab.read(0, 0, 64)

    sim.spawn(writer(), client=0)
    sim.spawn(reader(), client=1)
    sim.run()
    words = {u64(out["data"], 8 * i) for i in range(8)}
    assert len(words) == 2            # some words old, some new, none torn inside


def test_reads_that_cannot_race_see_whole_values():
    sim, fab = make(jitter=0.0, word_time=0.01)

    def op():
        yield fab.write(0, 0, b"\x02" * 64)
        data = yield fab.read(0, 0, 64)
        return data

    assert run(sim, op()) == b"\x02" * 64


def test_pipelined_pair_second_visible_implies_first():
    sim, fab = make(seed=4, jitter=0.0, word_time=1.0)
    fab.nodes[0].check(0, 128)
    seen = []

    def writer():
        yield fab.pair(Write(0, 64, b"\x07" * 32), Cas(0, 0, 0, 1))

    def poller():
        for _ in range(12):
            data = yield fab.read(0, 0, 128)
            seen.append((u64(data, 0), data[64:96]))

    sim.spawn(writer(), client=0)
    sim.spawn(poller(), client=1)
    sim.run()
    assert any(flag == 1 for flag, _ in seen)
    for flag, payload in seen:
        if flag == 1:
            assert payload == b"\x07" * 32


def test_same_channel_is_fifo():
    sim, fab = make(seed=1, jitter=5.0)

    def op():
        evs = [fab.write(0, 0, word(i)) for i in range(1, 20)]
        yield Quorum(evs)
        return fab.nodes[0].load_word(0)

    assert run(sim, op()) == 19


def test_crashed_node_drops_requests():
    sim, fab = make(jitter=0.0)
    fab.inject_fault(FaultSchedule(crashes=[(0.1, 1)]))

    def op():
        ev = fab.read(1, 0, 8)
        yield fab.await_majority(fab.submit([Read(n, 0, 8) for n in range(3)]))
        return ev

    ev = run(sim, op())
    assert not ev.triggered
    assert fab.crashed_nodes() == [1]
    assert fab.stats["dropped"] >= 1


def test_fault_schedule_keeps_a_majority():
    with pytest.raises(ConfigError):
        FaultSchedule(crashes=[(1, 0), (2, 1)]).validate(3, 1)
    FaultSchedule(crashes=[(1, 0), (2, 0)]).validate(3, 1)
    with pytest.raises(ConfigError):
        FaultSchedule(crashes=[(1, 7)]).validate(3, 1)


def test_node_count_must_be_2f_plus_1():
    with pytest.raises(ConfigError):
        FabricConfig(f=1, node_count=4)
    assert FabricConfig(f=2).node_count == 5


def test_service_node_cannot_crash():
    sim, fab = make()
    node = fab.add_service_node()
    with pytest.raises(ConfigError):
        fab.crash_now(node)


def _trace(seed):
    sim = Simulator(seed)
    fab = Fabric(sim, FabricConfig(jitter=0.3), log_events=True)

    def client(c):
        for i in range(5):
            yield fab.submit([Cas(n, 0, i, i + 1) for n in range(3)]).majority()
            yield fab.read(c % 3, 0, 64)

    for c in range(3):
        sim.spawn(client(c), client=c)
    sim.run()
    return fab.log_lines()


def test_same_seed_same_event_order():
    assert _trace(5) == _trace(5)
    assert _trace(5) != _trace(6)


def test_link_latency_overrides_node_latency():
    sim, fab = make(jitter=0.0, link_latency={(1, 0): 10.0})

    def op():
        yield fab.read(0, 0, 8)
        return sim.now

    assert run(sim, op(), client=0) < 2
    sim2, fab2 = make(jitter=0.0, link_latency={(1, 0): 10.0})

    def op2():
        yield fab2.read(0, 0, 8)
        return sim2.now

    assert run(sim2, op2(), client=1) >= 20
