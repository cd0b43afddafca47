import pytest

from swarmkv import tslock
from swarmkv.fabric import Fabric, FabricConfig, FaultSchedule
from swarmkv.monitor import Monitor
from swarmkv.sim import Simulator
from swarmkv.tslock import TimestampLock, decide, explore_exclusion
from swarmkv.values import READ, WRITE, pack_cell


def make_lock(seed=0, jitter=0.3, crash=None):
    sim = Simulator(seed)
    fab = Fabric(sim, FabricConfig(jitter=jitter), FaultSchedule(crashes=[crash] if crash else []))
    for n in fab.nodes:
        n.check(0, 8)
    mon = Monitor()
    return sim, TimestampLock(sim, fab, {n: 0 for n in range(3)}, ("k", 0), monitor=mon), mon


def lockers(sim, lock, calls):
    results = {}

    def go(i, client, ts, mode, delay):
        if delay:
            yield sim.timeout(delay)
        results[i] = yield from lock.trylock(client, ts, mode)

    for i, (client, ts, mode, delay) in enumerate(calls):
        sim.spawn(go(i, client, ts, mode, delay), client=client)
    sim.run()
    return results


def test_decide_rules():
    assert decide([0, 0, 0], 5, READ)
    assert decide([pack_cell(5, READ), 0, pack_cell(4, WRITE)], 5, READ)
    assert not decide([pack_cell(5, WRITE), 0, 0], 5, READ)
    assert not decide([pack_cell(6, READ), 0, 0], 5, READ)


def test_uncontended_lock_succeeds():
    sim, lock, mon = make_lock()
    assert lockers(sim, lock, [(0, 3, WRITE, 0)]) == {0: True}
    assert lock.journal[0].phases == 1


def test_second_mode_loses_after_the_first_wins():
    sim, lock, _ = make_lock()
    assert lockers(sim, lock, [(0, 3, WRITE, 0), (1, 3, READ, 20)]) == {0: True, 1: False}


def test_same_mode_does_not_conflict():
    sim, lock, _ = make_lock()
    assert lockers(sim, lock, [(0, 3, READ, 0), (1, 3, READ, 0)]) == {0: True, 1: True}


def test_higher_timestamp_blocks_lower():
    sim, lock, _ = make_lock()
    assert lockers(sim, lock, [(0, 8, READ, 0), (1, 3, WRITE, 20)]) == {0: True, 1: False}


def test_non_positive_timestamp_rejected():
    sim, lock, _ = make_lock()
    with pytest.raises(ValueError):
        next(lock.trylock(0, 0, READ))


@pytest.mark.parametrize("seed", range(40))
def test_racing_opposite_modes_never_both_win(seed):
    crash = (seed % 5, seed % 3) if seed % 2 else None
    sim, lock, mon = make_lock(seed, jitter=1.0, crash=crash)
    res = lockers(sim, lock, [(0, 7, READ, 0), (1, 7, WRITE, (seed % 7) * 0.2)])
    assert res != {0: True, 1: True}
    assert mon.violations == []


def test_exhaustive_small_model():
    stats = explore_exclusion(ts=1, cells=3, allow_crash=False, initial_values=(0,))
    assert stats["both_true"] == 0
    assert stats["terminals"] > 0
    assert (True, False) in stats["outcomes"] and (False, True) in stats["outcomes"]


def test_exploration_catches_a_broken_decision(monkeypatch):
    monkeypatch.setattr(tslock, "decide", lambda reads, ts, mode: True)
    stats = explore_exclusion(ts=1, cells=3, allow_crash=False, initial_values=(0,))
    assert stats["both_true"] > 0
