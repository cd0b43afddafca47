import random

import pytest

from swarmkv.checker import check_objects
from swarmkv.fabric import Fabric, FabricConfig
from swarmkv.history import ABSENT
from swarmkv.kvstore import KVConfig, KVStore
from swarmkv.monitor import Monitor
from swarmkv.sim import Simulator


def make(clients=3, seed=0, jitter=0.0, **cfg):
    sim = Simulator(seed)
    fab = Fabric(sim, FabricConfig(jitter=jitter))
    store = KVStore(sim, fab, KVConfig(clients=clients, value_size=32, **cfg), monitor=Monitor())
    return sim, store


def do(sim, store, cid, op, *args):
    cl = store.clients[cid]
    proc = sim.spawn(getattr(cl, op)(*args), client=cid)
    sim.run()
    return proc.value, cl.last


def kv_valid(store):
    rep = check_objects(store.kv_history.by_object(), initial=ABSENT, construction=False, bound=64)
    reg = check_objects(store.reg_history.by_object(), initial=None, construction=True, bound=64)
    return rep["valid"] and reg["valid"] and not reg["disagreements"]


def test_insert_get_update_delete():
    sim, store = make()
    assert do(sim, store, 0, "insert", b"k", b"v1")[0] == "ok"
    assert do(sim, store, 1, "get", b"k")[0] == b"v1"
    assert do(sim, store, 1, "update", b"k", b"v2")[0] == "ok"
    assert do(sim, store, 2, "get", b"k")[0] == b"v2"
    assert do(sim, store, 2, "delete", b"k")[0] == "ok"
    assert do(sim, store, 0, "get", b"k")[0] is None
    assert kv_valid(store)


def test_missing_keys():
    sim, store = make()
    assert do(sim, store, 0, "get", b"nope")[0] is None
    assert do(sim, store, 0, "update", b"nope", b"x")[0] == "no_such_key"
    assert do(sim, store, 0, "delete", b"nope")[0] == "no_such_key"
    kinds = {e.kind for e in store.kv_history.events}
    assert kinds == {"read"}


def test_warm_operations_take_one_roundtrip():
    sim, store = make()
    do(sim, store, 0, "insert", b"k", b"v1")
    _, cold = do(sim, store, 1, "get", b"k")
    assert cold["cold"] and cold["rtt"] == 2
    _, warm = do(sim, store, 1, "get", b"k")
    assert warm["rtt"] == 1 and warm["path"] == "verified"
    _, upd = do(sim, store, 1, "update", b"k", b"v2")
    assert (upd["rtt"], upd["path"]) == (1, "fast")


def test_delete_costs_three_roundtrips():
    sim, store = make()
    do(sim, store, 0, "insert", b"k", b"v1")
    _, last = do(sim, store, 0, "delete", b"k")
    assert last["rtt"] == 3


def test_insert_on_a_live_key_updates_it():
    sim, store = make()
    do(sim, store, 0, "insert", b"k", b"v1")
    res, last = do(sim, store, 1, "insert", b"k", b"v2")
    assert res == "updated" and last["path"] == "insert_as_update"
    assert do(sim, store, 2, "get", b"k")[0] == b"v2"


def test_reinsert_after_delete_uses_new_replicas():
    sim, store = make()
    do(sim, store, 0, "insert", b"k", b"v1")
    do(sim, store, 0, "delete", b"k")
    do(sim, store, 1, "insert", b"k", b"v2")
    assert len(store.replica_sets) == 2
    assert do(sim, store, 0, "get", b"k")[0] == b"v2"
    assert kv_valid(store)


def test_delete_through_a_stale_cache_hits_the_live_incarnation():
    sim, store = make()
    do(sim, store, 0, "insert", b"k", b"v1")
    do(sim, store, 1, "get", b"k")                  # client 1 caches incarnation 1
    do(sim, store, 0, "delete", b"k")
    do(sim, store, 0, "insert", b"k", b"v2")        # incarnation 2
    assert do(sim, store, 1, "delete", b"k")[0] == "ok"
    assert do(sim, store, 2, "get", b"k")[0] is None
    assert kv_valid(store)


def test_oversized_value_rejected():
    sim, store = make()
    with pytest.raises(ValueError):
        do(sim, store, 0, "insert", b"k", b"x" * 33)


def test_abd_write_takes_two_roundtrips():
    sim, store = make(protocol="abd")
    do(sim, store, 0, "insert", b"k", b"v1")
    do(sim, store, 1, "get", b"k")
    _, last = do(sim, store, 1, "update", b"k", b"v2")
    assert last["rtt"] == 2
    _, last = do(sim, store, 1, "get", b"k")
    assert last["rtt"] == 1
    assert do(sim, store, 2, "get", b"k")[0] == b"v2"


def test_placement_is_deterministic_and_covers_all_nodes():
    _, a = make()
    _, b = make()
    assert a.placement(b"key") == b.placement(b"key")
    assert sorted(a.placement(b"key")) == [0, 1, 2]


@pytest.mark.parametrize("seed", range(25))
def test_racing_inserts_and_deletes_stay_linearizable(seed):
    rng = random.Random(seed)
    sim, store = make(clients=4, seed=seed, jitter=rng.choice((0.1, 0.5, 1.5)),
                      slots=rng.randint(1, 4))

    def client(c):
        cl = store.clients[c]
        for k in range(8):
            yield sim.timeout(rng.random())
            op = rng.choice(("insert", "insert", "delete", "get", "update"))
            key = rng.choice((b"a", b"b"))
            if op in ("insert", "update"):
                yield from getattr(cl, op)(key, b"%d.%d" % (c, k))
            else:
                yield from getattr(cl, op)(key)

    for c in range(4):
        sim.spawn(client(c), client=c)
    sim.run()
    assert all(e.response is not None for e in store.kv_history.events)
    assert kv_valid(store)
    assert store.monitor.violations == []
