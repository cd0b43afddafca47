"""End-to-end acceptance checks. Each test prints one PASS/FAIL line, and the lines are repeated
in the terminal summary."""

import random
import time

from conftest import CRITERIA
from maxreg_props import run_plan, violations

from swarmkv.harness.metrics import stale_guesses
from swarmkv.harness.runner import run_abd_comparator, run_scenario, sweep_buffers
from swarmkv.harness.scenario import builtin_scenario
from swarmkv.harness.suite import MUTANTS, run_suite
from swarmkv.tslock import explore_exclusion


def report(n, ok, detail):
    line = f"criterion {n}: {'PASS' if ok else 'FAIL'}  {detail}"
    CRITERIA.append(line)
    print("\n" + line)
    assert ok, detail


def monitor_violations(counters):
    return {k: v for k, v in counters.items() if k.startswith("violation:")}


def get_iterations(result):
    return [e.info["iterations"] for e in result.store.reg_history.events
            if e.kind == "read" and e.info.get("iterations") is not None]


def test_01_random_suite_is_linearizable():
    rep = run_suite(range(1000))
    ok = (rep.runs == 1000 and not rep.invalid and not rep.disagreements
          and not rep.audit and not rep.failed_ops)
    report(1, ok, f"{rep.runs} seeds, invalid={rep.invalid[:5]} disagreements={rep.disagreements[:5]} "
                  f"audit={rep.audit[:5]} failed={rep.failed_ops[:5]} "
                  f"brute-force skipped objects={rep.skipped_bruteforce}")


def test_02_common_case_is_one_roundtrip_and_abd_writes_two():
    base = builtin_scenario("ycsb_b")
    gets, updates, abd_rtts = [], [], []
    medians = []
    for seed in range(10):
        both = run_abd_comparator(base.with_seed(seed))
        swarm, abd = both["swarm"], both["abd"]
        assert swarm.ok and abd.ok
        gets.append(swarm.metrics.fraction_at("get", 1))
        updates.append(swarm.metrics.fraction_at("update", 1))
        abd_rtts += [r.rtt for r in abd.metrics.completed("update")]
        medians.append((swarm.metrics.median_rtt("update"), abd.metrics.median_rtt("update")))
    ok = (min(gets) == 1.0 and min(updates) >= 0.99 and set(abd_rtts) == {2}
          and all(s < a for s, a in medians))
    report(2, ok, f"get 1-RTT min={min(gets):.4f} update 1-RTT min={min(updates):.4f} "
                  f"ABD update RTTs={sorted(set(abd_rtts))}")


def test_03_trylock_exclusion_is_exhaustive():
    t0 = time.time()
    stats = explore_exclusion()
    elapsed = time.time() - t0
    ok = stats["both_true"] == 0 and elapsed < 60
    report(3, ok, f"{stats['states']} states, {stats['terminals']} terminals, "
                  f"both True {stats['both_true']} times, {elapsed:.1f}s")


def test_04_max_register_properties():
    rng = random.Random(4)
    bad, phases = [], {"write": set(), "read": set(), "weak_read": set()}
    for seed in range(400):
        plan = [[(rng.choice(("write", "read", "read", "weak_read")), rng.randint(1, 50),
                  rng.choice((0.0, 0.0, 0.3, 2.0))) for _ in range(rng.randint(1, 6))]
                for _ in range(rng.randint(1, 4))]
        crash = (rng.uniform(0, 5), rng.randrange(3)) if rng.random() < 0.3 else None
        run = run_plan(plan, seed=seed, crash=crash, majority_first=rng.random() < 0.5)
        bad += violations(run) + run.monitor.violations
        for op in run.ops:
            phases[op.kind].add(op.phases)
    ok = (not bad and phases["write"] <= {0, 1} and phases["read"] <= {1, 2}
          and phases["weak_read"] <= {1})
    report(4, ok, f"400 runs, violations={bad[:3]}, phases seen="
                  f"{ {k: sorted(v) for k, v in phases.items()} }")


def test_05_no_runtime_assertion_fires():
    counters = {}
    for name in ("ycsb_b", "hot_key", "stale_guess"):
        for seed in range(3):
            res = run_scenario(builtin_scenario(name).with_seed(seed))
            for k, v in monitor_violations(res.monitor.counters).items():
                counters[f"{name}:{k}"] = counters.get(f"{name}:{k}", 0) + v
    suite = run_suite(range(200))
    counters.update(monitor_violations(suite.counters))
    report(5, not counters, f"builtin scenarios x3 seeds and 200 random seeds, fired={counters}")


def test_06_one_crashed_node_is_tolerated():
    res = run_scenario(builtin_scenario("node_crash"))
    m = res.metrics
    measured = [r for r in res.records if r.phase == "measure"]
    after = sum(1 for r in measured if r.after_crash)
    ok = (len(measured) == 10_000 and not m.failed() and res.check["valid"]
          and res.audit["clean"] and after > 0 and res.store.fabric.crashed_nodes() == [0])
    report(6, ok, f"{len(measured)} ops, {len(m.failed())} failed, {after} after the crash, "
                  f"valid={res.check['valid']}")


def test_07_skewed_writer_guesses_stale_but_stays_correct():
    rows = []
    for seed in range(10):
        res = run_scenario(builtin_scenario("stale_guess").with_seed(seed))
        stale, total = stale_guesses(res.store.reg_history.events, 0)
        c = res.monitor.counters
        slow = c.get("write_slow_rewrite", 0) + c.get("write_slow_locked", 0)
        rows.append((stale / total if total else 0.0, slow, res.ok))
    ok = all(f >= 0.30 and slow > 0 and good for f, slow, good in rows)
    report(7, ok, f"stale fraction min={min(r[0] for r in rows):.2f}, "
                  f"slow paths min={min(r[1] for r in rows)}, all linearizable={all(r[2] for r in rows)}")


def test_08_hot_key_bounds():
    sc = builtin_scenario("hot_key")
    bound = 2 * sc.workload.clients + 1
    res = run_scenario(sc)
    upd = res.metrics.max_rtt("update")
    iters = max(get_iterations(res))
    ok = res.ok and upd <= 4 and iters <= bound
    report(8, ok, f"{sc.workload.clients} clients, update max RTT={upd}, "
                  f"read iterations max={iters} (bound {bound}), valid={res.check['valid']}")


def test_09_buffer_sweep():
    sc = builtin_scenario("buffer_sweep")
    ks = [1, 2, 4, 8, 16]
    rows = sweep_buffers(sc, ks, range(10))

    def pooled(k):
        mine = [r for r in rows if r["k"] == k]
        return sum(r["one_rtt_fraction"] * r["updates"] for r in mine) / sum(r["updates"] for r in mine)

    frac = {k: pooled(k) for k in ks}
    per_seed = [r["one_rtt_fraction"] for r in rows if r["k"] == sc.workload.clients]
    ok = frac[sc.workload.clients] >= 0.99 and all(frac[a] <= frac[b] for a, b in zip(ks, ks[1:]))
    report(9, ok, "1-RTT update fraction over all updates of 10 seeds by k: "
                  + ", ".join(f"{k}={frac[k]:.4f}" for k in ks)
                  + f"; k=writers per-seed min={min(per_seed):.4f}")


def test_10_every_mutant_is_caught():
    first = {}
    for mutant in MUTANTS:
        for seed in range(1000):
            if run_suite([seed], mutant=mutant).detected:
                first[mutant] = seed
                break
    report(10, set(first) == set(MUTANTS), f"first detecting seed per mutant: {first}")
