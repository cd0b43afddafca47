"""Command line driver.

    swarmkv run    --config FILE | --scenario NAME  [--seed N] [--out DIR]
    swarmkv abd    --config FILE | --scenario NAME  [--seed N] [--out DIR]
    swarmkv sweep  --config FILE | --scenario NAME  --k 1,2,4 [--seeds 10] [--out DIR]
    swarmkv check  HISTORY.jsonl [--level kv|register] [--bound 40] [--out REPORT.json]
    swarmkv suite  [--seeds 100] [--mutant NAME]
    swarmkv scenarios
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
from pathlib import Path

from ..checker import check_objects, report_json
from ..history import ABSENT, load_jsonl
from .runner import run_abd_comparator, run_scenario, sweep_buffers
from .scenario import ScenarioError, builtin_scenario, builtin_scenarios, load_scenario
from .suite import MUTANTS, run_suite


def _scenario(args):
    if args.config:
        sc = load_scenario(args.config)
    elif args.scenario:
        sc = builtin_scenario(args.scenario)
    else:
        raise ScenarioError("give --config FILE or --scenario NAME")
    if args.seed is not None:
        sc = sc.with_seed(args.seed)
    return sc


def _check_flag(args):
    return False if args.no_check else None


def cmd_run(args) -> int:
    res = run_scenario(_scenario(args), check=_check_flag(args))
    print(res.text())
    if args.out:
        res.write(args.out)
        print(f"wrote {args.out}")
    return 0 if res.ok else 1


def cmd_abd(args) -> int:
    both = run_abd_comparator(_scenario(args), check=_check_flag(args))
    ok = True
    for proto, res in both.items():
        print(res.text())
        if args.out:
            res.write(Path(args.out) / proto)
        ok = ok and res.ok
    sw, ab = both["swarm"].metrics, both["abd"].metrics
    print(f"median update roundtrips: swarm {sw.median_rtt('update')}, abd {ab.median_rtt('update')}")
    return 0 if ok else 1


def cmd_sweep(args) -> int:
    ks = [int(k) for k in args.k.split(",")]
    rows = sweep_buffers(_scenario(args), ks, range(args.seeds), check=False if args.no_check else True)
    totals: dict = {}
    for r in rows:
        t = totals.setdefault(r["k"], [0.0, 0])
        if r["one_rtt_fraction"] is not None:
            t[0] += r["one_rtt_fraction"] * r["updates"]
            t[1] += r["updates"]
    print(f"{'k':>4}  {'updates':>8}  {'1-RTT':>8}")
    for k in ks:
        done, n = totals[k]
        print(f"{k:>4}  {n:>8}  {100 * done / n if n else float('nan'):>7.2f}%")
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        with open(out / "sweep.csv", "w", newline="") as fh:
            w = csv.DictWriter(fh, fieldnames=list(rows[0]))
            w.writeheader()
            w.writerows(rows)
        print(f"wrote {out / 'sweep.csv'}")
    return 0


def cmd_check(args) -> int:
    events = load_jsonl(args.history)
    level = args.level
    if level == "auto":
        level = "register" if any(e.kind == "write" and e.ts is not None for e in events) else "kv"
    groups: dict = {}
    for e in events:
        groups.setdefault(e.obj, []).append(e)
    if level == "kv":
        rep = check_objects(groups, initial=ABSENT, construction=False, bound=args.bound)
    else:
        rep = check_objects(groups, initial=None, construction=True, bound=args.bound)
    rep["level"] = level
    text = report_json(rep)
    if args.out:
        Path(args.out).write_text(text)
    else:
        print(text)
    print(f"{rep['objects']} objects, {len(rep['violations'])} violations, "
          f"{len(rep['skipped'])} too long for brute force", file=sys.stderr)
    return 0 if rep["valid"] and not rep["disagreements"] else 1


def cmd_suite(args) -> int:
    rep = run_suite(range(args.start, args.start + args.seeds), mutant=args.mutant)
    print(json.dumps({"runs": rep.runs, "invalid": rep.invalid, "disagreements": rep.disagreements,
                      "audit": rep.audit, "failed_ops": rep.failed_ops,
                      "skipped_bruteforce": rep.skipped_bruteforce}, indent=2))
    if args.mutant:
        return 0 if rep.detected else 1
    return 0 if not (rep.invalid or rep.disagreements or rep.audit or rep.failed_ops) else 1


def cmd_scenarios(_args) -> int:
    for name in builtin_scenarios():
        print(name)
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="swarmkv", description="Simulated replicated KV store over disaggregated memory.")
    sub = p.add_subparsers(dest="cmd", required=True)

    def scenario_args(sp):
        g = sp.add_mutually_exclusive_group()
        g.add_argument("--config", help="scenario INI file")
        g.add_argument("--scenario", help="built-in scenario name (see `swarmkv scenarios`)")
        sp.add_argument("--seed", type=int, default=None)
        sp.add_argument("--out", help="output directory")
        sp.add_argument("--no-check", action="store_true", help="skip linearizability checking")

    sp = sub.add_parser("run", help="run one scenario")
    scenario_args(sp)
    sp.set_defaults(fn=cmd_run)

    sp = sub.add_parser("abd", help="run a scenario under both protocols")
    scenario_args(sp)
    sp.set_defaults(fn=cmd_abd)

    sp = sub.add_parser("sweep", help="vary the number of meta slots per key")
    scenario_args(sp)
    sp.add_argument("--k", required=True, help="comma separated slot counts")
    sp.add_argument("--seeds", type=int, default=10)
    sp.set_defaults(fn=cmd_sweep)

    sp = sub.add_parser("check", help="check a journaled history file")
    sp.add_argument("history")
    sp.add_argument("--level", choices=("auto", "kv", "register"), default="auto")
    sp.add_argument("--bound", type=int, default=40, help="max operations per object for brute force")
    sp.add_argument("--out", help="write the JSON report here")
    sp.set_defaults(fn=cmd_check)

    sp = sub.add_parser("suite", help="randomized linearizability suite")
    sp.add_argument("--seeds", type=int, default=100)
    sp.add_argument("--start", type=int, default=0)
    sp.add_argument("--mutant", choices=MUTANTS)
    sp.set_defaults(fn=cmd_suite)

    sp = sub.add_parser("scenarios", help="list built-in scenarios")
    sp.set_defaults(fn=cmd_scenarios)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except (ScenarioError, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
