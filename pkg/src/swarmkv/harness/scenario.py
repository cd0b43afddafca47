"""Scenario configuration: one INI file per experiment.

Example::

    [scenario]
    name = ycsb-b
    seed = 3
    pace = 20          ; each client starts an op every 20 time units (0: back to back)

    [workload]
    read_fraction = 0.95
    keys = 100
    clients = 4
    ops_per_client = 500

    [fabric]
    latency = 0.5

    [skew]
    client.2 = -50

    [links]
    client.0.node.1 = 5.0   ; base one-way delay of one client-node link

    [faults]
    crash = 40:1       ; time:node, comma separated

Unknown sections or keys and malformed values are reported with the line they
appear on.
"""

from __future__ import annotations

import configparser
import dataclasses
from importlib import resources
from dataclasses import dataclass, field
from typing import Optional

from ..fabric import FabricConfig, FaultSchedule
from ..kvstore import KVConfig
from ..maxreg import QuorumPolicy
from ..safeguess import SafeGuessConfig
from .workload import WorkloadSpec


class ScenarioError(ValueError):
    pass


@dataclass
class Scenario:
    name: str = "scenario"
    seed: int = 0
    protocol: str = "swarm"
    preload: bool = True            # insert every key before the measured phase
    warmup: bool = True             # every client reads every key once before measuring
    pace: float = 0.0               # per-client op period; 0 issues back to back
    stagger: Optional[float] = None # offset between clients' schedules, default pace / clients
    think_time: float = 0.0         # random extra delay (mean) before each op
    max_time: float = 1e7           # ops still running at this simulated time count as failed
    workload: WorkloadSpec = field(default_factory=WorkloadSpec)
    fabric: FabricConfig = field(default_factory=FabricConfig)
    faults: FaultSchedule = field(default_factory=FaultSchedule)
    kv: dict = field(default_factory=dict)          # extra KVConfig fields
    safeguess: SafeGuessConfig = field(default_factory=SafeGuessConfig)
    policy: QuorumPolicy = field(default_factory=QuorumPolicy)
    skew: dict = field(default_factory=dict)        # client -> clock skew
    check: bool = True
    check_bound: int = 40
    log_events: bool = False

    def kv_config(self) -> KVConfig:
        extra = dict(self.kv)
        return KVConfig(clients=self.workload.clients, value_size=self.workload.value_size,
                        protocol=self.protocol, safeguess=self.safeguess, policy=self.policy,
                        skew=dict(self.skew), **extra)

    def with_seed(self, seed: int) -> "Scenario":
        return dataclasses.replace(self, seed=seed,
                                   workload=dataclasses.replace(self.workload, seed=seed))


_BOOL = {"1": True, "yes": True, "true": True, "on": True,
         "0": False, "no": False, "false": False, "off": False}


def _convert(raw: str, kind):
    raw = raw.strip()
    if kind is bool:
        if raw.lower() not in _BOOL:
            raise ValueError(f"expected a boolean, got {raw!r}")
        return _BOOL[raw.lower()]
    if kind is int:
        return int(raw)
    if kind is float:
        return float(raw)
    return raw


def _line_numbers(text: str) -> dict:
    """(section, key) -> line number, and (section, None) for headers."""
    lines: dict = {}
    section = None
    for no, line in enumerate(text.splitlines(), 1):
        s = line.strip()
        if not s or s[0] in "#;":
            continue
        if s.startswith("[") and s.endswith("]"):
            section = s[1:-1].strip()
            lines[(section, None)] = no
        elif section is not None:
            for sep in ("=", ":"):
                if sep in s:
                    lines[(section, s.split(sep, 1)[0].strip().lower())] = no
                    break
    return lines


_SCENARIO_KEYS = {"name": str, "seed": int, "protocol": str, "preload": bool, "warmup": bool,
                  "pace": float, "stagger": float, "think_time": float, "max_time": float,
                  "check": bool, "check_bound": int, "log_events": bool}
_KV_KEYS = {"slots": int, "cache_capacity": int, "inplace_cap": int, "abd_weak_read": bool,
            "poisoned_hash": bool, "resync": str, "clock_resolution": int}


def _types(cls) -> dict:
    hints = {"float": float, "int": int, "bool": bool, "str": str}
    out = {}
    for f in dataclasses.fields(cls):
        name = f.type if isinstance(f.type, str) else f.type.__name__
        if name.startswith("Optional["):
            name = name[len("Optional["):-1]
        out[f.name] = hints.get(name, str)
    return out


def parse_scenario(text: str, source: str = "<string>") -> Scenario:
    lines = _line_numbers(text)

    def fail(section, key, msg):
        no = lines.get((section, key), lines.get((section, None)))
        where = f"{source}:{no}" if no else source
        raise ScenarioError(f"{where}: {msg}")

    parser = configparser.ConfigParser(inline_comment_prefixes=(";", "#"))
    try:
        parser.read_string(text, source=source)
    except configparser.Error as exc:
        raise ScenarioError(str(exc)) from exc

    sc = Scenario()
    wl: dict = {}
    fab: dict = {}
    sg: dict = {}
    pol: dict = {}
    sections = {
        "scenario": (_SCENARIO_KEYS, None),
        "workload": (_types(WorkloadSpec), wl),
        "fabric": ({k: v for k, v in _types(FabricConfig).items()
                    if k not in ("node_latency", "link_latency")}, fab),
        "kv": (_KV_KEYS, sc.kv),
        "safeguess": (_types(SafeGuessConfig), sg),
        "quorum": (_types(QuorumPolicy), pol),
    }
    for name in parser.sections():
        if name in sections:
            keys, target = sections[name]
            for key, raw in parser.items(name):
                if key not in keys:
                    fail(name, key, f"unknown key {key!r} in [{name}]")
                try:
                    val = _convert(raw, keys[key])
                except ValueError as exc:
                    fail(name, key, f"{key}: {exc}")
                if target is None:
                    setattr(sc, key, val)
                else:
                    target[key] = val
        elif name == "skew":
            for key, raw in parser.items(name):
                if not key.startswith("client."):
                    fail(name, key, f"skew keys look like client.N, got {key!r}")
                try:
                    sc.skew[int(key.split(".", 1)[1])] = float(raw)
                except ValueError as exc:
                    fail(name, key, f"{key}: {exc}")
        elif name == "links":
            links = fab.setdefault("link_latency", {})
            for key, raw in parser.items(name):
                parts = key.split(".")
                if len(parts) != 4 or parts[0] != "client" or parts[2] != "node":
                    fail(name, key, f"link keys look like client.N.node.M, got {key!r}")
                try:
                    links[(int(parts[1]), int(parts[3]))] = float(raw)
                except ValueError as exc:
                    fail(name, key, f"{key}: {exc}")
        elif name == "nodes":
            lat = fab.setdefault("node_latency", {})
            for key, raw in parser.items(name):
                if not key.startswith("node."):
                    fail(name, key, f"node keys look like node.N, got {key!r}")
                try:
                    lat[int(key.split(".", 1)[1])] = float(raw)
                except ValueError as exc:
                    fail(name, key, f"{key}: {exc}")
        elif name == "faults":
            crashes, slowdowns = [], []
            for key, raw in parser.items(name):
                try:
                    items = [p.strip() for p in raw.split(",") if p.strip()]
                    if key == "crash":
                        for it in items:
                            t, node = it.split(":")
                            crashes.append((float(t), int(node)))
                    elif key == "slowdown":
                        for it in items:
                            t, node, extra = it.split(":")
                            slowdowns.append((float(t), int(node), float(extra)))
                    else:
                        fail(name, key, f"unknown fault kind {key!r}")
                except ScenarioError:
                    raise
                except ValueError:
                    fail(name, key, f"malformed {key} entry {raw!r}")
            sc.faults = FaultSchedule(crashes=crashes, slowdowns=slowdowns)
        else:
            fail(name, None, f"unknown section [{name}]")

    try:
        sc.workload = WorkloadSpec(**{**wl, "seed": wl.get("seed", sc.seed)})
    except (ValueError, TypeError) as exc:
        fail("workload", None, str(exc))
    try:
        sc.fabric = FabricConfig(**fab)
    except (ValueError, TypeError) as exc:
        fail("fabric", None, str(exc))
    try:
        sc.faults.validate(sc.fabric.node_count, sc.fabric.f)
    except ValueError as exc:
        fail("faults", "crash", str(exc))
    try:
        sc.safeguess = SafeGuessConfig(**sg)
    except ValueError as exc:
        fail("safeguess", next(iter(sg), None), str(exc))
    sc.policy = QuorumPolicy(**pol)
    if sc.protocol not in ("swarm", "abd"):
        fail("scenario", "protocol", f"unknown protocol {sc.protocol!r}")
    try:
        sc.kv_config()
    except (ValueError, TypeError) as exc:
        fail("kv", None, str(exc))
    return sc


def load_scenario(path) -> Scenario:
    with open(path) as fh:
        return parse_scenario(fh.read(), source=str(path))


def builtin_scenarios() -> list[str]:
    return sorted(p.name[:-4] for p in resources.files("swarmkv.scenarios").iterdir()
                  if p.name.endswith(".ini"))


def builtin_scenario(name: str) -> Scenario:
    """One of the scenario files shipped with the package, by stem."""
    res = resources.files("swarmkv.scenarios") / f"{name}.ini"
    if not res.is_file():
        raise ScenarioError(f"no built-in scenario {name!r}; have {', '.join(builtin_scenarios())}")
    return parse_scenario(res.read_text(), source=f"<builtin {name}.ini>")
