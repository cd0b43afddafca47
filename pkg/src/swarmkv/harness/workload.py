"""YCSB-style operation streams."""

from __future__ import annotations

import random
from dataclasses import dataclass
from typing import Optional


@dataclass
class WorkloadSpec:
    read_fraction: float = 0.95
    insert_fraction: float = 0.0
    delete_fraction: float = 0.0
    keys: int = 100
    distribution: str = "zipfian"       # "zipfian" | "uniform"
    theta: float = 0.99
    value_size: int = 64
    clients: int = 4
    ops_per_client: int = 1000
    seed: int = 0

    def __post_init__(self):
        for name in ("read_fraction", "insert_fraction", "delete_fraction"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"{name} must be in [0, 1], got {v}")
        if self.read_fraction + self.insert_fraction + self.delete_fraction > 1.0 + 1e-9:
            raise ValueError("operation fractions add up to more than 1")
        if self.distribution not in ("zipfian", "uniform"):
            raise ValueError(f"unknown key distribution {self.distribution!r}")
        if self.keys < 1 or self.clients < 1 or self.ops_per_client < 0:
            raise ValueError("keys and clients must be positive")
        if not 0.0 < self.theta < 1.0:
            raise ValueError("zipfian theta must be in (0, 1)")

    @property
    def update_fraction(self) -> float:
        return max(0.0, 1.0 - self.read_fraction - self.insert_fraction - self.delete_fraction)


class Zipfian:
    """Bounded zipfian sampler over ``[0, n)`` (Gray et al., as used by YCSB).

    Rank 0 is the most popular item.
    """

    def __init__(self, n: int, theta: float = 0.99, rng: Optional[random.Random] = None):
        self.n = n
        self.theta = theta
        self.rng = rng or random.Random()
        self.zetan = sum(1.0 / (i ** theta) for i in range(1, n + 1))
        zeta2 = 1.0 + 1.0 / (2 ** theta)
        self.alpha = 1.0 / (1.0 - theta)
        self.eta = (1 - (2.0 / n) ** (1 - theta)) / (1 - zeta2 / self.zetan) if n > 1 else 0.0

    def sample(self) -> int:
        if self.n == 1:
            return 0
        u = self.rng.random()
        uz = u * self.zetan
        if uz < 1.0:
            return 0
        if uz < 1.0 + 0.5 ** self.theta:
            return 1
        return min(self.n - 1, int(self.n * (self.eta * u - self.eta + 1) ** self.alpha))


def key_name(index: int) -> bytes:
    return b"user%08d" % index


def make_value(client: int, seq: int, size: int) -> bytes:
    tag = b"c%d-%d:" % (client, seq)
    if len(tag) >= size:
        return tag[:size]
    return tag + b"." * (size - len(tag))


def generate(spec: WorkloadSpec) -> list[list[tuple]]:
    """Per-client lists of ``(op, key, value)``; values are unique per operation."""
    rng = random.Random(spec.seed)
    picker = Zipfian(spec.keys, spec.theta, rng) if spec.distribution == "zipfian" else None
    # scatter popularity ranks over the key space so hot keys land on different nodes
    perm = list(range(spec.keys))
    rng.shuffle(perm)
    out = []
    for c in range(spec.clients):
        ops = []
        for seq in range(spec.ops_per_client):
            rank = picker.sample() if picker else rng.randrange(spec.keys)
            key = key_name(perm[rank])
            x = rng.random()
            if x < spec.read_fraction:
                ops.append(("get", key, None))
            elif x < spec.read_fraction + spec.insert_fraction:
                ops.append(("insert", key, make_value(c, seq, spec.value_size)))
            elif x < spec.read_fraction + spec.insert_fraction + spec.delete_fraction:
                ops.append(("delete", key, None))
            else:
                ops.append(("update", key, make_value(c, seq, spec.value_size)))
        out.append(ops)
    return out


def zipf_pmf(n: int, theta: float) -> list[float]:
    z = sum(1.0 / (i ** theta) for i in range(1, n + 1))
    return [1.0 / (i ** theta) / z for i in range(1, n + 1)]
