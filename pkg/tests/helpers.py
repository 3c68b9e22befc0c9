"""Fixture builders and independent oracles shared by the test modules."""

from __future__ import annotations

import math
from datetime import datetime, timedelta, timezone

import numpy as np

from tearank.attack import AttackPlan, apply_attack
from tearank.graph import DepGraph, PackageRecord, build_graph
from tearank.ingest import SyntheticSpec, generate_synthetic

T0 = datetime(2020, 1, 1, tzinfo=timezone.utc)
UTC = timezone.utc


def rec(name, deps=(), created=T0, **kw) -> PackageRecord:
    return PackageRecord(name=name, created_at=created, dependencies=tuple(deps), **kw)


def graph_from_edges(n: int, edges, names=None) -> DepGraph:
    names = names or [f"p{i:03d}" for i in range(n)]
    deps = {i: [] for i in range(n)}
    for i, j in edges:
        deps[i].append(names[j])
    return build_graph([rec(names[i], deps[i]) for i in range(n)])


def chain(*names) -> DepGraph:
    """``chain("a", "b", "c")`` is a -> b -> c."""
    records = [rec(nm, [names[k + 1]] if k + 1 < len(names) else []) for k, nm in enumerate(names)]
    return build_graph(records)


def random_graph(rng: np.random.Generator, n: int, p: float) -> DepGraph:
    edges = [(i, j) for i in range(n) for j in range(n) if i != j and rng.random() < p]
    return graph_from_edges(n, edges)


# --- oracles -------------------------------------------------------------


def dense_transition(g: DepGraph, kappa: float) -> np.ndarray:
    n = g.n
    a = np.zeros((n, n))
    for i, rec_ in enumerate(g.packages):
        deps = [g.index(nm) for nm in rec_.dependencies]
        for j in deps:
            a[j, i] = 1.0 / len(deps)
    return (1 - kappa) * a + kappa * np.eye(n)


def dense_rank(g: DepGraph, kappa: float, d: float) -> np.ndarray:
    """Direct solve of (I - (1 - d) T) v = d E."""
    n = g.n
    t = dense_transition(g, kappa)
    return np.linalg.solve(np.eye(n) - (1 - d) * t, np.full(n, d / n))


def reachability(g: DepGraph) -> np.ndarray:
    """``R[i, j]`` is True when j is reachable from i along dependency edges."""
    n = g.n
    r = np.zeros((n, n), dtype=bool)
    for i, rec_ in enumerate(g.packages):
        for nm in rec_.dependencies:
            r[i, g.index(nm)] = True
    for k in range(n):  # Warshall
        r |= r[:, [k]] & r[[k], :]
    return r


def binom_cdf(k: int, n: int, p: float) -> float:
    return sum(math.comb(n, i) * p**i * (1 - p) ** (n - i) for i in range(k + 1))


def clopper_pearson_bisect(n: int, k: int, alpha: float) -> float:
    if k == n:
        return 1.0
    lo, hi = 0.0, 1.0
    for _ in range(200):
        mid = (lo + hi) / 2
        if binom_cdf(k, n, mid) >= alpha:
            lo = mid
        else:
            hi = mid
    return lo


# --- sybil fixture -------------------------------------------------------

ATTACK_BASE = datetime(2024, 3, 1, tzinfo=UTC)


def attack_fixture(seed: int = 7):
    """2000 legitimate pre-2024 packages plus a 500-wide and a 50-deep attack.

    The attacker owns two fresh target packages; everything the attacks
    inject is post-2024, has one version and is created within a day.
    Returns ``(graph, background_names, injected_names, target_names)``.
    """
    background = generate_synthetic(
        SyntheticSpec(n=2000, model="preferential_attachment", edge_param=2.0, version_range=(1, 40)), seed
    ).records
    targets = [
        rec("target-width", created=ATTACK_BASE, version_count=1, tea_registered=True),
        rec("target-tree", created=ATTACK_BASE, version_count=1, tea_registered=True),
    ]
    g = build_graph(background + targets, strict=True)
    g, width_names = apply_attack(
        g,
        AttackPlan(kind="width", target="target-width", width=500, created_at_base=ATTACK_BASE,
                   created_at_jitter=timedelta(hours=20), name_prefix="wide-", seed=seed),
    )
    g, tree_names = apply_attack(
        g,
        AttackPlan(kind="tree", target="target-tree", depth=50, created_at_base=ATTACK_BASE,
                   created_at_jitter=timedelta(hours=20), name_prefix="deep-", seed=seed + 1),
    )
    return g, {r.name for r in background}, set(width_names | tree_names), {t.name for t in targets}
