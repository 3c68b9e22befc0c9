"""Immutable dependency graph.

An edge ``i -> j`` means package ``i`` depends on package ``j``. Rank mass
flows along edges (from dependents to their dependencies), while sybil
labels propagate against them (from a dependency to its dependents).
"""

from __future__ import annotations

import enum
from collections import deque
from dataclasses import dataclass, field, replace
from datetime import datetime
from typing import Iterable, Sequence

from .timeutil import to_utc


class Registry(str, enum.Enum):
    CRATES = "crates"
    NPM = "npm"
    PKGX = "pkgx"
    HOMEBREW = "homebrew"
    PYPI = "pypi"
    APT_GET = "apt-get"
    RUBYGEMS = "rubygems"
    OTHER = "other"


class Status(str, enum.Enum):
    ACTIVE = "active"
    UNPUBLISHED = "unpublished"
    SECURITY_HOLDING = "security_holding"


class Direction(str, enum.Enum):
    DEPENDENCIES = "dependencies"
    DEPENDENTS = "dependents"


class RankMode(str, enum.Enum):
    DIRECT = "direct"
    TRANSITIVE = "transitive"


class GraphError(ValueError):
    """Raised for malformed package sets (duplicates, strict-mode violations)."""


@dataclass(frozen=True)
class PackageRecord:
    """Registry metadata for one package.

    Dependency lists are taken as-is here; self references, duplicates and
    unknown names are resolved by :func:`build_graph`.
    """

    name: str
    created_at: datetime
    version_count: int = 1
    status: Status = Status.ACTIVE
    tea_registered: bool = False
    dependencies: tuple[str, ...] = ()
    registry: Registry = Registry.NPM
    observed_display_score: float | None = None

    def __post_init__(self) -> None:
        if not isinstance(self.name, str) or not self.name:
            raise ValueError("package name must be a non-empty string")
        if self.version_count < 0:
            raise ValueError(f"{self.name}: version_count must be non-negative")
        score = self.observed_display_score
        if score is not None and not 0.0 <= score <= 100.0:
            raise ValueError(f"{self.name}: observed_display_score {score} outside [0, 100]")
        object.__setattr__(self, "created_at", to_utc(self.created_at))
        object.__setattr__(self, "status", Status(self.status))
        object.__setattr__(self, "registry", Registry(self.registry))
        object.__setattr__(self, "dependencies", tuple(self.dependencies))


@dataclass(frozen=True)
class BuildReport:
    self_loops: int = 0
    duplicates: int = 0
    unresolved: int = 0

    @property
    def dropped(self) -> int:
        return self.self_loops + self.duplicates + self.unresolved


@dataclass(frozen=True)
class DepGraph:
    packages: tuple[PackageRecord, ...]
    forward: tuple[tuple[int, ...], ...]
    reverse: tuple[tuple[int, ...], ...]
    report: BuildReport = field(default=BuildReport(), compare=False)
    _index: dict[str, int] = field(default_factory=dict, compare=False, repr=False)

    @property
    def n(self) -> int:
        return len(self.packages)

    @property
    def edge_count(self) -> int:
        return sum(len(deps) for deps in self.forward)

    def index(self, name: str) -> int:
        try:
            return self._index[name]
        except KeyError:
            raise KeyError(f"unknown package: {name!r}") from None

    def __contains__(self, name: object) -> bool:
        return name in self._index

    def name(self, i: int) -> str:
        return self.packages[i].name

    def out_degree(self, i: int) -> int:
        return len(self.forward[i])

    def in_degree(self, i: int) -> int:
        return len(self.reverse[i])

    def records(self) -> list[PackageRecord]:
        """Records with dependency lists normalized to the graph's edges."""
        return list(self.packages)


def build_graph(records: Iterable[PackageRecord], strict: bool = False) -> DepGraph:
    """Build a :class:`DepGraph` from package records.

    In lenient mode self dependencies, repeated dependency entries and names
    outside the record set are dropped and counted in ``graph.report``.
    Strict mode raises on self dependencies and unresolved names; repeated
    entries are still collapsed and counted.

    Raises:
        GraphError: On duplicate package names, or on a self dependency or
            unresolvable dependency when ``strict`` is set.
    """
    records = list(records)
    index: dict[str, int] = {}
    for i, rec in enumerate(records):
        if rec.name in index:
            raise GraphError(f"duplicate package name: {rec.name!r}")
        index[rec.name] = i

    self_loops = duplicates = unresolved = 0
    forward: list[tuple[int, ...]] = []
    reverse: list[list[int]] = [[] for _ in records]
    normalized: list[PackageRecord] = []
    for i, rec in enumerate(records):
        targets: set[int] = set()
        for dep in rec.dependencies:
            if dep == rec.name:
                if strict:
                    raise GraphError(f"{rec.name!r} depends on itself")
                self_loops += 1
                continue
            j = index.get(dep)
            if j is None:
                if strict:
                    raise GraphError(f"{rec.name!r} depends on unknown package {dep!r}")
                unresolved += 1
                continue
            if j in targets:
                duplicates += 1
                continue
            targets.add(j)
        out = tuple(sorted(targets))
        forward.append(out)
        for j in out:
            reverse[j].append(i)
        deps = tuple(sorted(records[j].name for j in out))
        normalized.append(rec if deps == rec.dependencies else replace(rec, dependencies=deps))

    return DepGraph(
        packages=tuple(normalized),
        forward=tuple(forward),
        # i ascends in the loop above, so each reverse list is already sorted
        reverse=tuple(tuple(r) for r in reverse),
        report=BuildReport(self_loops, duplicates, unresolved),
        _index=index,
    )


def _check_index(g: DepGraph, pkg: int) -> None:
    if not 0 <= pkg < g.n:
        raise IndexError(f"package index {pkg} out of range for n={g.n}")


def _adjacency(g: DepGraph, direction: Direction | str) -> Sequence[Sequence[int]]:
    direction = Direction(direction)
    return g.forward if direction is Direction.DEPENDENCIES else g.reverse


def neighbors(g: DepGraph, pkg: int, direction: Direction | str) -> set[int]:
    _check_index(g, pkg)
    return set(_adjacency(g, direction)[pkg])


def transitive_closure(g: DepGraph, pkg: int, direction: Direction | str) -> set[int]:
    """All packages reachable from ``pkg`` in ``direction``, excluding ``pkg``."""
    _check_index(g, pkg)
    adj = _adjacency(g, direction)
    seen = {pkg}
    queue = deque([pkg])
    while queue:
        for nxt in adj[queue.popleft()]:
            if nxt not in seen:
                seen.add(nxt)
                queue.append(nxt)
    seen.discard(pkg)
    return seen


def _strong_components(g: DepGraph) -> tuple[list[int], int]:
    """Iterative Tarjan. Components are numbered in reverse topological
    order of the forward edges (a component's dependencies get lower ids)."""
    n = g.n
    comp = [-1] * n
    low = [0] * n
    order = [-1] * n
    stack: list[int] = []
    on_stack = [False] * n
    counter = 0
    n_comp = 0
    for root in range(n):
        if order[root] != -1:
            continue
        work = [(root, 0)]
        while work:
            v, pos = work.pop()
            if pos == 0:
                order[v] = low[v] = counter
                counter += 1
                stack.append(v)
                on_stack[v] = True
            succ = g.forward[v]
            descended = False
            while pos < len(succ):
                w = succ[pos]
                pos += 1
                if order[w] == -1:
                    work.append((v, pos))
                    work.append((w, 0))
                    descended = True
                    break
                if on_stack[w]:
                    low[v] = min(low[v], order[w])
            if descended:
                continue
            if low[v] == order[v]:
                while True:
                    w = stack.pop()
                    on_stack[w] = False
                    comp[w] = n_comp
                    if w == v:
                        break
                n_comp += 1
            if work:
                parent = work[-1][0]
                low[parent] = min(low[parent], low[v])
    return comp, n_comp


def transitive_counts(g: DepGraph, direction: Direction | str) -> list[int]:
    """``len(transitive_closure(g, p, direction))`` for every package.

    Works on the strongly connected condensation with integer bitsets, so it
    stays well below the per-node BFS cost on large acyclic graphs.
    """
    direction = Direction(direction)
    comp, n_comp = _strong_components(g)
    members = [0] * n_comp
    sizes = [0] * n_comp
    for v, c in enumerate(comp):
        members[c] |= 1 << v
        sizes[c] += 1
    # comp edges in the closure direction: c -> predecessors whose reach we absorb
    feeders: list[set[int]] = [set() for _ in range(n_comp)]
    for i, deps in enumerate(g.forward):
        ci = comp[i]
        for j in deps:
            cj = comp[j]
            if ci == cj:
                continue
            if direction is Direction.DEPENDENTS:
                feeders[cj].add(ci)
            else:
                feeders[ci].add(cj)
    reach = [0] * n_comp
    # Tarjan ids are reverse topological: dependencies first
    ids = range(n_comp) if direction is Direction.DEPENDENCIES else range(n_comp - 1, -1, -1)
    for c in ids:
        acc = 0
        for f in feeders[c]:
            acc |= members[f] | reach[f]
        reach[c] = acc
    per_comp = [reach[c].bit_count() + sizes[c] - 1 for c in range(n_comp)]
    return [per_comp[c] for c in comp]


def top_n(g: DepGraph, n_top: int, mode: RankMode | str = RankMode.DIRECT) -> list[tuple[int, int]]:
    """Packages with the most dependents, as ``(index, count)`` pairs.

    ``direct`` counts immediate dependents, ``transitive`` counts every
    package that depends on it through any chain. Ties go to the
    lexicographically smaller name.
    """
    if n_top < 1:
        raise ValueError("n_top must be at least 1")
    mode = RankMode(mode)
    if mode is RankMode.DIRECT:
        counts = [len(r) for r in g.reverse]
    else:
        counts = transitive_counts(g, Direction.DEPENDENTS)
    order = sorted(range(g.n), key=lambda i: (-counts[i], g.packages[i].name))
    return [(i, counts[i]) for i in order[:n_top]]
