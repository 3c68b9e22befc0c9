"""Synthetic sybil attacks on a target package and a growth-based spam flagger.

Three attack shapes are supported:

* ``width``: many fresh packages that each depend directly on the target.
* ``tree``: one chain ``c1 -> c2 -> ... -> cN -> target``.
* ``throttled``: a width attack released in batches spaced in time, paced
  to stay under a per-window growth limit.

The flagger only sees what a snapshot records, namely creation times, so
growth is measured from the ``created_at`` of new dependents.
"""

from __future__ import annotations

import bisect
import configparser
import enum
import math
from dataclasses import dataclass
from datetime import datetime, timedelta, timezone
from typing import IO, Iterable

import numpy as np

from .graph import DepGraph, PackageRecord, Status, build_graph
from .rank import RankParams, display_score, tearank
from .timeutil import parse_duration, parse_timestamp


class AttackKind(str, enum.Enum):
    WIDTH = "width"
    TREE = "tree"
    THROTTLED = "throttled"


class AttackError(ValueError):
    pass


@dataclass(frozen=True)
class AttackPlan:
    kind: AttackKind
    target: str
    width: int = 0
    depth: int = 1
    steps: int = 1
    per_step_width: int = 0
    step_interval: timedelta = timedelta(days=7)
    created_at_base: datetime = datetime(2024, 3, 1, tzinfo=timezone.utc)
    created_at_jitter: timedelta = timedelta(hours=1)
    name_prefix: str = "sybil-"
    seed: int = 0
    tea_registered: bool = True

    def __post_init__(self) -> None:
        object.__setattr__(self, "kind", AttackKind(self.kind))
        if self.width < 0 or self.per_step_width < 0:
            raise AttackError("width and per_step_width must be non-negative")
        if self.kind is AttackKind.TREE and self.depth < 1:
            raise AttackError("tree attacks need depth >= 1")
        if self.steps < 1:
            raise AttackError("steps must be at least 1")
        if self.created_at_jitter < timedelta(0) or self.step_interval < timedelta(0):
            raise AttackError("durations must be non-negative")
        if (
            self.kind is AttackKind.THROTTLED
            and self.per_step_width
            and self.width not in (0, self.steps * self.per_step_width)
        ):
            raise AttackError("throttled width must equal steps * per_step_width")
        if self.created_at_base.tzinfo is None:
            object.__setattr__(self, "created_at_base", self.created_at_base.replace(tzinfo=timezone.utc))

    def batch_sizes(self) -> list[int]:
        if self.kind is AttackKind.WIDTH:
            return [self.width]
        if self.kind is AttackKind.TREE:
            return [self.depth]
        if self.per_step_width:
            return [self.per_step_width] * self.steps
        q, r = divmod(self.width, self.steps)
        return [q + (s < r) for s in range(self.steps)]

    @property
    def total(self) -> int:
        return sum(self.batch_sizes())


@dataclass(frozen=True)
class SpamThresholds:
    """Flagging limits. Use ``math.inf`` to disable a rule."""

    width_limit: float
    tree_limit: float
    window: timedelta

    def __post_init__(self) -> None:
        if self.width_limit < 0 or self.tree_limit < 0:
            raise ValueError("limits must be non-negative")
        if self.window <= timedelta(0):
            raise ValueError("window must be positive")


def injected_names(plan: AttackPlan) -> list[str]:
    return [f"{plan.name_prefix}{k:05d}" for k in range(1, plan.total + 1)]


def apply_attack(g: DepGraph, plan: AttackPlan) -> tuple[DepGraph, frozenset[str]]:
    """Return a new graph with the plan's packages added, plus their names.

    Raises:
        AttackError: If the target is missing or an injected name is taken.
    """
    if plan.target not in g:
        raise AttackError(f"unknown target package: {plan.target!r}")
    names = injected_names(plan)
    if not names:
        return g, frozenset()
    clash = [nm for nm in names if nm in g]
    if clash:
        raise AttackError(f"injected name already exists: {clash[0]!r}")

    rng = np.random.default_rng(plan.seed)
    jitter = rng.integers(0, int(plan.created_at_jitter.total_seconds()) + 1, size=len(names))
    target = g.packages[g.index(plan.target)]

    def record(k: int, offset: timedelta, dep: str) -> PackageRecord:
        return PackageRecord(
            name=names[k],
            registry=target.registry,
            created_at=plan.created_at_base + offset + timedelta(seconds=int(jitter[k])),
            version_count=1,
            status=Status.ACTIVE,
            tea_registered=plan.tea_registered,
            dependencies=(dep,),
        )

    new: list[PackageRecord] = []
    if plan.kind is AttackKind.TREE:
        for k in range(plan.depth):
            dep = names[k + 1] if k + 1 < plan.depth else plan.target
            new.append(record(k, timedelta(0), dep))
    else:
        k = 0
        for step, size in enumerate(plan.batch_sizes()):
            for _ in range(size):
                new.append(record(k, step * plan.step_interval, plan.target))
                k += 1
    return build_graph(list(g.packages) + new, strict=True), frozenset(names)


@dataclass(frozen=True)
class GrowthEvent:
    package: str
    dependent: str
    at: datetime


def growth_log(g: DepGraph, dependents: Iterable[str] | None = None) -> list[GrowthEvent]:
    """One event per dependency edge, timed at the dependent's creation.

    Pass ``dependents`` (for instance an attack's provenance set) to keep
    only the events caused by those packages.
    """
    keep = None if dependents is None else set(dependents)
    events = []
    for j, users in enumerate(g.reverse):
        pkg = g.packages[j].name
        for i in users:
            rec = g.packages[i]
            if keep is None or rec.name in keep:
                events.append(GrowthEvent(pkg, rec.name, rec.created_at))
    events.sort(key=lambda e: (e.package, e.at, e.dependent))
    return events


def max_window_growth(times: list[datetime], window: timedelta) -> int:
    """Largest number of sorted ``times`` inside any ``[t, t + window)``."""
    best = 0
    for a, t in enumerate(times):
        b = bisect.bisect_left(times, t + window, lo=a)
        best = max(best, b - a)
    return best


def fresh_chain_depths(g: DepGraph, window: timedelta) -> list[int]:
    """Length of the longest dependent chain ending at each package.

    A chain ``c1 -> ... -> cL -> p`` counts when every consecutive pair
    ``c(i) -> c(i+1)`` was created within ``window`` of each other; the
    terminal package's own age does not matter. Cycles in the fresh-link
    subgraph are cut at the first revisited node.
    """
    created = [rec.created_at for rec in g.packages]
    fresh_in = [
        [c for c in g.reverse[i] if abs(created[c] - created[i]) <= window] for i in range(g.n)
    ]
    # memo[i]: longest fresh chain of dependents hanging off i, counting i
    memo = [0] * g.n
    state = [0] * g.n  # 0 new, 1 on stack, 2 done
    for root in range(g.n):
        if state[root]:
            continue
        stack = [(root, 0)]
        state[root] = 1
        while stack:
            v, pos = stack[-1]
            if pos < len(fresh_in[v]):
                stack[-1] = (v, pos + 1)
                w = fresh_in[v][pos]
                if state[w] == 0:
                    state[w] = 1
                    stack.append((w, 0))
                continue
            memo[v] = 1 + max((memo[w] for w in fresh_in[v] if state[w] == 2), default=0)
            state[v] = 2
            stack.pop()
    return [max((memo[c] for c in g.reverse[p]), default=0) for p in range(g.n)]


def flag_spam(g: DepGraph, t: SpamThresholds, log: Iterable[GrowthEvent] | None = None) -> set[str]:
    """Names of packages whose growth breaks a threshold.

    A package is flagged when more than ``t.width_limit`` new dependents
    appear within one ``t.window``, or when it terminates a fresh dependent
    chain longer than ``t.tree_limit``.
    """
    flagged: set[str] = set()
    if not math.isinf(t.width_limit):
        per_pkg: dict[str, list[datetime]] = {}
        for e in growth_log(g) if log is None else log:
            per_pkg.setdefault(e.package, []).append(e.at)
        for pkg, times in per_pkg.items():
            times.sort()
            if len(times) > t.width_limit and max_window_growth(times, t.window) > t.width_limit:
                flagged.add(pkg)
    if not math.isinf(t.tree_limit):
        for p, depth in enumerate(fresh_chain_depths(g, t.window)):
            if depth > t.tree_limit:
                flagged.add(g.packages[p].name)
    return flagged


@dataclass(frozen=True)
class Uplift:
    raw_before: float
    raw_after: float
    converged: bool

    @property
    def raw_delta(self) -> float:
        return self.raw_after - self.raw_before

    @property
    def display_delta(self) -> float:
        return display_score(self.raw_after) - display_score(self.raw_before)


def rank_uplift(before: DepGraph, after: DepGraph, target: str, params: RankParams | None = None) -> Uplift:
    """Change in ``target``'s teaRank between two graphs.

    Non-convergence on either side is reported through ``converged`` rather
    than raised.
    """
    for g in (before, after):
        if target not in g:
            raise AttackError(f"unknown target package: {target!r}")
    params = params or RankParams()
    rb = tearank(before, params)
    ra = tearank(after, params)
    return Uplift(
        raw_before=float(rb.values[before.index(target)]),
        raw_after=float(ra.values[after.index(target)]),
        converged=rb.converged and ra.converged,
    )


_PLAN_KEYS = {
    "kind": str,
    "target": str,
    "width": int,
    "depth": int,
    "steps": int,
    "per_step_width": int,
    "step_interval": parse_duration,
    "created_at_base": parse_timestamp,
    "created_at_jitter": parse_duration,
    "name_prefix": str,
    "seed": int,
    "tea_registered": lambda s: s.strip().lower() in ("1", "true", "yes", "on"),
}


def _limit(text: str) -> float:
    text = text.strip().lower()
    return math.inf if text in ("inf", "none", "off") else float(int(text))


def read_plan(stream: IO[str]) -> tuple[AttackPlan, SpamThresholds | None]:
    """Parse an INI-style plan: an ``[attack]`` section and optional ``[thresholds]``."""
    parser = configparser.ConfigParser(interpolation=None)
    parser.read_file(stream)
    if not parser.has_section("attack"):
        raise AttackError("plan file needs an [attack] section")
    section = parser["attack"]
    unknown = set(section) - set(_PLAN_KEYS)
    if unknown:
        raise AttackError(f"unknown plan keys: {', '.join(sorted(unknown))}")
    missing = {"kind", "target"} - set(section)
    if missing:
        raise AttackError(f"plan is missing: {', '.join(sorted(missing))}")
    try:
        plan = AttackPlan(**{k: _PLAN_KEYS[k](v) for k, v in section.items()})
    except (TypeError, ValueError) as exc:
        raise AttackError(f"invalid plan: {exc}") from None
    thresholds = None
    if parser.has_section("thresholds"):
        th = parser["thresholds"]
        try:
            thresholds = SpamThresholds(
                width_limit=_limit(th.get("width_limit", "inf")),
                tree_limit=_limit(th.get("tree_limit", "inf")),
                window=parse_duration(th.get("window", "7d")),
            )
        except ValueError as exc:
            raise AttackError(f"invalid thresholds: {exc}") from None
    return plan, thresholds


def write_provenance(names: Iterable[str], stream: IO[str]) -> None:
    for name in sorted(names):
        stream.write(name + "\n")

