"""Heuristic sybil package detection on a dependency snapshot.

Packages created on or after a cutoff with few versions become seeds when
one of three signals fires: almost all transitive dependencies were created
around the same time, almost all dependents are dependency-stuffed, or the
package was unpublished or replaced by a security holding placeholder.
Every transitive dependent of a sybil is a sybil too.
"""

from __future__ import annotations

import csv
import enum
from collections import deque
from dataclasses import dataclass, replace
from datetime import datetime, timedelta, timezone
from typing import IO, Iterable, Sequence

import numpy as np
from scipy import stats

from .graph import DepGraph, Direction, RankMode, Status, top_n, transitive_closure


class Label(str, enum.Enum):
    SEED = "seed_sybil"
    PROPAGATED = "propagated_sybil"
    BENIGN = "benign"


class Trigger(str, enum.Enum):
    DEP_WINDOW = "dep_window"
    HEAVY_DEPENDENTS = "heavy_dependents"
    STATUS = "status"


class SybilClass(str, enum.Enum):
    """Manual audit categories for sampled sybil packages."""

    CREATE_NEXT_APP = "create_next_app"
    WALLET_CHAINS = "wallet_chains"
    NO_CODE = "no_code"
    STATIC_STRINGS = "static_strings"
    PACKAGE_CLONE = "package_clone"
    UNPUBLISHED_OR_PRIVATE = "unpublished_or_private"
    SECURITY_HOLDING = "security_holding"
    OTHER = "other"


class Scope(str, enum.Enum):
    TEA_REGISTERED_ONLY = "tea_registered_only"
    ALL_PACKAGES = "all_packages"


@dataclass(frozen=True)
class SybilCriteria:
    cutoff_date: datetime = datetime(2024, 1, 1, tzinfo=timezone.utc)
    max_versions: int = 10
    dep_window: timedelta = timedelta(days=28)
    dep_window_fraction: float = 0.95
    heavy_dependent_deps: int = 100
    heavy_dependent_fraction: float = 0.80
    scope: Scope = Scope.TEA_REGISTERED_ONLY

    def __post_init__(self) -> None:
        for name in ("dep_window_fraction", "heavy_dependent_fraction"):
            value = getattr(self, name)
            if not 0.0 < value <= 1.0:
                raise ValueError(f"{name} must lie in (0, 1], got {value}")
        if self.max_versions < 1 or self.heavy_dependent_deps < 1:
            raise ValueError("thresholds must be positive")
        if self.dep_window <= timedelta(0):
            raise ValueError("dep_window must be positive")
        if self.cutoff_date.tzinfo is None:
            object.__setattr__(self, "cutoff_date", self.cutoff_date.replace(tzinfo=timezone.utc))
        object.__setattr__(self, "scope", Scope(self.scope))


@dataclass(frozen=True)
class SybilVerdict:
    index: int
    name: str
    label: Label = Label.BENIGN
    trigger: Trigger | None = None
    origin: int | None = None
    class_annotation: SybilClass | None = None

    @property
    def is_sybil(self) -> bool:
        return self.label is not Label.BENIGN


def _dep_window_hit(g: DepGraph, i: int, c: SybilCriteria) -> bool:
    deps = transitive_closure(g, i, Direction.DEPENDENCIES)
    if not deps:
        return False
    created = g.packages[i].created_at
    close = sum(abs(g.packages[j].created_at - created) <= c.dep_window for j in deps)
    return close > c.dep_window_fraction * len(deps)


def _heavy_dependents_hit(g: DepGraph, i: int, c: SybilCriteria) -> bool:
    dependents = g.reverse[i]
    if not dependents:
        return False
    heavy = sum(len(g.forward[j]) > c.heavy_dependent_deps for j in dependents)
    return heavy > c.heavy_dependent_fraction * len(dependents)


def seed_trigger(g: DepGraph, i: int, c: SybilCriteria) -> Trigger | None:
    """The first criterion package ``i`` satisfies, or ``None``."""
    rec = g.packages[i]
    if c.scope is Scope.TEA_REGISTERED_ONLY and not rec.tea_registered:
        return None
    if rec.created_at < c.cutoff_date or rec.version_count >= c.max_versions:
        return None
    if _dep_window_hit(g, i, c):
        return Trigger.DEP_WINDOW
    if _heavy_dependents_hit(g, i, c):
        return Trigger.HEAVY_DEPENDENTS
    if rec.status in (Status.UNPUBLISHED, Status.SECURITY_HOLDING):
        return Trigger.STATUS
    return None


def classify_seeds(g: DepGraph, c: SybilCriteria | None = None) -> list[SybilVerdict]:
    c = c or SybilCriteria()
    seeds = []
    for i in range(g.n):
        trig = seed_trigger(g, i, c)
        if trig is not None:
            seeds.append(SybilVerdict(i, g.packages[i].name, Label.SEED, trigger=trig))
    return seeds


def propagate(g: DepGraph, seeds: Iterable[SybilVerdict]) -> list[SybilVerdict]:
    """Label every transitive dependent of a seed, returning all ``n`` verdicts.

    Each propagated package records the smallest-index seed reaching it.
    """
    verdicts: list[SybilVerdict] = [SybilVerdict(i, g.packages[i].name) for i in range(g.n)]
    seed_list = sorted(seeds, key=lambda v: v.index)
    for s in seed_list:
        verdicts[s.index] = s
    # Seeds are processed in index order; anything already reached by an
    # earlier seed has its whole dependent closure labeled, so prune there.
    done = [False] * g.n
    for s in seed_list:
        if done[s.index]:
            continue
        done[s.index] = True
        queue = deque([s.index])
        while queue:
            for dep in g.reverse[queue.popleft()]:
                if done[dep]:
                    continue
                done[dep] = True
                if verdicts[dep].label is not Label.SEED:
                    verdicts[dep] = SybilVerdict(dep, g.packages[dep].name, Label.PROPAGATED, origin=s.index)
                queue.append(dep)
    return verdicts


def detect(g: DepGraph, c: SybilCriteria | None = None) -> list[SybilVerdict]:
    return propagate(g, classify_seeds(g, c))


def sample_for_audit(verdicts: Sequence[SybilVerdict], sample_size: int, seed: int) -> list[int]:
    """Uniform sample of sybil-labeled package indices, sorted by name."""
    pool = sorted(v.index for v in verdicts if v.is_sybil)
    if sample_size < 0 or sample_size > len(pool):
        raise ValueError(f"cannot sample {sample_size} of {len(pool)} sybil packages")
    rng = np.random.default_rng(seed)
    picked = rng.choice(len(pool), size=sample_size, replace=False)
    names = {v.index: v.name for v in verdicts}
    return sorted((pool[k] for k in picked), key=lambda i: names[i])


def upper_confidence_bound(n: int, k: int, alpha: float = 0.05) -> float:
    """Exact one-sided (Clopper-Pearson) upper limit on a failure rate.

    The largest ``p`` for which seeing at most ``k`` failures in ``n``
    trials still has probability ``alpha``.
    """
    if n < 1 or not 0 <= k <= n:
        raise ValueError(f"need 0 <= k <= n and n >= 1, got n={n}, k={k}")
    if not 0.0 < alpha < 1.0:
        raise ValueError(f"alpha must lie in (0, 1), got {alpha}")
    if k == n:
        return 1.0
    return float(stats.beta.ppf(1.0 - alpha, k + 1, n - k))


def overlap_with_top(
    g: DepGraph, verdicts: Sequence[SybilVerdict], n_top: int, mode: RankMode | str = RankMode.DIRECT
) -> int:
    sybil = {v.index for v in verdicts if v.is_sybil}
    return sum(i in sybil for i, _ in top_n(g, n_top, mode))


@dataclass(frozen=True)
class DetectionSummary:
    total: int
    seeds: int
    propagated: int
    overlap_direct: int
    overlap_transitive: int
    n_top: int

    @property
    def sybil(self) -> int:
        return self.seeds + self.propagated

    @property
    def percent(self) -> float:
        return 100.0 * self.sybil / self.total if self.total else 0.0

    def lines(self) -> list[str]:
        return [
            f"packages: {self.total}",
            f"seed sybils: {self.seeds}",
            f"propagated sybils: {self.propagated}",
            f"{self.sybil} sybil ({self.percent:.2f}%)",
            f"top-{self.n_top} direct overlap: {self.overlap_direct}",
            f"top-{self.n_top} transitive overlap: {self.overlap_transitive}",
        ]


def summarize(g: DepGraph, verdicts: Sequence[SybilVerdict], n_top: int = 1000) -> DetectionSummary:
    seeds = sum(v.label is Label.SEED for v in verdicts)
    propagated = sum(v.label is Label.PROPAGATED for v in verdicts)
    if g.n:
        direct = overlap_with_top(g, verdicts, n_top, RankMode.DIRECT)
        transitive = overlap_with_top(g, verdicts, n_top, RankMode.TRANSITIVE)
    else:
        direct = transitive = 0
    return DetectionSummary(g.n, seeds, propagated, direct, transitive, n_top)


VERDICT_FIELDS = ["name", "label", "trigger", "origin", "class_annotation"]


def verdict_row(g: DepGraph, v: SybilVerdict) -> dict[str, str]:
    return {
        "name": v.name,
        "label": v.label.value,
        "trigger": v.trigger.value if v.trigger else "",
        "origin": g.packages[v.origin].name if v.origin is not None else "",
        "class_annotation": v.class_annotation.value if v.class_annotation else "",
    }


def write_verdicts_csv(g: DepGraph, verdicts: Sequence[SybilVerdict], stream: IO[str]) -> None:
    writer = csv.DictWriter(stream, fieldnames=VERDICT_FIELDS, lineterminator="\n")
    writer.writeheader()
    for v in sorted(verdicts, key=lambda v: v.name):
        writer.writerow(verdict_row(g, v))


def read_annotations(stream: IO[str]) -> dict[str, SybilClass]:
    """Read a ``name,class_annotation`` CSV produced by a manual audit."""
    reader = csv.DictReader(stream)
    if reader.fieldnames is None or not {"name", "class_annotation"} <= set(reader.fieldnames):
        raise ValueError("annotation file needs 'name' and 'class_annotation' columns")
    out: dict[str, SybilClass] = {}
    for lineno, row in enumerate(reader, start=2):
        try:
            out[row["name"]] = SybilClass(row["class_annotation"].strip())
        except ValueError:
            raise ValueError(f"line {lineno}: unknown class {row['class_annotation']!r}") from None
    return out


def apply_annotations(verdicts: Sequence[SybilVerdict], annotations: dict[str, SybilClass]) -> list[SybilVerdict]:
    return [
        replace(v, class_annotation=annotations[v.name]) if v.name in annotations else v for v in verdicts
    ]
