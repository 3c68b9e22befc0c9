"""Snapshot files and synthetic snapshot generation.

A snapshot is newline-delimited JSON. The first line is a header::

    {"schema_version":1,"captured_at":"2024-06-01T00:00:00Z","source":"npm"}

and every following line is one package::

    {"name":"left-pad","registry":"npm","created":"2014-03-26T21:18:24Z",
     "versions":12,"status":"active","tea_registered":true,
     "deps":["a","b"],"observed_score":41.5}

``observed_score`` is omitted when unknown. Writing is canonical: records
sorted by name, dependencies sorted, fields in the order above, compact
separators, so ``write(load(x)) == x`` for any canonical ``x``.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from datetime import datetime, timezone
from typing import IO, Iterable, Literal

import numpy as np

from .graph import PackageRecord, Registry, Status
from .timeutil import format_timestamp, parse_timestamp, to_utc

SCHEMA_VERSION = 1
RECORD_FIELDS = ("name", "registry", "created", "versions", "status", "tea_registered", "deps", "observed_score")


class SnapshotError(ValueError):
    pass


@dataclass(frozen=True)
class LineIssue:
    line: int
    message: str

    def __str__(self) -> str:
        return f"line {self.line}: {self.message}"


@dataclass
class Snapshot:
    records: list[PackageRecord]
    captured_at: datetime = datetime(1970, 1, 1, tzinfo=timezone.utc)
    source: str = ""
    schema_version: int = SCHEMA_VERSION
    issues: list[LineIssue] = field(default_factory=list, compare=False)

    def __post_init__(self) -> None:
        if self.schema_version != SCHEMA_VERSION:
            raise SnapshotError(f"unsupported schema_version {self.schema_version}")
        seen: set[str] = set()
        for rec in self.records:
            if rec.name in seen:
                raise SnapshotError(f"duplicate package name: {rec.name!r}")
            seen.add(rec.name)


def _parse_header(line: str) -> tuple[int, datetime, str]:
    try:
        header = json.loads(line)
    except json.JSONDecodeError as exc:
        raise SnapshotError(f"malformed header: {exc}") from None
    if not isinstance(header, dict) or "schema_version" not in header:
        raise SnapshotError("malformed header: expected an object with schema_version")
    version = header["schema_version"]
    if version != SCHEMA_VERSION or isinstance(version, bool):
        raise SnapshotError(f"unsupported schema_version {version!r}")
    try:
        captured = parse_timestamp(header["captured_at"])
        source = header["source"]
    except (KeyError, TypeError, ValueError) as exc:
        raise SnapshotError(f"malformed header: {exc}") from None
    if not isinstance(source, str):
        raise SnapshotError("malformed header: source must be a string")
    return version, captured, source


def _parse_record(obj: object) -> PackageRecord:
    if not isinstance(obj, dict):
        raise ValueError("record must be a JSON object")
    for key in ("name", "created", "versions"):
        if key not in obj:
            raise ValueError(f"missing field {key!r}")
    versions = obj["versions"]
    if not isinstance(versions, int) or isinstance(versions, bool):
        raise ValueError("versions must be an integer")
    deps = obj.get("deps", [])
    if not isinstance(deps, list) or not all(isinstance(d, str) for d in deps):
        raise ValueError("deps must be a list of names")
    tea = obj.get("tea_registered", False)
    if not isinstance(tea, bool):
        raise ValueError("tea_registered must be a boolean")
    score = obj.get("observed_score")
    if score is not None and (isinstance(score, bool) or not isinstance(score, (int, float))):
        raise ValueError("observed_score must be a number")
    return PackageRecord(
        name=obj["name"],
        registry=Registry(obj.get("registry", "npm")),
        created_at=parse_timestamp(obj["created"]),
        version_count=versions,
        status=Status(obj.get("status", "active")),
        tea_registered=tea,
        dependencies=tuple(deps),
        observed_display_score=None if score is None else float(score),
    )


def load_snapshot(stream: IO[str] | Iterable[str], strict: bool = False) -> Snapshot:
    """Parse a snapshot, collecting malformed record lines in ``issues``.

    Raises:
        SnapshotError: For a missing or malformed header, an unsupported
            schema version, duplicate package names, or (``strict`` only) any
            malformed record line.
    """
    lines = iter(stream)
    header_line = next(lines, None)
    if header_line is None or not header_line.strip():
        raise SnapshotError("malformed header: empty input")
    version, captured, source = _parse_header(header_line)

    records: list[PackageRecord] = []
    issues: list[LineIssue] = []
    names: set[str] = set()
    for lineno, line in enumerate(lines, start=2):
        if not line.strip():
            continue
        try:
            rec = _parse_record(json.loads(line))
        except (ValueError, TypeError) as exc:  # JSONDecodeError is a ValueError
            issues.append(LineIssue(lineno, str(exc)))
            continue
        if rec.name in names:
            raise SnapshotError(f"line {lineno}: duplicate package name {rec.name!r}")
        names.add(rec.name)
        records.append(rec)
    if strict and issues:
        raise SnapshotError("; ".join(str(i) for i in issues))
    return Snapshot(records=records, captured_at=captured, source=source, schema_version=version, issues=issues)


def record_to_json(rec: PackageRecord) -> str:
    obj: dict[str, object] = {
        "name": rec.name,
        "registry": rec.registry.value,
        "created": format_timestamp(rec.created_at),
        "versions": rec.version_count,
        "status": rec.status.value,
        "tea_registered": rec.tea_registered,
        "deps": sorted(set(rec.dependencies)),
    }
    if rec.observed_display_score is not None:
        obj["observed_score"] = rec.observed_display_score
    return json.dumps(obj, separators=(",", ":"), ensure_ascii=False)


def write_snapshot(s: Snapshot, stream: IO[str]) -> None:
    header = {"schema_version": s.schema_version, "captured_at": format_timestamp(s.captured_at), "source": s.source}
    stream.write(json.dumps(header, separators=(",", ":"), ensure_ascii=False) + "\n")
    for rec in sorted(s.records, key=lambda r: r.name):
        stream.write(record_to_json(rec) + "\n")


def read_snapshot(path: str, strict: bool = False) -> Snapshot:
    with open(path, encoding="utf-8") as fh:
        return load_snapshot(fh, strict=strict)


def save_snapshot(s: Snapshot, path: str) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        write_snapshot(s, fh)


@dataclass(frozen=True)
class SyntheticSpec:
    """Parameters for :func:`generate_synthetic`.

    ``edge_param`` is the mean number of dependencies per package. Package
    ``i`` only ever depends on packages with a smaller index, which are also
    older, so every generated graph is acyclic.
    """

    n: int
    model: Literal["random_dag", "preferential_attachment"] = "random_dag"
    edge_param: float = 2.0
    date_range: tuple[datetime, datetime] = (
        datetime(2015, 1, 1, tzinfo=timezone.utc),
        datetime(2023, 12, 31, tzinfo=timezone.utc),
    )
    tea_fraction: float = 1.0
    version_range: tuple[int, int] = (1, 60)
    name_prefix: str = "pkg-"
    registry: Registry = Registry.NPM

    def __post_init__(self) -> None:
        if self.n < 1:
            raise ValueError("n must be at least 1")
        if self.model not in ("random_dag", "preferential_attachment"):
            raise ValueError(f"unknown model {self.model!r}")
        if not self.edge_param >= 0 or math.isinf(self.edge_param):
            raise ValueError("edge_param must be a finite non-negative number")
        start, end = self.date_range
        if end < start:
            raise ValueError("date_range end precedes start")
        if not 0.0 <= self.tea_fraction <= 1.0:
            raise ValueError("tea_fraction must lie in [0, 1]")
        lo, hi = self.version_range
        if lo < 0 or hi < lo:
            raise ValueError("version_range must satisfy 0 <= lo <= hi")


def _distinct(draw, k: int) -> list[int]:
    picked: list[int] = []
    seen: set[int] = set()
    while len(picked) < k:
        j = draw()
        if j not in seen:
            seen.add(j)
            picked.append(j)
    return picked


def generate_synthetic(spec: SyntheticSpec, seed: int) -> Snapshot:
    """Deterministic synthetic snapshot.

    ``random_dag`` picks each package's dependencies uniformly among older
    packages; ``preferential_attachment`` picks them with probability
    proportional to ``1 + in-degree``, so early popular packages keep
    accumulating dependents.
    """
    rng = np.random.default_rng(seed)
    n = spec.n
    start, end = (int(to_utc(t).timestamp()) for t in spec.date_range)
    created = np.sort(rng.integers(start, end + 1, size=n))
    out_k = np.minimum(rng.poisson(spec.edge_param, size=n), np.arange(n))
    lo, hi = spec.version_range
    versions = rng.integers(lo, hi + 1, size=n)
    tea = np.zeros(n, dtype=bool)
    tea[rng.choice(n, size=int(round(spec.tea_fraction * n)), replace=False)] = True

    deps: list[list[int]] = []
    if spec.model == "random_dag":
        for i in range(n):
            deps.append(_distinct(lambda i=i: int(rng.integers(i)), int(out_k[i])))
    else:
        # each package appears once, plus once per dependent it has gained
        pool: list[int] = []
        for i in range(n):
            chosen = _distinct(lambda: pool[int(rng.integers(len(pool)))], int(out_k[i]))
            deps.append(chosen)
            pool.extend(chosen)
            pool.append(i)

    width = max(6, len(str(n - 1)))
    names = [f"{spec.name_prefix}{i:0{width}d}" for i in range(n)]
    records = [
        PackageRecord(
            name=names[i],
            registry=spec.registry,
            created_at=datetime.fromtimestamp(int(created[i]), tz=timezone.utc),
            version_count=int(versions[i]),
            status=Status.ACTIVE,
            tea_registered=bool(tea[i]),
            dependencies=tuple(sorted(names[j] for j in deps[i])),
        )
        for i in range(n)
    ]
    return Snapshot(
        records=records,
        captured_at=to_utc(spec.date_range[1]),
        source=f"synthetic:{spec.model}:seed={seed}",
    )
