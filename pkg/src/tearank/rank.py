"""teaRank: PageRank with kappa-weighted self edges, solved by power iteration.

The transition operator is ``T = (1 - kappa) * A + kappa * I`` where column
``i`` of ``A`` spreads package ``i``'s mass evenly over its dependencies.
The rank vector is the fixed point of ``v = (1 - d) * T @ v + d / n``.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import IO, Iterable, Literal

import numpy as np
import scipy.sparse as sp

from .graph import DepGraph

Dangling = Literal["literal", "uniform"]


@dataclass(frozen=True)
class RankParams:
    kappa: float = 0.3
    d: float = 0.7
    tol: float = 1e-10
    max_iters: int = 200

    def __post_init__(self) -> None:
        if not 0.0 <= self.kappa <= 1.0:
            raise ValueError(f"kappa must lie in [0, 1], got {self.kappa}")
        if not 0.0 <= self.d <= 1.0:
            raise ValueError(f"d must lie in [0, 1], got {self.d}")
        if not self.tol > 0:
            raise ValueError("tol must be positive")
        if self.max_iters < 1:
            raise ValueError("max_iters must be at least 1")


@dataclass(frozen=True)
class RankVector:
    values: np.ndarray
    iterations_used: int
    final_residual: float
    converged: bool
    residuals: tuple[float, ...] = field(default=(), repr=False)

    def __len__(self) -> int:
        return len(self.values)

    def __getitem__(self, i):
        return self.values[i]


def adjacency_matrix(g: DepGraph) -> sp.csr_matrix:
    """Column-normalized adjacency: ``A[j, i] = 1 / outdeg(i)`` for ``i -> j``."""
    rows: list[int] = []
    cols: list[int] = []
    data: list[float] = []
    for i, deps in enumerate(g.forward):
        if not deps:
            continue
        w = 1.0 / len(deps)
        rows.extend(deps)
        cols.extend([i] * len(deps))
        data.extend([w] * len(deps))
    m = sp.csr_matrix(
        (np.asarray(data, dtype=np.float64), (np.asarray(rows, dtype=np.int64), np.asarray(cols, dtype=np.int64))),
        shape=(g.n, g.n),
    )
    m.sort_indices()
    return m


@dataclass(frozen=True)
class TransitionOp:
    graph: DepGraph
    kappa: float
    matrix: sp.csr_matrix = field(repr=False)
    out_degree: np.ndarray = field(repr=False)

    @property
    def n(self) -> int:
        return self.graph.n

    @property
    def dangling(self) -> np.ndarray:
        return self.out_degree == 0

    def apply(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        return (1.0 - self.kappa) * (self.matrix @ x) + self.kappa * x

    def column_sums(self) -> np.ndarray:
        return (1.0 - self.kappa) * (self.out_degree > 0) + self.kappa

    def to_dense(self) -> np.ndarray:
        """Dense ``T``. Only meant for small graphs and oracle checks."""
        return (1.0 - self.kappa) * self.matrix.toarray() + self.kappa * np.eye(self.n)


def build_transition(g: DepGraph, kappa: float) -> TransitionOp:
    if not 0.0 <= kappa <= 1.0:
        raise ValueError(f"kappa must lie in [0, 1], got {kappa}")
    out_degree = np.fromiter((len(f) for f in g.forward), dtype=np.int64, count=g.n)
    return TransitionOp(graph=g, kappa=float(kappa), matrix=adjacency_matrix(g), out_degree=out_degree)


def power_iterate(op: TransitionOp, params: RankParams, dangling: Dangling = "literal") -> RankVector:
    """Iterate ``v_k = (1 - d) T v_{k-1} + d E`` from the uniform vector.

    Stops once the L1 change between iterates drops below ``params.tol`` or
    after ``params.max_iters`` steps. With ``dangling="literal"`` mass that
    reaches a package without dependencies simply leaves the system and only
    the restart term feeds it back, so the result can sum to less than one.
    ``dangling="uniform"`` spreads that mass evenly instead, which turns the
    ``kappa = 0`` case into textbook PageRank.
    """
    n = op.n
    if n == 0:
        raise ValueError("cannot rank an empty graph")
    if dangling not in ("literal", "uniform"):
        raise ValueError(f"unknown dangling mode: {dangling!r}")
    d = params.d
    restart = d / n
    leak = op.dangling
    v = np.full(n, 1.0 / n)
    residuals: list[float] = []
    converged = False
    for _ in range(params.max_iters):
        nxt = (1.0 - d) * op.apply(v) + restart
        if dangling == "uniform":
            nxt += (1.0 - d) * (1.0 - op.kappa) * v[leak].sum() / n
        residual = float(np.abs(nxt - v).sum())
        residuals.append(residual)
        v = nxt
        if residual < params.tol:
            converged = True
            break
    return RankVector(
        values=v,
        iterations_used=len(residuals),
        final_residual=residuals[-1],
        converged=converged,
        residuals=tuple(residuals),
    )


def tearank(g: DepGraph, params: RankParams | None = None) -> RankVector:
    params = params or RankParams()
    return power_iterate(build_transition(g, params.kappa), params)


def display_score(t):
    """Frontend score ``100 * (log10(t) / 9 + 1)``; 1 maps to 100, 1e-9 to 0.

    Values are not clamped. Accepts scalars or arrays.
    """
    arr = np.asarray(t, dtype=np.float64)
    if np.any(arr <= 0):
        raise ValueError("display_score is only defined for positive ranks")
    out = 100.0 * (np.log10(arr) / 9.0 + 1.0)
    return float(out) if out.ndim == 0 else out


def inverse_display(s):
    """Raw rank whose display score is ``s``: ``10 ** (9 * (s / 100 - 1))``."""
    arr = np.asarray(s, dtype=np.float64)
    out = np.power(10.0, 9.0 * (arr / 100.0 - 1.0))
    return float(out) if out.ndim == 0 else out


def mean_multiplicative_error(predicted, observed, mask: Iterable[int] | None = None) -> float:
    """Mean of ``max(p / o, o / p)`` over the compared positions.

    Returns 1.0 exactly when the vectors agree on every compared entry.

    Raises:
        ValueError: If lengths differ, nothing is compared, or a compared
            entry is not strictly positive.
    """
    p = np.asarray(predicted.values if isinstance(predicted, RankVector) else predicted, dtype=np.float64)
    o = np.asarray(observed, dtype=np.float64)
    if p.shape != o.shape:
        raise ValueError(f"length mismatch: {p.shape} vs {o.shape}")
    if mask is not None:
        idx = np.asarray(sorted(set(mask)), dtype=np.int64)
        p, o = p[idx], o[idx]
    if p.size == 0:
        raise ValueError("empty comparison set")
    if np.any(p <= 0) or np.any(o <= 0):
        raise ValueError("compared entries must be strictly positive")
    ratio = p / o
    return float(np.mean(np.maximum(ratio, 1.0 / ratio)))


def write_rank_csv(g: DepGraph, rank: RankVector, stream: IO[str]) -> None:
    """``package_name,raw_rank,display_score`` rows, highest rank first."""
    values = rank.values
    order = sorted(range(g.n), key=lambda i: (-values[i], g.packages[i].name))
    writer = csv.writer(stream, lineterminator="\n")
    writer.writerow(["package_name", "raw_rank", "display_score"])
    for i in order:
        raw = float(values[i])
        shown = display_score(raw) if raw > 0 else -math.inf
        writer.writerow([g.packages[i].name, repr(raw), repr(shown)])
