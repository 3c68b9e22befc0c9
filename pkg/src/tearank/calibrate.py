"""Grid search over (kappa, d) against observed frontend scores.

Note that the fixed point depends on the two parameters only through
``s = d / (d + (1 - d) * (1 - kappa))``, so whole curves of the grid give
the same rank vector. :meth:`CalibrationResult.near_optimal` lists the
cells that are indistinguishable from the optimum.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field, replace
from typing import IO, Mapping, Sequence

import numpy as np

from .graph import DepGraph
from .rank import RankParams, build_transition, inverse_display, mean_multiplicative_error, power_iterate

# Smallest raw rank the frontend can show (display score 0). Predictions
# below it are compared as this value so leaking cells stay finite.
RANK_FLOOR = 1e-9


@dataclass(frozen=True)
class CalibrationResult:
    best_kappa: float
    best_d: float
    best_error: float
    surface: np.ndarray = field(repr=False)
    kappas: tuple[float, ...] = field(repr=False)
    ds: tuple[float, ...] = field(repr=False)
    granularity: float = 0.05
    compared_count: int = 0
    unconverged_cells: int = 0

    def ridge(self) -> list[tuple[float, float, float]]:
        """For each kappa, the d with the lowest error: ``(kappa, d, error)``."""
        out = []
        for i, k in enumerate(self.kappas):
            j = int(np.argmin(self.surface[i]))
            out.append((k, self.ds[j], float(self.surface[i, j])))
        return out

    def near_optimal(self, rtol: float = 1e-6) -> list[tuple[float, float, float]]:
        limit = self.best_error * (1.0 + rtol)
        cells = np.argwhere(self.surface <= limit)
        return [(self.kappas[i], self.ds[j], float(self.surface[i, j])) for i, j in cells]

    def write_csv(self, stream: IO[str]) -> None:
        writer = csv.writer(stream, lineterminator="\n")
        writer.writerow(["kappa", "d", "mme"])
        for i, k in enumerate(self.kappas):
            for j, d in enumerate(self.ds):
                writer.writerow([repr(k), repr(d), repr(float(self.surface[i, j]))])


def grid_points(granularity: float) -> tuple[float, ...]:
    """``0, g, 2g, ...`` up to 1 inclusive; ``floor(1 / g) + 1`` points."""
    if not 0.0 < granularity <= 0.5:
        raise ValueError(f"granularity must lie in (0, 0.5], got {granularity}")
    steps = math.floor(1.0 / granularity + 1e-9)
    return tuple(min(1.0, round(i * granularity, 10)) for i in range(steps + 1))


def observed_from_graph(g: DepGraph) -> list[float | None]:
    return [rec.observed_display_score for rec in g.packages]


def _observed_vector(g: DepGraph, observed: Mapping[str, float] | Sequence[float | None]) -> list[float | None]:
    if isinstance(observed, Mapping):
        scores: list[float | None] = [None] * g.n
        for name, s in observed.items():
            scores[g.index(name)] = s
        return scores
    scores = list(observed)
    if len(scores) != g.n:
        raise ValueError(f"expected {g.n} observed scores, got {len(scores)}")
    return scores


def grid_search(
    g: DepGraph,
    observed_display: Mapping[str, float] | Sequence[float | None] | None = None,
    granularity: float = 0.05,
    renormalize: bool = False,
    tol: float = 1e-10,
    max_iters: int = 200,
) -> CalibrationResult:
    """Evaluate teaRank on every grid cell and score it against observations.

    Observed display scores are mapped back to the raw scale with
    :func:`inverse_display` before comparing with
    :func:`mean_multiplicative_error`. With ``renormalize`` each computed
    vector is rescaled to sum to one first. Ties in the error go to the
    smaller kappa, then the smaller d.

    Args:
        g: Graph to rank.
        observed_display: Per-package display scores, either a sequence
            aligned with the graph (``None`` for unobserved packages) or a
            name-to-score mapping. Defaults to the scores carried by the
            graph's records.
    """
    kappas = grid_points(granularity)
    scores = _observed_vector(g, observed_from_graph(g) if observed_display is None else observed_display)
    mask = np.asarray([i for i, s in enumerate(scores) if s is not None], dtype=np.int64)
    if mask.size == 0:
        raise ValueError("no observed scores to calibrate against")
    target = inverse_display(np.asarray([scores[i] for i in mask], dtype=np.float64))
    target = np.atleast_1d(target)

    base = build_transition(g, 0.0)
    surface = np.empty((len(kappas), len(kappas)))
    unconverged = 0
    for i, kappa in enumerate(kappas):
        op = replace(base, kappa=kappa)
        for j, d in enumerate(kappas):
            rv = power_iterate(op, RankParams(kappa=kappa, d=d, tol=tol, max_iters=max_iters))
            unconverged += not rv.converged
            v = rv.values
            if renormalize:
                total = v.sum()
                v = v / total if total > 0 else v
            surface[i, j] = mean_multiplicative_error(np.maximum(v[mask], RANK_FLOOR), target)

    flat = int(np.argmin(surface))  # first minimum in kappa-major order
    bi, bj = divmod(flat, len(kappas))
    return CalibrationResult(
        best_kappa=kappas[bi],
        best_d=kappas[bj],
        best_error=float(surface[bi, bj]),
        surface=surface,
        kappas=kappas,
        ds=kappas,
        granularity=granularity,
        compared_count=int(mask.size),
        unconverged_cells=unconverged,
    )
