"""Command line front end: ``tearank <subcommand> [flags]``.

Exit status is 0 on success, 1 for bad input or usage, 2 for internal
failures. Nothing reads the clock or the environment; every random draw
comes from ``--seed``.
"""

from __future__ import annotations

import argparse
import contextlib
import json
import logging
import math
import sys
from dataclasses import replace
from datetime import timedelta
from typing import IO, Iterator, Sequence

from . import __version__
from .attack import AttackError, SpamThresholds, apply_attack, flag_spam, rank_uplift, read_plan, write_provenance
from .calibrate import grid_search
from .graph import DepGraph, GraphError, build_graph
from .ingest import Snapshot, SnapshotError, SyntheticSpec, generate_synthetic, load_snapshot, write_snapshot
from .rank import RankParams, build_transition, display_score, power_iterate, write_rank_csv
from .sybil import (
    Scope,
    SybilCriteria,
    apply_annotations,
    detect,
    read_annotations,
    sample_for_audit,
    summarize,
    upper_confidence_bound,
    verdict_row,
    write_verdicts_csv,
)
from .timeutil import parse_timestamp

log = logging.getLogger("tearank")

DEFAULT_SEED = 2024
FORMATS = ("csv", "json-lines", "human")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message: str):  # argparse would exit with 2
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def _add_input(p: argparse.ArgumentParser, required: bool = True) -> None:
    p.add_argument("--input", required=required, help="snapshot file (newline-delimited JSON)")
    p.add_argument("--strict", action="store_true", help="fail on malformed lines or unresolvable dependencies")


def _add_output(p: argparse.ArgumentParser, default_format: str = "csv") -> None:
    p.add_argument("--output", help="output file (default: stdout)")
    p.add_argument("--format", choices=FORMATS, default=default_format, help="output format (default: %(default)s)")


def _add_rank_params(p: argparse.ArgumentParser) -> None:
    defaults = RankParams()
    p.add_argument("--kappa", type=float, default=defaults.kappa, help="self-edge weight (default: %(default)s)")
    p.add_argument("--d", type=float, default=defaults.d, help="restart probability (default: %(default)s)")
    p.add_argument("--tol", type=float, default=defaults.tol, help="L1 residual tolerance (default: %(default)s)")
    p.add_argument("--max-iters", type=int, default=defaults.max_iters, help="iteration cap (default: %(default)s)")


def _add_criteria(p: argparse.ArgumentParser) -> None:
    c = SybilCriteria()
    p.add_argument("--cutoff-date", default="2024-01-01T00:00:00Z", help="earliest creation time for seeds (default: %(default)s)")
    p.add_argument("--max-versions", type=int, default=c.max_versions, help="seeds have fewer versions than this (default: %(default)s)")
    p.add_argument("--dep-window-days", type=float, default=c.dep_window.days, help="creation window for dependencies (default: %(default)s)")
    p.add_argument("--dep-window-fraction", type=float, default=c.dep_window_fraction, help="(default: %(default)s)")
    p.add_argument("--heavy-deps", type=int, default=c.heavy_dependent_deps, help="dependency count marking a heavy dependent (default: %(default)s)")
    p.add_argument("--heavy-fraction", type=float, default=c.heavy_dependent_fraction, help="(default: %(default)s)")
    p.add_argument("--scope", choices=[s.value for s in Scope], default=c.scope.value, help="(default: %(default)s)")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="tearank", description="teaRank scores and sybil analysis for package dependency graphs.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("rank", help="compute teaRank and display scores")
    _add_input(p)
    _add_output(p)
    _add_rank_params(p)
    p.add_argument("--dangling", choices=["literal", "uniform"], default="literal",
                   help="dangling mass handling; 'uniform' is the PageRank baseline (default: %(default)s)")

    p = sub.add_parser("calibrate", help="grid search for kappa and d against observed scores")
    _add_input(p)
    _add_output(p)
    p.add_argument("--granularity", type=float, default=0.05, help="grid step (default: %(default)s)")
    p.add_argument("--renormalize", action="store_true", help="rescale rank vectors to sum to 1 before comparing")
    p.add_argument("--tol", type=float, default=RankParams().tol, help="(default: %(default)s)")
    p.add_argument("--max-iters", type=int, default=RankParams().max_iters, help="(default: %(default)s)")

    p = sub.add_parser("detect", help="run the sybil heuristic and summarize")
    _add_input(p)
    _add_output(p)
    _add_criteria(p)
    p.add_argument("--top", type=int, default=1000, help="top-N size for overlap analysis (default: %(default)s)")
    p.add_argument("--annotations", help="CSV of name,class_annotation from a manual audit")

    p = sub.add_parser("attack", help="apply an attack plan and report flags and rank uplift")
    _add_input(p)
    _add_output(p, default_format="human")
    p.add_argument("--plan", required=True, help="attack plan file ([attack] and optional [thresholds])")
    p.add_argument("--snapshot-out", help="write the attacked snapshot here")
    p.add_argument("--provenance", help="write injected package names here, one per line")
    p.add_argument("--seed", type=int, default=None, help="override the plan's seed")
    p.add_argument("--width-limit", help="override width limit ('inf' disables)")
    p.add_argument("--tree-limit", help="override tree limit ('inf' disables)")
    p.add_argument("--window-days", type=float, help="override growth window")
    _add_rank_params(p)

    p = sub.add_parser("audit", help="sample sybils for manual audit and bound the false-positive rate")
    _add_input(p, required=False)
    _add_criteria(p)
    p.add_argument("--output", help="write the sampled names here (default: stdout)")
    p.add_argument("--n", type=int, help="audited sample size when no --input is given")
    p.add_argument("--sample-size", type=int, default=100, help="packages to sample from --input (default: %(default)s)")
    p.add_argument("--failures", type=int, default=0, help="misclassified packages found in the sample (default: %(default)s)")
    p.add_argument("--alpha", type=float, default=0.05, help="significance level (default: %(default)s)")
    p.add_argument("--claim", type=float, default=0.03, help="false-positive rate to check against (default: %(default)s)")
    p.add_argument("--seed", type=int, default=DEFAULT_SEED, help="sampling seed (default: %(default)s)")

    p = sub.add_parser("gen", help="generate a synthetic snapshot")
    p.add_argument("--output", help="output file (default: stdout)")
    p.add_argument("--n", type=int, required=True, help="number of packages")
    p.add_argument("--model", choices=["random_dag", "preferential_attachment"], default="random_dag", help="(default: %(default)s)")
    p.add_argument("--edge-param", type=float, default=2.0, help="mean dependencies per package (default: %(default)s)")
    p.add_argument("--start", default="2015-01-01T00:00:00Z", help="earliest creation time (default: %(default)s)")
    p.add_argument("--end", default="2023-12-31T00:00:00Z", help="latest creation time (default: %(default)s)")
    p.add_argument("--tea-fraction", type=float, default=1.0, help="share of tea-registered packages (default: %(default)s)")
    p.add_argument("--min-versions", type=int, default=1, help="(default: %(default)s)")
    p.add_argument("--max-versions", type=int, default=60, help="(default: %(default)s)")
    p.add_argument("--prefix", default="pkg-", help="package name prefix (default: %(default)s)")
    p.add_argument("--seed", type=int, default=DEFAULT_SEED, help="generator seed (default: %(default)s)")

    p = sub.add_parser("validate", help="lint a snapshot")
    _add_input(p)
    return parser


@contextlib.contextmanager
def _open_out(path: str | None) -> Iterator[IO[str]]:
    if path is None:
        yield sys.stdout
    else:
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            yield fh


def _load(args) -> tuple[Snapshot, DepGraph]:
    with open(args.input, encoding="utf-8") as fh:
        snap = load_snapshot(fh, strict=args.strict)
    for issue in snap.issues:
        log.warning("%s: %s", args.input, issue)
    g = build_graph(snap.records, strict=args.strict)
    if g.report.dropped:
        log.warning("dropped %d dependency entries (%d self, %d duplicate, %d unresolved)",
                    g.report.dropped, g.report.self_loops, g.report.duplicates, g.report.unresolved)
    return snap, g


def _rank_params(args) -> RankParams:
    return RankParams(kappa=args.kappa, d=args.d, tol=args.tol, max_iters=args.max_iters)


def _criteria(args) -> SybilCriteria:
    return SybilCriteria(
        cutoff_date=parse_timestamp(args.cutoff_date),
        max_versions=args.max_versions,
        dep_window=timedelta(days=args.dep_window_days),
        dep_window_fraction=args.dep_window_fraction,
        heavy_dependent_deps=args.heavy_deps,
        heavy_dependent_fraction=args.heavy_fraction,
        scope=Scope(args.scope),
    )


def _table(rows: Sequence[Sequence[object]], header: Sequence[str]) -> list[str]:
    cells = [list(map(str, header))] + [[str(c) for c in r] for r in rows]
    widths = [max(len(r[k]) for r in cells) for k in range(len(header))]
    return ["  ".join(c.ljust(w) for c, w in zip(r, widths)).rstrip() for r in cells]


def _jsonl(obj: dict) -> str:
    return json.dumps(obj, separators=(",", ":"), ensure_ascii=False)


def cmd_rank(args) -> int:
    _, g = _load(args)
    if g.n == 0:
        raise UsageError("snapshot has no packages")
    rv = power_iterate(build_transition(g, args.kappa), _rank_params(args), dangling=args.dangling)
    if not rv.converged:
        log.warning("no convergence after %d iterations (residual %.3g)", rv.iterations_used, rv.final_residual)
    order = sorted(range(g.n), key=lambda i: (-rv.values[i], g.name(i)))
    with _open_out(args.output) as out:
        if args.format == "csv":
            write_rank_csv(g, rv, out)
        elif args.format == "json-lines":
            for i in order:
                raw = float(rv.values[i])
                out.write(_jsonl({"package_name": g.name(i), "raw_rank": raw,
                                  "display_score": display_score(raw) if raw > 0 else None}) + "\n")
        else:
            rows = [(g.name(i), f"{rv.values[i]:.6e}", f"{display_score(rv.values[i]):.2f}" if rv.values[i] > 0 else "-")
                    for i in order]
            for line in _table(rows, ["package", "raw_rank", "display"]):
                out.write(line + "\n")
    return 0


def cmd_calibrate(args) -> int:
    _, g = _load(args)
    res = grid_search(g, granularity=args.granularity, renormalize=args.renormalize,
                      tol=args.tol, max_iters=args.max_iters)
    if args.output:
        with _open_out(args.output) as out:
            if args.format == "json-lines":
                for i, k in enumerate(res.kappas):
                    for j, d in enumerate(res.ds):
                        out.write(_jsonl({"kappa": k, "d": d, "mme": float(res.surface[i, j])}) + "\n")
            else:
                res.write_csv(out)
    if args.format == "json-lines" and not args.output:
        print(_jsonl({"best_kappa": res.best_kappa, "best_d": res.best_d, "best_error": res.best_error,
                      "compared": res.compared_count, "unconverged_cells": res.unconverged_cells,
                      "ridge": [list(r) for r in res.ridge()]}))
        return 0
    print(f"compared packages: {res.compared_count}")
    print(f"best kappa={res.best_kappa:g} d={res.best_d:g} mean multiplicative error={res.best_error:.6f}")
    print(f"cells within 1e-6 of the optimum: {len(res.near_optimal())}")
    for line in _table([(f"{k:g}", f"{d:g}", f"{e:.6f}") for k, d, e in res.ridge()], ["kappa", "best_d", "mme"]):
        print(line)
    return 0


def cmd_detect(args) -> int:
    _, g = _load(args)
    verdicts = detect(g, _criteria(args))
    if args.annotations:
        with open(args.annotations, encoding="utf-8") as fh:
            verdicts = apply_annotations(verdicts, read_annotations(fh))
    summary = summarize(g, verdicts, n_top=args.top)
    if args.output:
        with _open_out(args.output) as out:
            if args.format == "csv":
                write_verdicts_csv(g, verdicts, out)
            elif args.format == "json-lines":
                for v in sorted(verdicts, key=lambda v: v.name):
                    out.write(_jsonl(verdict_row(g, v)) + "\n")
            else:
                rows = [list(verdict_row(g, v).values()) for v in sorted(verdicts, key=lambda v: v.name)]
                for line in _table(rows, ["name", "label", "trigger", "origin", "class"]):
                    out.write(line + "\n")
    for line in summary.lines():
        print(line)
    return 0


def _override_limit(text: str | None, current: float | None) -> float | None:
    if text is None:
        return current
    return math.inf if text.strip().lower() in ("inf", "none", "off") else float(int(text))


def cmd_attack(args) -> int:
    snap, g = _load(args)
    with open(args.plan, encoding="utf-8") as fh:
        plan, thresholds = read_plan(fh)
    if args.seed is not None:
        plan = replace(plan, seed=args.seed)
    after, provenance = apply_attack(g, plan)

    width = _override_limit(args.width_limit, thresholds.width_limit if thresholds else None)
    tree = _override_limit(args.tree_limit, thresholds.tree_limit if thresholds else None)
    window = timedelta(days=args.window_days) if args.window_days is not None else (
        thresholds.window if thresholds else timedelta(days=7))
    flags: list[str] | None = None
    if width is not None or tree is not None:
        t = SpamThresholds(math.inf if width is None else width, math.inf if tree is None else tree, window)
        flags = sorted(flag_spam(after, t))

    up = rank_uplift(g, after, plan.target, _rank_params(args))
    if not up.converged:
        log.warning("rank computation did not converge")

    if args.snapshot_out:
        with _open_out(args.snapshot_out) as out:
            write_snapshot(Snapshot(after.records(), captured_at=snap.captured_at, source=snap.source), out)
    if args.provenance:
        with _open_out(args.provenance) as out:
            write_provenance(provenance, out)

    report = {
        "kind": plan.kind.value,
        "target": plan.target,
        "injected": len(provenance),
        "flagged": flags,
        "target_flagged": None if flags is None else plan.target in flags,
        "raw_before": up.raw_before,
        "raw_after": up.raw_after,
        "raw_delta": up.raw_delta,
        "display_before": display_score(up.raw_before),
        "display_after": display_score(up.raw_after),
        "display_delta": up.display_delta,
        "converged": up.converged,
    }
    with _open_out(args.output) as out:
        if args.format == "human":
            for key, value in report.items():
                if key == "flagged":
                    value = "(no thresholds set)" if flags is None else (", ".join(flags) or "none")
                elif isinstance(value, float):
                    value = f"{value:.6g}"
                out.write(f"{key}: {value}\n")
        elif args.format == "json-lines":
            out.write(_jsonl(report) + "\n")
        else:
            keys = [k for k in report if k != "flagged"]
            out.write(",".join(keys) + "\n")
            out.write(",".join(repr(report[k]) if isinstance(report[k], float) else str(report[k]) for k in keys) + "\n")
    return 0


def cmd_audit(args) -> int:
    if args.input and args.n is not None:
        raise UsageError("--n conflicts with --input; the sample size comes from --sample-size")
    if not args.input and args.n is None:
        raise UsageError("pass --input to sample a snapshot, or --n for a bound only")
    if args.input:
        _, g = _load(args)
        verdicts = detect(g, _criteria(args))
        picked = sample_for_audit(verdicts, args.sample_size, args.seed)
        with _open_out(args.output) as out:
            for i in picked:
                out.write(g.name(i) + "\n")
        n = args.sample_size
    else:
        n = args.n
    bound = upper_confidence_bound(n, args.failures, args.alpha)
    stream = sys.stderr if args.input and not args.output else sys.stdout
    claim = f"{args.claim * 100:g}%"
    print(f"sample size: {n}", file=stream)
    print(f"failures: {args.failures}", file=stream)
    print(f"upper bound ({(1 - args.alpha) * 100:g}% one-sided): {bound * 100:.2f}%", file=stream)
    verdict = "consistent with" if bound <= args.claim else "not consistent with"
    print(f"{verdict} ≤{claim} false-positive claim", file=stream)
    return 0


def cmd_gen(args) -> int:
    spec = SyntheticSpec(
        n=args.n,
        model=args.model,
        edge_param=args.edge_param,
        date_range=(parse_timestamp(args.start), parse_timestamp(args.end)),
        tea_fraction=args.tea_fraction,
        version_range=(args.min_versions, args.max_versions),
        name_prefix=args.prefix,
    )
    with _open_out(args.output) as out:
        write_snapshot(generate_synthetic(spec, args.seed), out)
    return 0


def cmd_validate(args) -> int:
    with open(args.input, encoding="utf-8") as fh:
        snap = load_snapshot(fh)
    for issue in snap.issues:
        print(f"{args.input}: {issue}")
    g = build_graph(snap.records)
    r = g.report
    print(f"records: {g.n}, edges: {g.edge_count}")
    print(f"dropped dependency entries: self={r.self_loops} duplicate={r.duplicates} unresolved={r.unresolved}")
    if snap.issues or (args.strict and r.dropped):
        print("status: invalid")
        return 1
    print("status: ok")
    return 0


COMMANDS = {
    "rank": cmd_rank,
    "calibrate": cmd_calibrate,
    "detect": cmd_detect,
    "attack": cmd_attack,
    "audit": cmd_audit,
    "gen": cmd_gen,
    "validate": cmd_validate,
}


def run(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s: %(message)s", stream=sys.stderr)
    try:
        return COMMANDS[args.command](args)
    except (UsageError, SnapshotError, GraphError, AttackError, OSError, ValueError, KeyError) as exc:
        print(f"tearank {args.command}: error: {exc}", file=sys.stderr)
        return 1
    except Exception:
        log.exception("internal failure")
        return 2


def main() -> None:
    sys.exit(run())
