"""Dependency-graph ranking (teaRank), calibration, sybil attack simulation
and sybil package detection for package registries."""

__version__ = "0.1.0"

from .graph import (
    BuildReport,
    DepGraph,
    Direction,
    GraphError,
    PackageRecord,
    RankMode,
    Registry,
    Status,
    build_graph,
    neighbors,
    top_n,
    transitive_closure,
    transitive_counts,
)
from .rank import (
    RankParams,
    RankVector,
    TransitionOp,
    build_transition,
    display_score,
    inverse_display,
    mean_multiplicative_error,
    power_iterate,
    tearank,
)
from .calibrate import CalibrationResult, grid_search
from .sybil import (
    Label,
    SybilClass,
    SybilCriteria,
    SybilVerdict,
    Trigger,
    classify_seeds,
    detect,
    overlap_with_top,
    propagate,
    sample_for_audit,
    upper_confidence_bound,
)
from .attack import AttackKind, AttackPlan, SpamThresholds, apply_attack, flag_spam, rank_uplift
from .ingest import (
    Snapshot,
    SnapshotError,
    SyntheticSpec,
    generate_synthetic,
    load_snapshot,
    read_snapshot,
    save_snapshot,
    write_snapshot,
)
