from .measure import BaseMeasure, MeasureError, MeasureKind, SeededRng, sample
from .singularity import (
    AdjacencyMode,
    BoundaryRecord,
    ScoringError,
    SelectionError,
    SingularSet,
    boundary_score,
    candidate_boundaries,
    fraction_count,
    random_boundaries,
    records_from_payload,
    select_singular,
)
from .solver import (
    Assignment,
    CellStats,
    DuplicatePointsError,
    NotConvergedError,
    OffsetInit,
    PointCloud,
    PotentialOffsets,
    SolveReport,
    SolverConfig,
    assign,
    energy,
    estimate_cells,
    optimize_offsets,
    potential_value,
    require_converged,
    transport_point,
)

__all__ = [
    "AdjacencyMode",
    "Assignment",
    "BaseMeasure",
    "BoundaryRecord",
    "CellStats",
    "DuplicatePointsError",
    "MeasureError",
    "MeasureKind",
    "NotConvergedError",
    "OffsetInit",
    "PointCloud",
    "PotentialOffsets",
    "ScoringError",
    "SeededRng",
    "SelectionError",
    "SingularSet",
    "SolveReport",
    "SolverConfig",
    "assign",
    "boundary_score",
    "candidate_boundaries",
    "energy",
    "estimate_cells",
    "fraction_count",
    "optimize_offsets",
    "potential_value",
    "random_boundaries",
    "records_from_payload",
    "require_converged",
    "sample",
    "select_singular",
    "transport_point",
]
