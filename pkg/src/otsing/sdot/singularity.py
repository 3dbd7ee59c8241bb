from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from enum import StrEnum
from fractions import Fraction

import numpy as np

from otsing.errors import ConfigError, NumericError
from otsing.sdot.measure import SeededRng
from otsing.sdot.solver import Assignment, PointCloud, PotentialOffsets

log = logging.getLogger(__name__)

DEFAULT_RHO = 0.10


# ── Errors ───────────────────────────────────────────────────────────────────


class ScoringError(NumericError):
    def __init__(self, index: int):
        self.index = index
        super().__init__(f"target point {index} has zero norm; its angular score is undefined")


class SelectionError(ConfigError):
    pass


# ── Data model ───────────────────────────────────────────────────────────────


class AdjacencyMode(StrEnum):
    ALL_PAIRS = "allpairs"
    EMPIRICAL = "empirical"


@dataclass(frozen=True, eq=False)
class BoundaryRecord:
    """Hyperplane <a, z> + b = 0 between cells i < j, with a = y_i - y_j and b = h_i - h_j."""

    i: int
    j: int
    a: np.ndarray
    b: float
    score: float
    empirically_adjacent: bool

    @property
    def key(self) -> tuple[int, int]:
        return self.i, self.j


@dataclass(frozen=True)
class SingularSet:
    records: list[BoundaryRecord]
    fraction: float


# ── Scoring ──────────────────────────────────────────────────────────────────


def _pair_scores(left: np.ndarray, right: np.ndarray) -> np.ndarray:
    dots = np.einsum("ij,ij->i", left, right)
    norms = np.sqrt(np.einsum("ij,ij->i", left, left)) * np.sqrt(np.einsum("ij,ij->i", right, right))
    return np.arccos(np.clip(dots / norms, -1.0, 1.0))


def boundary_score(y_i, y_j) -> float:
    """Angle between y_i and y_j in [0, pi]; the cosine is clamped before arccos."""
    u = np.asarray(y_i, dtype=np.float64)
    v = np.asarray(y_j, dtype=np.float64)
    for index, vec in ((0, u), (1, v)):
        if not np.any(vec):
            raise ScoringError(index)
    return float(_pair_scores(u[None, :], v[None, :])[0])


# ── Candidate boundaries ─────────────────────────────────────────────────────


def adjacent_pairs(assignment: Assignment) -> set[tuple[int, int]]:
    """(min, max) of every observed (winner, runner-up) pair."""
    lo = np.minimum(assignment.best, assignment.runner_up)
    hi = np.maximum(assignment.best, assignment.runner_up)
    pairs = np.unique(np.stack([lo, hi], axis=1), axis=0)
    return {(int(i), int(j)) for i, j in pairs}


def candidate_boundaries(
    cloud: PointCloud,
    offsets: PotentialOffsets,
    assignment: Assignment | None = None,
    mode: AdjacencyMode = AdjacencyMode.ALL_PAIRS,
    *,
    strict: bool = True,
) -> list[BoundaryRecord]:
    """Candidate boundary set, ordered by (i, j).

    ALL_PAIRS keeps every pair; EMPIRICAL keeps pairs observed as
    (winner, runner-up) in ``assignment``. A zero-norm target raises
    ScoringError unless ``strict`` is off, in which case its pairs score 0.
    """
    mode = AdjacencyMode(mode)
    if mode == AdjacencyMode.EMPIRICAL and assignment is None:
        raise SelectionError("empirical adjacency needs the Monte Carlo assignment")
    observed = adjacent_pairs(assignment) if assignment is not None else set()

    if mode == AdjacencyMode.ALL_PAIRS:
        ii, jj = np.triu_indices(cloud.n, k=1)
    else:
        ordered = sorted(observed)
        ii = np.array([p[0] for p in ordered], dtype=np.int64)
        jj = np.array([p[1] for p in ordered], dtype=np.int64)

    zero_norm = np.flatnonzero(~np.any(cloud.points != 0.0, axis=1))
    if zero_norm.size:
        if strict:
            raise ScoringError(int(zero_norm[0]))
        log.warning("target points %s have zero norm; their boundaries score 0", zero_norm.tolist())

    y = cloud.points
    with np.errstate(invalid="ignore", divide="ignore"):
        scores = _pair_scores(y[ii], y[jj]) if ii.size else np.zeros(0)
    scores = np.where(np.isnan(scores), 0.0, scores)
    h = offsets.h
    return [
        BoundaryRecord(
            i=int(i),
            j=int(j),
            a=y[i] - y[j],
            b=float(h[i] - h[j]),
            score=float(s),
            empirically_adjacent=(int(i), int(j)) in observed,
        )
        for i, j, s in zip(ii.tolist(), jj.tolist(), scores.tolist())
    ]


# ── Selection ────────────────────────────────────────────────────────────────


def fraction_count(rho: float, total: int) -> int:
    """ceil(rho * total) evaluated on the decimal value of rho."""
    return math.ceil(Fraction(repr(float(rho))) * total)


def _check_rho(rho: float) -> None:
    if not 0 < rho <= 1:
        raise SelectionError(f"rho must lie in (0, 1], got {rho}")


def select_singular(candidates: list[BoundaryRecord], rho: float = DEFAULT_RHO) -> SingularSet:
    """Top ceil(rho * |candidates|) by score; ties broken by (i, j)."""
    _check_rho(rho)
    if not candidates:
        raise SelectionError("cannot select singular boundaries from an empty candidate set")
    ranked = sorted(candidates, key=lambda r: (-r.score, r.i, r.j))
    return SingularSet(records=ranked[: fraction_count(rho, len(ranked))], fraction=rho)


def random_boundaries(
    candidates: list[BoundaryRecord],
    count: int,
    rng: SeededRng,
) -> list[BoundaryRecord]:
    """Uniform draw without replacement; the random-boundary ablation baseline."""
    if count < 0 or count > len(candidates):
        raise SelectionError(f"cannot draw {count} boundaries from {len(candidates)} candidates")
    if count == 0:
        return []
    picks = rng.generator().choice(len(candidates), size=count, replace=False)
    return [candidates[k] for k in picks.tolist()]


def records_from_payload(entries: list[dict], cloud: PointCloud, offsets: PotentialOffsets) -> list[BoundaryRecord]:
    """Rebuild records from boundaries JSON, recomputing a and b from the cloud and offsets."""
    records = []
    for entry in entries:
        i, j = int(entry["i"]), int(entry["j"])
        if not 0 <= i < j < cloud.n:
            raise SelectionError(f"boundary ({i}, {j}) is not a valid pair for n={cloud.n}")
        records.append(
            BoundaryRecord(
                i=i,
                j=j,
                a=cloud.points[i] - cloud.points[j],
                b=float(offsets.h[i] - offsets.h[j]),
                score=float(entry["score"]),
                empirically_adjacent=bool(entry["adjacent"]),
            )
        )
    return records
