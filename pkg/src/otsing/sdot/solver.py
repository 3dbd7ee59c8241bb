from __future__ import annotations

import logging
from dataclasses import dataclass, field
from enum import StrEnum

import numpy as np

from otsing.errors import ConfigError, DimensionError, NumericError
from otsing.parallel import chunk_bounds, map_chunks
from otsing.sdot.measure import BaseMeasure, SeededRng, sample

log = logging.getLogger(__name__)

# ── Constants ────────────────────────────────────────────────────────────────

ASSIGN_CHUNK = 8192
WEIGHT_SUM_TOL = 1e-12
DUPLICATE_TOL = 1e-12


# ── Errors ───────────────────────────────────────────────────────────────────


class PointCloudError(ConfigError):
    pass


class DuplicatePointsError(PointCloudError):
    def __init__(self, indices: list[tuple[int, int]]):
        self.indices = indices
        shown = ", ".join(f"({i}, {j})" for i, j in indices[:10])
        more = f" and {len(indices) - 10} more" if len(indices) > 10 else ""
        super().__init__(f"duplicate target points at indices {shown}{more}")


class SolverConfigError(ConfigError):
    pass


class NotConvergedError(NumericError):
    def __init__(self, energy: float, iterations: int, tolerance: float):
        self.energy = energy
        self.iterations = iterations
        super().__init__(
            f"solver did not converge: E(h)={energy:.3e} > {tolerance:.1e} after {iterations} iterations"
        )


# ── Data model ───────────────────────────────────────────────────────────────


@dataclass(frozen=True, eq=False)
class PointCloud:
    """Discrete target measure: n support points with positive weights summing to 1."""

    points: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        pts = np.ascontiguousarray(self.points, dtype=np.float64)
        w = np.ascontiguousarray(self.weights, dtype=np.float64)
        if pts.ndim != 2:
            raise PointCloudError(f"points must be an n x d matrix, got shape {pts.shape}")
        n = pts.shape[0]
        if n < 2:
            raise PointCloudError(f"need at least 2 target points, got {n}")
        if w.shape != (n,):
            raise PointCloudError(f"expected {n} weights, got shape {w.shape}")
        if not np.all(np.isfinite(pts)):
            raise PointCloudError("target points must be finite")
        if np.any(~(w > 0)):
            bad = np.flatnonzero(~(w > 0)).tolist()
            raise PointCloudError(f"weights must be > 0; violated at indices {bad[:10]}")
        if abs(w.sum() - 1.0) > WEIGHT_SUM_TOL:
            raise PointCloudError(f"weights must sum to 1, got {w.sum()!r}")
        dupes = find_duplicates(pts)
        if dupes:
            raise DuplicatePointsError(dupes)
        object.__setattr__(self, "points", pts)
        object.__setattr__(self, "weights", w)

    @classmethod
    def from_arrays(cls, points, weights=None) -> PointCloud:
        """Build a cloud, defaulting to uniform weights and normalizing given ones."""
        pts = np.asarray(points, dtype=np.float64)
        if weights is None:
            n = pts.shape[0] if pts.ndim == 2 else 0
            w = np.full(n, 1.0 / n) if n else np.zeros(0)
        else:
            w = np.asarray(weights, dtype=np.float64)
            total = w.sum()
            if total > 0 and np.all(w > 0):
                w = w / total
        return cls(pts, w)

    @property
    def n(self) -> int:
        return self.points.shape[0]

    @property
    def dim(self) -> int:
        return self.points.shape[1]


def find_duplicates(points: np.ndarray, tol: float = DUPLICATE_TOL) -> list[tuple[int, int]]:
    """Pairs (i, j), i < j, whose points lie within ``tol`` of each other."""
    n = points.shape[0]
    sq_norms = np.einsum("ij,ij->i", points, points)
    found: list[tuple[int, int]] = []
    for lo, hi in chunk_bounds(n, 1024):
        block = points[lo:hi]
        diff = sq_norms[lo:hi, None] + sq_norms[None, :] - 2.0 * block @ points.T
        rows, cols = np.nonzero(diff <= max(tol * tol, 1e-9 * float(sq_norms.max(initial=0.0))))
        for r, c in zip(rows.tolist(), cols.tolist()):
            i = lo + r
            if c > i and np.linalg.norm(points[i] - points[c]) <= tol:
                found.append((i, c))
    return found


@dataclass(frozen=True, eq=False)
class PotentialOffsets:
    h: np.ndarray

    @classmethod
    def zeros(cls, n: int) -> PotentialOffsets:
        return cls(np.zeros(n))

    def projected(self) -> PotentialOffsets:
        return PotentialOffsets(self.h - self.h.mean())

    def shifted(self, c: float) -> PotentialOffsets:
        return PotentialOffsets(self.h + c)

    @property
    def n(self) -> int:
        return self.h.shape[0]


@dataclass(frozen=True, eq=False)
class CellStats:
    volume: np.ndarray
    centroid: np.ndarray
    sample_count: np.ndarray
    total_samples: int

    @property
    def empty(self) -> np.ndarray:
        return self.sample_count == 0

    @property
    def n(self) -> int:
        return self.volume.shape[0]


@dataclass(frozen=True)
class SolveReport:
    final_energy: float
    iterations: int
    converged: bool
    energy_trace: list[float] = field(default_factory=list)
    step_size: float = 0.0


@dataclass(frozen=True, eq=False)
class Assignment:
    """Per-sample winning cell, runner-up cell and value margin, in input order."""

    best: np.ndarray
    runner_up: np.ndarray
    margin: np.ndarray

    def __len__(self) -> int:
        return self.best.shape[0]

    def __getitem__(self, k: int) -> tuple[int, int, float]:
        return int(self.best[k]), int(self.runner_up[k]), float(self.margin[k])


class OffsetInit(StrEnum):
    VORONOI = "voronoi"
    ZERO = "zero"


@dataclass(frozen=True)
class SolverConfig:
    mc_samples: int = 100_000
    step_size: float = 0.5
    max_iters: int = 2000
    tolerance: float = 1e-4
    resample_each_iter: bool = False
    log_every: int = 50
    init: OffsetInit = OffsetInit.VORONOI
    divergence_guard: bool = True

    def __post_init__(self):
        for name in ("mc_samples", "max_iters", "log_every"):
            value = getattr(self, name)
            if not isinstance(value, int) or isinstance(value, bool) or value < 1:
                raise SolverConfigError(f"solver.{name} must be a positive integer, got {value!r}")
        for name in ("step_size", "tolerance"):
            if not getattr(self, name) > 0:
                raise SolverConfigError(f"solver.{name} must be > 0, got {getattr(self, name)!r}")
        object.__setattr__(self, "init", OffsetInit(self.init))


# ── Potential and assignment ─────────────────────────────────────────────────


def _check_dim(cloud: PointCloud, width: int, what: str) -> None:
    if width != cloud.dim:
        raise DimensionError(cloud.dim, width, what)


def potential_value(cloud: PointCloud, offsets: PotentialOffsets, z) -> tuple[float, int]:
    """u_h(z) = max_i <y_i, z> + h_i and its maximizing index (lowest index on ties)."""
    zv = np.asarray(z, dtype=np.float64)
    if zv.ndim != 1:
        raise DimensionError(1, zv.ndim, "query point array")
    _check_dim(cloud, zv.shape[0], "query point")
    values = cloud.points @ zv + offsets.h
    k = int(np.argmax(values))
    return float(values[k]), k


def transport_point(cloud: PointCloud, offsets: PotentialOffsets, z) -> np.ndarray:
    """T(z) = y_{i*}: the gradient of the potential away from ties."""
    _, k = potential_value(cloud, offsets, z)
    return cloud.points[k].copy()


def _as_samples(cloud: PointCloud, samples) -> np.ndarray:
    z = np.asarray(samples, dtype=np.float64)
    if z.ndim == 1:
        z = z[None, :]
    if z.ndim != 2 or z.shape[0] == 0:
        raise DimensionError(cloud.dim, z.shape[-1] if z.ndim else 0, "sample batch")
    _check_dim(cloud, z.shape[1], "sample")
    return z


def _best_only(cloud: PointCloud, h: np.ndarray, z: np.ndarray) -> np.ndarray:
    def run(lo: int, hi: int) -> np.ndarray:
        return np.argmax(z[lo:hi] @ cloud.points.T + h, axis=1)

    return np.concatenate(map_chunks(run, chunk_bounds(z.shape[0], ASSIGN_CHUNK)))


def assign(cloud: PointCloud, offsets: PotentialOffsets, samples) -> Assignment:
    z = _as_samples(cloud, samples)
    if offsets.n != cloud.n:
        raise DimensionError(cloud.n, offsets.n, "offset vector")

    def run(lo: int, hi: int):
        values = z[lo:hi] @ cloud.points.T + offsets.h
        rows = np.arange(hi - lo)
        best = np.argmax(values, axis=1)
        best_val = values[rows, best]
        values[rows, best] = -np.inf
        second = np.argmax(values, axis=1)
        return best, second, best_val - values[rows, second]

    parts = map_chunks(run, chunk_bounds(z.shape[0], ASSIGN_CHUNK))
    return Assignment(
        best=np.concatenate([p[0] for p in parts]),
        runner_up=np.concatenate([p[1] for p in parts]),
        margin=np.concatenate([p[2] for p in parts]),
    )


# ── Cell statistics ──────────────────────────────────────────────────────────


def cell_stats(best: np.ndarray, samples: np.ndarray, n: int) -> CellStats:
    """Volumes and centroids from a winning-cell vector; chunked sums in fixed order."""
    total = best.shape[0]
    d = samples.shape[1]

    def run(lo: int, hi: int):
        idx = best[lo:hi]
        counts = np.bincount(idx, minlength=n)
        sums = np.stack(
            [np.bincount(idx, weights=samples[lo:hi, k], minlength=n) for k in range(d)],
            axis=1,
        )
        return counts, sums

    counts = np.zeros(n, dtype=np.int64)
    sums = np.zeros((n, d))
    for c, s in map_chunks(run, chunk_bounds(total, ASSIGN_CHUNK)):
        counts += c
        sums += s
    with np.errstate(invalid="ignore", divide="ignore"):
        centroid = sums / counts[:, None]
    centroid[counts == 0] = np.nan
    return CellStats(
        volume=counts / total,
        centroid=centroid,
        sample_count=counts,
        total_samples=total,
    )


def estimate_cells(
    cloud: PointCloud,
    offsets: PotentialOffsets,
    measure: BaseMeasure,
    rng: SeededRng,
    M: int,
    *,
    samples: np.ndarray | None = None,
) -> CellStats:
    """Monte Carlo cell volumes and mass centers from M draws of the base measure."""
    if M < cloud.n:
        raise SolverConfigError(f"need M >= n Monte Carlo samples, got M={M} for n={cloud.n}")
    if M < 100 * cloud.n:
        log.warning("M=%d is below 100*n=%d; cell estimates will be noisy", M, 100 * cloud.n)
    if measure.dim != cloud.dim:
        raise DimensionError(cloud.dim, measure.dim, "base measure")
    z = sample(measure, rng, M) if samples is None else _as_samples(cloud, samples)
    stats = cell_stats(_best_only(cloud, offsets.h, z), z, cloud.n)
    if stats.empty.any():
        log.info("%d of %d cells received no samples", int(stats.empty.sum()), cloud.n)
    return stats


def energy(stats: CellStats, cloud: PointCloud) -> float:
    """E(h) = sum_i (mu_hat(W_i) - w_i)^2."""
    if stats.n != cloud.n:
        raise DimensionError(cloud.n, stats.n, "cell statistics")
    return float(np.sum((stats.volume - cloud.weights) ** 2))


# ── Offset optimization ──────────────────────────────────────────────────────


def initial_offsets(cloud: PointCloud, init: OffsetInit = OffsetInit.VORONOI) -> PotentialOffsets:
    if init == OffsetInit.ZERO:
        return PotentialOffsets.zeros(cloud.n)
    # <y, z> - |y|^2 / 2 is maximized by the nearest y: the Voronoi diagram
    h = -0.5 * np.einsum("ij,ij->i", cloud.points, cloud.points)
    return PotentialOffsets(h).projected()


def optimize_offsets(
    cloud: PointCloud,
    measure: BaseMeasure,
    rng: SeededRng,
    config: SolverConfig,
) -> tuple[PotentialOffsets, SolveReport]:
    """Dual ascent h_i <- h_i + eta (w_i - mu_hat(W_i)), projected to sum(h) = 0.

    Returns the converged offsets, or the best-seen offsets with converged=False.
    """
    if config.mc_samples < cloud.n:
        raise SolverConfigError(
            f"need mc_samples >= n, got {config.mc_samples} for n={cloud.n}"
        )
    if measure.dim != cloud.dim:
        raise DimensionError(cloud.dim, measure.dim, "base measure")
    if config.mc_samples < 100 * cloud.n:
        log.warning("mc_samples=%d is below 100*n=%d", config.mc_samples, 100 * cloud.n)

    pool = None if config.resample_each_iter else sample(measure, rng, config.mc_samples)
    h = initial_offsets(cloud, config.init).h
    eta = config.step_size
    best_h, best_e = h.copy(), np.inf
    previous = np.inf
    trace: list[float] = []
    converged = False
    iterations = 0

    for it in range(config.max_iters):
        z = pool if pool is not None else sample(measure, rng.derive(it), config.mc_samples)
        stats = cell_stats(_best_only(cloud, h, z), z, cloud.n)
        e = float(np.sum((stats.volume - cloud.weights) ** 2))
        iterations = it + 1
        if not np.isfinite(e):
            raise NumericError(f"energy became non-finite at iteration {it}")
        if e < best_e:
            best_h, best_e = h.copy(), e
        if it % config.log_every == 0:
            trace.append(e)
            log.info("iter %d  E(h)=%.3e  empty=%d  eta=%.3g", it, e, int(stats.empty.sum()), eta)
        if e <= config.tolerance:
            converged = True
            best_h, best_e = h.copy(), e
            break
        if config.divergence_guard and pool is not None and e > 2.0 * previous:
            eta *= 0.5
            log.info("energy jumped %.3e -> %.3e; step size halved to %.3g", previous, e, eta)
        previous = e
        h = h + eta * (cloud.weights - stats.volume)
        h = h - h.mean()

    if not trace or trace[-1] != best_e:
        trace.append(best_e)
    if not converged:
        log.warning(
            "solver stopped after %d iterations with E(h)=%.3e > %.1e",
            iterations, best_e, config.tolerance,
        )
    report = SolveReport(
        final_energy=best_e,
        iterations=iterations,
        converged=converged,
        energy_trace=trace,
        step_size=eta,
    )
    return PotentialOffsets(best_h), report


def require_converged(report: SolveReport, config: SolverConfig) -> None:
    if not report.converged:
        raise NotConvergedError(report.final_energy, report.iterations, config.tolerance)
