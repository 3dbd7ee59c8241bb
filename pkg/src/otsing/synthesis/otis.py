from __future__ import annotations

import logging
from collections.abc import Sequence
from dataclasses import dataclass
from enum import StrEnum

import numpy as np

from otsing.errors import ConfigError, NumericError
from otsing.sdot.measure import BaseMeasure, SeededRng, sample
from otsing.sdot.singularity import BoundaryRecord, SingularSet
from otsing.sdot.solver import CellStats, PointCloud, PotentialOffsets, assign, potential_value
from otsing.synthesis.codec import Codec

log = logging.getLogger(__name__)

# ── Constants ────────────────────────────────────────────────────────────────

DEFAULT_GUARD = 1e-9
DEFAULT_PER_BOUNDARY = 32
DEFAULT_RETRY_CAP = 10_000  # draws allowed per accepted sample
SLAB_AUTO_SCALE = 0.05
SLAB_BATCH = 4096


# ── Errors ───────────────────────────────────────────────────────────────────


class SynthesisError(NumericError):
    def __init__(self, boundary: tuple[int, int] | None, detail: str):
        self.boundary = boundary
        where = f"boundary {boundary}: " if boundary is not None else ""
        super().__init__(f"{where}{detail}")


class SynthesisConfigError(ConfigError):
    pass


# ── Data model ───────────────────────────────────────────────────────────────


@dataclass(frozen=True, eq=False)
class SynthesisSample:
    boundary: tuple[int, int]
    z: np.ndarray
    lambda_i: float
    lambda_j: float
    y_hat: np.ndarray
    x_hat: np.ndarray


class InterpolationMode(StrEnum):
    LATENT = "latent_interp"
    INPUT = "input_interp"


SlabSetting = float | str | None


# ── Weights and smoothed transport ───────────────────────────────────────────


def interpolation_weights(z, c_i, c_j, guard: float = DEFAULT_GUARD) -> tuple[float, float]:
    """Inverse-distance weights of z to the two cell centroids; lambda_j = 1 - lambda_i."""
    ci = np.asarray(c_i, dtype=np.float64)
    cj = np.asarray(c_j, dtype=np.float64)
    if np.array_equal(ci, cj):
        raise SynthesisError(None, "cell centroids coincide; interpolation weights are undefined")
    zv = np.asarray(z, dtype=np.float64)
    inv_i = 1.0 / max(float(np.linalg.norm(zv - ci)), guard)
    inv_j = 1.0 / max(float(np.linalg.norm(zv - cj)), guard)
    lambda_i = inv_i / (inv_i + inv_j)
    return lambda_i, 1.0 - lambda_i


def smoothed_transport(
    cloud: PointCloud,
    offsets: PotentialOffsets,
    boundary: BoundaryRecord,
    weights: tuple[float, float],
    c_i,
    c_j,
) -> np.ndarray:
    """lambda_i T(c_i) + lambda_j T(c_j), failing if a centroid left its own cell."""
    for cell, centroid in ((boundary.i, c_i), (boundary.j, c_j)):
        _, owner = potential_value(cloud, offsets, centroid)
        if owner != cell:
            raise SynthesisError(
                boundary.key,
                f"centroid of cell {cell} is transported to y_{owner}; the solve is inconsistent",
            )
    lambda_i, lambda_j = weights
    return lambda_i * cloud.points[boundary.i] + lambda_j * cloud.points[boundary.j]


# ── OTIS generation ──────────────────────────────────────────────────────────


def resolve_slab(setting: SlabSetting, boundary: BoundaryRecord) -> float | None:
    if setting is None or setting == "off":
        return None
    if setting == "auto":
        return SLAB_AUTO_SCALE * float(np.linalg.norm(boundary.a))
    try:
        delta = float(setting)
    except (TypeError, ValueError):
        raise SynthesisConfigError(f"slab must be 'auto', 'off' or a number, got {setting!r}") from None
    if not delta > 0:
        raise SynthesisConfigError(f"slab half-width must be > 0, got {delta}")
    return delta


def _draw_sources(
    cloud: PointCloud,
    offsets: PotentialOffsets,
    boundary: BoundaryRecord,
    measure: BaseMeasure,
    rng: SeededRng,
    count: int,
    delta: float | None,
    retry_cap: int,
) -> np.ndarray:
    if delta is None:
        return sample(measure, rng, count)
    budget = retry_cap * count
    drawn = 0
    accepted: list[np.ndarray] = []
    have = 0
    attempt = 0
    while have < count:
        if drawn >= budget:
            raise SynthesisError(
                boundary.key,
                f"only {have} of {count} draws landed within {delta:.3g} of the boundary "
                f"after {drawn} attempts",
            )
        size = min(SLAB_BATCH, budget - drawn)
        z = sample(measure, rng.derive(attempt), size)
        drawn += size
        attempt += 1
        near = z[np.abs(z @ boundary.a + boundary.b) <= delta]
        if near.shape[0] == 0:
            continue
        owner = assign(cloud, offsets, near).best
        keep = near[(owner == boundary.i) | (owner == boundary.j)]
        accepted.append(keep)
        have += keep.shape[0]
    return np.concatenate(accepted, axis=0)[:count]


def _centroids(stats: CellStats, boundary: BoundaryRecord) -> tuple[np.ndarray, np.ndarray]:
    for cell in (boundary.i, boundary.j):
        if stats.sample_count[cell] == 0:
            raise SynthesisError(boundary.key, f"cell {cell} received no Monte Carlo samples")
    return stats.centroid[boundary.i], stats.centroid[boundary.j]


def generate_otis(
    cloud: PointCloud,
    offsets: PotentialOffsets,
    singular: SingularSet | Sequence[BoundaryRecord],
    stats: CellStats,
    codec: Codec,
    measure: BaseMeasure,
    rng: SeededRng,
    per_boundary: int = DEFAULT_PER_BOUNDARY,
    slab_delta: SlabSetting = "auto",
    *,
    guard: float = DEFAULT_GUARD,
    retry_cap: int = DEFAULT_RETRY_CAP,
) -> list[SynthesisSample]:
    """Synthesize ``per_boundary`` OTIS for every boundary, in boundary order.

    Each boundary draws from its own stream derived from (seed, i, j).
    """
    if per_boundary < 1:
        raise SynthesisConfigError(f"per_boundary must be >= 1, got {per_boundary}")
    if retry_cap < 1:
        raise SynthesisConfigError(f"retry_cap must be >= 1, got {retry_cap}")
    records = singular.records if isinstance(singular, SingularSet) else list(singular)

    drafts: list[tuple[tuple[int, int], np.ndarray, float, float, np.ndarray]] = []
    for rec in records:
        c_i, c_j = _centroids(stats, rec)
        delta = resolve_slab(slab_delta, rec)
        sources = _draw_sources(
            cloud, offsets, rec, measure, rng.derive(rec.i, rec.j), per_boundary, delta, retry_cap
        )
        for z in sources:
            lam_i, lam_j = interpolation_weights(z, c_i, c_j, guard)
            y_hat = smoothed_transport(cloud, offsets, rec, (lam_i, lam_j), c_i, c_j)
            drafts.append((rec.key, z, lam_i, lam_j, y_hat))

    if not drafts:
        return []
    decoded = codec.decode(np.stack([d[4] for d in drafts]))
    log.info("synthesized %d OTIS from %d boundaries", len(drafts), len(records))
    return [
        SynthesisSample(boundary=key, z=z, lambda_i=li, lambda_j=lj, y_hat=y, x_hat=x)
        for (key, z, li, lj, y), x in zip(drafts, decoded)
    ]


def stack_outputs(samples: Sequence[SynthesisSample]) -> np.ndarray:
    return np.stack([s.x_hat for s in samples]) if samples else np.zeros((0, 0))


# ── Interpolation baselines ──────────────────────────────────────────────────


def interpolation_baselines(
    cloud: PointCloud,
    codec: Codec,
    rng: SeededRng,
    mode: InterpolationMode,
    count: int,
    *,
    inputs: np.ndarray | None = None,
    fixed_lambda: float | None = None,
) -> np.ndarray:
    """Boundary-free mixes of two random points, in latent or input space."""
    if count < 1:
        raise SynthesisConfigError(f"interpolation count must be >= 1, got {count}")
    mode = InterpolationMode(mode)
    gen = rng.generator()
    a = gen.integers(0, cloud.n, size=count)
    b = gen.integers(0, cloud.n, size=count)
    lam = gen.random(count) if fixed_lambda is None else np.full(count, float(fixed_lambda))
    lam = lam[:, None]
    if mode == InterpolationMode.LATENT:
        y = cloud.points
        return codec.decode(lam * y[a] + (1.0 - lam) * y[b])
    x = codec.decode(cloud.points) if inputs is None else np.asarray(inputs, dtype=np.float64)
    return lam * x[a] + (1.0 - lam) * x[b]
