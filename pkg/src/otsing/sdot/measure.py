from __future__ import annotations

from dataclasses import dataclass
from enum import StrEnum

import numpy as np

from otsing.errors import ConfigError
from otsing.parallel import chunk_bounds, map_chunks

# ── Constants ────────────────────────────────────────────────────────────────

# Rows drawn per Philox block. Changing this changes every sample stream.
SAMPLE_BLOCK = 65536
DEFAULT_BOX_MARGIN = 0.10


# ── Errors ───────────────────────────────────────────────────────────────────


class MeasureError(ConfigError):
    pass


# ── Data model ───────────────────────────────────────────────────────────────


class MeasureKind(StrEnum):
    UNIFORM = "uniform"
    GAUSSIAN = "gaussian"


@dataclass(frozen=True)
class SeededRng:
    """Seed handle for the Philox counter-based generator.

    Streams are cut into blocks of SAMPLE_BLOCK rows; block b is drawn from
    ``Philox(seed).jumped(b)``. Sub-streams come from ``derive``.
    """

    seed: int

    def __post_init__(self):
        if not 0 <= self.seed < 2**64:
            raise MeasureError(f"seed must be an unsigned 64-bit integer, got {self.seed}")

    def derive(self, *tags: int) -> SeededRng:
        state = np.random.SeedSequence([self.seed, *tags]).generate_state(1, dtype=np.uint64)
        return SeededRng(int(state[0]))

    def generator(self) -> np.random.Generator:
        return np.random.Generator(np.random.Philox(self.seed))

    def block(self, index: int) -> np.random.Generator:
        bitgen = np.random.Philox(self.seed)
        if index:
            bitgen = bitgen.jumped(index)
        return np.random.Generator(bitgen)


@dataclass(frozen=True)
class BaseMeasure:
    kind: MeasureKind
    dim: int
    box_lo: tuple[float, ...] | None = None
    box_hi: tuple[float, ...] | None = None
    mean: tuple[float, ...] | None = None
    stddev: float = 1.0

    def __post_init__(self):
        if self.dim < 1:
            raise MeasureError(f"dimension must be positive, got {self.dim}")
        if self.kind == MeasureKind.UNIFORM:
            if self.box_lo is None or self.box_hi is None:
                raise MeasureError("uniform measure needs box_lo and box_hi")
            if len(self.box_lo) != self.dim or len(self.box_hi) != self.dim:
                raise MeasureError(f"box bounds must have {self.dim} coordinates")
            bad = [k for k in range(self.dim) if not self.box_lo[k] < self.box_hi[k]]
            if bad:
                raise MeasureError(f"box_lo must be < box_hi on every axis; violated on axes {bad}")
        elif self.kind == MeasureKind.GAUSSIAN:
            if not self.stddev > 0:
                raise MeasureError(f"stddev must be > 0, got {self.stddev}")
            if self.mean is not None and len(self.mean) != self.dim:
                raise MeasureError(f"mean must have {self.dim} coordinates")
        else:
            raise MeasureError(f"unknown base measure kind '{self.kind}'")

    @classmethod
    def uniform(cls, lo, hi) -> BaseMeasure:
        lo_t = tuple(float(v) for v in lo)
        return cls(MeasureKind.UNIFORM, len(lo_t), box_lo=lo_t, box_hi=tuple(float(v) for v in hi))

    @classmethod
    def gaussian(cls, dim: int, stddev: float = 1.0, mean=None) -> BaseMeasure:
        mean_t = None if mean is None else tuple(float(v) for v in mean)
        return cls(MeasureKind.GAUSSIAN, dim, mean=mean_t, stddev=float(stddev))

    @classmethod
    def bounding_box(cls, points: np.ndarray, margin: float = DEFAULT_BOX_MARGIN) -> BaseMeasure:
        """Axis-aligned box around ``points`` padded by ``margin`` of each extent per side.

        A zero-extent axis borrows the largest extent so the box stays full-dimensional.
        """
        if margin < 0:
            raise MeasureError(f"box_margin must be >= 0, got {margin}")
        pts = np.asarray(points, dtype=np.float64)
        lo = pts.min(axis=0)
        hi = pts.max(axis=0)
        extent = hi - lo
        fallback = extent.max() if extent.max() > 0 else 1.0
        pad = np.where(extent > 0, extent, fallback) * margin
        return cls.uniform(lo - pad, hi + pad)

    def center(self) -> np.ndarray:
        if self.kind == MeasureKind.UNIFORM:
            return (np.asarray(self.box_lo) + np.asarray(self.box_hi)) / 2
        return np.zeros(self.dim) if self.mean is None else np.asarray(self.mean)


# ── Sampling ─────────────────────────────────────────────────────────────────


def _draw_block(measure: BaseMeasure, rng: SeededRng, block: int, rows: int) -> np.ndarray:
    gen = rng.block(block)
    if measure.kind == MeasureKind.UNIFORM:
        lo = np.asarray(measure.box_lo)
        hi = np.asarray(measure.box_hi)
        out = lo + (hi - lo) * gen.random((rows, measure.dim))
        # rounding in lo + (hi - lo) * u can land one ulp past hi
        return np.minimum(out, hi)
    out = measure.stddev * gen.standard_normal((rows, measure.dim))
    if measure.mean is not None:
        out += np.asarray(measure.mean)
    return out


def sample(measure: BaseMeasure, rng: SeededRng, count: int) -> np.ndarray:
    """Draw ``count`` points from the base measure as a (count, d) array.

    The stream depends only on (measure, seed); a shorter draw is a prefix of a
    longer one.
    """
    if count < 1:
        raise MeasureError(f"sample count must be >= 1, got {count}")
    blocks = chunk_bounds(count, SAMPLE_BLOCK)
    parts = map_chunks(
        lambda lo, hi: _draw_block(measure, rng, lo // SAMPLE_BLOCK, hi - lo),
        blocks,
    )
    return np.concatenate(parts, axis=0)
