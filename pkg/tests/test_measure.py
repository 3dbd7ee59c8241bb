"""Tests for base measures and the seeded sample streams."""

from __future__ import annotations

import numpy as np
import pytest

from otsing.parallel import set_threads
from otsing.sdot.measure import SAMPLE_BLOCK, BaseMeasure, MeasureError, MeasureKind, SeededRng, sample


# ── SeededRng ────────────────────────────────────────────────────────────────


class TestSeededRng:
    def test_derive_is_deterministic(self):
        assert SeededRng(5).derive(1, 2) == SeededRng(5).derive(1, 2)

    def test_derive_separates_tags(self):
        base = SeededRng(5)
        assert base.derive(1).seed != base.derive(2).seed
        assert base.derive(1, 2).seed != base.derive(2, 1).seed

    def test_rejects_negative_seed(self):
        with pytest.raises(MeasureError, match="unsigned 64-bit"):
            SeededRng(-1)

    def test_blocks_are_distinct_streams(self):
        rng = SeededRng(11)
        assert not np.array_equal(rng.block(0).random(4), rng.block(1).random(4))


# ── BaseMeasure ──────────────────────────────────────────────────────────────


class TestBaseMeasure:
    def test_uniform_requires_ordered_bounds(self):
        with pytest.raises(MeasureError, match="axes \\[1\\]"):
            BaseMeasure.uniform([0.0, 1.0], [1.0, 1.0])

    def test_uniform_bound_length(self):
        with pytest.raises(MeasureError, match="2 coordinates"):
            BaseMeasure(MeasureKind.UNIFORM, 2, box_lo=(0.0,), box_hi=(1.0,))

    def test_gaussian_needs_positive_stddev(self):
        with pytest.raises(MeasureError, match="stddev"):
            BaseMeasure.gaussian(2, stddev=0.0)

    def test_bounding_box_margin(self):
        m = BaseMeasure.bounding_box(np.array([[0.0, 0.0], [2.0, 4.0]]), margin=0.1)
        assert m.box_lo == pytest.approx((-0.2, -0.4))
        assert m.box_hi == pytest.approx((2.2, 4.4))

    def test_bounding_box_pads_flat_axis(self):
        m = BaseMeasure.bounding_box(np.array([[-1.0, 0.0], [1.0, 0.0]]), margin=0.1)
        assert m.box_lo == pytest.approx((-1.2, -0.2))
        assert m.box_hi == pytest.approx((1.2, 0.2))

    def test_center(self, square):
        assert np.array_equal(square.center(), [0.0, 0.0])
        assert np.array_equal(BaseMeasure.gaussian(3, mean=[1, 2, 3]).center(), [1.0, 2.0, 3.0])


# ── sample ───────────────────────────────────────────────────────────────────


class TestSample:
    def test_uniform_stays_in_box(self, square):
        z = sample(square, SeededRng(1), 5000)
        assert z.shape == (5000, 2)
        assert z.min() >= -1.0 and z.max() <= 1.0

    def test_same_seed_same_stream(self, square):
        assert np.array_equal(sample(square, SeededRng(9), 100), sample(square, SeededRng(9), 100))

    def test_shorter_draw_is_prefix(self, square):
        short = sample(square, SeededRng(9), 10)
        long = sample(square, SeededRng(9), SAMPLE_BLOCK + 10)
        assert np.array_equal(short, long[:10])

    def test_independent_of_thread_count(self, square):
        count = 2 * SAMPLE_BLOCK + 7
        single = sample(square, SeededRng(4), count)
        set_threads(4)
        assert np.array_equal(single, sample(square, SeededRng(4), count))

    def test_standard_gaussian_mean(self):
        n = 100_000
        z = sample(BaseMeasure.gaussian(2), SeededRng(2), n)
        assert np.all(np.abs(z.mean(axis=0)) <= 4 / np.sqrt(n))

    def test_gaussian_moments(self):
        n = 100_000
        m = BaseMeasure.gaussian(2, stddev=2.0, mean=[1.0, -1.0])
        z = sample(m, SeededRng(2), n)
        assert z.mean(axis=0) == pytest.approx([1.0, -1.0], abs=4 * 2.0 / np.sqrt(n))
        assert z.std(axis=0) == pytest.approx([2.0, 2.0], abs=0.025)

    def test_rejects_empty_draw(self, square):
        with pytest.raises(MeasureError, match=">= 1"):
            sample(square, SeededRng(0), 0)
