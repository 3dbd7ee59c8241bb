"""Tests for the power-diagram assignment and the offset solver."""

from __future__ import annotations

import numpy as np
import pytest

from otsing.errors import DimensionError
from otsing.sdot import (
    BaseMeasure,
    DuplicatePointsError,
    NotConvergedError,
    PointCloud,
    PotentialOffsets,
    SeededRng,
    SolverConfig,
    assign,
    energy,
    estimate_cells,
    optimize_offsets,
    potential_value,
    require_converged,
    sample,
    transport_point,
)
from otsing.sdot.solver import CellStats, PointCloudError, SolverConfigError, initial_offsets
from tests.conftest import exact_cell_areas


def _stats(volumes) -> CellStats:
    v = np.asarray(volumes, dtype=float)
    return CellStats(v, np.zeros((v.size, 2)), np.ones(v.size, dtype=np.int64), 1)


# ── PointCloud ───────────────────────────────────────────────────────────────


class TestPointCloud:
    def test_uniform_default_weights(self, collinear):
        assert collinear.weights == pytest.approx([1 / 3] * 3)

    def test_given_weights_are_normalized(self):
        cloud = PointCloud.from_arrays([[1.0, 0.0], [-1.0, 0.0]], [7.0, 3.0])
        assert cloud.weights == pytest.approx([0.7, 0.3])

    def test_duplicates_named_by_index(self):
        with pytest.raises(DuplicatePointsError, match=r"\(0, 2\)") as exc:
            PointCloud.from_arrays([[1.0, 2.0], [0.0, 1.0], [1.0, 2.0]])
        assert exc.value.indices == [(0, 2)]

    def test_rejects_single_point(self):
        with pytest.raises(PointCloudError, match="at least 2"):
            PointCloud.from_arrays([[1.0, 0.0]])

    def test_rejects_non_positive_weight(self):
        with pytest.raises(PointCloudError, match="weights must be > 0"):
            PointCloud(np.array([[1.0, 0.0], [0.0, 1.0]]), np.array([1.0, 0.0]))

    def test_rejects_unnormalized_weights(self):
        with pytest.raises(PointCloudError, match="sum to 1"):
            PointCloud(np.array([[1.0, 0.0], [0.0, 1.0]]), np.array([0.5, 0.6]))


# ── potential_value / transport_point ────────────────────────────────────────


class TestPotential:
    def test_max_of_affine_pieces(self, two_points, two_offsets):
        assert potential_value(two_points, two_offsets, [0.5, 0.0]) == (0.5, 0)

    def test_tie_goes_to_lowest_index(self, two_points, two_offsets):
        assert potential_value(two_points, two_offsets, [0.0, 0.0]) == (0.0, 0)

    def test_offsets_shift_pieces(self, two_points):
        value, k = potential_value(two_points, PotentialOffsets(np.array([0.2, -0.2])), [0.0, 0.0])
        assert value == pytest.approx(0.2)
        assert k == 0

    def test_dimension_mismatch(self, two_points, two_offsets):
        with pytest.raises(DimensionError):
            potential_value(two_points, two_offsets, [0.0, 0.0, 0.0])

    @pytest.mark.parametrize("z", [[[0.5, 0.0], [0.0, 0.5]], [[0.5, 0.0]], 0.5])
    def test_single_vector_only(self, two_points, two_offsets, z):
        with pytest.raises(ValueError, match="query point array has dimension"):
            potential_value(two_points, two_offsets, z)
        with pytest.raises(DimensionError):
            transport_point(two_points, two_offsets, z)

    def test_transport_point(self, two_points, two_offsets):
        assert np.array_equal(transport_point(two_points, two_offsets, [0.5, 0.0]), [1.0, 0.0])
        assert np.array_equal(transport_point(two_points, two_offsets, [-0.3, 0.9]), [-1.0, 0.0])


# ── assign ───────────────────────────────────────────────────────────────────


class TestAssign:
    def test_winner_runner_up_margin(self, two_points, two_offsets):
        assert assign(two_points, two_offsets, [[0.5, 0.0]])[0] == (0, 1, 1.0)

    def test_bisector_tie(self, two_points, two_offsets):
        best, second, margin = assign(two_points, two_offsets, [[0.0, 0.3]])[0]
        assert (best, second, margin) == (0, 1, 0.0)

    def test_collinear_three_points(self, collinear):
        best, second, margin = assign(collinear, PotentialOffsets.zeros(3), [[0.6, 0.0]])[0]
        assert (best, second) == (2, 1)
        assert margin == pytest.approx(0.6)

    def test_order_matches_input(self, two_points, two_offsets):
        result = assign(two_points, two_offsets, [[0.5, 0.0], [-0.5, 0.0], [0.1, 1.0]])
        assert result.best.tolist() == [0, 1, 0]
        assert np.all(result.margin >= 0)

    def test_offset_shift_leaves_assignment(self, square):
        rng = np.random.default_rng(3)
        cloud = PointCloud.from_arrays(rng.normal(size=(7, 2)))
        h = rng.normal(size=7)
        z = sample(square, SeededRng(1), 20_000)
        base = assign(cloud, PotentialOffsets(h), z).best
        shifted = assign(cloud, PotentialOffsets(h).shifted(5.0), z).best
        assert np.array_equal(base, shifted)

    def test_raising_offset_grows_cell(self, square):
        rng = np.random.default_rng(4)
        cloud = PointCloud.from_arrays(rng.normal(size=(6, 2)))
        h = rng.normal(size=6)
        z = sample(square, SeededRng(2), 20_000)
        best = assign(cloud, PotentialOffsets(h), z).best
        k = int(np.argmax(np.bincount(best, minlength=6)))
        before = best == k
        h[k] += 0.3
        after = assign(cloud, PotentialOffsets(h), z).best == k
        assert np.all(after[before])
        assert after.sum() > before.sum()

    def test_offset_length_mismatch(self, two_points):
        with pytest.raises(DimensionError):
            assign(two_points, PotentialOffsets.zeros(3), [[0.0, 0.0]])


# ── estimate_cells / energy ──────────────────────────────────────────────────


class TestEstimateCells:
    def test_symmetric_halves(self, two_points, two_offsets, square):
        stats = estimate_cells(two_points, two_offsets, square, SeededRng(1), 100_000)
        assert stats.volume == pytest.approx([0.5, 0.5], abs=0.0063)
        assert stats.centroid[0] == pytest.approx([0.5, 0.0], abs=0.01)
        assert stats.sample_count.sum() == 100_000

    def test_collinear_voronoi_cells(self, collinear, square):
        offsets = initial_offsets(collinear)
        stats = estimate_cells(collinear, offsets, square, SeededRng(2), 100_000)
        assert stats.volume == pytest.approx([0.25, 0.5, 0.25], abs=4 * np.sqrt(0.25 / 100_000))

    def test_empty_cell_is_flagged(self, collinear, square):
        # with h = 0 the middle cell is the line x = 0
        stats = estimate_cells(collinear, PotentialOffsets.zeros(3), square, SeededRng(2), 10_000)
        assert stats.empty.tolist() == [False, True, False]
        assert np.all(np.isnan(stats.centroid[1]))

    def test_needs_m_at_least_n(self, collinear, square):
        with pytest.raises(SolverConfigError, match="M >= n"):
            estimate_cells(collinear, PotentialOffsets.zeros(3), square, SeededRng(0), 2)

    def test_matches_exact_polygon_areas(self, square):
        rng = np.random.default_rng(2024)
        M = 200_000
        for trial in range(50):
            n = int(rng.integers(2, 9))
            points = rng.uniform(-1.0, 1.0, size=(n, 2))
            h = rng.uniform(-0.5, 0.5, size=n)
            cloud = PointCloud.from_arrays(points)
            stats = estimate_cells(cloud, PotentialOffsets(h), square, SeededRng(trial), M)
            exact = exact_cell_areas(points, h, (-1.0, -1.0), (1.0, 1.0))
            band = 4 * np.sqrt(exact * (1 - exact) / M) + 1e-9
            assert np.all(np.abs(stats.volume - exact) <= band), f"trial {trial}"


class TestEnergy:
    def test_zero_at_target(self, collinear):
        assert energy(_stats([1 / 3, 1 / 3, 1 / 3]), collinear) == pytest.approx(0.0, abs=1e-30)

    def test_two_cells(self, two_points):
        assert energy(_stats([0.6, 0.4]), two_points) == pytest.approx(0.02)

    def test_three_cells(self, collinear):
        assert energy(_stats([0.25, 0.5, 0.25]), collinear) == pytest.approx(0.0416666666666, rel=1e-9)


# ── optimize_offsets ─────────────────────────────────────────────────────────


class TestOptimizeOffsets:
    def test_symmetric_pair_stays_at_zero(self, two_points, square):
        offsets, report = optimize_offsets(two_points, square, SeededRng(1), SolverConfig())
        assert report.converged
        assert np.all(np.abs(offsets.h) <= 0.02)
        assert offsets.h.sum() == pytest.approx(0.0, abs=1e-12)

    def test_weighted_pair(self, square):
        cloud = PointCloud.from_arrays([[1.0, 0.0], [-1.0, 0.0]], [0.7, 0.3])
        rng = SeededRng(3)
        config = SolverConfig(tolerance=1e-6)
        offsets, report = optimize_offsets(cloud, square, rng, config)
        assert report.converged
        assert report.final_energy <= 1e-6
        assert offsets.h[0] - offsets.h[1] == pytest.approx(0.8, abs=0.05)
        # independent of the solver's pool
        pool = sample(square, SeededRng(4), 100_000)
        pushed = np.mean(assign(cloud, offsets, pool).best == 0)
        assert pushed == pytest.approx(0.7, abs=0.006)

    def test_sixteen_points_equalize(self, square):
        rng = np.random.default_rng(16)
        grid = np.stack(np.meshgrid(np.linspace(-0.75, 0.75, 4), np.linspace(-0.75, 0.75, 4)), -1).reshape(-1, 2)
        cloud = PointCloud.from_arrays(grid + rng.uniform(-0.1, 0.1, size=grid.shape))
        offsets, report = optimize_offsets(cloud, square, SeededRng(5), SolverConfig())
        assert report.converged
        assert report.final_energy <= 1e-4
        stats = estimate_cells(cloud, offsets, square, SeededRng(5), 100_000)
        assert np.all(np.abs(stats.volume - 1 / 16) <= 0.01)

    def test_non_convergence_keeps_best(self, square):
        cloud = PointCloud.from_arrays([[1.0, 0.0], [-1.0, 0.0]], [0.9, 0.1])
        config = SolverConfig(mc_samples=5000, max_iters=2, tolerance=1e-12, log_every=1)
        offsets, report = optimize_offsets(cloud, square, SeededRng(0), config)
        assert not report.converged
        assert report.iterations == 2
        assert report.energy_trace[-1] == report.final_energy
        assert offsets.h.sum() == pytest.approx(0.0, abs=1e-12)
        with pytest.raises(NotConvergedError, match="did not converge"):
            require_converged(report, config)

    def test_deterministic(self, collinear, square):
        config = SolverConfig(mc_samples=10_000, max_iters=50)
        a, _ = optimize_offsets(collinear, square, SeededRng(8), config)
        b, _ = optimize_offsets(collinear, square, SeededRng(8), config)
        assert np.array_equal(a.h, b.h)

    def test_resampling_each_iteration(self, two_points, square):
        config = SolverConfig(mc_samples=20_000, max_iters=30, resample_each_iter=True, tolerance=1e-3)
        offsets, report = optimize_offsets(two_points, square, SeededRng(8), config)
        assert report.converged
        assert np.all(np.abs(offsets.h) <= 0.05)

    def test_dimension_mismatch(self, two_points):
        with pytest.raises(DimensionError):
            optimize_offsets(two_points, BaseMeasure.gaussian(3), SeededRng(0), SolverConfig())

    def test_config_validation(self):
        with pytest.raises(SolverConfigError, match="step_size"):
            SolverConfig(step_size=0.0)
        with pytest.raises(SolverConfigError, match="max_iters"):
            SolverConfig(max_iters=0)
