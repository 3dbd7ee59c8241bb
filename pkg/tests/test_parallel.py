"""Tests for worker-count resolution and thread-independent chunked work."""

from __future__ import annotations

import threading

import numpy as np
import pytest

from otsing.errors import ConfigError
from otsing.parallel import chunk_bounds, get_threads, map_chunks, resolve_threads, set_threads
from otsing.sdot import PointCloud, PotentialOffsets, SeededRng, estimate_cells, sample


# ── resolve_threads ──────────────────────────────────────────────────────────


class TestResolveThreads:
    def test_default(self):
        assert resolve_threads() == 1
        assert get_threads() == 1

    def test_flag_wins(self, monkeypatch):
        monkeypatch.setenv("OTSING_THREADS", "3")
        assert resolve_threads(5) == 5

    def test_environment(self, monkeypatch):
        monkeypatch.setenv("OTSING_THREADS", "3")
        assert resolve_threads() == 3

    @pytest.mark.parametrize("raw", ["0", "-2", "many"])
    def test_bad_environment(self, monkeypatch, raw):
        monkeypatch.setenv("OTSING_THREADS", raw)
        with pytest.raises(ConfigError, match="OTSING_THREADS"):
            resolve_threads()

    def test_bad_flag(self):
        with pytest.raises(ConfigError, match="--threads"):
            resolve_threads(0)


# ── chunk_bounds / map_chunks ────────────────────────────────────────────────


class TestChunks:
    def test_bounds(self):
        assert chunk_bounds(10, 4) == [(0, 4), (4, 8), (8, 10)]
        assert chunk_bounds(0, 4) == []

    def test_order_preserved(self):
        set_threads(4)
        assert map_chunks(lambda lo, hi: (lo, hi), chunk_bounds(50, 3)) == chunk_bounds(50, 3)

    def test_workers_clamped_to_chunks(self):
        set_threads(16)
        seen = set()

        def record(lo, hi):
            seen.add(threading.get_ident())
            return hi - lo

        assert map_chunks(record, [(0, 5), (5, 7)]) == [5, 2]
        assert len(seen) <= 2


# ── Thread-count independence ────────────────────────────────────────────────


class TestThreadIndependence:
    def test_clamped_parallel_estimate_is_identical(self, square):
        cloud = PointCloud.from_arrays(np.random.default_rng(3).uniform(-1.0, 1.0, size=(12, 2)))
        offsets = PotentialOffsets.zeros(cloud.n)
        serial = estimate_cells(cloud, offsets, square, SeededRng(6), 50_000)
        set_threads(64)
        threaded = estimate_cells(cloud, offsets, square, SeededRng(6), 50_000)
        assert np.array_equal(serial.volume, threaded.volume)
        assert np.array_equal(serial.centroid, threaded.centroid, equal_nan=True)
        assert np.array_equal(serial.sample_count, threaded.sample_count)

    def test_sampling_is_identical(self, square):
        serial = sample(square, SeededRng(2), 200_000)
        set_threads(3)
        assert np.array_equal(serial, sample(square, SeededRng(2), 200_000))
