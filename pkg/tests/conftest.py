from __future__ import annotations

import json

import numpy as np
import pytest

from otsing.parallel import set_threads
from otsing.sdot import BaseMeasure, PointCloud, PotentialOffsets


# ── Exact 2-D cell geometry ──────────────────────────────────────────────────


def polygon_area(poly: list[tuple[float, float]]) -> float:
    if len(poly) < 3:
        return 0.0
    xs = np.array([p[0] for p in poly])
    ys = np.array([p[1] for p in poly])
    return 0.5 * abs(float(np.dot(xs, np.roll(ys, -1)) - np.dot(ys, np.roll(xs, -1))))


def clip_halfplane(poly, a, c):
    """Keep the part of a convex polygon where <a, z> + c >= 0."""
    out = []
    for k in range(len(poly)):
        p = np.asarray(poly[k])
        q = np.asarray(poly[(k + 1) % len(poly)])
        fp = float(a @ p + c)
        fq = float(a @ q + c)
        if fp >= 0:
            out.append(tuple(p))
        if (fp >= 0) != (fq >= 0):
            t = fp / (fp - fq)
            out.append(tuple(p + t * (q - p)))
    return out


def exact_cell_areas(points: np.ndarray, h: np.ndarray, lo, hi) -> np.ndarray:
    """Area fraction of every power cell inside the box [lo, hi]."""
    box = [(lo[0], lo[1]), (hi[0], lo[1]), (hi[0], hi[1]), (lo[0], hi[1])]
    total = polygon_area(box)
    areas = []
    for i in range(points.shape[0]):
        poly = box
        for j in range(points.shape[0]):
            if j == i or not poly:
                continue
            poly = clip_halfplane(poly, points[i] - points[j], h[i] - h[j])
        areas.append(polygon_area(poly) / total)
    return np.array(areas)


# ── Fixtures ─────────────────────────────────────────────────────────────────


@pytest.fixture(autouse=True)
def single_thread(monkeypatch):
    """Start every test from the default worker count."""
    monkeypatch.delenv("OTSING_THREADS", raising=False)
    set_threads(None)
    yield
    set_threads(None)


@pytest.fixture()
def square() -> BaseMeasure:
    return BaseMeasure.uniform([-1.0, -1.0], [1.0, 1.0])


@pytest.fixture()
def two_points() -> PointCloud:
    return PointCloud.from_arrays([[1.0, 0.0], [-1.0, 0.0]])


@pytest.fixture()
def collinear() -> PointCloud:
    return PointCloud.from_arrays([[-1.0, 0.0], [0.0, 0.0], [1.0, 0.0]])


@pytest.fixture()
def two_offsets() -> PotentialOffsets:
    return PotentialOffsets.zeros(2)


# Six well-separated points in two classes; every cell is large at M=6000.
SIX_POINTS = [[-2.0, 1.0], [-2.0, -1.0], [-3.0, 0.5], [2.0, 1.0], [2.0, -1.0], [3.0, -0.5]]
SIX_LABELS = [0, 0, 0, 1, 1, 1]

SMALL_RUN = {
    "seed": 3,
    "data": {"source": "toy"},
    "toy": {"n_train": 60, "n_test": 30, "n_ood": 30},
    "solver": {"mc_samples": 6000, "step_size": 1.0, "max_iters": 60, "log_every": 10},
    "boundaries": {"mode": "empirical", "rho": 0.1},
    "synthesis": {"per_boundary": 4, "slab": "off"},
    "train": {"epochs": 3, "batch_size": 16, "hidden": [8, 8]},
    "sweep": {"rhos": [0.1], "modes": ["topk", "baseline"]},
}


@pytest.fixture()
def small_config(tmp_path):
    """Write a fast toy run config; overrides are merged one block deep."""

    def _write(**overrides) -> str:
        doc = json.loads(json.dumps(SMALL_RUN))
        for key, value in overrides.items():
            if isinstance(value, dict) and isinstance(doc.get(key), dict):
                doc[key].update(value)
            else:
                doc[key] = value
        path = tmp_path / "run.json"
        path.write_text(json.dumps(doc))
        return str(path)

    return _write


def write_points_csv(path, points, weights=None) -> str:
    """Write a cloud in the ``dim=<d>,count=<n>`` CSV layout."""
    points = np.asarray(points, dtype=float)
    lines = [f"dim={points.shape[1]},count={points.shape[0]}"]
    for k, row in enumerate(points):
        cells = [repr(float(v)) for v in row]
        if weights is not None:
            cells.append(repr(float(weights[k])))
        lines.append(",".join(cells))
    path.write_text("\n".join(lines) + "\n")
    return str(path)


def write_labels_csv(path, labels) -> str:
    path.write_text("label\n" + "".join(f"{int(v)}\n" for v in labels))
    return str(path)
