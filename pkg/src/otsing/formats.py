from __future__ import annotations

import csv
import json
import re
import struct
from collections.abc import Iterable, Sequence
from pathlib import Path

import numpy as np
import pandas as pd

from otsing.errors import FormatError

# ── Constants ────────────────────────────────────────────────────────────────

OTPC_MAGIC = b"OTPC"
OTPC_VERSION = 1
OTPC_HEADER = struct.Struct("<4sHHQ")
CSV_HEADER_RE = re.compile(r"^\s*dim\s*=\s*(\d+)\s*,\s*count\s*=\s*(\d+)\s*$")


# ── Point clouds ─────────────────────────────────────────────────────────────


def write_otpc(path: str | Path, points: np.ndarray, weights: np.ndarray | None = None) -> Path:
    """Write an OTPC v1 file; missing weights are written as uniform."""
    path = Path(path)
    pts = np.ascontiguousarray(points, dtype="<f8")
    if pts.ndim != 2:
        raise FormatError(path, f"points must be a 2-D array, got shape {pts.shape}")
    count, dim = pts.shape
    if weights is None:
        w = np.full(count, 1.0 / count if count else 0.0, dtype="<f8")
    else:
        w = np.ascontiguousarray(weights, dtype="<f8")
        if w.shape != (count,):
            raise FormatError(path, f"expected {count} weights, got shape {w.shape}")
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as f:
        f.write(OTPC_HEADER.pack(OTPC_MAGIC, OTPC_VERSION, dim, count))
        f.write(pts.tobytes())
        f.write(w.tobytes())
    return path


def read_otpc(path: str | Path) -> tuple[np.ndarray, np.ndarray]:
    path = Path(path)
    raw = path.read_bytes()
    if len(raw) < OTPC_HEADER.size:
        raise FormatError(path, "file too short for an OTPC header")
    magic, version, dim, count = OTPC_HEADER.unpack_from(raw)
    if magic != OTPC_MAGIC:
        raise FormatError(path, f"bad magic bytes {magic!r}, expected {OTPC_MAGIC!r}")
    if version != OTPC_VERSION:
        raise FormatError(path, f"unsupported OTPC version {version}")
    expected = OTPC_HEADER.size + 8 * (count * dim + count)
    if len(raw) != expected:
        raise FormatError(path, f"expected {expected} bytes for {count} x {dim} points, got {len(raw)}")
    body = np.frombuffer(raw, dtype="<f8", offset=OTPC_HEADER.size)
    points = body[: count * dim].reshape(count, dim).astype(np.float64)
    weights = body[count * dim :].astype(np.float64)
    return points, weights


def read_points_csv(path: str | Path) -> tuple[np.ndarray, np.ndarray | None]:
    """CSV cloud: a ``dim=<d>,count=<n>`` header, then one point per line, optional weight column."""
    path = Path(path)
    with open(path) as f:
        first = f.readline()
    m = CSV_HEADER_RE.match(first)
    if not m:
        raise FormatError(path, f"first line must read 'dim=<d>,count=<n>', got {first.strip()!r}")
    dim, count = int(m.group(1)), int(m.group(2))
    try:
        df = pd.read_csv(path, skiprows=1, header=None, dtype=float)
    except (ValueError, pd.errors.ParserError) as e:
        raise FormatError(path, f"unreadable point rows: {e}") from None
    except pd.errors.EmptyDataError:
        df = pd.DataFrame()
    if len(df) != count:
        raise FormatError(path, f"header declares {count} points, found {len(df)}")
    if df.shape[1] not in (dim, dim + 1):
        raise FormatError(path, f"rows must have {dim} or {dim + 1} columns, got {df.shape[1]}")
    values = df.to_numpy(dtype=np.float64)
    weights = values[:, dim].copy() if df.shape[1] == dim + 1 else None
    return values[:, :dim].copy(), weights


def read_points(path: str | Path) -> tuple[np.ndarray, np.ndarray | None]:
    """Read an OTPC or CSV cloud, picking the format from the leading bytes."""
    path = Path(path)
    with open(path, "rb") as f:
        head = f.read(len(OTPC_MAGIC))
    if head == OTPC_MAGIC:
        return read_otpc(path)
    return read_points_csv(path)


def read_labels(path: str | Path, expected: int | None = None) -> np.ndarray:
    path = Path(path)
    try:
        df = pd.read_csv(path)
    except (ValueError, pd.errors.ParserError, pd.errors.EmptyDataError) as e:
        raise FormatError(path, f"unreadable labels: {e}") from None
    if "label" not in df.columns:
        raise FormatError(path, "labels CSV needs a 'label' column")
    labels = df["label"].to_numpy()
    if not np.issubdtype(labels.dtype, np.integer):
        raise FormatError(path, "labels must be integers")
    if np.any(labels < 0):
        raise FormatError(path, "labels must be non-negative")
    if expected is not None and labels.shape[0] != expected:
        raise FormatError(path, f"expected {expected} labels, got {labels.shape[0]}")
    return labels.astype(np.int64)


def write_labels(path: str | Path, labels: np.ndarray) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["label"])
        for v in np.asarray(labels).tolist():
            writer.writerow([int(v)])
    return path


# ── JSON documents ───────────────────────────────────────────────────────────


def write_json(path: str | Path, payload: object) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(payload, indent=2) + "\n")
    return path


def read_json(path: str | Path) -> object:
    path = Path(path)
    try:
        return json.loads(path.read_text())
    except json.JSONDecodeError as e:
        raise FormatError(path, f"invalid JSON: {e}") from None


def offsets_payload(h: np.ndarray, energy: float, seed: int, **extra) -> dict:
    return {"n": int(h.shape[0]), "h": [float(v) for v in h], "energy": float(energy), "seed": int(seed), **extra}


def read_offsets(path: str | Path, expected_n: int | None = None) -> np.ndarray:
    doc = read_json(path)
    if not isinstance(doc, dict) or "h" not in doc or "n" not in doc:
        raise FormatError(path, "offsets JSON needs 'n' and 'h' keys")
    h = np.asarray(doc["h"], dtype=np.float64)
    if h.shape != (doc["n"],):
        raise FormatError(path, f"'h' has {h.shape[0]} entries but n={doc['n']}")
    if expected_n is not None and doc["n"] != expected_n:
        raise FormatError(path, f"offsets are for n={doc['n']} points, cloud has {expected_n}")
    return h


def boundary_payload(records: Iterable) -> list[dict]:
    return [
        {
            "i": r.i,
            "j": r.j,
            "score": float(r.score),
            "a": [float(v) for v in r.a],
            "b": float(r.b),
            "adjacent": bool(r.empirically_adjacent),
        }
        for r in records
    ]


def read_boundaries(path: str | Path) -> list[dict]:
    doc = read_json(path)
    if not isinstance(doc, list):
        raise FormatError(path, "boundaries JSON must be an array")
    required = {"i", "j", "score", "a", "b", "adjacent"}
    for k, item in enumerate(doc):
        if not isinstance(item, dict):
            raise FormatError(path, f"entry {k} is not an object")
        missing = required - item.keys()
        if missing:
            raise FormatError(path, f"entry {k} lacks keys {sorted(missing)}")
    return doc


def otis_payload(samples: Iterable) -> list[dict]:
    """Sidecar rows for an OTIS file, one per emitted point, in file order."""
    return [
        {
            "i": s.boundary[0],
            "j": s.boundary[1],
            "lambda_i": float(s.lambda_i),
            "lambda_j": float(s.lambda_j),
        }
        for s in samples
    ]


# ── CSV tables ───────────────────────────────────────────────────────────────


def write_rows(path: str | Path, header: Sequence[str], rows: Iterable[Sequence]) -> int:
    """Write a CSV table. Returns number of data rows written."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    count = 0
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(header)
        for row in rows:
            writer.writerow([format_cell(v) for v in row])
            count += 1
    return count


def format_cell(value: object) -> str:
    if value is None:
        return ""
    if isinstance(value, (float, np.floating)):
        return "" if np.isnan(value) else repr(float(value))
    if isinstance(value, (np.integer,)):
        return str(int(value))
    return str(value)

