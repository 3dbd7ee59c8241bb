from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from sklearn.metrics import roc_auc_score

from otsing.errors import ConfigError
from otsing.training.model import ToyClassifier, forward

# ── Constants ────────────────────────────────────────────────────────────────

DEFAULT_ECE_BINS = 15
DEFAULT_HIST_BINS = 20
DEFAULT_TPR = 0.95

HIST_HEADER = ["split", "bin_lo", "bin_hi", "count"]


# ── Errors ───────────────────────────────────────────────────────────────────


class MetricsError(ConfigError):
    pass


# ── Data model ───────────────────────────────────────────────────────────────


@dataclass(frozen=True)
class MetricsConfig:
    ece_bins: int = DEFAULT_ECE_BINS
    hist_bins: int = DEFAULT_HIST_BINS
    tpr_target: float = DEFAULT_TPR

    def __post_init__(self):
        if self.ece_bins < 1 or self.hist_bins < 1:
            raise MetricsError("metrics.ece_bins and metrics.hist_bins must be >= 1")
        if not 0 < self.tpr_target <= 1:
            raise MetricsError(f"metrics.tpr_target must lie in (0, 1], got {self.tpr_target}")


@dataclass(frozen=True, eq=False)
class ConfidenceReport:
    """Max-softmax scores on ID and OOD inputs, plus per-ID-row correctness."""

    id_scores: np.ndarray
    ood_scores: np.ndarray
    id_correct: np.ndarray

    def __post_init__(self):
        if self.id_correct.shape != self.id_scores.shape:
            raise MetricsError(
                f"id_correct has {self.id_correct.shape[0]} entries for {self.id_scores.shape[0]} ID scores"
            )


# ── Helpers ──────────────────────────────────────────────────────────────────


def _scores(values, what: str) -> np.ndarray:
    arr = np.asarray(values, dtype=np.float64).ravel()
    if arr.size == 0:
        raise MetricsError(f"{what} is empty")
    if not np.all(np.isfinite(arr)):
        raise MetricsError(f"{what} contains non-finite values")
    return arr


def _bin_index(values: np.ndarray, bins: int) -> np.ndarray:
    # (lo, hi] bins; 0 falls in the first one
    edges = np.linspace(0.0, 1.0, bins + 1)
    return np.clip(np.searchsorted(edges, values, side="left") - 1, 0, bins - 1)


# ── Metrics ──────────────────────────────────────────────────────────────────


def mmc(scores) -> float:
    """Mean maximum confidence."""
    return float(np.mean(_scores(scores, "score list")))


def auroc(id_scores, ood_scores) -> float:
    """Probability an ID score beats an OOD score; ties count half."""
    ids = _scores(id_scores, "ID scores")
    oods = _scores(ood_scores, "OOD scores")
    labels = np.concatenate([np.ones(ids.size), np.zeros(oods.size)])
    return float(roc_auc_score(labels, np.concatenate([ids, oods])))


def fpr_at_tpr(id_scores, ood_scores, tpr_target: float = DEFAULT_TPR) -> float:
    """Fraction of OOD scores >= tau, where tau is the largest ID score keeping
    at least ``tpr_target`` of ID scores >= tau."""
    if not 0 < tpr_target <= 1:
        raise MetricsError(f"tpr_target must lie in (0, 1], got {tpr_target}")
    ids = np.sort(_scores(id_scores, "ID scores"))[::-1]
    oods = _scores(ood_scores, "OOD scores")
    kept = np.arange(1, ids.size + 1) / ids.size
    k = int(np.argmax(kept >= tpr_target))
    tau = ids[k]
    return float(np.mean(oods >= tau))


def ece(confidences, correct, bins: int = DEFAULT_ECE_BINS) -> float:
    """Expected calibration error over equal-width, right-inclusive bins on [0, 1]."""
    if bins < 1:
        raise MetricsError(f"bins must be >= 1, got {bins}")
    conf = _scores(confidences, "confidences")
    hits = np.asarray(correct, dtype=np.float64).ravel()
    if hits.shape != conf.shape:
        raise MetricsError(f"{conf.size} confidences but {hits.size} correctness flags")
    idx = _bin_index(conf, bins)
    counts = np.bincount(idx, minlength=bins)
    conf_sum = np.bincount(idx, weights=conf, minlength=bins)
    hit_sum = np.bincount(idx, weights=hits, minlength=bins)
    filled = counts > 0
    gaps = np.abs(hit_sum[filled] / counts[filled] - conf_sum[filled] / counts[filled])
    return float(np.sum(counts[filled] / conf.size * gaps))


def confidence_histogram(scores, bins: int) -> list[tuple[float, float, int]]:
    """(lo, hi, count) per equal-width bin on [0, 1]; a score on an edge goes to the lower bin."""
    if bins < 1:
        raise MetricsError(f"bins must be >= 1, got {bins}")
    edges = np.linspace(0.0, 1.0, bins + 1)
    arr = np.asarray(scores, dtype=np.float64).ravel()
    counts = np.bincount(_bin_index(arr, bins), minlength=bins) if arr.size else np.zeros(bins, dtype=np.int64)
    return [(float(edges[b]), float(edges[b + 1]), int(counts[b])) for b in range(bins)]


# ── Model evaluation ─────────────────────────────────────────────────────────


def confidence_report(model: ToyClassifier, id_x, id_y, ood_x) -> ConfidenceReport:
    id_probs = forward(model, np.atleast_2d(id_x))
    ood_probs = forward(model, np.atleast_2d(ood_x))
    return ConfidenceReport(
        id_scores=id_probs.max(axis=1),
        ood_scores=ood_probs.max(axis=1),
        id_correct=np.argmax(id_probs, axis=1) == np.asarray(id_y),
    )


def summarize(report: ConfidenceReport, config: MetricsConfig | None = None) -> dict[str, float]:
    """The report.json mapping."""
    config = config or MetricsConfig()
    accuracy = float(np.mean(report.id_correct))
    return {
        "id_mmc": mmc(report.id_scores),
        "ood_mmc": mmc(report.ood_scores),
        "auroc": auroc(report.id_scores, report.ood_scores),
        "fpr95": fpr_at_tpr(report.id_scores, report.ood_scores, config.tpr_target),
        "ece": ece(report.id_scores, report.id_correct, config.ece_bins),
        "id_accuracy": accuracy,
        "id_error": 1.0 - accuracy,
    }


def histogram_rows(report: ConfidenceReport, bins: int) -> list[tuple[str, float, float, int]]:
    rows = []
    for split, scores in (("id", report.id_scores), ("ood", report.ood_scores)):
        rows.extend((split, lo, hi, count) for lo, hi, count in confidence_histogram(scores, bins))
    return rows
