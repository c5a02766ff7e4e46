"""ROC/AUC, precision/recall/F1, score-histogram overlap and detection summaries."""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np


@dataclass(frozen=True)
class RocCurve:
    fpr: np.ndarray
    tpr: np.ndarray
    thresholds: np.ndarray
    auc: float


def trapezoid_auc(fpr: Sequence[float], tpr: Sequence[float]) -> float:
    x = np.asarray(fpr, dtype=float)
    y = np.asarray(tpr, dtype=float)
    return float(np.sum((x[1:] - x[:-1]) * (y[1:] + y[:-1]) / 2.0))


def roc_auc(scores: Sequence[float], truths: Sequence[int]) -> RocCurve:
    """Sweep a threshold over the distinct scores (high = more malicious).

    Equal scores are crossed together, so ties contribute a diagonal segment.
    """
    s = np.asarray(scores, dtype=float)
    y = np.asarray(truths).astype(bool)
    if s.shape != y.shape or s.ndim != 1:
        raise ValueError("scores and truths must be 1-D and the same length")
    if not np.all(np.isfinite(s)):
        raise ValueError("scores must be finite")
    n_pos = int(y.sum())
    n_neg = y.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise ValueError("ROC needs at least one positive and one negative")
    order = np.argsort(-s, kind="stable")
    s, y = s[order], y[order]
    last = np.r_[np.flatnonzero(np.diff(s) != 0), s.size - 1]
    tp = np.cumsum(y)[last]
    fp = np.cumsum(~y)[last]
    fpr = np.r_[0.0, fp / n_neg]
    tpr = np.r_[0.0, tp / n_pos]
    thresholds = np.r_[np.inf, s[last]]
    return RocCurve(fpr, tpr, thresholds, trapezoid_auc(fpr, tpr))


def prf1(tp: int, fp: int, fn: int) -> tuple[float, float, float]:
    if min(tp, fp, fn) < 0:
        raise ValueError("counts must be non-negative")
    precision = tp / (tp + fp) if tp + fp else 0.0
    recall = tp / (tp + fn) if tp + fn else 0.0
    f1 = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
    return precision, recall, f1


def f1_from(precision: float, recall: float) -> float:
    return 2 * precision * recall / (precision + recall) if precision + recall else 0.0


@dataclass(frozen=True)
class ScoreHistogram:
    edges: np.ndarray
    benign: np.ndarray
    malicious: np.ndarray
    overlap: float


def score_histogram(benign: Sequence[float], malicious: Sequence[float], bins: int = 50) -> ScoreHistogram:
    """Normalised histograms of both score sets on shared edges, plus their overlap mass."""
    b = np.asarray(benign, dtype=float)
    m = np.asarray(malicious, dtype=float)
    if b.size == 0 or m.size == 0:
        raise ValueError("both score sets must be non-empty")
    lo = min(b.min(), m.min())
    hi = max(b.max(), m.max())
    if lo == hi:
        lo, hi = lo - 0.5, hi + 0.5
    edges = np.linspace(lo, hi, bins + 1)
    hb = np.histogram(b, edges)[0] / b.size
    hm = np.histogram(m, edges)[0] / m.size
    return ScoreHistogram(edges, hb, hm, float(np.minimum(hb, hm).sum()))


@dataclass(frozen=True)
class Summary:
    n: int
    mean: float
    median: float
    p01: float
    p99: float


def summarize(values: Sequence[float]) -> Summary:
    v = np.asarray([x for x in values if x is not None and np.isfinite(x)], dtype=float)
    if v.size == 0:
        nan = float("nan")
        return Summary(0, nan, nan, nan, nan)
    return Summary(
        int(v.size), float(v.mean()), float(np.median(v)),
        float(np.percentile(v, 1)), float(np.percentile(v, 99)),
    )


def write_roc_csv(path: str | Path, curve: RocCurve) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["threshold", "fp_rate", "tp_rate"])
        for t, x, y in zip(curve.thresholds, curve.fpr, curve.tpr):
            w.writerow([repr(float(t)), repr(float(x)), repr(float(y))])


def write_json_summary(path: str | Path, payload: dict) -> None:
    Path(path).write_text(json.dumps(payload, indent=1, sort_keys=True, default=_jsonable) + "\n")


def _jsonable(obj):
    if isinstance(obj, np.generic):
        return obj.item()
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    raise TypeError(f"{type(obj).__name__} is not JSON serialisable")
