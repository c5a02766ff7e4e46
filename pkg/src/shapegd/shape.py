"""ShapeScore, threshold calibration and the neighborhood decision.

A neighborhood's alert-FVs are binned into a vector-histogram and compared
row by row with a benign reference histogram (built from local-detector false
positives) using the 1-D Wasserstein distance on the bin lattice. Scores
above a calibrated threshold mark the neighborhood malicious.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Protocol, Sequence

import numpy as np

from .core import (
    HistogramConfig,
    Label,
    ProjectedFV,
    VectorHistogram,
    bin_indices,
    build_vector_histogram,
    coords_matrix,
    fit_edges,
    histogram_from_bins,
)

DEFAULT_MIN_ALERTS = 100


def wasserstein_1d(p: np.ndarray, q: np.ndarray) -> float:
    """Sum over bins of the absolute cumulative difference between two histograms."""
    p = np.asarray(p, dtype=float)
    q = np.asarray(q, dtype=float)
    if p.shape != q.shape or p.ndim != 1:
        raise ValueError(f"histogram rows must be 1-D with equal length, got {p.shape} and {q.shape}")
    return float(np.abs(np.cumsum(p - q)).sum())


def shape_score(h: VectorHistogram, ref: VectorHistogram) -> float:
    if h.widths != ref.widths:
        raise ValueError(f"histogram layout {h.widths[:3]}... does not match reference {ref.widths[:3]}...")
    if h.is_uniform():
        return float(np.abs(np.cumsum(h.matrix() - ref.matrix(), axis=1)).sum())
    return float(sum(wasserstein_1d(a, b) for a, b in zip(h.rows, ref.rows)))


def calibrate(benign_scores: Sequence[float], percentile: float) -> float:
    """Nearest-rank percentile: the k-th smallest score, k = ceil(percentile/100 * n)."""
    scores = np.sort(np.asarray(benign_scores, dtype=float))
    if scores.size == 0:
        raise ValueError("cannot calibrate on an empty score set")
    if not 0 < percentile <= 100:
        raise ValueError("percentile must be in (0, 100]")
    # rounding guards against 99.9 * 1000 / 100 landing a hair above an integer
    k = math.ceil(round(percentile * scores.size / 100, 9))
    return float(scores[min(max(k, 1), scores.size) - 1])


@dataclass(frozen=True)
class ShapeThreshold:
    gamma: float
    reference: VectorHistogram
    percentile: float
    config: HistogramConfig

    def __post_init__(self):
        if not math.isfinite(self.gamma):
            raise ValueError("gamma must be finite")
        if not 0 < self.percentile <= 100:
            raise ValueError("percentile must be in (0, 100]")
        if self.reference.sample_count == 0:
            raise ValueError("reference histogram is empty")
        if self.reference.widths != (self.config.b,) * self.config.L:
            raise ValueError("reference histogram does not match the histogram config")


@dataclass(frozen=True)
class NeighborhoodVerdict:
    score: float
    label: Label
    alert_count: int
    below_floor: bool = False

    @property
    def malicious(self) -> bool:
        return self.label is Label.MALICIOUS


class NeighborhoodClassifier(Protocol):
    """Anything that turns a neighborhood's vector-histogram into a verdict.

    The Wasserstein threshold test below is the built-in implementation; a
    trained model (e.g. boosted trees over ``hist.flatten()``) can be dropped in.
    """

    def classify(self, hist: VectorHistogram) -> NeighborhoodVerdict: ...


def build_reference(benign_fp_alert_fvs: Sequence[ProjectedFV] | np.ndarray, cfg: HistogramConfig) -> VectorHistogram:
    """Reference histogram from LD false positives collected on malware-free runs."""
    x = coords_matrix(benign_fp_alert_fvs, cfg.L)
    if x.shape[0] == 0:
        raise ValueError("reference needs at least one false-positive alert-FV")
    return build_vector_histogram(x, cfg)


def verdict_for_histogram(
    hist: VectorHistogram, thr: ShapeThreshold, min_alerts: int = DEFAULT_MIN_ALERTS
) -> NeighborhoodVerdict:
    n = hist.sample_count
    if n == 0:
        return NeighborhoodVerdict(0.0, Label.BENIGN, 0, below_floor=min_alerts > 0)
    score = shape_score(hist, thr.reference)
    below = n < min_alerts
    label = Label.MALICIOUS if (score > thr.gamma and not below) else Label.BENIGN
    return NeighborhoodVerdict(score, label, n, below_floor=below)


def classify_neighborhood(
    alert_fvs: Sequence[ProjectedFV] | np.ndarray,
    cfg: HistogramConfig,
    thr: ShapeThreshold,
    min_alerts: int = DEFAULT_MIN_ALERTS,
) -> NeighborhoodVerdict:
    if cfg.L != thr.config.L or cfg.b != thr.config.b:
        raise ValueError("histogram config does not match the threshold's reference layout")
    return verdict_for_histogram(build_vector_histogram(alert_fvs, cfg), thr, min_alerts)


@dataclass(frozen=True)
class ShapeClassifier:
    threshold: ShapeThreshold
    min_alerts: int = DEFAULT_MIN_ALERTS

    def classify(self, hist: VectorHistogram) -> NeighborhoodVerdict:
        return verdict_for_histogram(hist, self.threshold, self.min_alerts)


def calibrate_from_corpus(
    values: np.ndarray,
    alerts: np.ndarray,
    b: int,
    percentile: float,
    rng: np.random.Generator,
    neighborhood_fvs: int = 15_000,
    n_neighborhoods: int = 500,
) -> tuple[ShapeThreshold, np.ndarray]:
    """Fit edges, reference and gamma from a benign corpus and its LD decisions.

    The corpus is split in two halves: false positives of the first half give
    the bin edges and the reference histogram; benign neighborhoods of
    ``neighborhood_fvs`` FVs resampled from the second half give the score
    distribution whose percentile becomes gamma. Returns the threshold and
    the calibration scores.
    """
    values = np.asarray(values, dtype=float)
    alerts = np.asarray(alerts, dtype=bool)
    n = values.shape[0]
    if n < 2:
        raise ValueError("calibration corpus needs at least two FVs")
    order = rng.permutation(n)
    ref_idx, cal_idx = order[: n // 2], order[n // 2 :]
    fp = values[ref_idx[alerts[ref_idx]]]
    if fp.shape[0] == 0:
        raise ValueError("the detector raised no false positives on the reference half")
    cfg = fit_edges(fp, b)
    reference = build_reference(fp, cfg)

    cal_alert_bins = bin_indices(values[cal_idx[alerts[cal_idx]]], cfg)
    cal_alert_pos = np.flatnonzero(alerts[cal_idx])
    # map position-in-calibration-half -> row in cal_alert_bins
    lookup = np.full(cal_idx.size, -1, dtype=np.int64)
    lookup[cal_alert_pos] = np.arange(cal_alert_pos.size)

    scores = np.empty(n_neighborhoods)
    for i in range(n_neighborhoods):
        picks = rng.integers(0, cal_idx.size, size=neighborhood_fvs)
        rows = lookup[picks]
        rows = rows[rows >= 0]
        scores[i] = shape_score(histogram_from_bins(cal_alert_bins[rows], cfg), reference)
    gamma = calibrate(scores, percentile)
    return ShapeThreshold(gamma, reference, percentile, cfg), scores


# --------------------------------------------------------------------------
# threshold file


def threshold_to_dict(thr: ShapeThreshold) -> dict:
    return {
        "format": "shapegd-threshold/1",
        "gamma": thr.gamma,
        "percentile": thr.percentile,
        "L": thr.config.L,
        "b": thr.config.b,
        "edges": thr.config.edges.tolist(),
        "reference": {
            "sample_count": thr.reference.sample_count,
            "rows": [r.tolist() for r in thr.reference.rows],
        },
    }


def threshold_from_dict(d: dict) -> ShapeThreshold:
    try:
        cfg = HistogramConfig(np.array(d["edges"], dtype=float))
        ref = VectorHistogram(np.array(d["reference"]["rows"], dtype=float), int(d["reference"]["sample_count"]))
        thr = ShapeThreshold(float(d["gamma"]), ref, float(d["percentile"]), cfg)
    except (KeyError, TypeError) as exc:
        raise ValueError(f"malformed threshold record: {exc}") from None
    if (cfg.L, cfg.b) != (d.get("L", cfg.L), d.get("b", cfg.b)):
        raise ValueError("threshold record L/b disagree with its edges")
    return thr


def save_threshold(path: str | Path, thr: ShapeThreshold, metadata: dict | None = None) -> None:
    # json writes floats with repr(), which round-trips bit-exactly
    d = threshold_to_dict(thr)
    if metadata:
        d["metadata"] = metadata
    Path(path).write_text(json.dumps(d, indent=1) + "\n")


def load_threshold(path: str | Path) -> ShapeThreshold:
    return threshold_from_dict(json.loads(Path(path).read_text()))
