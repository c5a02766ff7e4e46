"""Baseline global detectors: alert counting and farthest-point clustering."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .core import Label, ProjectedFV, coords_matrix
from .metrics import trapezoid_auc
from .shape import calibrate


@dataclass(frozen=True)
class CountGdConfig:
    """Alert-rate threshold applied to an (possibly mis-)estimated neighborhood size."""

    alert_rate_threshold: float
    size_error_pct: float = 0.0

    def __post_init__(self):
        if not 0 < self.alert_rate_threshold < 1:
            raise ValueError("alert_rate_threshold must be in (0, 1)")
        if not self.size_error_pct > -100:
            raise ValueError("size_error_pct must be > -100")


def estimated_size(true_size: int, size_error_pct: float) -> int:
    # half-up rounding; Python's round() would bank
    return int(math.floor(true_size * (1 + size_error_pct / 100) + 0.5))


def count_gd(alert_count: int, true_size: int, cfg: CountGdConfig) -> Label:
    if alert_count < 0 or true_size < 1:
        raise ValueError("alert_count must be >= 0 and true_size >= 1")
    est = estimated_size(true_size, cfg.size_error_pct)
    if est < 1:
        raise ValueError(f"estimated neighborhood size {est} < 1")
    return Label.MALICIOUS if alert_count > cfg.alert_rate_threshold * est else Label.BENIGN


def count_gd_batch(alert_counts: np.ndarray, true_sizes: np.ndarray, cfg: CountGdConfig) -> np.ndarray:
    """Vectorised :func:`count_gd`; returns a boolean 'malicious' mask."""
    est = np.floor(np.asarray(true_sizes) * (1 + cfg.size_error_pct / 100) + 0.5)
    if np.any(est < 1):
        raise ValueError("estimated neighborhood size < 1")
    return np.asarray(alert_counts) > cfg.alert_rate_threshold * est


@dataclass(frozen=True)
class CountBenchmark:
    """Synthetic neighborhoods for the Count-GD size-error sweep.

    Each neighborhood holds ``size`` FVs; benign ones alert at the LD false
    positive rate, malicious ones carry an ``infected_fraction`` of FVs that
    alert at the LD true-positive rate. With ``fp_spread > 0`` each
    neighborhood draws its own false-positive rate from a Beta distribution
    with mean ``fp_rate`` and coefficient of variation ``fp_spread``, so
    benign alert rates differ between neighborhoods beyond binomial noise.
    """

    sizes: np.ndarray
    benign_alerts: np.ndarray
    malicious_alerts: np.ndarray

    @classmethod
    def draw(cls, rng: np.random.Generator, n: int = 1000, size_range=(5_000, 30_000),
             fp_rate: float = 0.06, tp_rate: float = 0.924, infected_fraction: float = 0.029,
             fp_spread: float = 0.0) -> "CountBenchmark":
        sizes = rng.integers(size_range[0], size_range[1] + 1, size=n)
        rates = _beta_rates(rng, fp_rate, fp_spread, 2 * n)
        benign = rng.binomial(sizes, rates[:n])
        infected = np.floor(sizes * infected_fraction + 0.5).astype(np.int64)
        malicious = rng.binomial(sizes - infected, rates[n:]) + rng.binomial(infected, tp_rate)
        return cls(sizes, benign, malicious)


def _beta_rates(rng: np.random.Generator, mean: float, cv: float, n: int) -> np.ndarray:
    if cv <= 0:
        return np.full(n, mean)
    concentration = mean * (1 - mean) / (cv * mean) ** 2 - 1
    if concentration <= 0:
        raise ValueError(f"fp_spread {cv} is too large for fp_rate {mean}")
    return rng.beta(mean * concentration, (1 - mean) * concentration, size=n)


def calibrate_count_threshold(bench: CountBenchmark, percentile: float = 99.0) -> float:
    """Alert-rate threshold at a nearest-rank percentile of benign alert rates."""
    return calibrate(bench.benign_alerts / bench.sizes, percentile)


def count_gd_sweep(threshold: float, bench: CountBenchmark, errors: Sequence[float]) -> list[dict]:
    """FP/TP rate of Count-GD on a fixed benchmark for each size-estimation error."""
    rows = []
    n = bench.sizes.size
    for err in errors:
        cfg = CountGdConfig(threshold, err)
        fp = float(count_gd_batch(bench.benign_alerts, bench.sizes, cfg).mean())
        tp = float(count_gd_batch(bench.malicious_alerts, bench.sizes, cfg).mean())
        rows.append({
            "size_error_pct": float(err),
            "fp_rate": fp,
            "tp_rate": tp,
            "fp_sigma": math.sqrt(max(fp * (1 - fp), 1e-12) / n),
            "tp_sigma": math.sqrt(max(tp * (1 - tp), 1e-12) / n),
            "n_benign": n,
            "n_malicious": n,
        })
    return rows


# --------------------------------------------------------------------------
# clustering


@dataclass(frozen=True)
class Cluster:
    centroid: np.ndarray
    members: tuple[int, ...]
    creation_rank: int
    centroid_index: int


def cluster_fvs(fvs: Sequence[ProjectedFV] | np.ndarray, rng: np.random.Generator) -> list[Cluster]:
    """K-means variant that grows centroids at the farthest point (L1 distance).

    Starts from one random centroid; repeatedly promotes the FV farthest from
    its centroid and reassigns everything to its nearest centroid, until no FV
    lies farther from its centroid than half the mean pairwise centroid
    distance. Ties go to the lowest FV index.
    """
    x = coords_matrix(fvs)
    n = x.shape[0]
    if n == 0:
        raise ValueError("cannot cluster an empty FV set")
    first = int(rng.integers(n))
    centroids = [first]
    assign = np.zeros(n, dtype=np.int64)  # position in `centroids`
    dist = np.abs(x - x[first]).sum(axis=1)
    pair_sum = 0.0

    while True:
        k = len(centroids)
        bound = 0.5 * (pair_sum / (k * (k - 1) / 2)) if k > 1 else 0.0
        far = int(np.argmax(dist))
        if not dist[far] > bound:
            break
        new_d = np.abs(x - x[far]).sum(axis=1)
        pair_sum += float(sum(np.abs(x[far] - x[c]).sum() for c in centroids))
        current_fv = np.asarray(centroids)[assign]
        take = (new_d < dist) | ((new_d == dist) & (far < current_fv))
        centroids.append(far)
        assign[take] = k
        dist = np.where(take, new_d, dist)

    out = []
    for rank, c in enumerate(centroids):
        members = tuple(np.flatnonzero(assign == rank).tolist())
        out.append(Cluster(x[c].copy(), members, rank, c))
    return out


def clustering_roc(clusters: Sequence[Cluster], truths: Sequence[int]) -> tuple[list[tuple[float, float]], float]:
    """Flag clusters in creation order; one ROC point per cutoff, AUC by trapezoids."""
    y = np.asarray(truths).astype(bool)
    n_pos = int(y.sum())
    n_neg = y.size - n_pos
    points = [(0.0, 0.0)]
    tp = fp = 0
    for c in sorted(clusters, key=lambda c: c.creation_rank):
        m = y[list(c.members)]
        tp += int(m.sum())
        fp += int(m.size - m.sum())
        points.append((fp / n_neg if n_neg else 0.0, tp / n_pos if n_pos else 0.0))
    xs, ys = zip(*points)
    return points, trapezoid_auc(xs, ys)
