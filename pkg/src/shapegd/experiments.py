"""Builders that turn an ExperimentConfig into runnable pieces (shared by the CLI and tests)."""

from __future__ import annotations

import itertools
from typing import Sequence

import numpy as np

from .baselines import CountBenchmark
from .config import ExperimentConfig
from .core import FvTable, Label, read_fv_corpus
from .detectors import GaussianLdConfig, Scorer, make_scorer, synthetic_corpus
from .neighborhoods import NtwConfig
from .rng import child_rng, derive_seed
from .shape import ShapeThreshold, calibrate_from_corpus
from .simulator import SweepSetting, Trace, TraceConfig, WaterholeScenario, read_netflow


def build_scorer(cfg: ExperimentConfig) -> Scorer:
    return make_scorer(cfg.detector.kind, **cfg.detector.scorer_params())


def trace_config(cfg: ExperimentConfig) -> TraceConfig:
    t = cfg.trace
    if t.zipf_exponent is not None:
        return TraceConfig(t.n_clients, t.n_servers, t.duration, t.client_rate, t.zipf_exponent)
    return TraceConfig.calibrated(t.n_clients, t.n_servers, t.duration, t.client_rate, t.hot_rate)


def trace_source(cfg: ExperimentConfig) -> TraceConfig | Trace:
    return read_netflow(cfg.trace.path) if cfg.trace.path else trace_config(cfg)


def synthetic_corpora(L: int, n: int, seed: int) -> tuple[FvTable, FvTable]:
    """Benign N(-1, 1)^L and malicious N(+1, 1)^L corpora of ``n`` FVs each."""
    g = GaussianLdConfig()
    ben = synthetic_corpus(n, L, Label.BENIGN, child_rng(seed, "corpus", "benign"), g, "b")
    mal = synthetic_corpus(n, L, Label.MALICIOUS, child_rng(seed, "corpus", "malicious"), g, "m")
    return ben, mal


def stream_corpora(cfg: ExperimentConfig) -> tuple[np.ndarray, np.ndarray]:
    if bool(cfg.stream.benign) != bool(cfg.stream.malicious):
        raise ValueError("stream.benign and stream.malicious must both be set or both be empty")
    if cfg.stream.benign:
        return read_fv_corpus(cfg.stream.benign).values, read_fv_corpus(cfg.stream.malicious).values
    ben, mal = synthetic_corpora(cfg.histogram.L, cfg.stream.synthetic_size, derive_seed(cfg.seed, "stream"))
    return ben.values, mal.values


def calibrate_threshold(cfg: ExperimentConfig, corpus: FvTable | np.ndarray,
                        labels: np.ndarray | None = None) -> tuple[ShapeThreshold, np.ndarray]:
    """Run the LD over a benign corpus and calibrate gamma from its false positives."""
    values = corpus.values if isinstance(corpus, FvTable) else np.asarray(corpus, dtype=float)
    if values.ndim == 1:
        values = values[:, None]
    if labels is None:
        labels = corpus.labels if isinstance(corpus, FvTable) else np.zeros(values.shape[0], np.int8)
    if values.shape[1] != cfg.histogram.L:
        raise ValueError(f"corpus has {values.shape[1]} dimensions but histogram.L is {cfg.histogram.L}")
    alerts = build_scorer(cfg).decide(values, labels, child_rng(cfg.seed, "calibrate", "ld"))
    t = cfg.threshold
    return calibrate_from_corpus(values, alerts, cfg.histogram.b, t.percentile, child_rng(cfg.seed, "calibrate"),
                                 t.neighborhood_fvs, t.n_neighborhoods)


def waterhole_scenario(cfg: ExperimentConfig, threshold: ShapeThreshold) -> WaterholeScenario:
    if threshold.config.L != cfg.histogram.L:
        raise ValueError(f"threshold has L={threshold.config.L} but histogram.L is {cfg.histogram.L}")
    ben, mal = stream_corpora(cfg)
    a = cfg.attack
    return WaterholeScenario(
        trace_source(cfg), ben, mal, build_scorer(cfg), threshold,
        (float(a.compromise_window[0]), float(a.compromise_window[1])), a.waterhole_server,
        cfg.stream.fv_rate, cfg.stream.min_fvs, cfg.threshold.min_alerts,
    )


def _ntw(window_len: float, stride: float | None) -> NtwConfig:
    return NtwConfig(float(window_len), None if stride is None else float(stride))


def sweep_settings(cfg: ExperimentConfig) -> list[SweepSetting]:
    """Cartesian product of sweep.ntw x sweep.partitions x infection probabilities."""
    probs: Sequence[float] = cfg.sweep.infection_probs or [cfg.attack.infection_prob]
    out = []
    for w, part, p in itertools.product(cfg.sweep.ntw, cfg.sweep.partitions, probs):
        name = f"ntw={float(w):g}/{part}/p={float(p):g}"
        out.append(SweepSetting(name, _ntw(w, cfg.ntw.stride), str(part), float(p)))
    return out


def count_benchmark(cfg: ExperimentConfig) -> CountBenchmark:
    c = cfg.count
    return CountBenchmark.draw(child_rng(cfg.seed, "count"), n=c.n, size_range=(c.size_min, c.size_max),
                               fp_rate=c.fp_rate, tp_rate=c.tp_rate, infected_fraction=c.infected_fraction,
                               fp_spread=c.fp_spread)
