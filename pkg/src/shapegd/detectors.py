"""Local detectors (LDs).

Downstream modules only see which FVs raised an alert, so any scorer with a
``decide(coords, labels, rng) -> bool array`` method can stand in for a
trained per-host classifier. Three kinds ship here:

* ``gaussian``    - the stylized 1-D threshold test (alert iff value > 0)
* ``oracle_flip`` - ground-truth label flipped at fixed FP / FN rates
* ``external``    - a subprocess reading FV lines and printing 0/1 per line
"""

from __future__ import annotations

import subprocess
from dataclasses import dataclass
from typing import Iterator, Protocol, Sequence

import numpy as np

from .core import FvTable, Label, ProjectedFV

# (false-positive rate, false-negative rate)
WATERHOLE_OPERATING_POINT = (0.06, 1 - 0.924)
SYMANTEC_OPERATING_POINT = (0.05, 1 - 0.9047)


@dataclass(frozen=True)
class GaussianLdConfig:
    benign_mean: float = -1.0
    malicious_mean: float = 1.0
    sigma: float = 1.0
    alert_threshold: float = 0.0

    def __post_init__(self):
        if not self.sigma > 0:
            raise ValueError("sigma must be positive")

    def mean(self, label: Label) -> float:
        return self.malicious_mean if label == Label.MALICIOUS else self.benign_mean


@dataclass(frozen=True)
class LdDecision:
    is_alert: bool
    fv: ProjectedFV


class Scorer(Protocol):
    def decide(self, coords: np.ndarray, labels: np.ndarray, rng: np.random.Generator) -> np.ndarray: ...


def gaussian_sample(label: Label, rng: np.random.Generator, cfg: GaussianLdConfig = GaussianLdConfig(),
                    entity_id: str = "", timestamp: float = 0.0) -> ProjectedFV:
    return ProjectedFV([rng.normal(cfg.mean(label), cfg.sigma)], entity_id, timestamp, label)


def gaussian_samples(labels: np.ndarray, rng: np.random.Generator,
                     cfg: GaussianLdConfig = GaussianLdConfig()) -> np.ndarray:
    """Vectorised draws; returns an (n, 1) array."""
    labels = np.asarray(labels)
    means = np.where(labels == Label.MALICIOUS, cfg.malicious_mean, cfg.benign_mean)
    return rng.normal(means, cfg.sigma).reshape(-1, 1)


def gaussian_ld(fv: ProjectedFV, cfg: GaussianLdConfig = GaussianLdConfig()) -> LdDecision:
    if fv.coords.size != 1:
        raise ValueError(f"the Gaussian LD takes 1-D FVs, got {fv.coords.size} coords")
    return LdDecision(bool(fv.coords[0] > cfg.alert_threshold), fv)


@dataclass(frozen=True)
class GaussianScorer:
    cfg: GaussianLdConfig = GaussianLdConfig()

    def decide(self, coords, labels, rng):
        coords = np.asarray(coords, dtype=float)
        if coords.ndim != 2 or coords.shape[1] != 1:
            raise ValueError(f"the Gaussian LD takes 1-D FVs, got shape {coords.shape}")
        return coords[:, 0] > self.cfg.alert_threshold


@dataclass(frozen=True)
class OracleFlipScorer:
    """Alerts on malicious FVs with prob 1 - fn_rate and on benign ones with prob fp_rate."""

    fp_rate: float = WATERHOLE_OPERATING_POINT[0]
    fn_rate: float = WATERHOLE_OPERATING_POINT[1]

    def __post_init__(self):
        for name in ("fp_rate", "fn_rate"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"{name} must be in [0, 1]")

    def decide(self, coords, labels, rng):
        labels = np.asarray(labels)
        u = rng.random(labels.shape[0])
        return np.where(labels == Label.MALICIOUS, u >= self.fn_rate, u < self.fp_rate)


@dataclass(frozen=True)
class ConstantScorer:
    value: bool

    def decide(self, coords, labels, rng):
        return np.full(np.asarray(labels).shape[0], self.value, dtype=bool)


@dataclass(frozen=True)
class ExternalScorer:
    """Pipe FVs through a command: one comma-separated FV per stdin line, one 0/1 per stdout line."""

    command: tuple[str, ...]
    timeout: float | None = None

    def decide(self, coords, labels, rng):
        coords = np.asarray(coords, dtype=float)
        payload = "".join(",".join(repr(float(v)) for v in row) + "\n" for row in coords)
        proc = subprocess.run(
            list(self.command), input=payload, capture_output=True, text=True,
            timeout=self.timeout, check=False,
        )
        if proc.returncode != 0:
            raise RuntimeError(f"external scorer exited with {proc.returncode}: {proc.stderr.strip()}")
        out = proc.stdout.split()
        if len(out) != coords.shape[0] or any(tok not in ("0", "1") for tok in out):
            raise RuntimeError(
                f"external scorer must print one 0/1 per FV; got {len(out)} tokens for {coords.shape[0]} FVs"
            )
        return np.array([tok == "1" for tok in out], dtype=bool)


def make_scorer(kind: str, **params) -> Scorer:
    """Build a scorer from the ``detector.kind`` config key."""
    if kind == "gaussian":
        return GaussianScorer(GaussianLdConfig(**params))
    if kind == "oracle_flip":
        return OracleFlipScorer(**params)
    if kind == "external":
        cmd = params.pop("command")
        if isinstance(cmd, str):
            cmd = cmd.split()
        return ExternalScorer(tuple(cmd), **params)
    if kind in ("always", "never"):
        return ConstantScorer(kind == "always")
    raise ValueError(f"unknown detector kind {kind!r}")


def replay_ld(corpus: FvTable, scorer: Scorer, rng: np.random.Generator) -> Iterator[LdDecision]:
    """Pass every FV of a recorded corpus through the scorer, preserving order."""
    alerts = scorer.decide(corpus.values, corpus.labels, rng)
    for fv, hit in zip(corpus.projected_fvs(), alerts):
        yield LdDecision(bool(hit), fv)


def alert_fvs(decisions: Sequence[LdDecision] | Iterator[LdDecision]) -> list[ProjectedFV]:
    return [d.fv for d in decisions if d.is_alert]


def synthetic_corpus(n: int, L: int, label: Label, rng: np.random.Generator,
                     cfg: GaussianLdConfig = GaussianLdConfig(), prefix: str = "fv") -> FvTable:
    """n independent FVs with every coordinate ~ N(class mean, sigma)."""
    label = Label(label)
    values = rng.normal(cfg.mean(label), cfg.sigma, size=(n, L))
    return FvTable(
        tuple(f"{prefix}{i}" for i in range(n)),
        np.arange(n, dtype=float),
        np.full(n, int(label), dtype=np.int8),
        values,
    )
