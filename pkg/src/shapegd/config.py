"""Experiment configuration: one YAML file, strict keys, command-line overrides.

Top-level sections and their keys are the dataclass fields below. Unknown
keys are rejected. ``apply_overrides`` takes ``section.key=value`` strings
whose values are parsed as YAML scalars or lists.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import yaml


class ConfigError(ValueError):
    pass


@dataclass
class DetectorSection:
    kind: str = "oracle_flip"  # gaussian | oracle_flip | external | always | never
    fp_rate: float = 0.06
    fn_rate: float = 0.076
    command: str = ""
    timeout: float | None = None

    def scorer_params(self) -> dict:
        if self.kind == "oracle_flip":
            return {"fp_rate": self.fp_rate, "fn_rate": self.fn_rate}
        if self.kind == "external":
            return {"command": self.command, "timeout": self.timeout}
        return {}


@dataclass
class HistogramSection:
    L: int = 10
    b: int = 50


@dataclass
class ThresholdSection:
    percentile: float = 99.0
    neighborhood_fvs: int = 15_000
    n_neighborhoods: int = 500
    min_alerts: int = 100


@dataclass
class NtwSection:
    window_len: float = 50.0
    stride: float | None = 1.0


@dataclass
class TraceSection:
    path: str = ""  # netflow file; empty = synthetic
    n_clients: int = 20_000
    n_servers: int = 50
    duration: float = 400.0
    client_rate: float = 0.025
    hot_rate: float = 43.7
    zipf_exponent: float | None = None  # overrides hot_rate when set


@dataclass
class AttackSection:
    waterhole_server: str = "s00"
    compromise_window: list = field(default_factory=lambda: [100.0, 200.0])
    infection_prob: float = 0.1


@dataclass
class StreamSection:
    fv_rate: float = 1.0
    min_fvs: int = 15_000
    benign: str = ""  # FV corpus files; empty = synthetic Gaussian corpora
    malicious: str = ""
    synthetic_size: int = 200_000


@dataclass
class SweepSection:
    ntw: list = field(default_factory=lambda: [50.0])
    partitions: list = field(default_factory=lambda: ["single"])
    infection_probs: list = field(default_factory=list)  # empty = attack.infection_prob
    reps: int = 1
    stop_on_detection: bool = False


@dataclass
class DownloaderSection:
    min_files: int = 1000
    window_start: float | None = None  # default: earliest edge timestamp


@dataclass
class CountSection:
    percentile: float = 99.0
    errors: list = field(default_factory=lambda: [-30, -20, -10, -5, 0, 5, 10, 20, 30])
    n: int = 1000
    size_min: int = 5_000
    size_max: int = 30_000
    fp_rate: float = 0.06
    tp_rate: float = 0.924
    infected_fraction: float = 0.029
    fp_spread: float = 0.1  # coefficient of variation of per-neighborhood FP rates


@dataclass
class ExperimentConfig:
    seed: int = 1
    detector: DetectorSection = field(default_factory=DetectorSection)
    histogram: HistogramSection = field(default_factory=HistogramSection)
    threshold: ThresholdSection = field(default_factory=ThresholdSection)
    ntw: NtwSection = field(default_factory=NtwSection)
    trace: TraceSection = field(default_factory=TraceSection)
    attack: AttackSection = field(default_factory=AttackSection)
    stream: StreamSection = field(default_factory=StreamSection)
    sweep: SweepSection = field(default_factory=SweepSection)
    downloader: DownloaderSection = field(default_factory=DownloaderSection)
    count: CountSection = field(default_factory=CountSection)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def hash(self) -> str:
        """Short digest of the canonical resolved configuration."""
        blob = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()[:16]

    def validate(self) -> "ExperimentConfig":
        try:
            self._check()
        except ConfigError:
            raise
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"invalid config value: {exc}") from None
        return self

    def _check(self) -> None:
        checks = [
            (self.detector.kind in ("gaussian", "oracle_flip", "external", "always", "never"),
             f"detector.kind {self.detector.kind!r} is not one of gaussian, oracle_flip, external, always, never"),
            (self.detector.kind != "external" or bool(self.detector.command),
             "detector.command is required for the external detector"),
            (0 <= self.detector.fp_rate <= 1 and 0 <= self.detector.fn_rate <= 1, "detector rates must be in [0, 1]"),
            (self.histogram.L >= 1, "histogram.L must be >= 1"),
            (2 <= self.histogram.b <= 1024, "histogram.b must be in [2, 1024]"),
            (0 < self.threshold.percentile <= 100, "threshold.percentile must be in (0, 100]"),
            (self.threshold.neighborhood_fvs >= 1 and self.threshold.n_neighborhoods >= 1,
             "threshold.neighborhood_fvs and threshold.n_neighborhoods must be >= 1"),
            (self.threshold.min_alerts >= 0, "threshold.min_alerts must be >= 0"),
            (self.ntw.window_len > 0 and (self.ntw.stride is None or self.ntw.stride > 0),
             "ntw.window_len and ntw.stride must be > 0"),
            (self.trace.n_clients >= 1 and self.trace.n_servers >= 1, "trace sizes must be >= 1"),
            (self.trace.duration >= 0 and self.trace.client_rate > 0, "trace.duration >= 0 and client_rate > 0"),
            (len(self.attack.compromise_window) == 2
             and 0 <= self.attack.compromise_window[0] <= self.attack.compromise_window[1],
             "attack.compromise_window must be [t0, t1] with 0 <= t0 <= t1"),
            (0 <= self.attack.infection_prob <= 1, "attack.infection_prob must be in [0, 1]"),
            (self.stream.fv_rate > 0 and self.stream.min_fvs >= 0, "stream.fv_rate > 0 and stream.min_fvs >= 0"),
            (self.sweep.reps >= 1, "sweep.reps must be >= 1"),
            (len(self.sweep.ntw) >= 1 and all(float(w) > 0 for w in self.sweep.ntw), "sweep.ntw must list positive lengths"),
            (all(0 <= float(p) <= 1 for p in self.sweep.infection_probs), "sweep.infection_probs must be in [0, 1]"),
            (self.downloader.min_files >= 1, "downloader.min_files must be >= 1"),
            (0 < self.count.percentile <= 100 and self.count.n >= 1, "count.percentile in (0, 100] and count.n >= 1"),
            (all(float(e) > -100 for e in self.count.errors), "count.errors must be > -100"),
            (self.count.fp_spread >= 0, "count.fp_spread must be >= 0"),
            (1 <= self.count.size_min <= self.count.size_max, "count sizes must satisfy 1 <= size_min <= size_max"),
        ]
        for ok, msg in checks:
            if not ok:
                raise ConfigError(msg)
        for spec in self.sweep.partitions:
            if spec not in ("single", "per_server", "isolate") and not str(spec).startswith("groups:"):
                raise ConfigError(f"sweep.partitions entry {spec!r} is not single, per_server, isolate or groups:<k>")
            if str(spec).startswith("groups:") and int(str(spec).split(":", 1)[1]) < 1:
                raise ConfigError("groups:<k> needs k >= 1")
        t = self.trace
        if not t.path and t.zipf_exponent is None:
            share = t.hot_rate / (t.n_clients * t.client_rate)
            if not 1.0 / t.n_servers <= share < 1.0:
                raise ConfigError(
                    f"trace.hot_rate {t.hot_rate} is a {share:.3g} share of all requests; "
                    f"it must lie in [1/n_servers, 1)"
                )


def _build(cls, data: Any, where: str):
    if not isinstance(data, dict):
        raise ConfigError(f"{where or 'config'} must be a mapping")
    fields = {f.name: f for f in dataclasses.fields(cls)}
    unknown = sorted(set(data) - set(fields))
    if unknown:
        raise ConfigError(f"unknown key(s) in {where or 'config'}: {', '.join(unknown)}")
    kwargs = {}
    for name, value in data.items():
        f = fields[name]
        default = f.default_factory() if f.default_factory is not dataclasses.MISSING else f.default
        path = f"{where}.{name}" if where else name
        if dataclasses.is_dataclass(default):
            kwargs[name] = _build(type(default), value or {}, path)
        else:
            kwargs[name] = _coerce(value, default, path)
    return cls(**kwargs)


def _coerce(value, default, path):
    if value is None:
        return value
    if default is None:  # optional numeric fields
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{path} must be a number or null")
        return float(value)
    if isinstance(default, bool):
        if not isinstance(value, bool):
            raise ConfigError(f"{path} must be true or false")
        return value
    if isinstance(default, int) and not isinstance(default, bool):
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"{path} must be an integer")
        return value
    if isinstance(default, float):
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{path} must be a number")
        return float(value)
    if isinstance(default, str):
        if not isinstance(value, str):
            raise ConfigError(f"{path} must be a string")
        return value
    if isinstance(default, list):
        if not isinstance(value, list):
            raise ConfigError(f"{path} must be a list")
        return value
    return value


def config_from_dict(data: dict) -> ExperimentConfig:
    return _build(ExperimentConfig, data, "").validate()


def apply_overrides(data: dict, overrides: list[str]) -> dict:
    """Apply ``a.b=value`` overrides to a raw config mapping (returns a new dict)."""
    out = json.loads(json.dumps(data))
    for item in overrides:
        if "=" not in item:
            raise ConfigError(f"override {item!r} is not key=value")
        key, raw = item.split("=", 1)
        try:
            value = yaml.safe_load(raw)
        except yaml.YAMLError as exc:
            raise ConfigError(f"override {key}: {exc}") from None
        node = out
        parts = key.strip().split(".")
        for p in parts[:-1]:
            node = node.setdefault(p, {})
            if not isinstance(node, dict):
                raise ConfigError(f"override {key}: {p} is not a section")
        node[parts[-1]] = value
    return out


def load_config(path: str | Path | None, overrides: list[str] = ()) -> ExperimentConfig:
    data: dict = {}
    if path is not None:
        try:
            text = Path(path).read_text()
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from None
        try:
            data = yaml.safe_load(text) or {}
        except yaml.YAMLError as exc:
            raise ConfigError(f"{path}: {exc}") from None
    return config_from_dict(apply_overrides(data, list(overrides)))


def dump_config(cfg: ExperimentConfig) -> str:
    return yaml.safe_dump(cfg.to_dict(), sort_keys=False)
