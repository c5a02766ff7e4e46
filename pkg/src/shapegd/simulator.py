"""Waterhole attack simulator.

A synthetic netflow trace is replayed on a one-second clock. One server is
compromised at a random instant and infects visiting clients; every client
emits FVs continuously (benign before infection, malicious after). The local
detector runs on each one-second batch and sliding windows of alerts are
grouped per server partition and scored by the shape classifier.
"""

from __future__ import annotations

import csv
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Iterator, Sequence

import numpy as np
from scipy.optimize import brentq

from .core import DataError, FvTable, Label, _open_text, bin_indices, histogram_from_counts
from .detectors import Scorer
from .metrics import summarize
from .neighborhoods import WATERHOLE_MIN_FVS, NtwConfig, StructuralPartition
from .rng import child_rng, derive_seed
from .shape import DEFAULT_MIN_ALERTS, NeighborhoodVerdict, ShapeThreshold, verdict_for_histogram

NETFLOW_HEADER = ("timestamp", "src", "dst", "src_port", "dst_port", "proto", "packets", "bytes")
SWEEP_HEADER = (
    "setting", "rep", "seed", "compromise_time", "detection_time",
    "infected_at_detection", "fp_windows", "windows_total",
)
HOT_SERVER_RATE = 43.7  # req/s seen by the busiest server


@dataclass(frozen=True)
class NetflowRecord:
    timestamp: float
    src: str
    dst: str
    src_port: int = 0
    dst_port: int = 0
    proto: int = 6
    packets: int = 1
    bytes: int = 0

    def __post_init__(self):
        if not self.timestamp >= 0:
            raise ValueError("timestamp must be >= 0")


@dataclass(frozen=True, eq=False)
class Trace:
    """Columnar netflow trace sorted by timestamp; clients/servers are indexed by name tables."""

    timestamps: np.ndarray
    src: np.ndarray
    dst: np.ndarray
    clients: tuple[str, ...]
    servers: tuple[str, ...]
    src_port: np.ndarray
    dst_port: np.ndarray
    proto: np.ndarray
    packets: np.ndarray
    bytes: np.ndarray

    def __len__(self) -> int:
        return int(self.timestamps.size)

    def __iter__(self) -> Iterator[NetflowRecord]:
        for i in range(len(self)):
            yield NetflowRecord(
                float(self.timestamps[i]), self.clients[self.src[i]], self.servers[self.dst[i]],
                int(self.src_port[i]), int(self.dst_port[i]), int(self.proto[i]),
                int(self.packets[i]), int(self.bytes[i]),
            )

    def server_index(self, server: str) -> int:
        try:
            return self.servers.index(server)
        except ValueError:
            raise ValueError(f"server {server!r} does not appear in the trace") from None

    def active_clients(self) -> int:
        return int(np.unique(self.src).size)

    @classmethod
    def from_records(cls, records: Iterable[NetflowRecord]) -> "Trace":
        recs = sorted(records, key=lambda r: r.timestamp)
        clients = tuple(sorted({r.src for r in recs}))
        servers = tuple(sorted({r.dst for r in recs}))
        ci = {c: i for i, c in enumerate(clients)}
        si = {s: i for i, s in enumerate(servers)}

        def col(name, dtype):
            return np.array([getattr(r, name) for r in recs], dtype=dtype)

        return cls(
            col("timestamp", float),
            np.array([ci[r.src] for r in recs], dtype=np.int64),
            np.array([si[r.dst] for r in recs], dtype=np.int64),
            clients, servers,
            col("src_port", np.int64), col("dst_port", np.int64), col("proto", np.int64),
            col("packets", np.int64), col("bytes", np.int64),
        )


@dataclass(frozen=True)
class TraceConfig:
    n_clients: int
    n_servers: int
    duration: float
    client_rate: float  # requests per second per client
    zipf_exponent: float = 1.0

    def __post_init__(self):
        if self.n_clients < 1 or self.n_servers < 1:
            raise ValueError("n_clients and n_servers must be >= 1")
        if self.duration < 0 or self.client_rate <= 0 or self.zipf_exponent < 0:
            raise ValueError("duration >= 0, client_rate > 0 and zipf_exponent >= 0 required")

    @property
    def total_rate(self) -> float:
        return self.n_clients * self.client_rate

    @classmethod
    def calibrated(cls, n_clients: int, n_servers: int, duration: float, client_rate: float,
                   hot_rate: float = HOT_SERVER_RATE) -> "TraceConfig":
        """Pick the Zipf exponent so the top server receives ``hot_rate`` requests per second."""
        share = hot_rate / (n_clients * client_rate)
        return cls(n_clients, n_servers, duration, client_rate, zipf_exponent_for_share(n_servers, share))


def zipf_weights(n_servers: int, exponent: float) -> np.ndarray:
    w = np.arange(1, n_servers + 1, dtype=float) ** -exponent
    return w / w.sum()


def zipf_exponent_for_share(n_servers: int, share: float) -> float:
    """Exponent s such that the rank-1 server gets ``share`` of all requests."""
    if not 1.0 / n_servers <= share < 1.0:
        raise ValueError(f"top-server share must be in [1/{n_servers}, 1), got {share}")
    if share == 1.0 / n_servers:
        return 0.0
    return float(brentq(lambda s: zipf_weights(n_servers, s)[0] - share, 0.0, 50.0, xtol=1e-12))


def generate_trace(cfg: TraceConfig, seed: int) -> Trace:
    """Poisson request arrivals per client, Zipf server popularity.

    Server ``s00`` is the most popular. Equal per-client rates make the
    superposed process Poisson with uniformly chosen clients.
    """
    rng = child_rng(seed, "trace")
    n = int(rng.poisson(cfg.total_rate * cfg.duration)) if cfg.duration > 0 else 0
    ts = np.sort(rng.uniform(0.0, cfg.duration, size=n))
    src = rng.integers(0, cfg.n_clients, size=n)
    dst = rng.choice(cfg.n_servers, size=n, p=zipf_weights(cfg.n_servers, cfg.zipf_exponent))
    cw, sw = len(str(cfg.n_clients - 1)), max(2, len(str(cfg.n_servers - 1)))
    packets = rng.geometric(0.1, size=n)
    return Trace(
        ts, src.astype(np.int64), dst.astype(np.int64),
        tuple(f"c{i:0{cw}d}" for i in range(cfg.n_clients)),
        tuple(f"s{i:0{sw}d}" for i in range(cfg.n_servers)),
        rng.integers(1024, 65536, size=n),
        np.where(rng.random(n) < 0.7, 443, 80),
        np.full(n, 6, dtype=np.int64),
        packets,
        packets * rng.integers(64, 1501, size=n),
    )


def write_netflow(path: str | Path, trace: Trace) -> None:
    with _open_text(path, "w") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(NETFLOW_HEADER)
        for r in trace:
            w.writerow([repr(r.timestamp), r.src, r.dst, r.src_port, r.dst_port, r.proto, r.packets, r.bytes])


def read_netflow(path: str | Path) -> Trace:
    records = []
    with _open_text(path) as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or tuple(h.strip() for h in header) != NETFLOW_HEADER:
            raise DataError(f"expected header {','.join(NETFLOW_HEADER)}", path, 1)
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(NETFLOW_HEADER):
                raise DataError(f"expected {len(NETFLOW_HEADER)} fields, got {len(row)}", path, lineno)
            try:
                ts = float(row[0])
                ints = [int(v) for v in row[3:]]
                records.append(NetflowRecord(ts, row[1], row[2], *ints))
            except ValueError as exc:
                raise DataError(str(exc), path, lineno) from None
    return Trace.from_records(records)


# --------------------------------------------------------------------------
# infection


@dataclass(frozen=True)
class AttackConfig:
    waterhole_server: str
    compromise_window: tuple[float, float]
    infection_prob: float
    seed: int

    def __post_init__(self):
        t0, t1 = self.compromise_window
        if not 0 <= t0 <= t1:
            raise ValueError("compromise_window must satisfy 0 <= t0 <= t1")
        if not 0.0 <= self.infection_prob <= 1.0:
            raise ValueError("infection_prob must be in [0, 1]")


@dataclass(frozen=True, eq=False)
class InfectionTimeline:
    compromise_time: float
    infected: dict[str, float]
    # per-client first infection time aligned with Trace.clients, inf when never infected
    times: np.ndarray = field(repr=False, default_factory=lambda: np.zeros(0))

    def count_before(self, t: float) -> int:
        return int(np.count_nonzero(self.times < t))


def simulate_infection(trace: Trace, attack: AttackConfig) -> InfectionTimeline:
    """Each visit to the compromised server after the compromise infects with ``infection_prob``."""
    server = trace.server_index(attack.waterhole_server)
    rng = child_rng(attack.seed, "infection")
    t0, t1 = attack.compromise_window
    compromise = float(rng.uniform(t0, t1)) if t1 > t0 else float(t0)
    visits = np.flatnonzero((trace.dst == server) & (trace.timestamps >= compromise))
    hits = visits[rng.random(visits.size) < attack.infection_prob]
    times = np.full(len(trace.clients), np.inf)
    # visits are time-ordered, so the first hit per client wins
    clients, first = np.unique(trace.src[hits], return_index=True)
    times[clients] = trace.timestamps[hits[first]]
    infected = {trace.clients[c]: float(times[c]) for c in clients}
    return InfectionTimeline(compromise, infected, times)


# --------------------------------------------------------------------------
# FV streams


@dataclass(frozen=True, eq=False)
class FvBatch:
    """All FVs emitted during one second; ``clients`` index into ``Trace.clients``."""

    second: int
    clients: np.ndarray
    timestamps: np.ndarray
    values: np.ndarray
    labels: np.ndarray

    def __len__(self) -> int:
        return int(self.clients.size)


def _corpus_values(corpus: FvTable | np.ndarray) -> np.ndarray:
    v = corpus.values if isinstance(corpus, FvTable) else np.asarray(corpus, dtype=float)
    if v.ndim == 1:
        v = v[:, None]
    if v.shape[0] == 0:
        raise ValueError("FV corpora must be non-empty")
    return v


def attach_fv_streams(
    trace: Trace,
    timeline: InfectionTimeline,
    benign: FvTable | np.ndarray,
    malicious: FvTable | np.ndarray,
    fv_rate: float = 1.0,
    seed: int = 0,
    duration: int | None = None,
) -> Iterator[FvBatch]:
    """Every client of the trace emits ``fv_rate`` FVs per second, drawn from the corpora.

    A fractional rate emits ``floor(rate)`` FVs plus one more with the
    fractional probability. FVs stamped at or after a client's infection time
    come from the malicious corpus.
    """
    if fv_rate <= 0:
        raise ValueError("fv_rate must be > 0")
    ben, mal = _corpus_values(benign), _corpus_values(malicious)
    if ben.shape[1] != mal.shape[1]:
        raise ValueError("benign and malicious corpora differ in dimension")
    n_clients = len(trace.clients)
    if duration is None:
        duration = int(math.ceil(trace.timestamps[-1])) if len(trace) else 0
    base, frac = int(math.floor(fv_rate)), fv_rate - math.floor(fv_rate)
    for t in range(duration):
        rng = child_rng(seed, "fv", t)
        # j-th of k FVs in this second is stamped t + j/k
        if frac:
            counts = base + (rng.random(n_clients) < frac).astype(np.int64)
            clients = np.repeat(np.arange(n_clients), counts)
            first = np.cumsum(counts) - counts
            offs = np.arange(clients.size) - np.repeat(first, counts)
            ts = t + offs / counts[clients]
        else:
            clients = np.repeat(np.arange(n_clients), base)
            ts = t + np.tile(np.arange(base) / base, n_clients)
        bad = ts >= timeline.times[clients] if timeline.times.size else np.zeros(clients.size, bool)
        vals = ben[rng.integers(0, ben.shape[0], size=clients.size)]
        n_bad = int(np.count_nonzero(bad))
        if n_bad:
            vals[bad] = mal[rng.integers(0, mal.shape[0], size=n_bad)]
        labels = np.where(bad, int(Label.MALICIOUS), int(Label.BENIGN)).astype(np.int8)
        yield FvBatch(t, clients, ts, vals, labels)


# --------------------------------------------------------------------------
# detection


@dataclass(frozen=True)
class DetectionOutcome:
    detected: bool
    detection_time: float | None
    infected_at_detection: int  # infected count at end of run when not detected
    fp_windows: int
    windows_total: int


@dataclass(frozen=True)
class WindowVerdict:
    window_start: int
    window_end: int
    partition: int
    fv_count: int
    infected: bool
    verdict: NeighborhoodVerdict | None  # None below the FV floor


def ld_rng(seed: int, second: int) -> np.random.Generator:
    """Random stream the local detector uses for the batch of ``second``."""
    return child_rng(seed, "ld", second)


def _server_partition_index(trace: Trace, partition: StructuralPartition) -> np.ndarray:
    owner = {s: i for i, p in enumerate(partition.partitions) for s in p}
    return np.array([owner.get(s, -1) for s in trace.servers], dtype=np.int64)


class _WindowState:
    """Per-partition window aggregates kept in step as seconds enter and leave.

    ``C[c]`` holds client ``c``'s in-window alert bin counts (L*b columns) and
    FV count (last column). ``H[p]`` is the sum of ``C`` over the clients that
    contacted partition ``p`` in the window; every update preserves that.
    """

    def __init__(self, trace: Trace, partition: StructuralPartition, L: int, b: int):
        self.n_clients = len(trace.clients)
        self.P = len(partition.partitions)
        self.width = L * b
        self.rec_part = _server_partition_index(trace, partition)[trace.dst]
        self.rec_src = trace.src
        rec_sec = np.floor(trace.timestamps).astype(np.int64)
        top = int(rec_sec[-1]) + 2 if len(trace) else 1
        self.sec_bounds = np.searchsorted(rec_sec, np.arange(top))
        self.visits = np.zeros((self.P, self.n_clients), dtype=np.int32)
        self.C = np.zeros((self.n_clients, self.width + 1), dtype=np.int32)
        self.H = np.zeros((self.P, self.width + 1), dtype=np.int64)
        self.data: dict[int, tuple[np.ndarray, np.ndarray, np.ndarray]] = {}

    def put(self, second: int, alert_clients: np.ndarray, flat_bins: np.ndarray, fv_per_client: np.ndarray):
        self.data[second] = (alert_clients, flat_bins, fv_per_client)

    def drop_before(self, second: int):
        for k in [k for k in self.data if k < second]:
            del self.data[k]

    def _visit_pairs(self, s: int):
        if s + 1 >= self.sec_bounds.size:
            return None
        sl = slice(self.sec_bounds[s], self.sec_bounds[s + 1])
        p, c = self.rec_part[sl], self.rec_src[sl]
        keep = p >= 0
        if not keep.any():
            return None
        pairs, counts = np.unique(p[keep] * self.n_clients + c[keep], return_counts=True)
        pp, cc = np.divmod(pairs, self.n_clients)
        return pp, cc, counts.astype(np.int32)

    def _visits(self, s: int, sign: int):
        got = self._visit_pairs(s)
        if got is None:
            return
        pp, cc, counts = got
        before = self.visits[pp, cc] > 0
        self.visits[pp, cc] += sign * counts
        after = self.visits[pp, cc] > 0
        flip = before != after
        for p in np.unique(pp[flip]):
            rows = cc[flip & (pp == p)]
            self.H[p] += sign * self.C[rows].sum(axis=0, dtype=np.int64)

    def _data(self, s: int, sign: int):
        if s not in self.data:
            return
        a_clients, flat, fv = self.data[s]
        L = flat.shape[1] if flat.ndim == 2 else 0
        rows = np.repeat(a_clients, L)
        cols = flat.ravel()
        cells, counts = np.unique(rows * self.C.shape[1] + cols, return_counts=True)
        self.C.reshape(-1)[cells] += sign * counts.astype(np.int32)
        self.C[:, -1] += sign * fv.astype(np.int32)
        for p in range(self.P):
            member = self.visits[p] > 0
            sel = member[rows]
            self.H[p, : self.width] += sign * np.bincount(cols[sel], minlength=self.width)
            self.H[p, -1] += sign * int(fv[member].sum())

    def add_second(self, s: int):
        self._visits(s, +1)
        self._data(s, +1)

    def remove_second(self, s: int):
        self._data(s, -1)
        self._visits(s, -1)


def run_detection(
    stream: Iterable[FvBatch],
    trace: Trace,
    timeline: InfectionTimeline,
    ntw: NtwConfig,
    partition: StructuralPartition,
    scorer: Scorer,
    threshold: ShapeThreshold,
    *,
    seed: int = 0,
    min_fvs: int = WATERHOLE_MIN_FVS,
    min_alerts: int = DEFAULT_MIN_ALERTS,
    threads: int = 1,
    stop_on_detection: bool = False,
    log: list | None = None,
) -> DetectionOutcome:
    """Slide windows over the stream and classify one neighborhood per partition.

    Windows are ``[s, s + window_len)`` for ``s = 0, stride, ...`` and are
    evaluated once the batch of their last second has arrived. A partition's
    neighborhood holds the clients that contacted any of its servers within
    the window; all their alerts from that window are scored. Neighborhoods
    with fewer than ``min_fvs`` member FVs give no verdict. Detection is the
    first malicious verdict on a neighborhood with a member infected before
    the window end; malicious verdicts on other neighborhoods count as
    false-positive windows. The local detector draws from
    ``ld_rng(seed, batch.second)``.
    """
    W, stride = ntw.window_len, ntw.stride
    if W != int(W) or stride != int(stride):
        raise ValueError("the simulator needs whole-second window_len and stride")
    W, stride = int(W), int(stride)
    if not partition.partitions:
        raise ValueError("structural partition is empty")
    cfg = threshold.config
    L, b = cfg.L, cfg.b
    st = _WindowState(trace, partition, L, b)
    n_clients = st.n_clients
    inf_times = timeline.times if timeline.times.size else np.full(n_clients, np.inf)
    inf_order = np.argsort(inf_times, kind="stable")
    inf_sorted = inf_times[inf_order]
    offsets = np.arange(L, dtype=np.int64) * b

    def classify(p: int, infected_now: np.ndarray):
        n_fv = int(st.H[p, -1])
        infected = bool(np.any(st.visits[p, infected_now] > 0))
        if n_fv < min_fvs:
            return p, n_fv, infected, None
        hist = histogram_from_counts(st.H[p, :-1].reshape(L, b))
        return p, n_fv, infected, verdict_for_histogram(hist, threshold, min_alerts)

    detection_time = None
    fp_windows = windows_total = 0
    next_start = 0
    lo = hi = 0  # seconds currently folded into the state
    pool = ThreadPoolExecutor(max_workers=threads) if threads > 1 else None
    try:
        for batch in stream:
            t = batch.second
            alerts = np.asarray(scorer.decide(batch.values, batch.labels, ld_rng(seed, t)), dtype=bool)
            bins = bin_indices(batch.values[alerts], cfg).astype(np.int64) + offsets
            st.put(t, batch.clients[alerts], bins, np.bincount(batch.clients, minlength=n_clients))
            while next_start + W <= t + 1:
                s, e = next_start, next_start + W
                next_start += stride
                if e != t + 1:
                    continue  # window ended before this batch (missing seconds)
                for k in range(lo, min(s, hi)):
                    st.remove_second(k)
                for k in range(max(hi, s), e):
                    st.add_second(k)
                lo, hi = s, e
                st.drop_before(s)
                infected_now = inf_order[: np.searchsorted(inf_sorted, e, side="left")]
                if pool is not None:
                    results = list(pool.map(lambda p: classify(p, infected_now), range(st.P)))
                else:
                    results = [classify(p, infected_now) for p in range(st.P)]
                any_verdict = fp_here = False
                for p, n_fv, infected, verdict in results:
                    if log is not None:
                        log.append(WindowVerdict(s, e, p, n_fv, infected, verdict))
                    if verdict is None:
                        continue
                    any_verdict = True
                    if verdict.malicious:
                        if infected:
                            if detection_time is None:
                                detection_time = float(e)
                        else:
                            fp_here = True
                windows_total += any_verdict
                fp_windows += fp_here
            st.drop_before(min(lo, next_start))
            if stop_on_detection and detection_time is not None:
                break
    finally:
        if pool is not None:
            pool.shutdown()

    if detection_time is None:
        return DetectionOutcome(False, None, int(np.count_nonzero(np.isfinite(inf_times))), fp_windows, windows_total)
    return DetectionOutcome(True, detection_time, timeline.count_before(detection_time), fp_windows, windows_total)


# --------------------------------------------------------------------------
# sweeps


def partition_from_spec(spec: str, servers: Sequence[str], waterhole: str) -> StructuralPartition:
    """``single``, ``per_server``, ``isolate`` (waterhole server alone) or ``groups:<k>``."""
    if spec == "single":
        return StructuralPartition.single(servers)
    if spec == "per_server":
        return StructuralPartition.per_server(servers)
    if spec == "isolate":
        return StructuralPartition.isolate(waterhole, servers)
    if spec.startswith("groups:"):
        return StructuralPartition.groups_of(servers, int(spec.split(":", 1)[1]))
    raise ValueError(f"unknown partition spec {spec!r}")


@dataclass(frozen=True)
class WaterholeScenario:
    """Everything a replay needs; ``trace`` is a generator config or a fixed recorded trace."""

    trace: TraceConfig | Trace
    benign: np.ndarray
    malicious: np.ndarray
    scorer: Scorer
    threshold: ShapeThreshold
    compromise_window: tuple[float, float]
    waterhole_server: str = "s00"
    fv_rate: float = 1.0
    min_fvs: int = WATERHOLE_MIN_FVS
    min_alerts: int = DEFAULT_MIN_ALERTS


@dataclass(frozen=True)
class SweepSetting:
    name: str
    ntw: NtwConfig
    partition: str = "single"
    infection_prob: float = 0.1


@dataclass(frozen=True)
class SweepRow:
    setting: str
    rep: int
    seed: int
    compromise_time: float
    detection_time: float | None
    infected_at_detection: int
    fp_windows: int
    windows_total: int
    active_clients: int = 0


def run_once(scn: WaterholeScenario, setting: SweepSetting, seed: int, threads: int = 1,
             trace: Trace | None = None, stop_on_detection: bool = False) -> tuple[DetectionOutcome, InfectionTimeline, Trace]:
    """One replay: trace, infection and FV streams all derive from ``seed``."""
    if trace is None:
        trace = _trace_for(scn, seed)
    attack = AttackConfig(scn.waterhole_server, scn.compromise_window, setting.infection_prob,
                          derive_seed(seed, "attack"))
    timeline = simulate_infection(trace, attack)
    if isinstance(scn.trace, TraceConfig):
        duration = int(math.floor(scn.trace.duration))
    else:
        duration = int(math.ceil(trace.timestamps[-1])) if len(trace) else 0
    stream = attach_fv_streams(trace, timeline, scn.benign, scn.malicious, scn.fv_rate,
                               derive_seed(seed, "stream"), duration)
    part = partition_from_spec(setting.partition, trace.servers, scn.waterhole_server)
    out = run_detection(stream, trace, timeline, setting.ntw, part, scn.scorer, scn.threshold,
                        seed=derive_seed(seed, "detector"), min_fvs=scn.min_fvs,
                        min_alerts=scn.min_alerts, threads=threads, stop_on_detection=stop_on_detection)
    return out, timeline, trace


def _trace_for(scn: WaterholeScenario, seed: int) -> Trace:
    return generate_trace(scn.trace, seed) if isinstance(scn.trace, TraceConfig) else scn.trace


def sweep(scn: WaterholeScenario, settings: Sequence[SweepSetting], reps: int, seed: int,
          threads: int = 1, stop_on_detection: bool = False) -> list[SweepRow]:
    """Repeat every setting ``reps`` times.

    Rep ``r`` uses the same seed for every setting, so settings are compared
    on common traces and FV streams.
    """
    if reps < 1:
        raise ValueError("reps must be >= 1")
    if len({s.name for s in settings}) != len(settings):
        raise ValueError("setting names must be unique")
    rows = []
    for rep in range(reps):
        rep_seed = derive_seed(seed, "rep", rep)
        trace = _trace_for(scn, rep_seed)
        active = trace.active_clients()
        for st in settings:
            out, tl, _ = run_once(scn, st, rep_seed, threads, trace, stop_on_detection)
            rows.append(SweepRow(st.name, rep, rep_seed, tl.compromise_time, out.detection_time,
                                 out.infected_at_detection, out.fp_windows, out.windows_total, active))
    return rows


def write_sweep_csv(path: str | Path, rows: Sequence[SweepRow], comments: Sequence[str] = ()) -> None:
    with open(path, "w", newline="") as fh:
        for line in comments:
            fh.write(f"# {line}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(SWEEP_HEADER)
        for r in rows:
            w.writerow([
                r.setting, r.rep, r.seed, repr(r.compromise_time),
                "" if r.detection_time is None else repr(r.detection_time),
                r.infected_at_detection, r.fp_windows, r.windows_total,
            ])


def read_sweep_csv(path: str | Path) -> list[SweepRow]:
    with open(path) as fh:
        lines = [ln for ln in fh if not ln.startswith("#")]
    rows = []
    for rec in csv.DictReader(lines):
        rows.append(SweepRow(
            rec["setting"], int(rec["rep"]), int(rec["seed"]), float(rec["compromise_time"]),
            float(rec["detection_time"]) if rec["detection_time"] else None,
            int(rec["infected_at_detection"]), int(rec["fp_windows"]), int(rec["windows_total"]),
        ))
    return rows


def summarize_sweep(rows: Sequence[SweepRow]) -> list[dict]:
    """Per setting (in first-seen order): detection rate and infected_at_detection stats over detected runs."""
    order: list[str] = []
    groups: dict[str, list[SweepRow]] = {}
    for r in rows:
        if r.setting not in groups:
            order.append(r.setting)
            groups[r.setting] = []
        groups[r.setting].append(r)
    out = []
    for name in order:
        g = groups[name]
        hit = [r.infected_at_detection for r in g if r.detection_time is not None]
        s = summarize(hit)
        fp = sum(r.fp_windows for r in g)
        total = sum(r.windows_total for r in g)
        stat = (lambda v: v if s.n else None)
        out.append({
            "setting": name,
            "reps": len(g),
            "detected": len(hit),
            "mean_infected": stat(s.mean),
            "median_infected": stat(s.median),
            "p01_infected": stat(s.p01),
            "p99_infected": stat(s.p99),
            "fp_window_rate": fp / total if total else 0.0,
        })
    return out
