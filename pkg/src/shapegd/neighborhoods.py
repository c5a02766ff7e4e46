"""Neighborhood formation from attack templates, once per time window.

Two templates are provided: clients grouped by the server partition they
contacted (waterhole), and files grouped around suspicious download domains
(downloader graphs). Small neighborhoods can then be merged, most malicious
first, until they reach a size floor.
"""

from __future__ import annotations

import csv
from collections import defaultdict, deque
from dataclasses import dataclass, field
from pathlib import Path
from typing import TYPE_CHECKING, Callable, Collection, Iterable, Mapping, Sequence

from .core import DataError, ProjectedFV, _open_text

if TYPE_CHECKING:
    from .simulator import NetflowRecord

ROOT = "-"
DOWNLOADER_MIN_FILES = 1000
WATERHOLE_MIN_FVS = 15_000


@dataclass(frozen=True)
class NtwConfig:
    window_len: float
    stride: float | None = None

    def __post_init__(self):
        stride = self.window_len if self.stride is None else self.stride
        if not self.window_len > 0:
            raise ValueError("window_len must be positive")
        if not 0 < stride <= self.window_len:
            raise ValueError("stride must be in (0, window_len]")
        object.__setattr__(self, "stride", float(stride))

    @classmethod
    def sliding(cls, window_len: float) -> "NtwConfig":
        return cls(window_len, 1.0)

    @classmethod
    def tumbling(cls, window_len: float) -> "NtwConfig":
        return cls(window_len, window_len)


@dataclass(frozen=True)
class Neighborhood:
    id: str
    members: frozenset
    window_start: float
    window_end: float
    seed: str = ""
    alert_fvs: tuple[ProjectedFV, ...] = field(default=(), compare=False)

    def __len__(self) -> int:
        return len(self.members)


@dataclass(frozen=True)
class StructuralPartition:
    partitions: tuple[frozenset, ...]

    def __post_init__(self):
        parts = tuple(frozenset(p) for p in self.partitions)
        seen: set = set()
        for p in parts:
            if seen & p:
                raise ValueError(f"partitions overlap on {sorted(seen & p)[:3]}")
            seen |= p
        object.__setattr__(self, "partitions", parts)

    @property
    def servers(self) -> frozenset:
        return frozenset().union(*self.partitions) if self.partitions else frozenset()

    @classmethod
    def single(cls, servers: Iterable) -> "StructuralPartition":
        return cls((frozenset(servers),))

    @classmethod
    def per_server(cls, servers: Iterable) -> "StructuralPartition":
        return cls(tuple(frozenset([s]) for s in sorted(servers)))

    @classmethod
    def groups_of(cls, servers: Iterable, size: int) -> "StructuralPartition":
        """Consecutive groups of ``size`` servers in sorted order (size 1 = per-server)."""
        if size < 1:
            raise ValueError("group size must be >= 1")
        ordered = sorted(servers)
        return cls(tuple(frozenset(ordered[i : i + size]) for i in range(0, len(ordered), size)))

    @classmethod
    def isolate(cls, server, servers: Iterable) -> "StructuralPartition":
        """One partition holding ``server`` alone, one with everything else."""
        rest = frozenset(servers) - {server}
        return cls((frozenset([server]), rest) if rest else (frozenset([server]),))


@dataclass(frozen=True)
class DownloadEdge:
    machine_id: str
    parent_hash: str
    child_hash: str
    domain: str
    timestamp: float


def form_waterhole_neighborhoods(
    trace: Sequence["NetflowRecord"],
    ntw: NtwConfig,
    part: StructuralPartition,
    window_start: float,
    fvs_by_entity: Mapping[str, Sequence[ProjectedFV]] | None = None,
) -> list[Neighborhood]:
    """One neighborhood per server partition: clients that contacted it in the window."""
    if not part.partitions:
        raise ValueError("structural partition is empty")
    end = window_start + ntw.window_len
    owner = {s: i for i, p in enumerate(part.partitions) for s in p}
    members: dict[int, set] = defaultdict(set)
    for rec in trace:
        if window_start <= rec.timestamp < end:
            i = owner.get(rec.dst)
            if i is not None:
                members[i].add(rec.src)
    out = []
    for i in range(len(part.partitions)):
        if not members.get(i):
            continue
        mem = frozenset(members[i])
        out.append(
            Neighborhood(
                id=f"w{window_start:g}/p{i}",
                members=mem,
                window_start=window_start,
                window_end=end,
                seed=f"partition:{i}",
                alert_fvs=_window_fvs(mem, fvs_by_entity, window_start, end),
            )
        )
    return out


def _window_fvs(members, fvs_by_entity, start, end) -> tuple[ProjectedFV, ...]:
    if not fvs_by_entity:
        return ()
    return tuple(
        fv
        for m in sorted(members, key=str)
        for fv in fvs_by_entity.get(m, ())
        if start <= fv.timestamp < end
    )


def form_downloader_neighborhoods(
    edges: Sequence[DownloadEdge],
    dnc: Callable[[str], bool],
    window_start: float,
    window_len: float,
    fvs_by_entity: Mapping[str, Sequence[ProjectedFV]] | None = None,
) -> list[Neighborhood]:
    """Files around each suspicious domain, expanded along download edges.

    Seeds are the files on either end of an in-window edge labelled with the
    domain; the neighborhood adds every file transitively downloaded by a seed
    that itself touches at least one suspicious domain.
    """
    end = window_start + window_len
    live = [e for e in edges if window_start <= e.timestamp < end]
    domains_of: dict[str, set[str]] = defaultdict(set)
    children: dict[str, set[str]] = defaultdict(set)
    files_by_domain: dict[str, set[str]] = defaultdict(set)
    for e in live:
        for f in (e.parent_hash, e.child_hash):
            if f != ROOT:
                domains_of[f].add(e.domain)
                files_by_domain[e.domain].add(f)
        if e.parent_hash != ROOT:
            children[e.parent_hash].add(e.child_hash)

    suspicious = {d for d in files_by_domain if dnc(d)}
    retained_cache: dict[str, frozenset] = {}

    def descendants(f: str) -> set[str]:
        seen: set[str] = set()
        queue = deque(children.get(f, ()))
        while queue:
            x = queue.popleft()
            if x not in seen:
                seen.add(x)
                queue.extend(children.get(x, ()))
        return seen

    def retained(f: str) -> frozenset:
        if f not in retained_cache:
            retained_cache[f] = frozenset(x for x in descendants(f) if domains_of.get(x, set()) & suspicious)
        return retained_cache[f]

    out = []
    for d in sorted(suspicious):
        seeds = files_by_domain[d]
        members = set(seeds)
        for f in seeds:
            members |= retained(f)
        mem = frozenset(members)
        out.append(
            Neighborhood(
                id=f"d{window_start:g}/{d}",
                members=mem,
                window_start=window_start,
                window_end=end,
                seed=f"domain:{d}",
                alert_fvs=_window_fvs(mem, fvs_by_entity, window_start, end),
            )
        )
    return out


def malicious_score(nbd: Neighborhood, alerts: Collection | Mapping) -> float:
    """Fraction of members with a local-detector alert."""
    if not nbd.members:
        return 0.0
    if isinstance(alerts, Mapping):
        hits = sum(1 for m in nbd.members if alerts.get(m))
    else:
        hits = len(nbd.members & set(alerts))
    return hits / len(nbd.members)


def _union(group: list[Neighborhood]) -> Neighborhood:
    if len(group) == 1:
        return group[0]
    members = frozenset().union(*(n.members for n in group))
    fvs: list[ProjectedFV] = []
    for n in group:
        fvs.extend(n.alert_fvs)
    return Neighborhood(
        id=f"{group[0].id}+{len(group) - 1}",
        members=members,
        window_start=min(n.window_start for n in group),
        window_end=max(n.window_end for n in group),
        seed="|".join(n.seed for n in group),
        alert_fvs=tuple(fvs),
    )


def merge_groups(nbds: Sequence[Neighborhood], min_size: int, alerts) -> list[list[Neighborhood]]:
    """The grouping behind :func:`merge_neighborhoods`, before members are unioned."""
    if min_size < 1:
        raise ValueError("min_size must be >= 1")
    ranked = sorted(nbds, key=lambda n: (-malicious_score(n, alerts), n.id))
    groups: list[list[Neighborhood]] = []
    current: list[Neighborhood] = []
    members: set = set()
    for n in ranked:
        current.append(n)
        members |= n.members
        if len(members) >= min_size:
            groups.append(current)
            current, members = [], set()
    if current:
        if groups:
            groups[-1].extend(current)
        else:
            groups.append(current)
    return groups


def merge_neighborhoods(nbds: Sequence[Neighborhood], min_size: int, alerts=()) -> list[Neighborhood]:
    """Greedily merge in decreasing malicious-score order until each group has ``min_size`` members.

    Ties on score fall back to neighborhood id. A trailing group still below
    the floor is folded into the group emitted before it.
    """
    return [_union(g) for g in merge_groups(nbds, min_size, alerts)]


# --------------------------------------------------------------------------
# file formats


def read_download_edges(path: str | Path) -> list[DownloadEdge]:
    """``machine_id,parent_hash,child_hash,domain,timestamp`` lines; a header line is optional."""
    out = []
    with _open_text(path) as fh:
        for lineno, rec in enumerate(csv.reader(fh), start=1):
            if not rec or (len(rec) == 1 and not rec[0].strip()) or rec[0].startswith("#"):
                continue
            if lineno == 1 and rec[0].strip() == "machine_id":
                continue
            if len(rec) != 5:
                raise DataError(f"expected 5 fields, got {len(rec)}", path, lineno)
            machine, parent, child, domain, ts = (x.strip() for x in rec)
            try:
                t = float(ts)
            except ValueError:
                raise DataError(f"bad timestamp {ts!r}", path, lineno) from None
            if not child or child == ROOT:
                raise DataError("child hash must be a file, not the root token", path, lineno)
            out.append(DownloadEdge(machine, parent or ROOT, child, domain, t))
    return out


def write_download_edges(path: str | Path, edges: Iterable[DownloadEdge]) -> None:
    with _open_text(path, "w") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["machine_id", "parent_hash", "child_hash", "domain", "timestamp"])
        for e in edges:
            w.writerow([e.machine_id, e.parent_hash, e.child_hash, e.domain, repr(float(e.timestamp))])


class DomainLabels:
    """Domain-name classifier backed by a ``domain,suspicious_flag`` label file."""

    def __init__(self, labels: Mapping[str, bool]):
        self.labels = dict(labels)

    def __call__(self, domain: str) -> bool:
        return self.labels.get(domain, False)

    @classmethod
    def read(cls, path: str | Path) -> "DomainLabels":
        labels = {}
        with _open_text(path) as fh:
            for lineno, rec in enumerate(csv.reader(fh), start=1):
                if not rec or (len(rec) == 1 and not rec[0].strip()) or rec[0].startswith("#"):
                    continue
                if lineno == 1 and rec[0].strip() == "domain":
                    continue
                if len(rec) != 2:
                    raise DataError(f"expected 2 fields, got {len(rec)}", path, lineno)
                flag = rec[1].strip().lower()
                if flag not in ("0", "1", "true", "false"):
                    raise DataError(f"suspicious_flag must be 0/1, got {rec[1]!r}", path, lineno)
                labels[rec[0].strip()] = flag in ("1", "true")
        return cls(labels)
