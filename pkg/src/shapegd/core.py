"""Domain types, projection and vector-histogram construction.

Every other module builds on the types defined here. Values are immutable
once constructed (numpy buffers are flagged read-only), so they can be shared
freely between threads.
"""

from __future__ import annotations

import csv
import enum
import gzip
import io
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

MIN_BINS = 2
MAX_BINS = 1024


class Label(enum.IntEnum):
    BENIGN = 0
    MALICIOUS = 1


def _frozen(a, dtype=float) -> np.ndarray:
    arr = np.array(a, dtype=dtype, copy=True)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class RawFV:
    """One r-second window of raw behaviour (e.g. 390 syscall counts)."""

    dims: np.ndarray
    entity_id: str
    timestamp: float

    def __post_init__(self):
        dims = _frozen(self.dims).reshape(-1)
        if dims.size == 0:
            raise ValueError("RawFV.dims must be non-empty")
        if not np.all(np.isfinite(dims)):
            raise ValueError("RawFV.dims must be finite")
        object.__setattr__(self, "dims", dims)


@dataclass(frozen=True)
class ProjectionBasis:
    matrix: np.ndarray

    def __post_init__(self):
        m = _frozen(self.matrix)
        if m.ndim != 2 or m.shape[0] == 0 or m.shape[1] == 0:
            raise ValueError("projection basis must be a non-empty L x D matrix")
        if m.shape[0] > m.shape[1]:
            raise ValueError(f"basis has L={m.shape[0]} rows > D={m.shape[1]} columns")
        if not np.all(np.isfinite(m)):
            raise ValueError("projection basis must be finite")
        object.__setattr__(self, "matrix", m)

    @property
    def L(self) -> int:
        return self.matrix.shape[0]

    @property
    def D(self) -> int:
        return self.matrix.shape[1]


@dataclass(frozen=True)
class ProjectedFV:
    coords: np.ndarray
    entity_id: str = ""
    timestamp: float = 0.0
    truth_label: Label = Label.BENIGN

    def __post_init__(self):
        object.__setattr__(self, "coords", _frozen(self.coords).reshape(-1))
        object.__setattr__(self, "truth_label", Label(int(self.truth_label)))


@dataclass(frozen=True)
class HistogramConfig:
    """Per-dimension bin edges; ``edges`` has shape (L, b + 1)."""

    edges: np.ndarray

    def __post_init__(self):
        e = _frozen(self.edges)
        if e.ndim != 2 or e.shape[0] < 1:
            raise ValueError("edges must be a 2-D array of shape (L, b + 1)")
        b = e.shape[1] - 1
        if not MIN_BINS <= b <= MAX_BINS:
            raise ValueError(f"bins per dimension must be in [{MIN_BINS}, {MAX_BINS}], got {b}")
        if not np.all(np.isfinite(e)) or np.any(np.diff(e, axis=1) <= 0):
            raise ValueError("bin edges must be finite and strictly increasing")
        object.__setattr__(self, "edges", e)

    @property
    def L(self) -> int:
        return self.edges.shape[0]

    @property
    def b(self) -> int:
        return self.edges.shape[1] - 1


@dataclass(frozen=True, eq=False)
class VectorHistogram:
    """Row-normalised bin frequencies, one row per projected dimension.

    Rows usually share one bin count (an L x b matrix), but concatenated
    histograms may mix widths, so rows are stored as a tuple of 1-D arrays.
    """

    rows: tuple[np.ndarray, ...]
    sample_count: int = 0

    def __post_init__(self):
        if isinstance(self.rows, np.ndarray):
            if self.rows.ndim != 2:
                raise ValueError("histogram rows must be a 2-D array or a sequence of 1-D rows")
            rows = tuple(_frozen(r) for r in self.rows)
        else:
            rows = tuple(_frozen(r).reshape(-1) for r in self.rows)
        if any(np.any(r < 0) for r in rows):
            raise ValueError("histogram entries must be non-negative")
        if self.sample_count < 0:
            raise ValueError("sample_count must be non-negative")
        object.__setattr__(self, "rows", rows)
        object.__setattr__(self, "sample_count", int(self.sample_count))

    def __eq__(self, other):
        if not isinstance(other, VectorHistogram):
            return NotImplemented
        return (
            self.sample_count == other.sample_count
            and self.widths == other.widths
            and all(np.array_equal(a, b) for a, b in zip(self.rows, other.rows))
        )

    __hash__ = None

    @property
    def L(self) -> int:
        return len(self.rows)

    @property
    def widths(self) -> tuple[int, ...]:
        return tuple(r.size for r in self.rows)

    @property
    def b(self) -> int:
        widths = set(self.widths)
        if len(widths) != 1:
            raise ValueError(f"histogram rows have mixed widths {sorted(widths)}")
        return widths.pop()

    def is_uniform(self) -> bool:
        return len(set(self.widths)) <= 1

    def matrix(self) -> np.ndarray:
        """The rows as an L x b array (requires uniform widths)."""
        if not self.rows:
            return np.zeros((0, 0))
        return np.vstack(self.rows)

    @classmethod
    def empty(cls, L: int, b: int) -> "VectorHistogram":
        return cls(np.zeros((L, b)), 0)

    def flatten(self) -> np.ndarray:
        """Row-major feature vector, as fed to a pluggable neighborhood classifier."""
        return np.concatenate(self.rows) if self.rows else np.zeros(0)


# --------------------------------------------------------------------------
# projection


def project(fv: RawFV, basis: ProjectionBasis, truth_label: Label = Label.BENIGN) -> ProjectedFV:
    if fv.dims.shape[0] != basis.D:
        raise ValueError(f"FV has {fv.dims.shape[0]} dims, basis expects D={basis.D}")
    return ProjectedFV(basis.matrix @ fv.dims, fv.entity_id, fv.timestamp, truth_label)


def project_array(values: np.ndarray, basis: ProjectionBasis) -> np.ndarray:
    """Project an (n, D) array of raw FVs to (n, L)."""
    values = np.asarray(values, dtype=float)
    if values.ndim != 2 or values.shape[1] != basis.D:
        raise ValueError(f"expected an (n, {basis.D}) array, got shape {values.shape}")
    return values @ basis.matrix.T


def pca_basis(values: np.ndarray, L: int) -> ProjectionBasis:
    """Top-L principal directions of mean-centred data (rows are samples)."""
    values = np.asarray(values, dtype=float)
    if values.ndim != 2 or values.shape[0] < 2:
        raise ValueError("PCA needs at least two samples in an (n, D) array")
    if not 1 <= L <= values.shape[1]:
        raise ValueError(f"L must be in [1, {values.shape[1]}]")
    centred = values - values.mean(axis=0)
    _, _, vt = np.linalg.svd(centred, full_matrices=False)
    comps = vt[:L].copy()
    # deterministic sign: largest-magnitude loading positive
    idx = np.argmax(np.abs(comps), axis=1)
    signs = np.sign(comps[np.arange(L), idx])
    signs[signs == 0] = 1.0
    return ProjectionBasis(comps * signs[:, None])


# --------------------------------------------------------------------------
# histograms


def coords_matrix(fvs: Sequence[ProjectedFV] | np.ndarray, L: int | None = None) -> np.ndarray:
    """Stack projected FVs (or pass through an array) into an (n, L) float array."""
    if isinstance(fvs, np.ndarray):
        arr = np.asarray(fvs, dtype=float)
        if arr.size == 0:
            arr = np.zeros((0, L if L is not None else (arr.shape[-1] if arr.ndim == 2 else 0)))
        elif arr.ndim == 1:
            arr = arr.reshape(-1, 1) if L == 1 else arr.reshape(1, -1)
    elif len(fvs) == 0:
        arr = np.zeros((0, L or 0))
    else:
        arr = np.vstack([fv.coords for fv in fvs])
    if L is not None and arr.shape[0] and arr.shape[1] != L:
        raise ValueError(f"FVs have {arr.shape[1]} coords, histogram config expects L={L}")
    return arr


def fit_edges(training_fvs: Sequence[ProjectedFV] | np.ndarray, b: int) -> HistogramConfig:
    """Equal-width edges spanning the training range of each dimension."""
    if b < MIN_BINS:
        raise ValueError(f"b must be >= {MIN_BINS}")
    x = coords_matrix(training_fvs)
    if x.shape[0] == 0:
        raise ValueError("cannot fit bin edges on an empty training set")
    lo = x.min(axis=0)
    hi = x.max(axis=0)
    flat = lo >= hi
    lo = np.where(flat, lo - 0.5, lo)
    hi = np.where(flat, hi + 0.5, hi)
    steps = np.arange(b + 1) / b
    edges = lo[:, None] + (hi - lo)[:, None] * steps[None, :]
    edges[:, -1] = hi
    return HistogramConfig(edges)


def bin_indices(coords: np.ndarray, cfg: HistogramConfig) -> np.ndarray:
    """Bin index per (sample, dimension); out-of-range values clamp to the end bins."""
    coords = coords_matrix(coords, cfg.L)
    out = np.empty(coords.shape, dtype=np.int32)
    for l in range(cfg.L):
        idx = np.searchsorted(cfg.edges[l], coords[:, l], side="right") - 1
        np.clip(idx, 0, cfg.b - 1, out=out[:, l])
    return out


def histogram_from_bins(bins: np.ndarray, cfg: HistogramConfig) -> VectorHistogram:
    n = bins.shape[0]
    if n == 0:
        return VectorHistogram.empty(cfg.L, cfg.b)
    offsets = np.arange(cfg.L, dtype=np.int64) * cfg.b
    counts = np.bincount((bins + offsets).ravel(), minlength=cfg.L * cfg.b)
    return histogram_from_counts(counts.reshape(cfg.L, cfg.b))


def histogram_from_counts(counts: np.ndarray) -> VectorHistogram:
    """Normalise an (L, b) matrix of per-dimension bin counts (every row sums to n)."""
    counts = np.asarray(counts)
    n = int(counts[0].sum()) if counts.shape[0] else 0
    if n == 0:
        return VectorHistogram.empty(counts.shape[0], counts.shape[1])
    return VectorHistogram(counts / n, n)


def build_vector_histogram(
    alert_fvs: Sequence[ProjectedFV] | np.ndarray, cfg: HistogramConfig
) -> VectorHistogram:
    return histogram_from_bins(bin_indices(coords_matrix(alert_fvs, cfg.L), cfg), cfg)


def concat_histograms(h1: VectorHistogram, h2: VectorHistogram) -> VectorHistogram:
    """Append the rows of ``h2`` after those of ``h1``; each row stays normalised."""
    return VectorHistogram(h1.rows + h2.rows, max(h1.sample_count, h2.sample_count))


# --------------------------------------------------------------------------
# file formats


def _open_text(path: str | Path, mode: str = "r"):
    path = Path(path)
    if path.suffix == ".gz":
        if mode == "w":
            # fixed header (no name, zero mtime) keeps output byte-identical across runs
            raw = gzip.GzipFile(filename="", mode="wb", fileobj=open(path, "wb"), mtime=0)
            return _ClosingWrapper(raw)
        return io.TextIOWrapper(gzip.open(path, mode + "b"), newline="")
    return open(path, mode, newline="")


class _ClosingWrapper(io.TextIOWrapper):
    """Text wrapper over a GzipFile that also closes the GzipFile's own file object."""

    def __init__(self, gz: gzip.GzipFile):
        super().__init__(gz, newline="")
        self._fileobj = gz.fileobj

    def close(self):
        try:
            super().close()
        finally:
            self._fileobj.close()


class DataError(ValueError):
    """Malformed input file; carries the offending line number when known."""

    def __init__(self, msg: str, path: str | Path | None = None, line: int | None = None):
        where = ""
        if path is not None:
            where = f"{path}"
            if line is not None:
                where += f":{line}"
            where += ": "
        super().__init__(where + msg)
        self.path = path
        self.line = line


@dataclass(frozen=True)
class FvTable:
    """Columnar FV corpus: one row per FV with id, timestamp, label and values."""

    entity_ids: tuple[str, ...]
    timestamps: np.ndarray
    labels: np.ndarray
    values: np.ndarray
    header: tuple[str, ...] = field(default=())

    def __post_init__(self):
        values = _frozen(self.values)
        if values.ndim != 2:
            raise ValueError("values must be (n, D)")
        n = values.shape[0]
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "timestamps", _frozen(self.timestamps).reshape(-1))
        object.__setattr__(self, "labels", _frozen(self.labels, dtype=np.int8).reshape(-1))
        object.__setattr__(self, "entity_ids", tuple(self.entity_ids))
        if not (len(self.entity_ids) == self.timestamps.size == self.labels.size == n):
            raise ValueError("FvTable columns have inconsistent lengths")
        if not np.all(np.isin(self.labels, (0, 1))):
            raise ValueError("labels must be 0 or 1")

    def __len__(self) -> int:
        return self.values.shape[0]

    @property
    def dim(self) -> int:
        return self.values.shape[1]

    def raw_fvs(self) -> list[RawFV]:
        return [RawFV(v, e, float(t)) for v, e, t in zip(self.values, self.entity_ids, self.timestamps)]

    def projected_fvs(self) -> list[ProjectedFV]:
        return [
            ProjectedFV(v, e, float(t), Label(int(y)))
            for v, e, t, y in zip(self.values, self.entity_ids, self.timestamps, self.labels)
        ]

    def project(self, basis: ProjectionBasis) -> "FvTable":
        return FvTable(self.entity_ids, self.timestamps, self.labels, project_array(self.values, basis))

    @classmethod
    def from_fvs(cls, fvs: Iterable[ProjectedFV]) -> "FvTable":
        fvs = list(fvs)
        if not fvs:
            raise ValueError("no FVs")
        return cls(
            tuple(f.entity_id for f in fvs),
            np.array([f.timestamp for f in fvs]),
            np.array([int(f.truth_label) for f in fvs]),
            np.vstack([f.coords for f in fvs]),
        )


def read_fv_corpus(path: str | Path) -> FvTable:
    """Read ``entity_id,timestamp,label,v1,...,vD`` lines (header required)."""
    ids: list[str] = []
    ts: list[float] = []
    ys: list[int] = []
    rows: list[list[float]] = []
    with _open_text(path) as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            raise DataError("empty file, header line required", path, 1)
        header = [h.strip() for h in header]
        if header[:3] != ["entity_id", "timestamp", "label"] or len(header) < 4:
            raise DataError("header must start with entity_id,timestamp,label,v1...", path, 1)
        width = len(header)
        for lineno, rec in enumerate(reader, start=2):
            if not rec or (len(rec) == 1 and not rec[0].strip()):
                continue
            if len(rec) != width:
                raise DataError(f"expected {width} fields, got {len(rec)}", path, lineno)
            try:
                label = int(rec[2])
                vals = [float(x) for x in rec[3:]]
                t = float(rec[1])
            except ValueError as exc:
                raise DataError(str(exc), path, lineno) from None
            if label not in (0, 1):
                raise DataError(f"label must be 0 or 1, got {label}", path, lineno)
            if not np.all(np.isfinite(vals)):
                raise DataError("non-finite feature value", path, lineno)
            ids.append(rec[0])
            ts.append(t)
            ys.append(label)
            rows.append(vals)
    values = np.array(rows, dtype=float).reshape(len(rows), width - 3)
    return FvTable(tuple(ids), np.array(ts), np.array(ys, dtype=np.int8), values, tuple(header))


def write_fv_corpus(path: str | Path, table: FvTable) -> None:
    with _open_text(path, "w") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["entity_id", "timestamp", "label"] + [f"v{i + 1}" for i in range(table.dim)])
        for e, t, y, v in zip(table.entity_ids, table.timestamps, table.labels, table.values):
            w.writerow([e, repr(float(t)), int(y)] + [repr(float(x)) for x in v])


def read_basis(path: str | Path) -> ProjectionBasis:
    """Read an ``L D`` header followed by L lines of D values."""
    with _open_text(path) as fh:
        lines = [ln for ln in fh.read().splitlines() if ln.strip()]
    if not lines:
        raise DataError("empty basis file", path, 1)
    try:
        L, D = (int(x) for x in lines[0].replace(",", " ").split())
    except ValueError:
        raise DataError("first line must be 'L D'", path, 1) from None
    if len(lines) - 1 != L:
        raise DataError(f"header says L={L} rows, found {len(lines) - 1}", path)
    rows = []
    for lineno, ln in enumerate(lines[1:], start=2):
        try:
            vals = [float(x) for x in ln.replace(",", " ").split()]
        except ValueError as exc:
            raise DataError(str(exc), path, lineno) from None
        if len(vals) != D:
            raise DataError(f"expected {D} values, got {len(vals)}", path, lineno)
        rows.append(vals)
    try:
        return ProjectionBasis(np.array(rows))
    except ValueError as exc:
        raise DataError(str(exc), path) from None


def write_basis(path: str | Path, basis: ProjectionBasis) -> None:
    with _open_text(path, "w") as fh:
        fh.write(f"{basis.L} {basis.D}\n")
        for row in basis.matrix:
            fh.write(" ".join(repr(float(x)) for x in row) + "\n")
