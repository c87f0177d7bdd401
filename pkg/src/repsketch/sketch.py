"""The weighted RACE sketch.

A sketch is an L x R array of float counters.  Inserting a point adds its
(signed) weight to one cell per row, chosen by that row's LSH function; a
query reads back the cell its own hash lands in on every row.  Each row is an
unbiased estimate of the weighted KDE, and the rows are combined either by a
plain mean or by a median of group means.

Counter cells accumulate in insertion order, so streaming ``add`` calls
reproduce a batch ``build`` bit for bit.
"""

from __future__ import annotations

import math
import struct
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .errors import FormatError, IncompatibleSketchError, InputError
from .kde import WeightedPoint, stack_points
from .lsh import Family, LshEnsembleSpec, LshFamilyConfig, get_ensemble, ordered_project

__all__ = [
    "WeightedPoint",
    "RepresenterSketch",
    "EstimateResult",
    "build",
    "add",
    "merge",
    "query_mean",
    "query_mom",
    "query_batch",
    "default_groups",
    "serialize",
    "deserialize",
    "HEADER",
]

MAGIC = b"RSKH"
FORMAT_VERSION = 1
# magic, version, L, R, K, family, pad, master_seed, r, d, p, total_weight, count
HEADER = struct.Struct("<4sIIIIB3xQdIIdQ")
_F8 = np.dtype("<f8")


@dataclass
class RepresenterSketch:
    spec: LshEnsembleSpec
    counters: np.ndarray
    total_weight: float = 0.0
    count: int = 0
    projection: np.ndarray | None = None

    def __post_init__(self):
        shape = (self.spec.rows_L, self.spec.range_R)
        self.counters = np.asarray(self.counters, dtype=np.float64)
        if self.counters.shape != shape:
            raise InputError(f"counter array has shape {self.counters.shape}, spec requires {shape}")
        if self.projection is not None:
            self.projection = np.asarray(self.projection, dtype=np.float64)
            if self.projection.ndim != 2 or self.projection.shape[1] != self.spec.input_dim:
                raise InputError(
                    f"projection shape {self.projection.shape} does not map into the "
                    f"{self.spec.input_dim}-dimensional hashed space"
                )

    @classmethod
    def empty(cls, spec: LshEnsembleSpec, projection=None) -> RepresenterSketch:
        return cls(spec, np.zeros((spec.rows_L, spec.range_R)), projection=projection)

    @property
    def data_dim(self) -> int:
        """Dimension of raw queries (before any projection)."""
        return self.spec.input_dim if self.projection is None else self.projection.shape[0]

    @property
    def params_count(self) -> int:
        proj = 0 if self.projection is None else self.projection.size
        return self.counters.size + proj

    def __eq__(self, other):
        if not isinstance(other, RepresenterSketch):
            return NotImplemented
        if (self.projection is None) != (other.projection is None):
            return False
        return (
            self.spec == other.spec
            and self.total_weight == other.total_weight
            and self.count == other.count
            and np.array_equal(self.counters, other.counters)
            and (self.projection is None or np.array_equal(self.projection, other.projection))
        )

    def row_indices(self, Q, projected: bool = False) -> np.ndarray:
        """Bucket indices (n, L) of raw queries; projects first when configured."""
        Q = np.atleast_2d(np.asarray(Q, dtype=np.float64))
        if self.projection is not None and not projected:
            Q = ordered_project(Q, self.projection)
        return get_ensemble(self.spec).indices(Q)

    def row_values(self, Q, projected: bool = False) -> np.ndarray:
        """Counter read on every row for every query, shape (n, L)."""
        idx = self.row_indices(Q, projected)
        return self.counters[np.arange(self.spec.rows_L), idx]


@dataclass(frozen=True)
class EstimateResult:
    value: float
    estimator: str = "mean"
    groups: int = 1
    per_row_values: np.ndarray | None = field(default=None, compare=False)


# ---------------------------------------------------------------------------
# construction


def _accumulate(sketch: RepresenterSketch, X: np.ndarray, alpha: np.ndarray) -> None:
    if alpha.size == 0:
        return
    L, R = sketch.spec.rows_L, sketch.spec.range_R
    idx = get_ensemble(sketch.spec).indices(X)
    flat = (idx + np.arange(L) * R).ravel()
    # add.at is unbuffered and walks ``flat`` in order: cells see points in insertion order
    np.add.at(sketch.counters.reshape(-1), flat, np.repeat(alpha, L))
    total = sketch.total_weight
    for a in alpha:
        total += a
    sketch.total_weight = float(total)
    sketch.count += int(alpha.size)


def _points_arrays(points, spec: LshEnsembleSpec) -> tuple[np.ndarray, np.ndarray]:
    if isinstance(points, tuple) and len(points) == 2 and isinstance(points[0], np.ndarray):
        X, alpha = np.atleast_2d(np.asarray(points[0], dtype=np.float64)), np.asarray(points[1], dtype=np.float64)
        if X.shape[0] != alpha.shape[0]:
            raise InputError("points and weights differ in length")
        if alpha.size and X.shape[1] != spec.input_dim:
            raise InputError(f"dimension mismatch: points have {X.shape[1]} coordinates, spec expects {spec.input_dim}")
        if not np.all(np.isfinite(alpha)):
            raise InputError("non-finite weight")
        return X, alpha
    return stack_points(points, spec.input_dim)


def build(points: Sequence[WeightedPoint] | tuple[np.ndarray, np.ndarray], spec: LshEnsembleSpec,
          projection=None, threads: int = 1) -> RepresenterSketch:
    """Insert every weighted point into a fresh sketch.

    ``points`` is a sequence of :class:`WeightedPoint` or an ``(X, alpha)``
    pair.  With ``threads > 1`` contiguous partitions are sketched privately
    and merged in partition order, so the result is independent of scheduling
    (but may differ from the single-threaded build by float re-association).
    """
    X, alpha = _points_arrays(points, spec)
    if threads <= 1 or alpha.size < 2 * threads:
        sketch = RepresenterSketch.empty(spec, projection)
        _accumulate(sketch, X, alpha)
        return sketch
    bounds = np.linspace(0, alpha.size, threads + 1).astype(int)

    def part(i):
        s = RepresenterSketch.empty(spec, projection)
        _accumulate(s, X[bounds[i] : bounds[i + 1]], alpha[bounds[i] : bounds[i + 1]])
        return s

    with ThreadPoolExecutor(max_workers=threads) as pool:
        parts = list(pool.map(part, range(threads)))
    out = parts[0]
    for p in parts[1:]:
        out = merge(out, p)
    return out


def add(sketch: RepresenterSketch, point: WeightedPoint) -> RepresenterSketch:
    """Stream one point into ``sketch`` (in place) and return it."""
    x = np.asarray(point.x, dtype=np.float64)
    if x.shape != (sketch.spec.input_dim,):
        raise InputError(f"dimension mismatch: point has shape {x.shape}, spec expects {sketch.spec.input_dim}")
    if not math.isfinite(point.alpha):
        raise InputError("non-finite weight")
    idx = get_ensemble(sketch.spec).indices(x)[0]
    sketch.counters[np.arange(sketch.spec.rows_L), idx] += point.alpha
    sketch.total_weight = float(sketch.total_weight + point.alpha)
    sketch.count += 1
    return sketch


def merge(a: RepresenterSketch, b: RepresenterSketch) -> RepresenterSketch:
    if a.spec != b.spec:
        raise IncompatibleSketchError("cannot merge sketches built with different ensembles")
    if (a.projection is None) != (b.projection is None) or (
        a.projection is not None and not np.array_equal(a.projection, b.projection)
    ):
        raise IncompatibleSketchError("cannot merge sketches with different projections")
    return RepresenterSketch(
        a.spec,
        a.counters + b.counters,
        total_weight=a.total_weight + b.total_weight,
        count=a.count + b.count,
        projection=None if a.projection is None else a.projection.copy(),
    )


# ---------------------------------------------------------------------------
# queries


def default_groups(rows_L: int, delta: float = 0.05) -> int:
    """``8 * ceil(ln(1/delta))`` groups, lowered to the nearest divisor of L."""
    g = max(1, min(rows_L, 8 * math.ceil(math.log(1.0 / delta))))
    while rows_L % g:
        g -= 1
    return g


def _group_bounds(L: int, g: int) -> np.ndarray:
    # row l belongs to group floor(l * g / L); bounds[i] is the first row of group i
    return np.array([-(-i * L // g) for i in range(g + 1)])


def _check_groups(L: int, g: int, allow_uneven: bool) -> None:
    if g < 1 or g > L:
        raise InputError(f"groups must lie in [1, {L}], got {g}")
    if L % g and not allow_uneven:
        raise InputError(f"groups={g} does not divide rows_L={L}")


def _estimate_rows(values: np.ndarray, estimator: str, g: int) -> np.ndarray:
    L = values.shape[1]
    if estimator == "mean":
        return values.sum(axis=1) / L
    bounds = _group_bounds(L, g)
    means = np.stack(
        [values[:, bounds[i] : bounds[i + 1]].sum(axis=1) / (bounds[i + 1] - bounds[i]) for i in range(g)],
        axis=1,
    )
    return np.median(means, axis=1)


def query_batch(sketch: RepresenterSketch, Q, estimator: str = "mom", groups: int | None = None,
                projected: bool = False, allow_uneven: bool = False) -> np.ndarray:
    """Estimates for many queries; ``estimator`` is ``"mean"`` or ``"mom"``."""
    L = sketch.spec.rows_L
    if estimator not in ("mean", "mom"):
        raise InputError(f"unknown estimator {estimator!r}")
    g = 1
    if estimator == "mom":
        g = default_groups(L) if groups is None else int(groups)
        _check_groups(L, g, allow_uneven)
    return _estimate_rows(sketch.row_values(Q, projected), estimator, g)


def query_mean(sketch: RepresenterSketch, q, keep_rows: bool = False, projected: bool = False) -> EstimateResult:
    q = np.asarray(q, dtype=np.float64)
    _check_query(sketch, q, projected)
    values = sketch.row_values(q, projected)
    value = float(_estimate_rows(values, "mean", 1)[0])
    return EstimateResult(value, "mean", 1, values[0] if keep_rows else None)


def query_mom(sketch: RepresenterSketch, q, groups_g: int | None = None, keep_rows: bool = False,
              projected: bool = False, allow_uneven: bool = False) -> EstimateResult:
    """Median of ``groups_g`` contiguous group means of the L row reads.

    ``allow_uneven`` admits a ``groups_g`` that does not divide L; groups are
    then contiguous blocks whose sizes differ by at most one.
    """
    q = np.asarray(q, dtype=np.float64)
    _check_query(sketch, q, projected)
    L = sketch.spec.rows_L
    g = default_groups(L) if groups_g is None else int(groups_g)
    _check_groups(L, g, allow_uneven)
    values = sketch.row_values(q, projected)
    value = float(_estimate_rows(values, "mom", g)[0])
    return EstimateResult(value, "mom", g, values[0] if keep_rows else None)


def _check_query(sketch: RepresenterSketch, q: np.ndarray, projected: bool) -> None:
    want = sketch.spec.input_dim if projected else sketch.data_dim
    if q.ndim != 1 or q.shape[0] != want:
        raise InputError(f"dimension mismatch: query has shape {q.shape}, expected ({want},)")


def estimate_from_rows(per_row_values, estimator: str = "mean", groups: int = 1) -> float:
    """Recompute an estimate from retained per-row reads."""
    values = np.atleast_2d(np.asarray(per_row_values, dtype=np.float64))
    _check_groups(values.shape[1], groups, True)
    return float(_estimate_rows(values, estimator, groups)[0])


# ---------------------------------------------------------------------------
# binary format


def serialize(sketch: RepresenterSketch) -> bytes:
    spec = sketch.spec
    if sketch.projection is None:
        d, p = spec.input_dim, 0
    else:
        d, p = sketch.projection.shape
    header = HEADER.pack(
        MAGIC,
        FORMAT_VERSION,
        spec.rows_L,
        spec.range_R,
        spec.concat_K,
        int(spec.family),
        spec.master_seed,
        spec.bandwidth,
        d,
        p,
        float(sketch.total_weight),
        int(sketch.count),
    )
    parts = [header]
    if sketch.projection is not None:
        parts.append(np.ascontiguousarray(sketch.projection, dtype=_F8).tobytes())
    parts.append(np.ascontiguousarray(sketch.counters, dtype=_F8).tobytes())
    return b"".join(parts)


def _read_f8(data: bytes, offset: int, count: int, what: str) -> np.ndarray:
    end = offset + 8 * count
    if len(data) < end:
        raise FormatError(f"truncated {what}: need {end} bytes, file has {len(data)}", len(data))
    arr = np.frombuffer(data, dtype=_F8, count=count, offset=offset).astype(np.float64)
    bad = np.flatnonzero(~np.isfinite(arr))
    if bad.size:
        raise FormatError(f"non-finite value in {what}", offset + 8 * int(bad[0]))
    return arr


def deserialize(data: bytes) -> RepresenterSketch:
    data = bytes(data)
    if len(data) < 4 or data[:4] != MAGIC:
        if len(data) < 4:
            raise FormatError("truncated magic", len(data))
        raise FormatError(f"bad magic {data[:4]!r}, expected {MAGIC!r}", 0)
    if len(data) < HEADER.size:
        raise FormatError(f"truncated header: need {HEADER.size} bytes, file has {len(data)}", len(data))
    magic, version, L, R, K, fam, seed, r, d, p, total, count = HEADER.unpack_from(data, 0)
    if version != FORMAT_VERSION:
        raise FormatError(f"unsupported format version {version}", 4)
    if L < 1:
        raise FormatError("rows_L must be >= 1", 8)
    if R < 2:
        raise FormatError("range_R must be >= 2", 12)
    if K < 1:
        raise FormatError("concat_K must be >= 1", 16)
    try:
        family = Family(fam)
    except ValueError:
        raise FormatError(f"unknown family code {fam}", 20) from None
    if not math.isfinite(r) or (family.is_distance and r <= 0):
        raise FormatError(f"invalid bandwidth {r}", 32)
    if d < 1:
        raise FormatError("data_dim_d must be >= 1", 40)
    if not math.isfinite(total):
        raise FormatError("non-finite total_weight", 48)
    offset = HEADER.size
    projection = None
    if p > 0:
        projection = _read_f8(data, offset, d * p, "projection matrix").reshape(d, p)
        offset += 8 * d * p
    counters = _read_f8(data, offset, L * R, "counter array").reshape(L, R)
    offset += 8 * L * R
    if len(data) != offset:
        raise FormatError(f"{len(data) - offset} trailing bytes", offset)
    fc = LshFamilyConfig(family, p if p > 0 else d, r)
    spec = LshEnsembleSpec(fc, L, K, R, seed)
    return RepresenterSketch(spec, counters, total_weight=total, count=count, projection=projection)


def save(sketch: RepresenterSketch, path) -> None:
    from .io import atomic_write_bytes

    atomic_write_bytes(path, serialize(sketch))


def load(path) -> RepresenterSketch:
    with open(path, "rb") as fh:
        return deserialize(fh.read())


def iter_points(X: np.ndarray, alpha: np.ndarray) -> Iterable[WeightedPoint]:
    for x, a in zip(X, alpha):
        yield WeightedPoint(x, a)
