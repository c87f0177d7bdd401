"""Locality-sensitive hash families and the L x K hash ensemble.

Three families are provided:

* ``L2PStable`` -- ``floor((a . v + b) / r)`` with Gaussian ``a`` and ``b ~ U[0, r)``.
* ``SparseSign`` -- the same quantiser, but ``a`` has entries in {-1, 0, +1}
  (zero with probability 2/3), so projecting needs only additions.  The
  ensemble divides the bucket width by sqrt(3) to undo the 1/3 entry variance,
  which makes its collision probability match the L2 kernel at bandwidth ``r``
  (exactly in the Gaussian limit, very closely for moderate dimension).
* ``SignProjection`` -- one bit, ``a . v >= 0``.

Inner products are always accumulated left to right over coordinates.  The
scalar helpers (:func:`hash_l2`, :func:`hash_sparse`) and the batched
:class:`LshEnsemble` therefore round identically, so an index computed for a
query matches the index computed for the same vector at build time, bit for
bit, regardless of batch size.
"""

from __future__ import annotations

import enum
import functools
import math
from dataclasses import dataclass, replace

import numpy as np
from scipy import special

from .errors import InputError

SQRT_2PI = math.sqrt(2.0 * math.pi)
SPARSE_ZERO_PROB = 2.0 / 3.0
# Achlioptas entries have variance 1/3; shrinking the width by sqrt(3) restores
# unit-variance projections.
SPARSE_WIDTH_SCALE = 1.0 / math.sqrt(3.0)

_MASK32 = np.uint64(0xFFFFFFFF)
_SHIFT32 = np.uint64(32)
_CHUNK_ELEMS = 1 << 22
_ROW_STREAM = 0
_SLOT_STREAM = 1


class Family(enum.IntEnum):
    L2PStable = 0
    SignProjection = 1
    SparseSign = 2

    @classmethod
    def parse(cls, name: str | int | Family) -> Family:
        if isinstance(name, Family):
            return name
        if isinstance(name, (int, np.integer)):
            return cls(int(name))
        aliases = {
            "l2": cls.L2PStable,
            "l2pstable": cls.L2PStable,
            "sign": cls.SignProjection,
            "signprojection": cls.SignProjection,
            "srp": cls.SignProjection,
            "sparse": cls.SparseSign,
            "sparsesign": cls.SparseSign,
        }
        try:
            return aliases[str(name).lower().replace("-", "").replace("_", "")]
        except KeyError:
            raise InputError(f"unknown LSH family {name!r}") from None

    @property
    def is_distance(self) -> bool:
        return self is not Family.SignProjection


@dataclass(frozen=True)
class LshFamilyConfig:
    family: Family
    input_dim_p: int
    bandwidth_r: float = 1.0
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "family", Family.parse(self.family))
        if int(self.input_dim_p) < 1:
            raise InputError(f"input_dim_p must be >= 1, got {self.input_dim_p}")
        if self.family.is_distance and not (self.bandwidth_r > 0 and math.isfinite(self.bandwidth_r)):
            raise InputError(f"bandwidth_r must be positive, got {self.bandwidth_r}")
        if not 0 <= int(self.seed) < 2**64:
            raise InputError("seed must fit in 64 unsigned bits")
        object.__setattr__(self, "input_dim_p", int(self.input_dim_p))
        object.__setattr__(self, "bandwidth_r", float(self.bandwidth_r))
        object.__setattr__(self, "seed", int(self.seed))


@dataclass(frozen=True)
class LshEnsembleSpec:
    """Everything needed to regenerate the L x K hash functions of a sketch."""

    family_config: LshFamilyConfig
    rows_L: int
    concat_K: int = 1
    range_R: int = 100
    master_seed: int = 0

    def __post_init__(self):
        if int(self.rows_L) < 1:
            raise InputError(f"rows_L must be >= 1, got {self.rows_L}")
        if int(self.concat_K) < 1:
            raise InputError(f"concat_K must be >= 1, got {self.concat_K}")
        if int(self.range_R) < 2:
            raise InputError(f"range_R must be >= 2, got {self.range_R}")
        if not 0 <= int(self.master_seed) < 2**64:
            raise InputError("master_seed must fit in 64 unsigned bits")
        for name in ("rows_L", "concat_K", "range_R", "master_seed"):
            object.__setattr__(self, name, int(getattr(self, name)))
        # the ensemble draws everything from master_seed; keep the family seed in step
        if self.family_config.seed != self.master_seed:
            object.__setattr__(self, "family_config", replace(self.family_config, seed=self.master_seed))

    @property
    def family(self) -> Family:
        return self.family_config.family

    @property
    def input_dim(self) -> int:
        return self.family_config.input_dim_p

    @property
    def bandwidth(self) -> float:
        return self.family_config.bandwidth_r


# ---------------------------------------------------------------------------
# scalar hash primitives


def _vector(v, dim: int | None = None, name: str = "v") -> np.ndarray:
    arr = np.asarray(v)
    if arr.dtype != object:
        arr = arr.astype(np.float64, copy=False)
        if not np.all(np.isfinite(arr)):
            raise InputError(f"{name} contains NaN or infinite entries")
    if arr.ndim != 1:
        raise InputError(f"{name} must be a 1-D vector, got shape {arr.shape}")
    if dim is not None and arr.shape[0] != dim:
        raise InputError(f"dimension mismatch: {name} has {arr.shape[0]} entries, expected {dim}")
    return arr


def ordered_dot(v, a) -> float:
    """Inner product accumulated strictly left to right."""
    prod = np.asarray(v, dtype=np.float64) * np.asarray(a, dtype=np.float64)
    if prod.size == 0:
        return 0.0
    return float(np.cumsum(prod)[-1])


def ordered_project(Q, A) -> np.ndarray:
    """``Q @ A`` accumulated coordinate by coordinate, so each output row is
    independent of how many rows are in the batch."""
    Q = np.atleast_2d(np.asarray(Q, dtype=np.float64))
    A = np.asarray(A, dtype=np.float64)
    if Q.shape[1] != A.shape[0]:
        raise InputError(f"dimension mismatch: inputs have {Q.shape[1]} coordinates, projection expects {A.shape[0]}")
    out = np.zeros((Q.shape[0], A.shape[1]))
    for i in range(A.shape[0]):
        out += Q[:, i : i + 1] * A[i]
    return out


def hash_l2(v, a, b: float, r: float) -> int:
    a = _vector(a, name="a")
    v = _vector(v, a.shape[0])
    if not r > 0:
        raise InputError(f"r must be positive, got {r}")
    return int(math.floor((ordered_dot(v, a) + b) / r))


def hash_sparse(v, sparse_row, b: float, r: float) -> int:
    """Quantised projection onto a {-1, 0, +1} row using only additions.

    ``v`` may be an object array (see :func:`tracked`); no multiplication is
    ever applied to its entries.
    """
    row = np.asarray(sparse_row)
    if row.ndim != 1:
        raise InputError("sparse_row must be 1-D")
    v = _vector(v, row.shape[0])
    if not np.isin(row, (-1, 0, 1)).all():
        raise InputError("sparse_row entries must lie in {-1, 0, +1}")
    if not r > 0:
        raise InputError(f"r must be positive, got {r}")
    acc = 0.0
    for i in np.flatnonzero(row):
        acc = acc + v[i] if row[i] > 0 else acc - v[i]
    return int(math.floor((acc + b) / r))


def hash_sign(v, a) -> int:
    a = _vector(a, name="a")
    v = _vector(v, a.shape[0])
    return int(ordered_dot(v, a) >= 0.0)


def sample_sparse_row(p: int, rng: np.random.Generator) -> np.ndarray:
    """Entries +1 w.p. 1/6, 0 w.p. 2/3, -1 w.p. 1/6."""
    u = rng.random(p)
    row = np.zeros(p, dtype=np.int8)
    row[u < 1.0 / 6.0] = 1
    row[(u >= 1.0 / 6.0) & (u < 1.0 / 3.0)] = -1
    return row


# ---------------------------------------------------------------------------
# instrumentation for the addition-only contract


class OpCounter:
    def __init__(self):
        self.add = 0
        self.mul = 0
        self.div = 0

    def __repr__(self):
        return f"OpCounter(add={self.add}, mul={self.mul}, div={self.div})"


class _Tracked:
    __slots__ = ("value", "ops")

    def __init__(self, value: float, ops: OpCounter):
        self.value = float(value)
        self.ops = ops

    @staticmethod
    def _raw(x):
        return x.value if isinstance(x, _Tracked) else x

    def __add__(self, other):
        self.ops.add += 1
        return _Tracked(self.value + self._raw(other), self.ops)

    __radd__ = __add__

    def __sub__(self, other):
        self.ops.add += 1
        return _Tracked(self.value - self._raw(other), self.ops)

    def __rsub__(self, other):
        self.ops.add += 1
        return _Tracked(self._raw(other) - self.value, self.ops)

    def __mul__(self, other):
        self.ops.mul += 1
        return _Tracked(self.value * self._raw(other), self.ops)

    __rmul__ = __mul__

    def __truediv__(self, other):
        self.ops.div += 1
        return _Tracked(self.value / self._raw(other), self.ops)

    def __neg__(self):
        return _Tracked(-self.value, self.ops)

    def __floor__(self):
        return math.floor(self.value)

    def __float__(self):
        return self.value


def tracked(v, ops: OpCounter) -> np.ndarray:
    """Wrap ``v`` so arithmetic on its entries is tallied in ``ops``."""
    out = np.empty(len(v), dtype=object)
    for i, x in enumerate(v):
        out[i] = _Tracked(x, ops)
    return out


# ---------------------------------------------------------------------------
# closed-form kernels


def collision_probability(c, r: float):
    """Collision probability of the p-stable L2 hash at distance ``c``.

    ``1 - 2 Phi(-r/c) - 2c / (sqrt(2 pi) r) * (1 - exp(-r^2 / (2 c^2)))``,
    evaluated as ``erf(s/sqrt 2) - 2/(sqrt(2 pi) s) * (-expm1(-s^2/2))`` with
    ``s = r/c`` to avoid cancellation.  Accepts scalars or arrays.
    """
    if not r > 0:
        raise InputError(f"r must be positive, got {r}")
    c_arr = np.asarray(c, dtype=np.float64)
    if np.any(c_arr < 0):
        raise InputError("distance must be nonnegative")
    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        s = r / c_arr
        p = special.erf(s / math.sqrt(2.0)) + (2.0 / SQRT_2PI) * np.expm1(-0.5 * s * s) / s
    p = np.where(c_arr == 0.0, 1.0, p)
    p = np.where(np.isinf(c_arr), 0.0, p)
    p = np.clip(p, 0.0, 1.0)
    return float(p) if p.ndim == 0 else p


def collision_probability_dc(c, r: float):
    """Derivative of :func:`collision_probability` with respect to ``c``.

    ``-2 / (sqrt(2 pi) r) * (1 - exp(-r^2 / (2 c^2)))``; taken as 0 at ``c = 0``.
    """
    c_arr = np.asarray(c, dtype=np.float64)
    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        d = (2.0 / (SQRT_2PI * r)) * np.expm1(-0.5 * (r / c_arr) ** 2)
    d = np.where(c_arr == 0.0, 0.0, d)
    return float(d) if d.ndim == 0 else d


def sign_collision_probability(theta):
    return 1.0 - np.asarray(theta, dtype=np.float64) / math.pi


def effective_row_kernel(c, spec):
    """Collision probability of one sketch row: the base kernel to the K-th power.

    ``spec`` is anything with ``family_config`` and ``concat_K`` (an ensemble
    spec or a kernel config).  For distance families ``c`` is the Euclidean
    distance; for the sign family it is the angle in radians.
    """
    fc = spec.family_config
    if fc.family is Family.SignProjection:
        base = sign_collision_probability(c)
    else:
        base = collision_probability(c, fc.bandwidth_r)
    return base ** spec.concat_K


# ---------------------------------------------------------------------------
# ensemble


def slot_generator(master_seed: int, row: int, slot: int) -> np.random.Generator:
    """Independent stream for hash function (row, slot).

    Philox is counter based: the (row, slot) pair is placed in the high counter
    words, so streams never overlap and adding rows or slots leaves existing
    functions untouched.
    """
    return np.random.Generator(np.random.Philox(key=master_seed, counter=[0, _SLOT_STREAM, slot, row]))


def row_generator(master_seed: int, row: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(key=master_seed, counter=[0, _ROW_STREAM, 0, row]))


class LshEnsemble:
    """Materialised hash parameters for an :class:`LshEnsembleSpec`.

    Immutable after construction; safe to share across threads.
    """

    def __init__(self, spec: LshEnsembleSpec):
        self.spec = spec
        fc = spec.family_config
        L, K, p = spec.rows_L, spec.concat_K, fc.input_dim_p
        self.projections = np.empty((L, K, p), dtype=np.float64)
        self.offsets = np.zeros((L, K), dtype=np.float64)
        if fc.family is Family.SparseSign:
            self.width = fc.bandwidth_r * SPARSE_WIDTH_SCALE
        else:
            self.width = fc.bandwidth_r
        for l in range(L):
            for k in range(K):
                g = slot_generator(spec.master_seed, l, k)
                if fc.family is Family.SparseSign:
                    self.projections[l, k] = sample_sparse_row(p, g)
                else:
                    self.projections[l, k] = g.standard_normal(p)
                if fc.family.is_distance:
                    self.offsets[l, k] = g.uniform(0.0, self.width)
        # universal-hash coefficients for the 2K 32-bit halves of the raw tuple
        self.coef = np.empty((L, 2 * K), dtype=np.uint64)
        self.bias = np.empty(L, dtype=np.uint64)
        for l in range(L):
            g = row_generator(spec.master_seed, l)
            self.bias[l] = g.integers(0, 2**64, dtype=np.uint64)
            self.coef[l] = g.integers(0, 2**64, size=2 * K, dtype=np.uint64)
        for arr in (self.projections, self.offsets, self.coef, self.bias):
            arr.setflags(write=False)

    def _check(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=np.float64)
        if X.ndim == 1:
            X = X[None, :]
        if X.ndim != 2 or X.shape[1] != self.spec.input_dim:
            raise InputError(
                f"dimension mismatch: expected vectors of length {self.spec.input_dim}, got shape {X.shape}"
            )
        if not np.all(np.isfinite(X)):
            raise InputError("query contains NaN or infinite entries")
        return X

    def projections_of(self, X) -> np.ndarray:
        """Raw inner products, shape (n, L, K), accumulated coordinate by coordinate."""
        X = self._check(X)
        n = X.shape[0]
        L, K, p = self.projections.shape
        P = self.projections.reshape(L * K, p)
        acc = np.zeros((n, L * K))
        for i in range(p):
            acc += X[:, i : i + 1] * P[:, i]
        return acc.reshape(n, L, K)

    def raw_hashes(self, X) -> np.ndarray:
        """Integer hash values, shape (n, L, K)."""
        proj = self.projections_of(X)
        if self.spec.family is Family.SignProjection:
            return (proj >= 0.0).astype(np.int64)
        return np.floor((proj + self.offsets) / self.width).astype(np.int64)

    def combine(self, raw: np.ndarray) -> np.ndarray:
        """Map raw K-tuples (n, L, K) to bucket indices (n, L) in [0, R).

        Vector multiply-shift: the tuple is split into 32-bit halves, combined
        with random 64-bit coefficients mod 2^64, and the top 32 bits reduced
        mod R.
        """
        u = raw.astype(np.int64).view(np.uint64)
        n, L, K = u.shape
        halves = np.empty((n, L, 2 * K), dtype=np.uint64)
        halves[..., 0::2] = u & _MASK32
        halves[..., 1::2] = u >> _SHIFT32
        acc = np.broadcast_to(self.bias, (n, L)).copy()
        for j in range(2 * K):
            acc += self.coef[:, j] * halves[..., j]
        return ((acc >> _SHIFT32) % np.uint64(self.spec.range_R)).astype(np.int64)

    def indices(self, X) -> np.ndarray:
        """Bucket index of every row for every input, shape (n, L)."""
        X = self._check(X)
        L, K = self.spec.rows_L, self.spec.concat_K
        chunk = max(1, _CHUNK_ELEMS // (L * K))
        if X.shape[0] <= chunk:
            return self.combine(self.raw_hashes(X))
        return np.concatenate(
            [self.combine(self.raw_hashes(X[i : i + chunk])) for i in range(0, X.shape[0], chunk)]
        )

    def index(self, v, row: int) -> int:
        if not 0 <= row < self.spec.rows_L:
            raise InputError(f"row {row} out of range [0, {self.spec.rows_L})")
        return int(self.indices(v)[0, row])


@functools.lru_cache(maxsize=32)
def get_ensemble(spec: LshEnsembleSpec) -> LshEnsemble:
    return LshEnsemble(spec)


def ensemble_index(v, spec: LshEnsembleSpec, row_l: int) -> int:
    if not 0 <= row_l < spec.rows_L:
        raise InputError(f"row {row_l} out of range [0, {spec.rows_L})")
    return get_ensemble(spec).index(v, row_l)
