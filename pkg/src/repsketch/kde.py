"""Exact weighted kernel density evaluation.

This is the slow, trusted reference: every query touches every point.  The
sketch estimators are checked against it, and the distillation forward pass
is built on :func:`kernel_matrix`.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import InputError
from .lsh import Family, LshFamilyConfig, effective_row_kernel, ordered_project


@dataclass(frozen=True)
class KernelConfig:
    """The LSH kernel: a family at a bandwidth, raised to the power ``concat_K``."""

    family_config: LshFamilyConfig
    concat_K: int = 1

    def __post_init__(self):
        if int(self.concat_K) < 1:
            raise InputError(f"concat_K must be >= 1, got {self.concat_K}")
        object.__setattr__(self, "concat_K", int(self.concat_K))

    @property
    def family(self) -> Family:
        return self.family_config.family

    @property
    def bandwidth(self) -> float:
        return self.family_config.bandwidth_r

    @property
    def dim(self) -> int:
        return self.family_config.input_dim_p


@dataclass(frozen=True)
class WeightedPoint:
    x: np.ndarray
    alpha: float

    def __post_init__(self):
        x = np.array(self.x, dtype=np.float64)
        if x.ndim != 1:
            raise InputError("point must be a 1-D vector")
        if not np.all(np.isfinite(x)):
            raise InputError("point has non-finite entries")
        alpha = float(self.alpha)
        if not np.isfinite(alpha):
            raise InputError(f"non-finite weight {self.alpha!r}")
        x.setflags(write=False)
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "alpha", alpha)

    def __eq__(self, other):
        if not isinstance(other, WeightedPoint):
            return NotImplemented
        return self.alpha == other.alpha and np.array_equal(self.x, other.x)

    __hash__ = None


def stack_points(points: Sequence[WeightedPoint], dim: int | None = None) -> tuple[np.ndarray, np.ndarray]:
    """Split weighted points into an (M, d) matrix and a weight vector."""
    points = list(points)
    if not points:
        return np.zeros((0, dim or 0)), np.zeros(0)
    X = np.stack([p.x for p in points])
    if dim is not None and X.shape[1] != dim:
        raise InputError(f"dimension mismatch: points have {X.shape[1]} coordinates, expected {dim}")
    return X, np.array([p.alpha for p in points])


def pairwise_distances(Q: np.ndarray, X: np.ndarray) -> np.ndarray:
    diff = Q[:, None, :] - X[None, :, :]
    return np.sqrt(np.einsum("ijk,ijk->ij", diff, diff))


def pairwise_angles(Q: np.ndarray, X: np.ndarray) -> np.ndarray:
    qn = np.linalg.norm(Q, axis=1)[:, None]
    xn = np.linalg.norm(X, axis=1)[None, :]
    with np.errstate(invalid="ignore", divide="ignore"):
        cos = (Q @ X.T) / (qn * xn)
    cos = np.where((qn == 0) | (xn == 0), 1.0, cos)
    return np.arccos(np.clip(cos, -1.0, 1.0))


def kernel_matrix(Q, X, kernel: KernelConfig) -> np.ndarray:
    """Row-collision probabilities between queries (n, d) and points (M, d)."""
    Q = np.atleast_2d(np.asarray(Q, dtype=np.float64))
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    if Q.shape[1] != X.shape[1]:
        raise InputError(f"dimension mismatch: queries have {Q.shape[1]} coordinates, points {X.shape[1]}")
    if kernel.family is Family.SignProjection:
        c = pairwise_angles(Q, X)
    else:
        c = pairwise_distances(Q, X)
    return effective_row_kernel(c, kernel)


def _project(q, projection):
    q = np.asarray(q, dtype=np.float64)
    if projection is None:
        return q
    out = ordered_project(q, projection)
    return out[0] if q.ndim == 1 else out


def exact_weighted_kde(q, points: Sequence[WeightedPoint], kernel: KernelConfig, projection=None) -> float:
    """``sum_j alpha_j K(q, x_j)``; with a projection ``A`` the query is mapped to ``A^T q`` first."""
    q = _project(q, projection)
    if q.ndim != 1:
        raise InputError("query must be a 1-D vector")
    X, alpha = stack_points(points, q.shape[0])
    if alpha.size == 0:
        return 0.0
    return float(kernel_matrix(q, X, kernel)[0] @ alpha)


def exact_root_kde(q, points: Sequence[WeightedPoint], kernel: KernelConfig, projection=None,
                   absolute: bool = False) -> float:
    """``sum_j alpha_j sqrt(K(q, x_j))``, the scale of the sketch error bound.

    With signed weights the variance bound needs ``|alpha_j|``; pass
    ``absolute=True`` for that form.
    """
    q = _project(q, projection)
    if q.ndim != 1:
        raise InputError("query must be a 1-D vector")
    X, alpha = stack_points(points, q.shape[0])
    if alpha.size == 0:
        return 0.0
    if absolute:
        alpha = np.abs(alpha)
    return float(np.sqrt(kernel_matrix(q, X, kernel)[0]) @ alpha)


def batch_kde(Q, X, alpha, kernel: KernelConfig, projection=None, chunk: int = 2048) -> np.ndarray:
    """Exact weighted KDE for many queries at once."""
    Q = _project(np.atleast_2d(Q), projection)
    out = np.empty(Q.shape[0])
    for i in range(0, Q.shape[0], chunk):
        out[i : i + chunk] = kernel_matrix(Q[i : i + chunk], X, kernel) @ alpha
    return out
