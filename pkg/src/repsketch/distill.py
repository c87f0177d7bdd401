"""Learning a weighted LSH-kernel representation from teacher scores.

The model is ``f(q) = sum_j alpha_j K(A^T q, x_j)`` where ``K`` is the row
collision probability of the hash ensemble (the L2 kernel raised to the power
K).  Points ``x_j``, weights ``alpha_j`` and the optional projection ``A`` are
fit by mini-batch gradient descent on the squared error against the teacher.
Because the kernel is exactly the sketch row's collision probability, a
sketch built from the exported points is an unbiased estimator of the trained
model.
"""

from __future__ import annotations

import enum
import logging
import math
import struct
from dataclasses import dataclass, field, replace
from typing import Callable, Sequence

import numpy as np

from .errors import ConfigError, FormatError, InputError, TrainingError
from .kde import KernelConfig, WeightedPoint, batch_kde, kernel_matrix
from .lsh import Family, LshEnsembleSpec, LshFamilyConfig, collision_probability, collision_probability_dc
from . import sketch as _sketch

log = logging.getLogger(__name__)

_DIST_FLOOR = 1e-12


class Task(enum.Enum):
    BinaryClassification = "classification"
    Regression = "regression"

    @classmethod
    def parse(cls, value) -> Task:
        if isinstance(value, Task):
            return value
        v = str(value).lower()
        if v in ("classification", "binary", "binaryclassification", "clf"):
            return cls.BinaryClassification
        if v in ("regression", "reg"):
            return cls.Regression
        raise ConfigError(f"unknown task {value!r}")


@dataclass
class KernelModel:
    points: np.ndarray
    alphas: np.ndarray
    kernel: KernelConfig
    projection: np.ndarray | None = None

    def __post_init__(self):
        self.points = np.atleast_2d(np.asarray(self.points, dtype=np.float64))
        self.alphas = np.asarray(self.alphas, dtype=np.float64).reshape(-1)
        if self.points.shape[0] < 1 or self.points.shape[0] != self.alphas.shape[0]:
            raise InputError("model needs M >= 1 points with one weight each")
        if self.points.shape[1] != self.kernel.dim:
            raise InputError(f"points have {self.points.shape[1]} coordinates, kernel expects {self.kernel.dim}")
        if self.projection is not None:
            self.projection = np.asarray(self.projection, dtype=np.float64)
            if self.projection.ndim != 2 or self.projection.shape[1] != self.points.shape[1]:
                raise InputError(f"projection shape {self.projection.shape} does not match points")
        for name, arr in (("points", self.points), ("alphas", self.alphas), ("projection", self.projection)):
            if arr is not None and not np.all(np.isfinite(arr)):
                raise InputError(f"non-finite entries in {name}")

    @property
    def num_points(self) -> int:
        return self.points.shape[0]

    @property
    def input_dim(self) -> int:
        return self.points.shape[1] if self.projection is None else self.projection.shape[0]

    @property
    def hashed_dim(self) -> int:
        return self.points.shape[1]

    def __eq__(self, other):
        if not isinstance(other, KernelModel):
            return NotImplemented
        if (self.projection is None) != (other.projection is None):
            return False
        return (
            self.kernel == other.kernel
            and np.array_equal(self.points, other.points)
            and np.array_equal(self.alphas, other.alphas)
            and (self.projection is None or np.array_equal(self.projection, other.projection))
        )


@dataclass(frozen=True)
class DistillConfig:
    num_points_M: int = 100
    projected_dim: int | None = None
    learning_rate: float = 0.01
    epochs: int = 50
    batch_size: int = 128
    seed: int = 0
    init_scheme: str = "data"  # "data" (subsample) or "gaussian"
    optimizer: str = "sgd"  # "sgd" or "adam"
    momentum: float = 0.0  # plain SGD by default; 0.9 is the usual opt-in
    alpha_init_scale: float = 0.01
    lr_decay: float = 0.97  # multiplicative per epoch

    def __post_init__(self):
        if self.num_points_M < 1:
            raise ConfigError("num_points_M must be >= 1")
        if self.projected_dim is not None and self.projected_dim < 1:
            raise ConfigError("projected_dim must be >= 1")
        if not self.learning_rate > 0:
            raise ConfigError("learning_rate must be positive")
        if self.epochs < 1 or self.batch_size < 1:
            raise ConfigError("epochs and batch_size must be >= 1")
        if self.init_scheme not in ("data", "gaussian"):
            raise ConfigError(f"unknown init_scheme {self.init_scheme!r}")
        if self.optimizer not in ("sgd", "adam"):
            raise ConfigError(f"unknown optimizer {self.optimizer!r}")
        if not 0 <= self.momentum < 1:
            raise ConfigError("momentum must lie in [0, 1)")
        if not 0 < self.lr_decay <= 1:
            raise ConfigError("lr_decay must lie in (0, 1]")
        if self.alpha_init_scale < 0:
            raise ConfigError("alpha_init_scale must be >= 0")


@dataclass
class Gradients:
    alphas: np.ndarray
    points: np.ndarray
    projection: np.ndarray | None
    loss: float


@dataclass
class TrainResult:
    model: KernelModel
    train_loss: list[float] = field(default_factory=list)  # index 0 is the initial loss
    val_loss: list[float] = field(default_factory=list)


# ---------------------------------------------------------------------------
# forward / backward


def _require_distance_kernel(kernel: KernelConfig) -> None:
    if not kernel.family.is_distance:
        raise ConfigError("distillation needs a distance-based family (l2 or sparse)")


def _hash_space(Q: np.ndarray, projection: np.ndarray | None) -> np.ndarray:
    return Q if projection is None else Q @ projection


def predict_batch(model: KernelModel, Q) -> np.ndarray:
    Q = np.atleast_2d(np.asarray(Q, dtype=np.float64))
    if Q.shape[1] != model.input_dim:
        raise InputError(f"dimension mismatch: queries have {Q.shape[1]} coordinates, model expects {model.input_dim}")
    return batch_kde(Q, model.points, model.alphas, model.kernel, projection=model.projection)


def predict(model: KernelModel, q) -> float:
    q = np.asarray(q, dtype=np.float64)
    if q.ndim != 1 or q.shape[0] != model.input_dim:
        raise InputError(f"dimension mismatch: query has shape {q.shape}, model expects ({model.input_dim},)")
    return float(predict_batch(model, q[None, :])[0])


def batch_gradients(model: KernelModel, Q: np.ndarray, y: np.ndarray) -> Gradients:
    """Gradients of the mean squared error ``mean((f(q_i) - y_i)^2)``."""
    _require_distance_kernel(model.kernel)
    Q = np.atleast_2d(np.asarray(Q, dtype=np.float64))
    y = np.asarray(y, dtype=np.float64).reshape(-1)
    B = Q.shape[0]
    r, K = model.kernel.bandwidth, model.kernel.concat_K
    Z = _hash_space(Q, model.projection)
    D = Z[:, None, :] - model.points[None, :, :]
    c = np.sqrt(np.einsum("bmd,bmd->bm", D, D))
    p = collision_probability(c, r)
    k = p**K
    e = k @ model.alphas - y
    loss = float(np.mean(e * e))
    df = 2.0 * e / B
    g_alpha = k.T @ df
    dk_dc = K * p ** (K - 1) * collision_probability_dc(c, r)
    W = df[:, None] * model.alphas[None, :] * dk_dc / np.maximum(c, _DIST_FLOOR)
    g_points = -np.einsum("bm,bmd->md", W, D)
    g_proj = None
    if model.projection is not None:
        g_proj = Q.T @ np.einsum("bm,bmd->bd", W, D)
    return Gradients(g_alpha, g_points, g_proj, loss)


def kernel_gradients(model: KernelModel, q, y: float) -> Gradients:
    """Gradients of the single-example loss ``(f(q) - y)^2``."""
    q = np.asarray(q, dtype=np.float64)
    if q.ndim != 1 or q.shape[0] != model.input_dim:
        raise InputError(f"dimension mismatch: query has shape {q.shape}, model expects ({model.input_dim},)")
    return batch_gradients(model, q[None, :], np.array([y]))


def mse(model: KernelModel, Q, y, chunk: int = 4096) -> float:
    err = predict_batch(model, Q) - np.asarray(y, dtype=np.float64)
    return float(np.mean(err * err))


# ---------------------------------------------------------------------------
# optimisers


class _Sgd:
    def __init__(self, lr: float, momentum: float):
        self.lr, self.momentum, self.vel = lr, momentum, None

    def step(self, params: list[np.ndarray], grads: list[np.ndarray]) -> None:
        if self.vel is None:
            self.vel = [np.zeros_like(p) for p in params]
        for p, g, v in zip(params, grads, self.vel):
            v *= self.momentum
            v -= self.lr * g
            p += v


class _Adam:
    def __init__(self, lr: float, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.lr, self.b1, self.b2, self.eps = lr, beta1, beta2, eps
        self.m = self.v = None
        self.t = 0

    def step(self, params, grads):
        if self.m is None:
            self.m = [np.zeros_like(p) for p in params]
            self.v = [np.zeros_like(p) for p in params]
        self.t += 1
        c1 = 1.0 - self.b1**self.t
        c2 = 1.0 - self.b2**self.t
        for p, g, m, v in zip(params, grads, self.m, self.v):
            m *= self.b1
            m += (1.0 - self.b1) * g
            v *= self.b2
            v += (1.0 - self.b2) * g * g
            p -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


# ---------------------------------------------------------------------------
# training


def _as_training_arrays(teacher_pairs) -> tuple[np.ndarray, np.ndarray]:
    if isinstance(teacher_pairs, tuple) and len(teacher_pairs) == 2 and isinstance(teacher_pairs[0], np.ndarray):
        Q, y = teacher_pairs
    else:
        pairs = list(teacher_pairs)
        if not pairs:
            raise InputError("teacher set is empty")
        Q = np.stack([np.asarray(q, dtype=np.float64) for q, _ in pairs])
        y = np.array([float(t) for _, t in pairs])
    Q = np.atleast_2d(np.asarray(Q, dtype=np.float64))
    y = np.asarray(y, dtype=np.float64).reshape(-1)
    if Q.shape[0] == 0:
        raise InputError("teacher set is empty")
    if Q.shape[0] != y.shape[0]:
        raise InputError(f"{Q.shape[0]} inputs but {y.shape[0]} teacher scores")
    if not (np.all(np.isfinite(Q)) and np.all(np.isfinite(y))):
        raise InputError("teacher data contains non-finite values")
    return Q, y


def init_model(Q: np.ndarray, cfg: DistillConfig, kernel: KernelConfig, rng: np.random.Generator) -> KernelModel:
    d = Q.shape[1]
    projection = None
    if cfg.projected_dim is not None:
        projection = rng.standard_normal((d, cfg.projected_dim)) / math.sqrt(d)
    Z = _hash_space(Q, projection)
    M = cfg.num_points_M
    if cfg.init_scheme == "data":
        idx = rng.choice(Z.shape[0], size=M, replace=M > Z.shape[0])
        points = Z[idx].copy()
    else:
        points = Z.mean(axis=0) + rng.standard_normal((M, Z.shape[1])) * Z.std(axis=0)
    alphas = rng.uniform(-cfg.alpha_init_scale, cfg.alpha_init_scale, M) if cfg.alpha_init_scale else np.zeros(M)
    if kernel.dim != Z.shape[1]:
        kernel = replace(kernel, family_config=replace(kernel.family_config, input_dim_p=Z.shape[1]))
    return KernelModel(points, alphas, kernel, projection)


def train(teacher_pairs, cfg: DistillConfig, kernel: KernelConfig, validation=None,
          init: KernelModel | None = None, callback: Callable[[int, float], None] | None = None) -> TrainResult:
    """Fit a :class:`KernelModel` to teacher scores and keep the loss history.

    ``teacher_pairs`` is a sequence of ``(q, y)`` or a ``(Q, y)`` array pair.
    Raises :class:`TrainingError` if the loss stops being finite.
    """
    _require_distance_kernel(kernel)
    Q, y = _as_training_arrays(teacher_pairs)
    rng = np.random.default_rng(cfg.seed)
    model = init if init is not None else init_model(Q, cfg, kernel, rng)
    if init is not None:
        model = KernelModel(model.points.copy(), model.alphas.copy(), model.kernel,
                            None if model.projection is None else model.projection.copy())
    if model.input_dim != Q.shape[1]:
        raise InputError(f"inputs have {Q.shape[1]} coordinates, model expects {model.input_dim}")
    if cfg.optimizer == "adam":
        opt = _Adam(cfg.learning_rate)
    else:
        opt = _Sgd(cfg.learning_rate, cfg.momentum)
    params = [model.alphas, model.points] + ([model.projection] if model.projection is not None else [])
    result = TrainResult(model, [mse(model, Q, y)])
    if validation is not None:
        Qv, yv = _as_training_arrays(validation)
        result.val_loss.append(mse(model, Qv, yv))
    N = Q.shape[0]
    # overflow is detected explicitly below and reported as TrainingError
    with np.errstate(over="ignore", invalid="ignore"):
        for epoch in range(1, cfg.epochs + 1):
            perm = rng.permutation(N)
            for start in range(0, N, cfg.batch_size):
                b = perm[start : start + cfg.batch_size]
                g = batch_gradients(model, Q[b], y[b])
                grads = [g.alphas, g.points] + ([g.projection] if g.projection is not None else [])
                if not all(np.all(np.isfinite(x)) for x in grads):
                    raise TrainingError("non-finite gradient (training diverged)", epoch)
                opt.step(params, grads)
            loss = mse(model, Q, y)
            if not math.isfinite(loss):
                raise TrainingError("non-finite loss (training diverged)", epoch)
            result.train_loss.append(loss)
            if validation is not None:
                result.val_loss.append(mse(model, Qv, yv))
            if callback is not None:
                callback(epoch, loss)
            log.debug("epoch %d loss %.6g", epoch, loss)
            opt.lr *= cfg.lr_decay
    return result


def fit(teacher_pairs, cfg: DistillConfig, kernel: KernelConfig) -> KernelModel:
    return train(teacher_pairs, cfg, kernel).model


def median_pairwise_distance(Z: np.ndarray, seed: int = 0, max_points: int = 1000) -> float:
    Z = np.atleast_2d(np.asarray(Z, dtype=np.float64))
    if Z.shape[0] > max_points:
        Z = Z[np.random.default_rng(seed).choice(Z.shape[0], max_points, replace=False)]
    diff = Z[:, None, :] - Z[None, :, :]
    dist = np.sqrt(np.einsum("ijk,ijk->ij", diff, diff))
    iu = np.triu_indices(Z.shape[0], k=1)
    return float(np.median(dist[iu])) if iu[0].size else 1.0


BANDWIDTH_GRID = (0.5, 1.0, 2.0, 4.0, 8.0)


def select_bandwidth(teacher_pairs, cfg: DistillConfig, kernel: KernelConfig, validation,
                     grid: Sequence[float] = BANDWIDTH_GRID) -> tuple[float, dict[float, float]]:
    """Pick r from ``grid`` x (median pairwise distance) by validation MSE."""
    Q, y = _as_training_arrays(teacher_pairs)
    rng = np.random.default_rng(cfg.seed)
    probe = init_model(Q, cfg, kernel, rng)
    scale = median_pairwise_distance(_hash_space(Q, probe.projection), cfg.seed)
    scores: dict[float, float] = {}
    for mult in grid:
        r = mult * scale
        kern = replace(kernel, family_config=replace(kernel.family_config, bandwidth_r=r))
        try:
            res = train((Q, y), cfg, kern, validation=validation)
            scores[r] = res.val_loss[-1]
        except TrainingError:
            scores[r] = math.inf
    best = min(scores, key=scores.get)
    return best, scores


# ---------------------------------------------------------------------------
# bridge to the sketch and to decisions


def export_points(model: KernelModel) -> list[WeightedPoint]:
    return [WeightedPoint(x, a) for x, a in zip(model.points, model.alphas)]


def import_points(points: Sequence[WeightedPoint], kernel: KernelConfig, projection=None) -> KernelModel:
    points = list(points)
    return KernelModel(np.stack([p.x for p in points]), np.array([p.alpha for p in points]), kernel, projection)


def to_sketch(model: KernelModel, rows_L: int, range_R: int, master_seed: int = 0, threads: int = 1):
    """Build a sketch of ``model`` with the same kernel (family, bandwidth, K)."""
    spec = LshEnsembleSpec(model.kernel.family_config, rows_L, model.kernel.concat_K, range_R, master_seed)
    return _sketch.build((model.points, model.alphas), spec, projection=model.projection, threads=threads)


DECISION_MODES = ("probability", "sign")


def decide(score, task, mode: str = "probability"):
    """Turn a score into a prediction: a {0, 1} label or the regression value.

    ``mode`` is ``"probability"`` (threshold 0.5) or ``"sign"`` (threshold 0,
    for logits and +-1 targets).  Accepts scalars or arrays.
    """
    task = Task.parse(task)
    if task is Task.Regression:
        return score
    if mode == "probability":
        threshold = 0.5
    elif mode == "sign":
        threshold = 0.0
    else:
        raise ConfigError(f"unknown decision mode {mode!r}")
    out = (np.asarray(score) >= threshold).astype(np.int64)
    return int(out) if out.ndim == 0 else out


# ---------------------------------------------------------------------------
# model file

MODEL_MAGIC = b"RKMD"
MODEL_VERSION = 1
# magic, version, M, d, d', K, family, pad, seed, r
MODEL_HEADER = struct.Struct("<4sIIIIIB3xQd")
_F8 = np.dtype("<f8")


def serialize_model(model: KernelModel) -> bytes:
    fc = model.kernel.family_config
    d_proj = 0 if model.projection is None else model.hashed_dim
    header = MODEL_HEADER.pack(MODEL_MAGIC, MODEL_VERSION, model.num_points, model.input_dim, d_proj,
                               model.kernel.concat_K, int(fc.family), fc.seed, fc.bandwidth_r)
    parts = [header, model.alphas.astype(_F8).tobytes(), np.ascontiguousarray(model.points, dtype=_F8).tobytes()]
    if model.projection is not None:
        parts.append(np.ascontiguousarray(model.projection, dtype=_F8).tobytes())
    return b"".join(parts)


def deserialize_model(data: bytes) -> KernelModel:
    data = bytes(data)
    if len(data) < 4:
        raise FormatError("truncated magic", len(data))
    if data[:4] != MODEL_MAGIC:
        raise FormatError(f"bad magic {data[:4]!r}, expected {MODEL_MAGIC!r}", 0)
    if len(data) < MODEL_HEADER.size:
        raise FormatError(f"truncated header: need {MODEL_HEADER.size} bytes, file has {len(data)}", len(data))
    _, version, M, d, d_proj, K, fam, seed, r = MODEL_HEADER.unpack_from(data)
    if version != MODEL_VERSION:
        raise FormatError(f"unsupported model version {version}", 4)
    if M < 1:
        raise FormatError("M must be >= 1", 8)
    if d < 1:
        raise FormatError("d must be >= 1", 12)
    if K < 1:
        raise FormatError("concat_K must be >= 1", 20)
    try:
        family = Family(fam)
    except ValueError:
        raise FormatError(f"unknown family code {fam}", 24) from None
    if not math.isfinite(r) or (family.is_distance and r <= 0):
        raise FormatError(f"invalid bandwidth {r}", 36)
    hashed = d_proj if d_proj else d
    sizes = [M, M * hashed] + ([d * d_proj] if d_proj else [])
    expected = MODEL_HEADER.size + 8 * sum(sizes)
    if len(data) < expected:
        raise FormatError(f"truncated body: need {expected} bytes, file has {len(data)}", len(data))
    if len(data) > expected:
        raise FormatError(f"{len(data) - expected} trailing bytes", expected)
    arrays, offset = [], MODEL_HEADER.size
    for n in sizes:
        arr = np.frombuffer(data, dtype=_F8, count=n, offset=offset).astype(np.float64)
        bad = np.flatnonzero(~np.isfinite(arr))
        if bad.size:
            raise FormatError("non-finite value", offset + 8 * int(bad[0]))
        arrays.append(arr)
        offset += 8 * n
    kernel = KernelConfig(LshFamilyConfig(family, hashed, r, seed), K)
    projection = arrays[2].reshape(d, d_proj) if d_proj else None
    return KernelModel(arrays[1].reshape(M, hashed), arrays[0], kernel, projection)


def save_model(model: KernelModel, path) -> None:
    from .io import atomic_write_bytes

    atomic_write_bytes(path, serialize_model(model))


def load_model(path) -> KernelModel:
    with open(path, "rb") as fh:
        return deserialize_model(fh.read())
