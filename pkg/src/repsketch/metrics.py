"""Accuracy/MAE and the parameter and FLOP accounting used in the reports."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from typing import Sequence

import numpy as np

from .distill import Task
from .errors import InputError

BYTES_PER_PARAM = 8


@dataclass(frozen=True)
class EvalReport:
    metric_name: str  # "Accuracy" or "MAE"
    metric_value: float
    params_count: int = 0
    flops: int = 0

    @property
    def memory_bytes(self) -> int:
        return self.params_count * BYTES_PER_PARAM

    @property
    def memory_mb(self) -> float:
        return self.memory_bytes / 1e6

    def to_dict(self) -> dict:
        d = asdict(self)
        d["memory_bytes"] = self.memory_bytes
        return d

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)


@dataclass(frozen=True)
class MlpSpec:
    input_dim: int
    hidden_sizes: tuple[int, ...] = ()
    output_dim: int = 1

    def __post_init__(self):
        object.__setattr__(self, "hidden_sizes", tuple(int(h) for h in self.hidden_sizes))
        if self.input_dim < 1 or self.output_dim < 1 or any(h < 1 for h in self.hidden_sizes):
            raise InputError("MLP layer sizes must be positive")

    @classmethod
    def parse(cls, text: str, input_dim: int, output_dim: int = 1) -> MlpSpec:
        """``"512/256/128"`` -> hidden sizes (512, 256, 128)."""
        text = text.strip()
        try:
            hidden = tuple(int(t) for t in text.split("/")) if text else ()
        except ValueError:
            raise InputError(f"bad MLP spec {text!r}") from None
        return cls(input_dim, hidden, output_dim)

    @property
    def layers(self) -> list[tuple[int, int]]:
        sizes = [self.input_dim, *self.hidden_sizes, self.output_dim]
        return list(zip(sizes[:-1], sizes[1:]))


def _nonneg(*xs):
    if any(int(x) < 0 for x in xs):
        raise InputError("accounting arguments must be nonnegative")


def sketch_params(L: int, R: int, d: int, p: int) -> int:
    """Counters plus projection matrix: ``R*L + d*p``."""
    _nonneg(L, R, d, p)
    return R * L + d * p


def sketch_flops(d: int, p: int, K: int, R: int) -> int:
    """``2*d*p + floor(p*K*R/3) + R``: projection, sparse hashing, aggregation.

    Here ``R`` counts the hash rows that are aggregated per query, so callers
    holding a sketch pass its row count.
    """
    _nonneg(d, p, K, R)
    return 2 * d * p + (p * K * R) // 3 + R


def mlp_params(spec: MlpSpec) -> int:
    return sum(fi * fo + fo for fi, fo in spec.layers)


def mlp_flops(spec: MlpSpec, flops_per_mac: int = 2) -> int:
    """Dense-layer FLOPs; ``flops_per_mac=1`` counts fused multiply-adds once."""
    return sum(flops_per_mac * fi * fo for fi, fo in spec.layers)


def reduction_ratio(baseline: float, compressed: float) -> float:
    return float(baseline) / float(compressed)


def evaluate(predictions, labels, task, params_count: int = 0, flops: int = 0) -> EvalReport:
    """Accuracy of label predictions, or mean absolute error of regression outputs."""
    pred = np.asarray(predictions, dtype=np.float64).reshape(-1)
    y = np.asarray(labels, dtype=np.float64).reshape(-1)
    if pred.shape != y.shape:
        raise InputError(f"{pred.size} predictions but {y.size} labels")
    if pred.size == 0:
        raise InputError("nothing to evaluate")
    task = Task.parse(task)
    if task is Task.BinaryClassification:
        return EvalReport("Accuracy", float(np.mean(pred == y)), int(params_count), int(flops))
    return EvalReport("MAE", float(np.mean(np.abs(pred - y))), int(params_count), int(flops))


def format_table(rows: Sequence[dict], columns: Sequence[str] | None = None) -> str:
    """Aligned plain-text table."""
    if not rows:
        return ""
    columns = list(columns or rows[0].keys())

    def cell(v):
        if isinstance(v, float):
            return f"{v:.6g}"
        return str(v)

    body = [[cell(r.get(c, "")) for c in columns] for r in rows]
    widths = [max(len(c), *(len(b[i]) for b in body)) for i, c in enumerate(columns)]
    lines = ["  ".join(c.ljust(w) for c, w in zip(columns, widths))]
    lines.append("  ".join("-" * w for w in widths))
    lines += ["  ".join(v.rjust(w) for v, w in zip(b, widths)) for b in body]
    return "\n".join(lines)
