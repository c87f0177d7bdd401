"""libsvm ingestion, splitting and feature scaling."""

from __future__ import annotations

import io
import math
from dataclasses import dataclass, replace
from typing import Iterable

import numpy as np

from .distill import Task
from .errors import InputError, ParseError
from .io import open_text


@dataclass
class Dataset:
    features: np.ndarray
    labels: np.ndarray
    task: Task = Task.BinaryClassification

    def __post_init__(self):
        self.features = np.atleast_2d(np.asarray(self.features, dtype=np.float64))
        self.labels = np.asarray(self.labels, dtype=np.float64).reshape(-1)
        if self.features.shape[0] != self.labels.shape[0]:
            raise InputError(f"{self.features.shape[0]} feature rows but {self.labels.shape[0]} labels")
        if not (np.all(np.isfinite(self.features)) and np.all(np.isfinite(self.labels))):
            raise InputError("dataset contains NaN or infinite values")
        self.task = Task.parse(self.task)

    @property
    def feature_dim(self) -> int:
        return self.features.shape[1]

    def __len__(self) -> int:
        return self.labels.shape[0]

    def __eq__(self, other):
        if not isinstance(other, Dataset):
            return NotImplemented
        return (
            self.task == other.task
            and self.features.shape == other.features.shape
            and np.array_equal(self.features, other.features)
            and np.array_equal(self.labels, other.labels)
        )

    def subset(self, idx) -> Dataset:
        return Dataset(self.features[idx], self.labels[idx], self.task)


def normalize_labels(raw: np.ndarray) -> np.ndarray:
    """Map a two-valued label set onto {0, 1}, larger raw label positive.

    A single observed value is read as one side of the usual conventions:
    non-positive values map to 0, ``+1`` and larger to 1.
    """
    values = np.unique(raw)
    if values.size > 2:
        raise InputError(f"classification labels take {values.size} distinct values")
    if values.size == 2:
        return (raw == values[1]).astype(np.float64)
    if values.size == 1:
        return np.full(raw.shape, 1.0 if values[0] >= 1 else 0.0)
    return raw.astype(np.float64)


def _parse_number(tok: str, line_no: int, what: str) -> float:
    try:
        v = float(tok.replace("−", "-"))
    except ValueError:
        raise ParseError(f"malformed {what} {tok!r}", line_no) from None
    if not math.isfinite(v):
        raise ParseError(f"non-finite {what} {tok!r}", line_no)
    return v


def parse_libsvm(source, n_features: int | None = None, task=None) -> Dataset:
    """Parse ``label idx:val ...`` lines into a dense :class:`Dataset`.

    ``source`` is a text stream, a string of file contents, or anything
    iterable over lines.  Indices are 1-based and strictly increasing; absent
    indices are zero.  Blank lines are ignored; any other malformed line raises
    :class:`ParseError` with its 1-based line number.  ``task`` defaults to
    classification when at most two distinct labels occur.
    """
    if isinstance(source, str):
        source = io.StringIO(source)
    labels: list[float] = []
    rows: list[tuple[list[int], list[float]]] = []
    max_idx = 0
    for line_no, line in enumerate(source, start=1):
        tokens = line.split()
        if not tokens:
            continue
        labels.append(_parse_number(tokens[0], line_no, "label"))
        idx, vals = [], []
        prev = 0
        for tok in tokens[1:]:
            key, sep, val = tok.partition(":")
            if not sep or not key or not val:
                raise ParseError(f"malformed token {tok!r}", line_no)
            try:
                j = int(key)
            except ValueError:
                raise ParseError(f"malformed index {key!r}", line_no) from None
            if j == 0:
                raise ParseError("feature index 0 (indices are 1-based)", line_no)
            if j <= prev:
                raise ParseError(f"non-increasing index {j} after {prev}", line_no)
            prev = j
            idx.append(j - 1)
            vals.append(_parse_number(val, line_no, "value"))
        max_idx = max(max_idx, prev)
        rows.append((idx, vals))
    d = max_idx if n_features is None else int(n_features)
    if d < max_idx:
        raise InputError(f"n_features={d} but index {max_idx} occurs")
    X = np.zeros((len(rows), d))
    for i, (idx, vals) in enumerate(rows):
        X[i, idx] = vals
    raw = np.array(labels)
    if task is None:
        task = Task.BinaryClassification if np.unique(raw).size <= 2 else Task.Regression
    task = Task.parse(task)
    y = normalize_labels(raw) if task is Task.BinaryClassification else raw
    return Dataset(X, y, task)


def load_libsvm(path, n_features: int | None = None, task=None) -> Dataset:
    """Read a plain or gzip-compressed libsvm file."""
    with open_text(path) as fh:
        return parse_libsvm(fh, n_features, task)


def emit_libsvm(dataset: Dataset) -> str:
    out = []
    for x, y in zip(dataset.features, dataset.labels):
        label = repr(int(y)) if dataset.task is Task.BinaryClassification else repr(float(y))
        feats = " ".join(f"{j + 1}:{float(v)!r}" for j, v in enumerate(x) if v != 0.0)
        out.append(f"{label} {feats}".rstrip())
    return "\n".join(out) + ("\n" if out else "")


def load_scores(path, expected: int | None = None) -> np.ndarray:
    """Read a teacher-score file: one decimal score per line."""
    with open_text(path) as fh:
        lines = [ln for ln in fh.read().splitlines()]
    while lines and not lines[-1].strip():
        lines.pop()
    scores = np.array([_parse_number(ln.strip(), i + 1, "score") for i, ln in enumerate(lines)])
    if expected is not None and scores.size != expected:
        raise InputError(f"teacher file {path} has {scores.size} scores but the dataset has {expected} rows")
    return scores


# ---------------------------------------------------------------------------
# splitting


def _allocate(counts: np.ndarray, total: int) -> np.ndarray:
    """Largest-remainder split of ``total`` proportional to ``counts``."""
    exact = counts * total / counts.sum()
    base = np.floor(exact).astype(int)
    short = total - base.sum()
    order = np.argsort(-(exact - base), kind="stable")
    base[order[:short]] += 1
    return base


def split(dataset: Dataset, test_fraction: float, seed: int = 0, stratify: bool | None = None
          ) -> tuple[Dataset, Dataset]:
    """Seeded shuffle split; stratified by label for classification by default."""
    if not 0 < test_fraction < 1:
        raise InputError(f"test_fraction must lie in (0, 1), got {test_fraction}")
    n = len(dataset)
    n_test = int(round(n * test_fraction))
    rng = np.random.default_rng(seed)
    if stratify is None:
        stratify = dataset.task is Task.BinaryClassification
    if stratify:
        classes, inverse = np.unique(dataset.labels, return_inverse=True)
        per_class = _allocate(np.bincount(inverse), n_test)
        test_idx = []
        for c in range(classes.size):
            members = rng.permutation(np.flatnonzero(inverse == c))
            test_idx.append(members[: per_class[c]])
        test_idx = np.sort(np.concatenate(test_idx))
    else:
        test_idx = np.sort(rng.permutation(n)[:n_test])
    mask = np.zeros(n, dtype=bool)
    mask[test_idx] = True
    train_idx = rng.permutation(np.flatnonzero(~mask))
    test_idx = rng.permutation(test_idx)
    return dataset.subset(train_idx), dataset.subset(test_idx)


# ---------------------------------------------------------------------------
# scaling


@dataclass(frozen=True)
class Scaler:
    mode: str
    offset: np.ndarray
    scale: np.ndarray


def scale_fit(dataset: Dataset, mode: str = "minmax") -> Scaler:
    X = dataset.features
    if mode == "minmax":
        lo, hi = X.min(axis=0), X.max(axis=0)
        return Scaler(mode, lo, hi - lo)
    if mode == "zscore":
        return Scaler(mode, X.mean(axis=0), X.std(axis=0))
    raise InputError(f"unknown scaling mode {mode!r}")


def scale_apply(scaler: Scaler, dataset: Dataset) -> Dataset:
    """Apply a fitted scaler; constant features map to 0."""
    X = dataset.features - scaler.offset
    safe = np.where(scaler.scale > 0, scaler.scale, 1.0)
    X = np.where(scaler.scale > 0, X / safe, 0.0)
    return replace(dataset, features=X)


def describe(dataset: Dataset) -> dict:
    info = {"rows": len(dataset), "features": dataset.feature_dim, "task": dataset.task.value}
    if dataset.task is Task.BinaryClassification:
        info["positives"] = int(dataset.labels.sum())
        info["negatives"] = int(len(dataset) - dataset.labels.sum())
    else:
        info["label_mean"] = float(dataset.labels.mean()) if len(dataset) else 0.0
    return info


def iter_rows(dataset: Dataset) -> Iterable[tuple[np.ndarray, float]]:
    return zip(dataset.features, dataset.labels)
