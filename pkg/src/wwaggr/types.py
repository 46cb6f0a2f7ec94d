"""Core value types for change point scores, labels and detections.

All time indices are 0-based throughout the package, including file
formats. Every type here is an immutable value object: wrapped numpy
arrays are defensive copies with the writeable flag cleared, so
instances can be shared freely across threads.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DomainError, ShapeError

__all__ = [
    "ScoreSequence",
    "EnsembleScoreMatrix",
    "LabeledSequence",
    "DetectionResult",
    "transform_unsupervised_scores",
    "validate_matrix",
]


def _frozen_array(values, dtype=np.float64, ndim: int = 1) -> np.ndarray:
    arr = np.array(values, dtype=dtype)
    if arr.ndim != ndim:
        raise ShapeError(f"expected a {ndim}-d array, got shape {arr.shape}")
    arr.flags.writeable = False
    return arr


@dataclass(frozen=True)
class ScoreSequence:
    """One model's change point scores for one series, each in [0, 1]."""

    values: np.ndarray

    def __post_init__(self):
        arr = _frozen_array(self.values)
        if arr.size < 1:
            raise ShapeError("a score sequence needs at least one value")
        if np.isnan(arr).any():
            raise DomainError("score sequence contains NaN")
        if (arr < 0.0).any() or (arr > 1.0).any():
            bad = int(np.argmax((arr < 0.0) | (arr > 1.0)))
            raise DomainError(
                f"score {arr[bad]} at index {bad} is outside [0, 1]"
            )
        object.__setattr__(self, "values", arr)

    def __len__(self) -> int:
        return int(self.values.size)


@dataclass(frozen=True)
class EnsembleScoreMatrix:
    """K score sequences of common length T, one row per ensemble member."""

    values: np.ndarray
    model_ids: tuple[str, ...] = ()

    def __post_init__(self):
        arr = _frozen_array(self.values, ndim=2)
        if arr.shape[0] < 1 or arr.shape[1] < 1:
            raise ShapeError(f"matrix must be at least 1x1, got {arr.shape}")
        if np.isnan(arr).any():
            raise DomainError("score matrix contains NaN")
        if (arr < 0.0).any() or (arr > 1.0).any():
            row, col = np.unravel_index(
                int(np.argmax((arr < 0.0) | (arr > 1.0))), arr.shape
            )
            raise DomainError(
                f"score {arr[row, col]} at row {row}, column {col} is outside [0, 1]"
            )
        ids = tuple(self.model_ids)
        if not ids:
            ids = tuple(f"model_{k}" for k in range(arr.shape[0]))
        if len(ids) != arr.shape[0]:
            raise ShapeError(
                f"{len(ids)} model ids for {arr.shape[0]} rows"
            )
        object.__setattr__(self, "values", arr)
        object.__setattr__(self, "model_ids", ids)

    @property
    def n_models(self) -> int:
        return int(self.values.shape[0])

    @property
    def length(self) -> int:
        return int(self.values.shape[1])

    def row(self, k: int) -> ScoreSequence:
        return ScoreSequence(self.values[k])


@dataclass(frozen=True)
class LabeledSequence:
    """Ground truth for one series: at most one change point.

    ``change_point`` is the 0-based index of the first post-change step,
    or None when the series never changes regime.
    """

    length: int
    change_point: int | None = None

    def __post_init__(self):
        if self.length < 1:
            raise ShapeError(f"length must be >= 1, got {self.length}")
        if self.change_point is not None:
            cp = int(self.change_point)
            if not 0 <= cp < self.length:
                raise DomainError(
                    f"change point {cp} outside [0, {self.length - 1}]"
                )
            object.__setattr__(self, "change_point", cp)

    @property
    def has_change(self) -> bool:
        return self.change_point is not None

    def step_labels(self) -> np.ndarray:
        """Per-step binary labels: 1 from the change point onward."""
        labels = np.zeros(self.length, dtype=np.int64)
        if self.change_point is not None:
            labels[self.change_point:] = 1
        labels.flags.writeable = False
        return labels


@dataclass(frozen=True)
class DetectionResult:
    """Outcome of thresholding an aggregated statistic trace.

    ``detected`` distinguishes a real alarm from the no-alarm case, where
    ``tau`` equals the trace length T. This avoids the collision between
    "no alarm" and a genuine change at the last step.
    """

    tau: int
    trace: np.ndarray
    threshold: float
    detected: bool

    def __post_init__(self):
        trace = _frozen_array(self.trace)
        if trace.size < 1:
            raise ShapeError("trace must be non-empty")
        tau = int(self.tau)
        if self.detected:
            if not 0 <= tau < trace.size:
                raise DomainError(f"detected tau {tau} outside trace")
            if trace[tau] < self.threshold or (trace[:tau] >= self.threshold).any():
                raise DomainError("tau is not the first threshold crossing")
        else:
            if tau != trace.size:
                raise DomainError(
                    f"no-alarm tau must equal the trace length {trace.size}"
                )
            if (trace >= self.threshold).any():
                raise DomainError("trace crosses the threshold but detected=False")
        object.__setattr__(self, "tau", tau)
        object.__setattr__(self, "trace", trace)
        object.__setattr__(self, "threshold", float(self.threshold))

    @property
    def length(self) -> int:
        return int(self.trace.size)


def transform_unsupervised_scores(raw) -> ScoreSequence:
    """Map cosine-similarity scores in [-1, 1] onto [0, 1] change scores.

    Each value v becomes (1 - v) when v >= 0 and 0 otherwise, so identical
    adjacent windows (similarity 1) score 0 and orthogonal ones score 1.
    """
    arr = np.asarray(raw, dtype=np.float64)
    if arr.ndim != 1:
        raise ShapeError(f"expected a 1-d array, got shape {arr.shape}")
    bad = ~np.isfinite(arr) | (arr < -1.0) | (arr > 1.0)
    if bad.any():
        idx = int(np.argmax(bad))
        raise DomainError(
            f"value {arr[idx]} at index {idx} is outside [-1, 1]"
        )
    return ScoreSequence((1.0 - arr) * (arr >= 0.0))


def validate_matrix(rows, model_ids=None) -> EnsembleScoreMatrix:
    """Stack score sequences into an ensemble matrix, checking shapes.

    Rows may be ScoreSequence values or plain 1-d arrays; row order is
    preserved. Ragged lengths raise ShapeError, out-of-range entries
    DomainError.
    """
    rows = list(rows)
    if not rows:
        raise ShapeError("need at least one row")
    seqs = [r if isinstance(r, ScoreSequence) else ScoreSequence(r) for r in rows]
    lengths = {len(s) for s in seqs}
    if len(lengths) != 1:
        raise ShapeError(f"rows have mixed lengths {sorted(lengths)}")
    stacked = np.vstack([s.values for s in seqs])
    return EnsembleScoreMatrix(stacked, tuple(model_ids) if model_ids else ())
