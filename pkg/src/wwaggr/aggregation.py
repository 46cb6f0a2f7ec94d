"""Ensemble score aggregation: pointwise statistics and the
sliding-window Wasserstein procedure.

The window procedure compares two adjacent windows of the ensemble score
matrix at every step t: a "history" block of columns [t-2w, t-w) and a
"future" block of columns [t-w, t) (0-based, half-open). Both blocks are
flattened across the K models into samples of size w*K before the
distance is taken, so the statistic sees the whole score distribution of
the ensemble, spread and all, not just its per-step center. The first 2w
trace entries are 0 by construction and the inherent detection delay is
w: a step change at column theta yields the peak trace value exactly at
t = theta + w.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .distances import DistanceKind, compute_distance
from .errors import ConfigError, DomainError
from .types import DetectionResult, EnsembleScoreMatrix, ScoreSequence

__all__ = [
    "POINTWISE_KINDS",
    "AggregatorConfig",
    "aggregate_pointwise",
    "wwaggr_trace",
    "detect",
    "run_aggregator",
    "StreamingAggregator",
]

POINTWISE_KINDS = ("mean", "min", "max", "median")

_POINTWISE_FN = {
    "mean": np.mean,
    "min": np.min,
    "max": np.max,
    "median": np.median,  # even K: mean of the two central order statistics
}


@dataclass(frozen=True)
class AggregatorConfig:
    """How to collapse a K x T score matrix into one decision.

    ``window`` and ``distance`` only apply to kind "wwaggr". A nonzero
    window statistic needs T >= 2*window + 1; shorter series produce an
    all-zero trace (warning, not an error). With w1/w2 on [0, 1] scores
    the meaningful thresholds lie in [0, 1].
    """

    kind: str
    threshold: float = 0.5
    window: int = 1
    distance: DistanceKind = field(default_factory=DistanceKind)

    def __post_init__(self):
        if self.kind not in POINTWISE_KINDS + ("wwaggr",):
            raise ConfigError(f"unknown aggregation kind {self.kind!r}")
        if self.window < 1:
            raise ConfigError(f"window must be >= 1, got {self.window}")


def aggregate_pointwise(matrix: EnsembleScoreMatrix, kind: str) -> ScoreSequence:
    """Columnwise mean/min/max/median over the K models."""
    if kind not in POINTWISE_KINDS:
        raise ConfigError(f"unknown pointwise kind {kind!r}")
    return ScoreSequence(_POINTWISE_FN[kind](matrix.values, axis=0))


def _sorted_window_blocks(values: np.ndarray, window: int):
    """Flattened, sorted future/history blocks for every valid step.

    Returns (future, history) of shape (T - 2w, w*K); row j holds the
    blocks for trace index j + 2w.
    """
    n_models, length = values.shape
    views = sliding_window_view(values, window_shape=window, axis=1)
    n_steps = length - 2 * window
    future = views[:, window:length - window, :]
    history = views[:, 0:n_steps, :]
    future = future.transpose(1, 0, 2).reshape(n_steps, window * n_models)
    history = history.transpose(1, 0, 2).reshape(n_steps, window * n_models)
    return np.sort(future, axis=1), np.sort(history, axis=1)


def wwaggr_trace(
    matrix: EnsembleScoreMatrix,
    window: int,
    distance: DistanceKind | None = None,
) -> np.ndarray:
    """Sliding-window distance trace w over the ensemble score matrix.

    w[t] = d(flatten(P[:, t-w:t]), flatten(P[:, t-2w:t-w])) for
    t >= 2*window, and 0 before. For w1/w2 on [0, 1] scores every trace
    value lies in [0, 1]; MMD values can exceed 1.
    """
    if window < 1:
        raise ConfigError(f"window must be >= 1, got {window}")
    if distance is None:
        distance = DistanceKind()
    length = matrix.length
    trace = np.zeros(length, dtype=np.float64)
    if length < 2 * window + 1:
        warnings.warn(
            f"series length {length} < 2*window+1 = {2 * window + 1}; "
            "the window statistic is identically zero and nothing can be detected",
            stacklevel=2,
        )
        return trace
    if distance.kind in ("w1", "w2"):
        future, history = _sorted_window_blocks(matrix.values, window)
        gaps = future - history
        if distance.kind == "w1":
            trace[2 * window:] = np.abs(gaps).mean(axis=1)
        else:
            trace[2 * window:] = np.sqrt((gaps**2).mean(axis=1))
    else:
        values = matrix.values
        for t in range(2 * window, length):
            fut = values[:, t - window:t].ravel()
            hist = values[:, t - 2 * window:t - window].ravel()
            trace[t] = compute_distance(distance, fut, hist)
    return trace


def detect(trace, threshold: float) -> DetectionResult:
    """First threshold crossing of a statistic trace.

    Returns detected=True with tau = min{t : trace[t] >= threshold},
    otherwise detected=False and tau = T.
    """
    trace = np.asarray(trace, dtype=np.float64)
    if trace.ndim != 1 or trace.size == 0:
        raise DomainError("trace must be a non-empty 1-d array")
    hits = trace >= threshold
    if hits.any():
        tau = int(np.argmax(hits))
        return DetectionResult(tau=tau, trace=trace, threshold=threshold, detected=True)
    return DetectionResult(
        tau=trace.size, trace=trace, threshold=threshold, detected=False
    )


def run_aggregator(
    matrix: EnsembleScoreMatrix, config: AggregatorConfig
) -> DetectionResult:
    """Aggregate a score matrix and threshold the result."""
    if config.kind == "wwaggr":
        trace = wwaggr_trace(matrix, config.window, config.distance)
    else:
        trace = aggregate_pointwise(matrix, config.kind).values
    return detect(trace, config.threshold)


class StreamingAggregator:
    """Online form of the window statistic over one score stream.

    Keeps a ring buffer of the last 2w score columns. ``push`` is called
    with the K scores of the current step and returns the trace value for
    that step, computed from the buffered columns only (the current
    column enters the buffer afterwards), matching the offline trace
    exactly. Single-writer per stream; separate streams share nothing.
    """

    def __init__(self, n_models: int, window: int, distance: DistanceKind | None = None):
        if window < 1:
            raise ConfigError(f"window must be >= 1, got {window}")
        if n_models < 1:
            raise ConfigError(f"n_models must be >= 1, got {n_models}")
        self.n_models = n_models
        self.window = window
        self.distance = distance if distance is not None else DistanceKind()
        self._buffer = np.zeros((n_models, 2 * window), dtype=np.float64)
        self._seen = 0

    def push(self, column) -> float:
        column = np.asarray(column, dtype=np.float64)
        if column.shape != (self.n_models,):
            raise DomainError(
                f"expected {self.n_models} scores, got shape {column.shape}"
            )
        if np.isnan(column).any() or (column < 0).any() or (column > 1).any():
            raise DomainError("scores must lie in [0, 1]")
        window = self.window
        if self._seen >= 2 * window:
            # buffer holds columns [t-2w, t) in insertion order
            start = self._seen % (2 * window)
            ordered = np.roll(self._buffer, -start, axis=1)
            value = compute_distance(
                self.distance,
                ordered[:, window:].ravel(),
                ordered[:, :window].ravel(),
            )
        else:
            value = 0.0
        self._buffer[:, self._seen % (2 * window)] = column
        self._seen += 1
        return float(value)
