"""Detection metrics and experiment protocols.

A detection on a labeled sequence is classified against a margin M (in
time steps):

* change at theta, alarm at tau:
    theta <= tau <= theta + M   -> true positive
    tau < theta                 -> false alarm AND missed change (the
                                   compound outcome counts in both the
                                   FP and FN tallies)
    tau > theta + M             -> false negative only (a late alarm is
                                   not an extra false positive)
    no alarm                    -> false negative
* no change: alarm -> false positive; no alarm -> true negative.

The margin is the single largest free parameter of the protocol and is
carried in every result so reports stay comparable.

Threshold sweeps reuse each sequence's statistic trace across all
thresholds: the first crossing time per threshold comes from a running
maximum of the trace, which agrees exactly with scanning the trace at
each threshold separately.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from enum import Enum

import numpy as np
from scipy.stats import rankdata

from .aggregation import AggregatorConfig, aggregate_pointwise, wwaggr_trace
from .errors import DomainError, ShapeError
from .types import DetectionResult, LabeledSequence

__all__ = [
    "DetectionOutcome",
    "ConfusionCounts",
    "SweepResult",
    "RankTable",
    "DelaySummary",
    "classify_detection",
    "tally_outcomes",
    "f1_score",
    "compute_traces",
    "sweep_traces",
    "threshold_sweep",
    "threshold_count_sweep",
    "default_threshold_grid",
    "rank_aggregations",
    "delay_stats",
]


class DetectionOutcome(str, Enum):
    TRUE_POSITIVE = "TP"
    FALSE_POSITIVE = "FP"
    FALSE_NEGATIVE = "FN"
    TRUE_NEGATIVE = "TN"
    FALSE_POSITIVE_AND_NEGATIVE = "FP+FN"


@dataclass(frozen=True)
class ConfusionCounts:
    """Margin-aware confusion tallies over a set of sequences.

    The compound early-alarm outcome adds to both fp and fn but counts
    once toward n_sequences (tracked via n_compound).
    """

    margin: int
    tp: int = 0
    fp: int = 0
    fn: int = 0
    tn: int = 0
    n_compound: int = 0

    def __post_init__(self):
        if self.margin < 0:
            raise DomainError(f"margin must be >= 0, got {self.margin}")
        if min(self.tp, self.fp, self.fn, self.tn, self.n_compound) < 0:
            raise DomainError("counts must be non-negative")

    @property
    def n_sequences(self) -> int:
        return self.tp + self.fp + self.fn + self.tn - self.n_compound


@dataclass(frozen=True)
class SweepResult:
    """F1 over a threshold grid plus the fixed-threshold protocol value."""

    thresholds: tuple[float, ...]
    f1_per_threshold: tuple[float, ...]
    best_f1: float
    best_threshold: float
    f1_at_fixed: float
    fixed_threshold: float
    margin: int


@dataclass(frozen=True)
class RankTable:
    """Per-cell F1 ranks of the aggregations and their means.

    A cell is one (dataset, base model) pair; within a cell the
    aggregations are ranked by descending F1 with ties averaged.
    """

    aggregations: tuple[str, ...]
    per_cell: dict
    mean_ranks: dict


@dataclass(frozen=True)
class DelaySummary:
    n_true_positives: int
    n_false_alarms: int
    mean_delay: float | None
    median_delay: float | None


def classify_detection(
    truth: LabeledSequence, result: DetectionResult, margin: int
) -> DetectionOutcome:
    """Apply the margin rule table to one (truth, detection) pair."""
    if margin < 0:
        raise DomainError(f"margin must be >= 0, got {margin}")
    if result.length != truth.length:
        raise ShapeError(
            f"trace length {result.length} vs sequence length {truth.length}"
        )
    if truth.change_point is None:
        if result.detected:
            return DetectionOutcome.FALSE_POSITIVE
        return DetectionOutcome.TRUE_NEGATIVE
    if not result.detected:
        return DetectionOutcome.FALSE_NEGATIVE
    theta = truth.change_point
    if result.tau < theta:
        return DetectionOutcome.FALSE_POSITIVE_AND_NEGATIVE
    if result.tau <= theta + margin:
        return DetectionOutcome.TRUE_POSITIVE
    return DetectionOutcome.FALSE_NEGATIVE


def tally_outcomes(outcomes, margin: int) -> ConfusionCounts:
    tp = fp = fn = tn = compound = 0
    for outcome in outcomes:
        if outcome is DetectionOutcome.TRUE_POSITIVE:
            tp += 1
        elif outcome is DetectionOutcome.FALSE_POSITIVE:
            fp += 1
        elif outcome is DetectionOutcome.FALSE_NEGATIVE:
            fn += 1
        elif outcome is DetectionOutcome.TRUE_NEGATIVE:
            tn += 1
        elif outcome is DetectionOutcome.FALSE_POSITIVE_AND_NEGATIVE:
            fp += 1
            fn += 1
            compound += 1
        else:
            raise DomainError(f"unknown outcome {outcome!r}")
    return ConfusionCounts(
        margin=margin, tp=tp, fp=fp, fn=fn, tn=tn, n_compound=compound
    )


def f1_score(counts: ConfusionCounts) -> float:
    """F1 = 2 TP / (2 TP + FP + FN); degenerate denominators score 0."""
    denom = 2 * counts.tp + counts.fp + counts.fn
    if denom == 0:
        warnings.warn(
            "no positives, false alarms or misses: F1 undefined, reporting 0",
            stacklevel=2,
        )
        return 0.0
    return 2.0 * counts.tp / denom


def compute_traces(matrices, config: AggregatorConfig) -> list:
    """One statistic trace per score matrix, reusable across thresholds."""
    traces = []
    for matrix in matrices:
        if config.kind == "wwaggr":
            traces.append(wwaggr_trace(matrix, config.window, config.distance))
        else:
            traces.append(aggregate_pointwise(matrix, config.kind).values)
    return traces


def _first_crossings(trace: np.ndarray, thresholds: np.ndarray) -> np.ndarray:
    """tau per threshold: first index with trace >= h, or T when none.

    The running maximum is nondecreasing, so the first index where it
    reaches h is exactly the first index where the trace does.
    """
    running = np.maximum.accumulate(trace)
    return np.searchsorted(running, thresholds, side="left")


def _counts_at_threshold(theta, length, tau, margin):
    """Vectorized rule table; theta < 0 encodes 'no change'."""
    detected = tau < length
    has_cp = theta >= 0
    tp = int((has_cp & detected & (tau >= theta) & (tau <= theta + margin)).sum())
    compound = int((has_cp & detected & (tau < theta)).sum())
    late = int((has_cp & detected & (tau > theta + margin)).sum())
    missed = int((has_cp & ~detected).sum())
    fp_plain = int((~has_cp & detected).sum())
    tn = int((~has_cp & ~detected).sum())
    return ConfusionCounts(
        margin=margin,
        tp=tp,
        fp=fp_plain + compound,
        fn=missed + late + compound,
        tn=tn,
        n_compound=compound,
    )


def _f1_curve(traces, truths, thresholds, margin):
    theta = np.array(
        [t.change_point if t.has_change else -1 for t in truths], dtype=np.int64
    )
    lengths = np.array([t.length for t in truths], dtype=np.int64)
    taus = np.vstack([_first_crossings(tr, thresholds) for tr in traces])
    f1s = np.empty(thresholds.size)
    for j in range(thresholds.size):
        counts = _counts_at_threshold(theta, lengths, taus[:, j], margin)
        denom = 2 * counts.tp + counts.fp + counts.fn
        f1s[j] = 2.0 * counts.tp / denom if denom else 0.0
    return f1s


def sweep_traces(
    traces, truths, thresholds, margin: int, fixed_threshold: float = 0.5
) -> SweepResult:
    """F1 per threshold over precomputed traces.

    The fixed threshold joins the grid when absent, so f1_at_fixed can
    never exceed best_f1.
    """
    traces = [np.asarray(t, dtype=np.float64) for t in traces]
    if len(traces) != len(truths):
        raise ShapeError(f"{len(traces)} traces vs {len(truths)} truths")
    for trace, truth in zip(traces, truths):
        if trace.size != truth.length:
            raise ShapeError(
                f"trace length {trace.size} vs sequence length {truth.length}"
            )
    grid = np.unique(np.asarray(thresholds, dtype=np.float64))
    if grid.size == 0:
        raise DomainError("threshold grid is empty")
    grid = np.unique(np.append(grid, fixed_threshold))
    f1s = _f1_curve(traces, truths, grid, margin)
    best = int(np.argmax(f1s))
    fixed_idx = int(np.searchsorted(grid, fixed_threshold))
    return SweepResult(
        thresholds=tuple(grid.tolist()),
        f1_per_threshold=tuple(f1s.tolist()),
        best_f1=float(f1s[best]),
        best_threshold=float(grid[best]),
        f1_at_fixed=float(f1s[fixed_idx]),
        fixed_threshold=fixed_threshold,
        margin=margin,
    )


def threshold_sweep(
    matrices,
    truths,
    config: AggregatorConfig,
    thresholds,
    margin: int,
    fixed_threshold: float = 0.5,
) -> SweepResult:
    """Compute traces once, then F1 across the whole threshold grid."""
    traces = compute_traces(matrices, config)
    return sweep_traces(traces, truths, thresholds, margin, fixed_threshold)


def default_threshold_grid(n: int, upper: float = 1.0) -> np.ndarray:
    """n evenly spaced thresholds on [0, upper]; n = 1 gives the midpoint.

    For the unit-bounded distances upper is 1; for MMD pass the observed
    trace maximum.
    """
    if n < 1:
        raise DomainError(f"need at least one threshold, got {n}")
    if not upper > 0:
        raise DomainError(f"upper must be > 0, got {upper}")
    if n == 1:
        return np.array([upper / 2.0])
    return np.linspace(0.0, upper, n)


def threshold_count_sweep(
    traces, truths, counts, margin: int, upper: float = 1.0
):
    """Best F1 as a function of how many thresholds are searched.

    For each n in counts, evaluates the n-point default grid (no extra
    thresholds injected) and reports (n, best F1 over those n values).
    """
    traces = [np.asarray(t, dtype=np.float64) for t in traces]
    rows = []
    for n in counts:
        grid = default_threshold_grid(int(n), upper)
        f1s = _f1_curve(traces, truths, grid, margin)
        rows.append((int(n), float(f1s.max())))
    return rows


def rank_aggregations(results: dict) -> RankTable:
    """Rank aggregations by F1 within each (dataset, model) cell.

    ``results`` maps cell key -> {aggregation name -> F1}. Every cell
    must cover the same aggregations; ranks are 1 = best, ties averaged,
    and the table reports the mean rank per aggregation across cells.
    """
    if not results:
        raise DomainError("no cells to rank")
    cells = list(results)
    aggregations = tuple(results[cells[0]])
    if len(aggregations) < 2:
        raise DomainError("need at least two aggregations to rank")
    missing = {
        cell: sorted(set(aggregations) - set(results[cell]))
        for cell in cells
        if set(results[cell]) != set(aggregations)
    }
    if missing:
        raise DomainError(f"cells with missing aggregations: {missing}")
    per_cell = {}
    for cell in cells:
        scores = np.array([results[cell][a] for a in aggregations], dtype=float)
        ranks = rankdata(-scores, method="average")
        per_cell[cell] = dict(zip(aggregations, ranks.tolist()))
    mean_ranks = {
        a: float(np.mean([per_cell[c][a] for c in cells])) for a in aggregations
    }
    return RankTable(
        aggregations=aggregations, per_cell=per_cell, mean_ranks=mean_ranks
    )


def delay_stats(truths, results, margin: int) -> DelaySummary:
    """Detection delay over true positives plus the false-alarm count."""
    delays = []
    false_alarms = 0
    n_tp = 0
    for truth, result in zip(truths, results):
        outcome = classify_detection(truth, result, margin)
        if outcome is DetectionOutcome.TRUE_POSITIVE:
            n_tp += 1
            delays.append(result.tau - truth.change_point)
        elif outcome in (
            DetectionOutcome.FALSE_POSITIVE,
            DetectionOutcome.FALSE_POSITIVE_AND_NEGATIVE,
        ):
            false_alarms += 1
    if delays:
        return DelaySummary(
            n_true_positives=n_tp,
            n_false_alarms=false_alarms,
            mean_delay=float(np.mean(delays)),
            median_delay=float(np.median(delays)),
        )
    return DelaySummary(
        n_true_positives=0,
        n_false_alarms=false_alarms,
        mean_delay=None,
        median_delay=None,
    )
