"""Post-hoc calibration of change point scores and its measurement.

Each ensemble member gets its own calibrator, fitted on held-out scored
data, never on test sequences. The main transform rescales a score s via

    p(s; a, b, c) = 1 / (1 + (1 - s)^b / s^a * exp(-c)),

a three-parameter family that nests the identity (a=b=1, c=0) and
sigmoid-in-logit-space rescaling (a=b). Fitting is plain logistic
regression on the features (ln s, -ln(1-s)) with intercept c, solved by
damped Newton steps; c >= 0 is kept by projection after every step.
Scores are clipped to [eps, 1-eps] first since the transform is singular
at the endpoints.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.optimize import minimize_scalar
from scipy.special import expit, logit

from .errors import DomainError, FitError, ShapeError
from .types import EnsembleScoreMatrix, ScoreSequence

__all__ = [
    "BetaCalibrator",
    "TemperatureCalibrator",
    "CalibrationBin",
    "CalibrationReport",
    "fit_beta",
    "apply_beta",
    "fit_temperature",
    "expected_calibration_error",
    "compare_calibration",
    "cross_entropy",
    "fit_ensemble_calibrators",
    "calibrate_matrix",
    "calibrator_to_dict",
    "calibrator_from_dict",
    "save_calibrators",
    "load_calibrators",
]

logger = logging.getLogger(__name__)

DEFAULT_CLIP_EPSILON = 1e-6
DEFAULT_ECE_BINS = 15


def _check_scores_labels(scores, labels):
    s = scores.values if isinstance(scores, ScoreSequence) else np.asarray(scores, float)
    y = np.asarray(labels, dtype=np.float64)
    if s.ndim != 1 or y.ndim != 1:
        raise ShapeError("scores and labels must be 1-d")
    if s.size != y.size:
        raise ShapeError(f"{s.size} scores vs {y.size} labels")
    if not np.isin(y, (0.0, 1.0)).all():
        raise DomainError("labels must be binary")
    return s, y


@dataclass(frozen=True)
class BetaCalibrator:
    """Fitted (a, b, c) score transform with endpoint clipping."""

    a: float
    b: float
    c: float
    clip_epsilon: float = DEFAULT_CLIP_EPSILON

    def __post_init__(self):
        if self.c < 0:
            raise DomainError(f"c must be >= 0, got {self.c}")
        if not 0.0 < self.clip_epsilon < 0.5:
            raise DomainError(
                f"clip_epsilon must be in (0, 0.5), got {self.clip_epsilon}"
            )

    def apply(self, scores) -> ScoreSequence:
        return apply_beta(self, scores)


@dataclass(frozen=True)
class TemperatureCalibrator:
    """Single-parameter logit rescaling: sigmoid(logit(s) / temperature)."""

    temperature: float
    clip_epsilon: float = DEFAULT_CLIP_EPSILON

    def __post_init__(self):
        if not self.temperature > 0:
            raise DomainError(f"temperature must be > 0, got {self.temperature}")
        if not 0.0 < self.clip_epsilon < 0.5:
            raise DomainError(
                f"clip_epsilon must be in (0, 0.5), got {self.clip_epsilon}"
            )

    def apply(self, scores) -> ScoreSequence:
        s = scores.values if isinstance(scores, ScoreSequence) else np.asarray(scores, float)
        s = np.clip(s, self.clip_epsilon, 1.0 - self.clip_epsilon)
        return ScoreSequence(expit(logit(s) / self.temperature))


@dataclass(frozen=True)
class CalibrationBin:
    lo: float
    hi: float
    mean_confidence: float
    empirical_accuracy: float
    count: int


@dataclass(frozen=True)
class CalibrationReport:
    """Binned calibration summary; per_bin describes the "after" scores."""

    ece_before: float
    ece_after: float
    n_bins: int
    per_bin: tuple[CalibrationBin, ...]

    def __post_init__(self):
        if self.n_bins < 1:
            raise DomainError(f"n_bins must be >= 1, got {self.n_bins}")


def cross_entropy(probs, labels) -> float:
    """Mean binary cross-entropy of predicted probabilities."""
    p, y = _check_scores_labels(probs, labels)
    p = np.clip(p, 1e-300, 1.0 - 1e-16)
    return float(-np.mean(y * np.log(p) + (1.0 - y) * np.log1p(-p)))


def _features(s: np.ndarray) -> np.ndarray:
    return np.column_stack([np.log(s), -np.log1p(-s), np.ones_like(s)])


def _nll_and_grad(design, y, theta):
    z = design @ theta
    loss = float(np.mean(np.logaddexp(0.0, z) - y * z))
    p = expit(z)
    grad = design.T @ (p - y) / y.size
    return loss, grad, p


def fit_beta(
    scores,
    labels,
    clip_epsilon: float = DEFAULT_CLIP_EPSILON,
    max_iter: int = 200,
    grad_tol: float = 1e-8,
) -> BetaCalibrator:
    """Fit (a, b, c) by minimizing cross-entropy on clipped scores.

    Starts from the identity transform and only accepts decreasing steps,
    so the achieved loss never exceeds the identity's. a and b are left
    unconstrained (a warning is logged when either ends up negative,
    since monotonicity may then fail); c is projected back to >= 0 after
    every step.
    """
    s, y = _check_scores_labels(scores, labels)
    if not (y == 1.0).any() or not (y == 0.0).any():
        raise FitError("labels contain a single class; cross-entropy is unbounded")
    if not 0.0 < clip_epsilon < 0.5:
        raise DomainError(f"clip_epsilon must be in (0, 0.5), got {clip_epsilon}")
    s = np.clip(s, clip_epsilon, 1.0 - clip_epsilon)
    design = _features(s)
    theta = np.array([1.0, 1.0, 0.0])

    loss, grad, p = _nll_and_grad(design, y, theta)
    for _ in range(max_iter):
        projected = grad.copy()
        if theta[2] <= 0.0 and grad[2] > 0.0:
            projected[2] = 0.0
        if np.linalg.norm(projected) <= grad_tol:
            break
        weights = p * (1.0 - p)
        hessian = (design * weights[:, None]).T @ design / y.size
        hessian += 1e-12 * np.eye(3)
        try:
            step = np.linalg.solve(hessian, grad)
        except np.linalg.LinAlgError:
            step = grad
        scale = 1.0
        improved = False
        while scale >= 2.0**-30:
            candidate = theta - scale * step
            candidate[2] = max(candidate[2], 0.0)
            new_loss, new_grad, new_p = _nll_and_grad(design, y, candidate)
            if new_loss < loss:
                theta, loss, grad, p = candidate, new_loss, new_grad, new_p
                improved = True
                break
            scale *= 0.5
        if not improved:
            break

    a, b, c = theta
    if a < 0 or b < 0:
        logger.warning(
            "fitted transform has a=%.4f, b=%.4f; negative exponents may break "
            "monotonicity",
            a,
            b,
        )
    return BetaCalibrator(a=float(a), b=float(b), c=float(c), clip_epsilon=clip_epsilon)


def apply_beta(cal: BetaCalibrator, scores) -> ScoreSequence:
    """Elementwise transform on clipped scores; outputs stay in (0, 1).

    Evaluated in logit space, z = a ln s - b ln(1-s) + c, which is
    algebraically identical to the closed form and stable near the
    endpoints.
    """
    s = scores.values if isinstance(scores, ScoreSequence) else np.asarray(scores, float)
    s = np.clip(s, cal.clip_epsilon, 1.0 - cal.clip_epsilon)
    z = cal.a * np.log(s) + cal.b * (-np.log1p(-s)) + cal.c
    return ScoreSequence(expit(z))


def fit_temperature(scores, labels, clip_epsilon: float = DEFAULT_CLIP_EPSILON) -> TemperatureCalibrator:
    """Scalar search for the temperature minimizing cross-entropy.

    Scores are mapped to logits on clipped values; the search is a
    bounded scalar minimization over [0.01, 100].
    """
    s, y = _check_scores_labels(scores, labels)
    if not (y == 1.0).any() or not (y == 0.0).any():
        raise FitError("labels contain a single class; cross-entropy is unbounded")
    z = logit(np.clip(s, clip_epsilon, 1.0 - clip_epsilon))

    def nll(temperature: float) -> float:
        scaled = z / temperature
        return float(np.mean(np.logaddexp(0.0, scaled) - y * scaled))

    result = minimize_scalar(
        nll, bounds=(0.01, 100.0), method="bounded", options={"xatol": 1e-6}
    )
    return TemperatureCalibrator(
        temperature=float(result.x), clip_epsilon=clip_epsilon
    )


def _binned(s: np.ndarray, y: np.ndarray, n_bins: int):
    idx = np.minimum((s * n_bins).astype(int), n_bins - 1)
    bins = []
    ece = 0.0
    for b in range(n_bins):
        mask = idx == b
        count = int(mask.sum())
        lo, hi = b / n_bins, (b + 1) / n_bins
        if count == 0:
            bins.append(CalibrationBin(lo, hi, 0.0, 0.0, 0))
            continue
        conf = float(s[mask].mean())
        acc = float(y[mask].mean())
        ece += count / s.size * abs(acc - conf)
        bins.append(CalibrationBin(lo, hi, conf, acc, count))
    return float(ece), tuple(bins)


def expected_calibration_error(
    scores, labels, n_bins: int = DEFAULT_ECE_BINS
) -> CalibrationReport:
    """Equal-width-binned gap between confidence and empirical accuracy.

    ECE = sum_b (count_b / n) * |accuracy_b - confidence_b|, empty bins
    contributing 0. With a single score set, ece_before and ece_after
    both echo its ECE; see compare_calibration for before/after pairs.
    """
    if n_bins < 1:
        raise DomainError(f"n_bins must be >= 1, got {n_bins}")
    s, y = _check_scores_labels(scores, labels)
    ece, bins = _binned(s, y, n_bins)
    return CalibrationReport(ece_before=ece, ece_after=ece, n_bins=n_bins, per_bin=bins)


def compare_calibration(
    raw_scores, calibrated_scores, labels, n_bins: int = DEFAULT_ECE_BINS
) -> CalibrationReport:
    """Before/after report for one model's raw and calibrated scores."""
    if n_bins < 1:
        raise DomainError(f"n_bins must be >= 1, got {n_bins}")
    raw, y = _check_scores_labels(raw_scores, labels)
    cal, y2 = _check_scores_labels(calibrated_scores, labels)
    if cal.size != raw.size:
        raise ShapeError("raw and calibrated scores differ in length")
    before, _ = _binned(raw, y, n_bins)
    after, bins = _binned(cal, y2, n_bins)
    return CalibrationReport(
        ece_before=before, ece_after=after, n_bins=n_bins, per_bin=bins
    )


def fit_ensemble_calibrators(
    matrices,
    truths,
    kind: str = "beta",
    clip_epsilon: float = DEFAULT_CLIP_EPSILON,
) -> dict:
    """Fit one calibrator per ensemble member on held-out sequences.

    Pools every sequence's per-step labels; model identity comes from the
    matrices' model_ids (which must agree across sequences). kind "none"
    returns an empty mapping (pass-through).
    """
    if kind == "none":
        return {}
    if kind not in ("beta", "temperature"):
        raise DomainError(f"unknown calibration kind {kind!r}")
    matrices = list(matrices)
    truths = list(truths)
    if len(matrices) != len(truths):
        raise ShapeError(f"{len(matrices)} matrices vs {len(truths)} truths")
    if not matrices:
        raise FitError("no holdout sequences to fit calibrators on")
    model_ids = matrices[0].model_ids
    for m in matrices:
        if m.model_ids != model_ids:
            raise ShapeError("matrices disagree on model ids")
    labels = np.concatenate([t.step_labels() for t in truths])
    calibrators = {}
    for k, model_id in enumerate(model_ids):
        scores = np.concatenate([m.values[k] for m in matrices])
        if kind == "beta":
            calibrators[model_id] = fit_beta(scores, labels, clip_epsilon)
        else:
            calibrators[model_id] = fit_temperature(scores, labels, clip_epsilon)
    return calibrators


def calibrate_matrix(matrix: EnsembleScoreMatrix, calibrators: dict) -> EnsembleScoreMatrix:
    """Apply per-model calibrators to each row; empty mapping = identity."""
    if not calibrators:
        return matrix
    rows = []
    for k, model_id in enumerate(matrix.model_ids):
        cal = calibrators.get(model_id)
        row = matrix.values[k]
        rows.append(cal.apply(row).values if cal is not None else row)
    return EnsembleScoreMatrix(np.vstack(rows), matrix.model_ids)


def calibrator_to_dict(cal) -> dict:
    if isinstance(cal, BetaCalibrator):
        return {
            "kind": "beta",
            "a": cal.a,
            "b": cal.b,
            "c": cal.c,
            "clip_epsilon": cal.clip_epsilon,
        }
    if isinstance(cal, TemperatureCalibrator):
        return {
            "kind": "temperature",
            "temperature": cal.temperature,
            "clip_epsilon": cal.clip_epsilon,
        }
    raise DomainError(f"not a calibrator: {type(cal).__name__}")


def calibrator_from_dict(doc: dict):
    kind = doc.get("kind")
    if kind == "beta":
        return BetaCalibrator(
            a=doc["a"],
            b=doc["b"],
            c=doc["c"],
            clip_epsilon=doc.get("clip_epsilon", DEFAULT_CLIP_EPSILON),
        )
    if kind == "temperature":
        return TemperatureCalibrator(
            temperature=doc["temperature"],
            clip_epsilon=doc.get("clip_epsilon", DEFAULT_CLIP_EPSILON),
        )
    raise DomainError(f"unknown calibrator kind {kind!r}")


def save_calibrators(calibrators: dict, path) -> None:
    """One JSON document per model id, keyed by id."""
    doc = {mid: calibrator_to_dict(c) for mid, c in calibrators.items()}
    Path(path).write_text(json.dumps(doc, indent=2) + "\n", encoding="utf-8")


def load_calibrators(path) -> dict:
    doc = json.loads(Path(path).read_text(encoding="utf-8"))
    return {mid: calibrator_from_dict(d) for mid, d in doc.items()}
