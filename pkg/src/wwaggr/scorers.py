"""Lightweight base change point scorers and ensemble construction.

Three scorer families stand in for heavyweight detectors at desk scale,
all emitting per-step scores in [0, 1] over a (T, D) series:

* ``WindowStatScorer`` — unsupervised; a standardized mean-difference
  statistic between the two adjacent length-W windows ending at t,
  squashed to [0, 1]. Spikes while the windows straddle a change.
* ``LogisticScorer`` — supervised; logistic regression on features of
  the trailing window measured against a reference window at the start
  of the sequence, trained on per-step labels (1 from the change point
  onward). Stays elevated after a change. Assumes the first
  feature_window steps are pre-change, which the default generator's
  change point range guarantees.
* ``CosineProjectionScorer`` — unsupervised; random-projection
  embeddings of the two adjacent windows, cosine similarity, then the
  [-1, 1] -> [0, 1] transform from the types module.

Ensembles are built from one base spec plus a diversity strategy: naive
(seed variation only), bootstrap (per-member resampling of the training
sequences) or noise injection (Gaussian noise added to every gradient
step, scaled by noise_scale * sqrt(learning_rate)).

Scoring is pure and deterministic: identical (spec, seed, data) give
bit-identical scores. Training the K members is independent per member.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Union

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy.special import expit

from .errors import ConfigError, DomainError, FitError, ShapeError
from .types import EnsembleScoreMatrix, LabeledSequence, ScoreSequence, transform_unsupervised_scores

__all__ = [
    "WindowStatSpec",
    "LogisticSpec",
    "CosineProjectionSpec",
    "ScorerSpec",
    "NaiveDiversity",
    "BootstrapDiversity",
    "NoiseInjectionDiversity",
    "EnsembleSpec",
    "WindowStatScorer",
    "LogisticScorer",
    "CosineProjectionScorer",
    "score_window_stat",
    "score_cosine_projection",
    "train_logistic_scorer",
    "apply_miscalibration",
    "build_ensemble",
    "ensemble_score_matrix",
    "scorer_to_dict",
    "scorer_from_dict",
]

_VAR_EPS = 1e-12


@dataclass(frozen=True)
class WindowStatSpec:
    feature_window: int = 8
    sharpness: float = 1.0
    miscalibration_gamma: float | None = None

    def __post_init__(self):
        _check_common(self.feature_window, self.miscalibration_gamma)


@dataclass(frozen=True)
class LogisticSpec:
    feature_window: int = 8
    learning_rate: float = 0.1
    epochs: int = 150
    seed: int = 0
    miscalibration_gamma: float | None = None

    def __post_init__(self):
        _check_common(self.feature_window, self.miscalibration_gamma)
        if self.learning_rate <= 0 or self.epochs < 1:
            raise ConfigError("learning_rate must be > 0 and epochs >= 1")


@dataclass(frozen=True)
class CosineProjectionSpec:
    embed_dim: int = 16
    feature_window: int = 8
    seed: int = 0
    miscalibration_gamma: float | None = None

    def __post_init__(self):
        _check_common(self.feature_window, self.miscalibration_gamma)
        if self.embed_dim < 1:
            raise ConfigError(f"embed_dim must be >= 1, got {self.embed_dim}")


ScorerSpec = Union[WindowStatSpec, LogisticSpec, CosineProjectionSpec]


def _check_common(feature_window: int, gamma: float | None):
    if feature_window < 1:
        raise ConfigError(f"feature_window must be >= 1, got {feature_window}")
    if gamma is not None and not gamma > 0:
        raise ConfigError(f"miscalibration gamma must be > 0, got {gamma}")


@dataclass(frozen=True)
class NaiveDiversity:
    """Members differ only in their seeds (init and optimizer draws)."""

    seeds: tuple[int, ...]


@dataclass(frozen=True)
class BootstrapDiversity:
    """Members train on bootstrapped subsamples of the sequences."""

    seeds: tuple[int, ...]
    sample_fraction: float = 1.0

    def __post_init__(self):
        if not 0.0 < self.sample_fraction <= 1.0:
            raise ConfigError(
                f"sample_fraction must be in (0, 1], got {self.sample_fraction}"
            )


@dataclass(frozen=True)
class NoiseInjectionDiversity:
    """Members train with Gaussian noise added to each gradient step."""

    seeds: tuple[int, ...]
    noise_scale: float = 0.1

    def __post_init__(self):
        if not self.noise_scale > 0:
            raise ConfigError(f"noise_scale must be > 0, got {self.noise_scale}")


@dataclass(frozen=True)
class EnsembleSpec:
    base: ScorerSpec
    size: int
    diversity: NaiveDiversity | BootstrapDiversity | NoiseInjectionDiversity

    def __post_init__(self):
        if self.size < 1:
            raise ConfigError(f"size must be >= 1, got {self.size}")
        if len(self.diversity.seeds) != self.size:
            raise ConfigError(
                f"{len(self.diversity.seeds)} seeds for {self.size} members"
            )


def _as_series(series) -> np.ndarray:
    arr = np.asarray(series, dtype=np.float64)
    if arr.ndim == 1:
        arr = arr[:, None]
    if arr.ndim != 2:
        raise ShapeError(f"series must be (T,) or (T, D), got shape {arr.shape}")
    return arr


def _window_moments(series: np.ndarray, window: int):
    if series.shape[0] < 2 * window:
        raise DomainError(
            f"series of length {series.shape[0]} is too short for "
            f"feature_window {window} (needs >= {2 * window})"
        )
    views = sliding_window_view(series, window_shape=window, axis=0)
    return views.mean(axis=2), views.var(axis=2)


def _zero_prefix(values: np.ndarray, window: int, length: int) -> np.ndarray:
    scores = np.zeros(length, dtype=np.float64)
    scores[2 * window - 1:] = values
    return scores


def _finish(scores: np.ndarray, gamma: float | None) -> ScoreSequence:
    seq = ScoreSequence(scores)
    return apply_miscalibration(seq, gamma) if gamma is not None else seq


class WindowStatScorer:
    kind = "window_stat"

    def __init__(self, spec: WindowStatSpec):
        self.spec = spec

    @property
    def warmup(self) -> int:
        """Leading steps scored with the placeholder 0, not a probability."""
        return 2 * self.spec.feature_window - 1

    def score(self, series) -> ScoreSequence:
        return score_window_stat(series, self.spec)


def score_window_stat(series, spec: WindowStatSpec) -> ScoreSequence:
    """Adjacent-window standardized mean-difference score.

    Per dimension, z_d = (mean_right - mean_left) / sqrt(pooled var / W);
    the dimensions are pooled as the root mean square and recentered by
    its no-change expectation (about 1), so the statistic sits at its
    floor away from changes. The squash 2*sigmoid(sharpness * stat) - 1
    maps 0 to exactly 0: a constant series scores identically 0.
    """
    arr = _as_series(series)
    window = spec.feature_window
    means, variances = _window_moments(arr, window)
    n_valid = arr.shape[0] - 2 * window + 1
    mean_diff = means[window:] - means[:n_valid]
    pooled = (variances[window:] + variances[:n_valid]) / window
    z = np.sqrt(np.mean(mean_diff**2 / (pooled + _VAR_EPS), axis=1))
    stat = np.maximum(z - 1.0, 0.0)
    values = 2.0 * expit(spec.sharpness * stat) - 1.0
    return _finish(
        _zero_prefix(values, window, arr.shape[0]), spec.miscalibration_gamma
    )


class CosineProjectionScorer:
    kind = "cosine_projection"

    def __init__(self, spec: CosineProjectionSpec):
        self.spec = spec

    @property
    def warmup(self) -> int:
        return 2 * self.spec.feature_window - 1

    def score(self, series) -> ScoreSequence:
        return score_cosine_projection(series, self.spec)


def score_cosine_projection(series, spec: CosineProjectionSpec) -> ScoreSequence:
    """Cosine similarity of random-projection window embeddings.

    Flattened adjacent windows are projected with a seeded Gaussian
    matrix; the similarity in [-1, 1] then passes through the
    (1 - v) * 1(v >= 0) transform. Two all-zero windows count as
    identical (similarity 1); a single zero window as orthogonal.
    """
    arr = _as_series(series)
    window = spec.feature_window
    length, dim = arr.shape
    if length < 2 * window:
        raise DomainError(
            f"series of length {length} is too short for "
            f"feature_window {window} (needs >= {2 * window})"
        )
    rng = np.random.default_rng(spec.seed)
    projection = rng.normal(size=(spec.embed_dim, window * dim))
    views = sliding_window_view(arr, window_shape=window, axis=0)
    flat = views.transpose(0, 2, 1).reshape(length - window + 1, window * dim)
    embedded = flat @ projection.T
    n_valid = length - 2 * window + 1
    right = embedded[window:]
    left = embedded[:n_valid]
    dots = np.einsum("ij,ij->i", left, right)
    norm_l = np.linalg.norm(left, axis=1)
    norm_r = np.linalg.norm(right, axis=1)
    both_zero = (norm_l < _VAR_EPS) & (norm_r < _VAR_EPS)
    cosine = np.where(
        both_zero, 1.0, dots / np.maximum(norm_l * norm_r, _VAR_EPS)
    )
    cosine = np.clip(cosine, -1.0, 1.0)
    values = transform_unsupervised_scores(cosine).values
    return _finish(
        _zero_prefix(values, window, length), spec.miscalibration_gamma
    )


def _logistic_features(arr: np.ndarray, window: int) -> np.ndarray:
    """Trailing-window features against the sequence-start reference.

    Per valid step: mean difference per dimension, log variance ratio
    per dimension, and the pooled norm of the mean difference (2D + 1
    features).
    """
    means, variances = _window_moments(arr, window)
    n_valid = arr.shape[0] - 2 * window + 1
    trail_means = means[window:]
    trail_vars = variances[window:]
    mean_diff = trail_means - means[0]
    log_var_ratio = np.log((trail_vars + _VAR_EPS) / (variances[0] + _VAR_EPS))
    norm_diff = np.linalg.norm(mean_diff, axis=1, keepdims=True)
    assert mean_diff.shape[0] == n_valid
    return np.hstack([mean_diff, log_var_ratio, norm_diff])


class LogisticScorer:
    kind = "logistic"

    def __init__(self, spec, feature_mean, feature_scale, weights, bias):
        self.spec = spec
        self.feature_mean = np.asarray(feature_mean, dtype=np.float64)
        self.feature_scale = np.asarray(feature_scale, dtype=np.float64)
        self.weights = np.asarray(weights, dtype=np.float64)
        self.bias = float(bias)

    @property
    def warmup(self) -> int:
        return 2 * self.spec.feature_window - 1

    def score(self, series) -> ScoreSequence:
        arr = _as_series(series)
        window = self.spec.feature_window
        features = _logistic_features(arr, window)
        standardized = (features - self.feature_mean) / self.feature_scale
        values = expit(standardized @ self.weights + self.bias)
        return _finish(
            _zero_prefix(values, window, arr.shape[0]),
            self.spec.miscalibration_gamma,
        )


def train_logistic_scorer(
    train,
    spec: LogisticSpec,
    sample_fraction: float | None = None,
    noise_scale: float | None = None,
) -> LogisticScorer:
    """Fit the supervised stand-in by full-batch gradient descent.

    ``train`` is a sequence of (series, LabeledSequence) pairs. All
    randomness (bootstrap draw, weight init, gradient noise, in that
    order) comes from one generator seeded with spec.seed. Gradient noise
    is Gaussian with std noise_scale * sqrt(learning_rate) per step.
    """
    items = list(train)
    if not items:
        raise FitError("empty training set")
    has_cp = [truth.has_change for _, truth in items]
    if not any(has_cp) or all(has_cp):
        raise FitError(
            "degenerate training set: need at least one sequence with a "
            "change point and one without"
        )
    rng = np.random.default_rng(spec.seed)
    if sample_fraction is not None:
        n_pick = max(1, round(sample_fraction * len(items)))
        picked = rng.integers(0, len(items), size=n_pick)
        items = [items[i] for i in picked]

    feats, labels = [], []
    window = spec.feature_window
    for series, truth in items:
        arr = _as_series(series)
        if arr.shape[0] != truth.length:
            raise ShapeError(
                f"series length {arr.shape[0]} vs label length {truth.length}"
            )
        feats.append(_logistic_features(arr, window))
        labels.append(truth.step_labels()[2 * window - 1:])
    design = np.vstack(feats)
    y = np.concatenate(labels).astype(np.float64)
    if not (y == 1.0).any() or not (y == 0.0).any():
        raise FitError("training labels collapsed to a single class")

    mean = design.mean(axis=0)
    scale = np.maximum(design.std(axis=0), 1e-8)
    standardized = (design - mean) / scale

    # init spread is the diversity knob for naive ensembles: members keep
    # an imprint of their start for any finite epoch budget
    n_features = design.shape[1]
    params = rng.normal(0.0, 0.5, size=n_features + 1)
    lr = spec.learning_rate
    noise_std = None if noise_scale is None else noise_scale * np.sqrt(lr)
    for _ in range(spec.epochs):
        z = standardized @ params[:-1] + params[-1]
        residual = expit(z) - y
        grad = np.empty_like(params)
        grad[:-1] = standardized.T @ residual / y.size
        grad[-1] = residual.mean()
        params -= lr * grad
        if noise_std is not None:
            params += rng.normal(0.0, noise_std, size=params.size)
    return LogisticScorer(spec, mean, scale, params[:-1], params[-1])


def apply_miscalibration(scores, gamma: float) -> ScoreSequence:
    """Warp scores by s -> s**gamma; gamma 1 is the identity.

    Preserves [0, 1] and monotonicity; used to manufacture miscalibrated
    ensemble members for calibration experiments.
    """
    if gamma is None or not gamma > 0:
        raise DomainError(f"gamma must be > 0, got {gamma}")
    seq = scores if isinstance(scores, ScoreSequence) else ScoreSequence(scores)
    return ScoreSequence(seq.values**gamma)


def _member_spec(base: ScorerSpec, seed: int) -> ScorerSpec:
    if isinstance(base, (LogisticSpec, CosineProjectionSpec)):
        return replace(base, seed=seed)
    return base  # window-stat members are seed-free and identical


def build_ensemble(spec: EnsembleSpec, train=None) -> list:
    """Instantiate (and train, where needed) the K ensemble members."""
    members = []
    diversity = spec.diversity
    for seed in diversity.seeds:
        member = _member_spec(spec.base, seed)
        if isinstance(member, LogisticSpec):
            if train is None:
                raise FitError("logistic members need training data")
            kwargs = {}
            if isinstance(diversity, BootstrapDiversity):
                kwargs["sample_fraction"] = diversity.sample_fraction
            elif isinstance(diversity, NoiseInjectionDiversity):
                kwargs["noise_scale"] = diversity.noise_scale
            members.append(train_logistic_scorer(train, member, **kwargs))
        elif isinstance(member, CosineProjectionSpec):
            members.append(CosineProjectionScorer(member))
        else:
            members.append(WindowStatScorer(member))
    return members


def ensemble_score_matrix(members, series, model_ids=None) -> EnsembleScoreMatrix:
    """Score one series with every member and stack the rows."""
    if not members:
        raise ShapeError("need at least one ensemble member")
    rows = [m.score(series).values for m in members]
    if model_ids is None:
        model_ids = tuple(f"{m.kind}_{i}" for i, m in enumerate(members))
    return EnsembleScoreMatrix(np.vstack(rows), tuple(model_ids))


def scorer_to_dict(scorer) -> dict:
    spec = scorer.spec
    doc = {"kind": scorer.kind, "spec": {**spec.__dict__}}
    if isinstance(scorer, LogisticScorer):
        doc["feature_mean"] = scorer.feature_mean.tolist()
        doc["feature_scale"] = scorer.feature_scale.tolist()
        doc["weights"] = scorer.weights.tolist()
        doc["bias"] = scorer.bias
    return doc


def scorer_from_dict(doc: dict):
    kind = doc.get("kind")
    spec = dict(doc["spec"])
    if kind == "window_stat":
        return WindowStatScorer(WindowStatSpec(**spec))
    if kind == "cosine_projection":
        return CosineProjectionScorer(CosineProjectionSpec(**spec))
    if kind == "logistic":
        return LogisticScorer(
            LogisticSpec(**spec),
            doc["feature_mean"],
            doc["feature_scale"],
            doc["weights"],
            doc["bias"],
        )
    raise DomainError(f"unknown scorer kind {kind!r}")
