"""Synthetic at-most-one-change benchmark generator.

Sequences are multivariate Gaussian: an initial regime, then (with
probability cp_fraction) a switch at a uniformly drawn change point to a
shifted mean, scaled variance, or equicorrelated structure. Gaussian
regimes are enough to exercise every property of the pipeline at desk
scale.

Randomness is split per sequence: the root seed feeds a SeedSequence
whose spawned children drive the sequences in order, so datasets are
reproducible byte for byte and generation could run in parallel across
sequences without changing the output.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import SpecError
from .types import LabeledSequence

__all__ = ["MeanShift", "VarianceShift", "CorrelationShift", "RegimeSpec", "DatasetSpec", "generate", "default_dataset_spec"]


@dataclass(frozen=True)
class MeanShift:
    """Post-change mean moves by delta (scalar applied to every dimension
    or a length-D vector)."""

    delta: tuple[float, ...] | float = 1.0


@dataclass(frozen=True)
class VarianceShift:
    """Post-change covariance is the pre-change one times factor."""

    factor: float = 4.0

    def __post_init__(self):
        if not self.factor > 0:
            raise SpecError(f"variance factor must be > 0, got {self.factor}")


@dataclass(frozen=True)
class CorrelationShift:
    """Post-change dimensions become equicorrelated at rho, same marginals."""

    rho: float = 0.6

    def __post_init__(self):
        if not -1.0 < self.rho < 1.0:
            raise SpecError(f"rho must be in (-1, 1), got {self.rho}")


@dataclass(frozen=True)
class RegimeSpec:
    """Pre-change distribution and the kind of switch applied at theta."""

    dimension: int = 8
    pre_mean: tuple[float, ...] | float = 0.0
    pre_cov_scale: float = 1.0
    shift: MeanShift | VarianceShift | CorrelationShift = field(default_factory=MeanShift)

    def __post_init__(self):
        if self.dimension < 1:
            raise SpecError(f"dimension must be >= 1, got {self.dimension}")
        if not self.pre_cov_scale > 0:
            raise SpecError(f"pre_cov_scale must be > 0, got {self.pre_cov_scale}")
        if isinstance(self.shift, CorrelationShift) and self.dimension > 1:
            # equicorrelation matrix is positive definite iff rho > -1/(D-1)
            if self.shift.rho <= -1.0 / (self.dimension - 1):
                raise SpecError(
                    f"rho {self.shift.rho} gives a non positive-definite "
                    f"covariance in dimension {self.dimension}"
                )

    def mean_vector(self) -> np.ndarray:
        mean = np.asarray(self.pre_mean, dtype=np.float64)
        if mean.ndim == 0:
            mean = np.full(self.dimension, float(mean))
        if mean.shape != (self.dimension,):
            raise SpecError(
                f"pre_mean has shape {mean.shape}, expected ({self.dimension},)"
            )
        return mean

    def post_mean_and_chol(self):
        """Post-change mean and Cholesky factor of the post covariance."""
        dim = self.dimension
        mean = self.mean_vector()
        scale = self.pre_cov_scale
        if isinstance(self.shift, MeanShift):
            delta = np.asarray(self.shift.delta, dtype=np.float64)
            if delta.ndim == 0:
                delta = np.full(dim, float(delta))
            if delta.shape != (dim,):
                raise SpecError(
                    f"delta has shape {delta.shape}, expected ({dim},)"
                )
            return mean + delta, scale * np.eye(dim)
        if isinstance(self.shift, VarianceShift):
            return mean, scale * np.sqrt(self.shift.factor) * np.eye(dim)
        rho = self.shift.rho
        cov = scale**2 * ((1.0 - rho) * np.eye(dim) + rho * np.ones((dim, dim)))
        try:
            return mean, np.linalg.cholesky(cov)
        except np.linalg.LinAlgError as exc:
            raise SpecError(f"post-change covariance is not positive definite: {exc}")


@dataclass(frozen=True)
class DatasetSpec:
    """test_cp_fraction lets the test split carry a different (typically
    much smaller) share of change sequences than the training split,
    the shape real surveillance benchmarks have; None means "same as
    cp_fraction"."""

    n_train: int = 400
    n_test: int = 200
    length: int = 128
    cp_fraction: float = 0.5
    test_cp_fraction: float | None = None
    theta_range: tuple[int, int] = (32, 96)
    regime: RegimeSpec = field(default_factory=RegimeSpec)
    seed: int = 0

    def __post_init__(self):
        if self.n_train < 0 or self.n_test < 0 or self.length < 1:
            raise SpecError("n_train/n_test must be >= 0 and length >= 1")
        if not 0.0 <= self.cp_fraction <= 1.0:
            raise SpecError(f"cp_fraction must be in [0, 1], got {self.cp_fraction}")
        if self.test_cp_fraction is not None and not 0.0 <= self.test_cp_fraction <= 1.0:
            raise SpecError(
                f"test_cp_fraction must be in [0, 1], got {self.test_cp_fraction}"
            )
        lo, hi = self.theta_range
        if not (0 <= lo <= hi <= self.length - 1):
            raise SpecError(
                f"theta_range {self.theta_range} must satisfy "
                f"0 <= lo <= hi <= length-1 = {self.length - 1}"
            )


def default_dataset_spec(seed: int = 0) -> DatasetSpec:
    """The desk-scale benchmark used throughout the tests and docs."""
    return DatasetSpec(
        regime=RegimeSpec(dimension=8, shift=MeanShift(delta=0.6)), seed=seed
    )


def _one_sequence(spec: DatasetSpec, rng: np.random.Generator, cp_fraction: float):
    regime = spec.regime
    dim = regime.dimension
    mean0 = regime.mean_vector()
    chol0 = regime.pre_cov_scale * np.eye(dim)
    mean1, chol1 = regime.post_mean_and_chol()

    theta = None
    if rng.uniform() < cp_fraction:
        lo, hi = spec.theta_range
        theta = int(rng.integers(lo, hi + 1))
    noise = rng.standard_normal((spec.length, dim))
    series = mean0 + noise @ chol0.T
    if theta is not None:
        series[theta:] = mean1 + noise[theta:] @ chol1.T
    return series, LabeledSequence(length=spec.length, change_point=theta)


def generate(spec: DatasetSpec):
    """Produce (train, test) lists of (series, LabeledSequence) pairs."""
    children = np.random.SeedSequence(spec.seed).spawn(spec.n_train + spec.n_test)
    test_fraction = (
        spec.cp_fraction if spec.test_cp_fraction is None else spec.test_cp_fraction
    )
    train = [
        _one_sequence(spec, np.random.default_rng(child), spec.cp_fraction)
        for child in children[: spec.n_train]
    ]
    test = [
        _one_sequence(spec, np.random.default_rng(child), test_fraction)
        for child in children[spec.n_train:]
    ]
    return train, test
