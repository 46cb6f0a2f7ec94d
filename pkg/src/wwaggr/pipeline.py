"""Experiment configuration and orchestration.

Wires the pieces into reproducible runs: generate or load data, train a
(possibly mixed) ensemble, fit per-member calibrators on held-out
sequences, aggregate test scores, and sweep thresholds.

Randomness discipline: one root seed. The dataset uses it directly (or
its own seed when set explicitly); ensemble member seeds are the first K
words of SeedSequence([root_seed, 1]). Holdout splits are deterministic
index splits (generation already randomizes sequence order).

The detection margin defaults to 2 * max(window_grid) + feature_window,
tying the tolerance to the pipeline's inherent delay; every report
carries the margin it was computed with.
"""

from __future__ import annotations

import copy
from dataclasses import dataclass

import numpy as np

from .aggregation import POINTWISE_KINDS, AggregatorConfig
from .calibration import (
    calibrate_matrix,
    compare_calibration,
    fit_ensemble_calibrators,
)
from .distances import DistanceKind
from .errors import ConfigError
from .evaluation import (
    compute_traces,
    sweep_traces,
    threshold_count_sweep,
)
from .scorers import (
    BootstrapDiversity,
    CosineProjectionSpec,
    EnsembleSpec,
    LogisticSpec,
    NaiveDiversity,
    NoiseInjectionDiversity,
    WindowStatSpec,
    build_ensemble,
    ensemble_score_matrix,
)
from .synthgen import (
    CorrelationShift,
    DatasetSpec,
    MeanShift,
    RegimeSpec,
    VarianceShift,
    generate,
)

__all__ = [
    "DEFAULT_CONFIG",
    "ExperimentConfig",
    "member_seed_values",
    "split_holdout",
    "build_experiment_members",
    "score_pairs",
    "calibrate_on_validation",
    "evaluate_aggregations",
    "run_experiment",
]

DEFAULT_CONFIG = {
    "seed": 0,
    "labels": {"dataset": "synthetic-default", "model": "ensemble"},
    "dataset": {
        "n_train": 400,
        "n_test": 200,
        "length": 128,
        "cp_fraction": 0.5,
        "test_cp_fraction": 0.15,
        "theta_range": [32, 96],
        "seed": None,  # falls back to the root seed
        "regime": {
            "dimension": 8,
            "pre_mean": 0.0,
            "pre_cov_scale": 1.0,
            "shift": {"kind": "mean", "delta": 0.6},
        },
    },
    "ensemble": {
        "members": [
            {
                "kind": "logistic",
                "count": 10,
                "feature_window": 8,
                "learning_rate": 0.1,
                "epochs": 150,
                "miscalibration_gamma": None,
            }
        ],
        "diversity": {"kind": "naive", "sample_fraction": 1.0, "noise_scale": 0.1},
    },
    "calibration": {"kind": "beta", "clip_epsilon": 1e-6, "holdout_fraction": 0.5},
    "aggregations": ["mean", "min", "max", "median", "wwaggr"],
    "distance": {"kind": "w1", "bandwidth": None},
    # matched to the default scorers' response time (feature_window 8);
    # short-response ensembles want [1, 2, 3] instead
    "window_grid": [3, 5, 10],
    "thresholds": {"count": 300, "fixed": 0.5},
    "margin": None,
    "threshold_count_ladder": [1, 2, 3, 5, 10, 20, 50, 100, 200, 300],
    "distance_comparison": False,
}

_SHIFT_KINDS = {"mean": MeanShift, "variance": VarianceShift, "correlation": CorrelationShift}
_SCORER_KINDS = {"window_stat": WindowStatSpec, "logistic": LogisticSpec, "cosine_projection": CosineProjectionSpec}
_DIVERSITY_KINDS = {"naive": NaiveDiversity, "bootstrap": BootstrapDiversity, "noise_injection": NoiseInjectionDiversity}


def _merge(defaults, override, path=""):
    """Deep-merge override into defaults, rejecting unknown keys."""
    if not isinstance(override, dict):
        return override
    merged = copy.deepcopy(defaults)
    for key, value in override.items():
        here = f"{path}.{key}" if path else key
        if key not in defaults:
            raise ConfigError(f"unknown config key: {here}")
        if isinstance(defaults[key], dict) and isinstance(value, dict):
            merged[key] = _merge(defaults[key], value, here)
        else:
            merged[key] = copy.deepcopy(value)
    return merged


@dataclass(frozen=True)
class ExperimentConfig:
    """Validated experiment settings; build with from_dict."""

    raw: dict

    @classmethod
    def from_dict(cls, user: dict | None = None) -> "ExperimentConfig":
        merged = _merge(DEFAULT_CONFIG, user or {})
        config = cls(raw=merged)
        config.dataset_spec()  # validate eagerly, errors name their field
        config.scorer_groups()
        config.distance()
        if not merged["window_grid"]:
            raise ConfigError("window_grid must be non-empty")
        if any(w < 1 for w in merged["window_grid"]):
            raise ConfigError("window_grid entries must be >= 1")
        if merged["thresholds"]["count"] < 1:
            raise ConfigError("thresholds.count must be >= 1")
        if merged["calibration"]["kind"] not in ("none", "beta", "temperature"):
            raise ConfigError(
                f"calibration.kind must be none/beta/temperature, "
                f"got {merged['calibration']['kind']!r}"
            )
        holdout = merged["calibration"]["holdout_fraction"]
        if not 0.0 < holdout < 1.0:
            raise ConfigError(
                f"calibration.holdout_fraction must be in (0, 1), got {holdout}"
            )
        for name in merged["aggregations"]:
            if name not in POINTWISE_KINDS + ("wwaggr",):
                raise ConfigError(f"unknown aggregation {name!r} in aggregations")
        return config

    @property
    def seed(self) -> int:
        return int(self.raw["seed"])

    def dataset_spec(self) -> DatasetSpec:
        d = self.raw["dataset"]
        regime_cfg = d["regime"]
        shift_cfg = dict(regime_cfg["shift"])
        kind = shift_cfg.pop("kind")
        if kind not in _SHIFT_KINDS:
            raise ConfigError(f"dataset.regime.shift.kind: unknown kind {kind!r}")
        if kind == "mean" and isinstance(shift_cfg.get("delta"), list):
            shift_cfg["delta"] = tuple(shift_cfg["delta"])
        regime = RegimeSpec(
            dimension=regime_cfg["dimension"],
            pre_mean=tuple(regime_cfg["pre_mean"])
            if isinstance(regime_cfg["pre_mean"], list)
            else regime_cfg["pre_mean"],
            pre_cov_scale=regime_cfg["pre_cov_scale"],
            shift=_SHIFT_KINDS[kind](**shift_cfg),
        )
        return DatasetSpec(
            n_train=d["n_train"],
            n_test=d["n_test"],
            length=d["length"],
            cp_fraction=d["cp_fraction"],
            test_cp_fraction=d["test_cp_fraction"],
            theta_range=tuple(d["theta_range"]),
            regime=regime,
            seed=self.seed if d["seed"] is None else int(d["seed"]),
        )

    def scorer_groups(self):
        """List of (spec_kwargs, count, kind) for the ensemble members."""
        groups = []
        for member in self.raw["ensemble"]["members"]:
            member = dict(member)
            kind = member.pop("kind")
            count = int(member.pop("count"))
            if kind not in _SCORER_KINDS:
                raise ConfigError(f"ensemble.members: unknown scorer kind {kind!r}")
            if count < 1:
                raise ConfigError("ensemble.members: count must be >= 1")
            groups.append((kind, count, member))
        if not groups:
            raise ConfigError("ensemble.members must be non-empty")
        return groups

    def diversity_for(self, seeds: tuple[int, ...]):
        d = self.raw["ensemble"]["diversity"]
        kind = d["kind"]
        if kind not in _DIVERSITY_KINDS:
            raise ConfigError(f"ensemble.diversity.kind: unknown kind {kind!r}")
        if kind == "naive":
            return NaiveDiversity(seeds=seeds)
        if kind == "bootstrap":
            return BootstrapDiversity(seeds=seeds, sample_fraction=d["sample_fraction"])
        return NoiseInjectionDiversity(seeds=seeds, noise_scale=d["noise_scale"])

    def distance(self) -> DistanceKind:
        d = self.raw["distance"]
        return DistanceKind(kind=d["kind"], bandwidth=d["bandwidth"])

    @property
    def window_grid(self) -> list[int]:
        return [int(w) for w in self.raw["window_grid"]]

    @property
    def aggregations(self) -> list[str]:
        return list(self.raw["aggregations"])

    def margin(self) -> int:
        if self.raw["margin"] is not None:
            return int(self.raw["margin"])
        feature_window = max(
            int(member.get("feature_window", 8))
            for _, _, member in [(k, c, m) for k, c, m in self.scorer_groups()]
        )
        return 2 * max(self.window_grid) + feature_window


def member_seed_values(root_seed: int, n: int) -> list[int]:
    """First n seed words for ensemble members, derived from the root."""
    return [int(s) for s in np.random.SeedSequence([root_seed, 1]).generate_state(n)]


def split_holdout(pairs, holdout_fraction: float):
    """Deterministic tail split: (fitting part, held-out part)."""
    n_holdout = int(round(len(pairs) * holdout_fraction))
    n_fit = len(pairs) - n_holdout
    return pairs[:n_fit], pairs[n_fit:]


def build_experiment_members(config: ExperimentConfig, fit_pairs):
    """Train/instantiate all members; returns (members, model_ids)."""
    groups = config.scorer_groups()
    total = sum(count for _, count, _ in groups)
    seeds = member_seed_values(config.seed, total)
    members, model_ids = [], []
    offset = 0
    train_data = [(series, truth) for series, truth in fit_pairs]
    for kind, count, params in groups:
        base = _SCORER_KINDS[kind](**params)
        group_seeds = tuple(seeds[offset:offset + count])
        offset += count
        spec = EnsembleSpec(
            base=base, size=count, diversity=config.diversity_for(group_seeds)
        )
        group_members = build_ensemble(
            spec, train_data if kind == "logistic" else None
        )
        members.extend(group_members)
        model_ids.extend(f"{kind}_{offset - count + j}" for j in range(count))
    return members, tuple(model_ids)


def score_pairs(members, model_ids, pairs):
    """Score every (series, truth) pair; returns (matrices, truths)."""
    matrices = [
        ensemble_score_matrix(members, series, model_ids) for series, _ in pairs
    ]
    truths = [truth for _, truth in pairs]
    return matrices, truths


def ensemble_warmup(members) -> int:
    """Longest placeholder prefix across members; those leading steps
    carry the constant 0 score, not a probability, and must not enter
    calibration fitting."""
    return max((getattr(m, "warmup", 0) for m in members), default=0)


def _trim_warmup(matrices, truths, warmup: int):
    trimmed_m, trimmed_t = [], []
    for matrix, truth in zip(matrices, truths):
        if truth.length <= warmup + 1:
            continue
        from .types import EnsembleScoreMatrix, LabeledSequence

        theta = truth.change_point
        if theta is not None:
            theta = max(theta - warmup, 0)
        trimmed_m.append(
            EnsembleScoreMatrix(matrix.values[:, warmup:], matrix.model_ids)
        )
        trimmed_t.append(
            LabeledSequence(length=truth.length - warmup, change_point=theta)
        )
    return trimmed_m, trimmed_t


def calibrate_on_validation(config: ExperimentConfig, members, model_ids, val_pairs):
    """Fit per-member calibrators on half the validation split and report
    before/after ECE per member on the other half.

    Warm-up columns are dropped before fitting: their manufactured 0
    scores would otherwise anchor the transform at the clipped endpoint
    and can twist it non-monotone.
    """
    kind = config.raw["calibration"]["kind"]
    if kind == "none" or not val_pairs:
        return {}, {}
    warmup = ensemble_warmup(members)
    fit_pairs, eval_pairs = split_holdout(val_pairs, 0.5)
    if not fit_pairs:
        fit_pairs = val_pairs
        eval_pairs = val_pairs
    fit_matrices, fit_truths = score_pairs(members, model_ids, fit_pairs)
    fit_matrices, fit_truths = _trim_warmup(fit_matrices, fit_truths, warmup)
    calibrators = fit_ensemble_calibrators(
        fit_matrices,
        fit_truths,
        kind=kind,
        clip_epsilon=config.raw["calibration"]["clip_epsilon"],
    )
    if not eval_pairs:
        eval_pairs = fit_pairs
    eval_matrices, eval_truths = score_pairs(members, model_ids, eval_pairs)
    eval_matrices, eval_truths = _trim_warmup(eval_matrices, eval_truths, warmup)
    labels = np.concatenate([t.step_labels() for t in eval_truths])
    reports = {}
    for k, model_id in enumerate(model_ids):
        raw = np.concatenate([m.values[k] for m in eval_matrices])
        calibrated = calibrators[model_id].apply(raw).values
        reports[model_id] = compare_calibration(raw, calibrated, labels)
    return calibrators, reports


def _sweep_for(config, matrices, truths, agg_kind, window, distance, margin):
    agg = AggregatorConfig(
        kind=agg_kind,
        window=window,
        distance=distance,
    )
    traces = compute_traces(matrices, agg)
    n = int(config.raw["thresholds"]["count"])
    if agg_kind == "wwaggr" and not distance.bounded_unit:
        upper = max(max((float(t.max()) for t in traces), default=1.0), 1e-9)
    else:
        upper = 1.0
    if n == 1:
        grid = np.array([config.raw["thresholds"]["fixed"]])
    else:
        grid = np.linspace(0.0, upper, n)
    result = sweep_traces(
        traces,
        truths,
        grid,
        margin,
        fixed_threshold=float(config.raw["thresholds"]["fixed"]),
    )
    return result, traces


def evaluate_aggregations(config: ExperimentConfig, matrices, truths):
    """Sweep every configured aggregation; wwaggr searches the window grid
    and reports its best window. Returns the full report dict."""
    margin = config.margin()
    distance = config.distance()
    report = {
        "cell": dict(config.raw["labels"]),
        "margin": margin,
        "fixed_threshold": float(config.raw["thresholds"]["fixed"]),
        "n_thresholds": int(config.raw["thresholds"]["count"]),
        "distance": {"kind": distance.kind, "bandwidth": distance.bandwidth},
        "aggregations": {},
    }
    wwaggr_best = None
    for name in config.aggregations:
        if name in POINTWISE_KINDS:
            sweep, _ = _sweep_for(config, matrices, truths, name, 1, distance, margin)
            report["aggregations"][name] = _sweep_summary(sweep)
        else:
            per_window = {}
            best = None
            for window in config.window_grid:
                sweep, traces = _sweep_for(
                    config, matrices, truths, "wwaggr", window, distance, margin
                )
                per_window[window] = _sweep_summary(sweep)
                if best is None or sweep.best_f1 > best[0].best_f1:
                    best = (sweep, window, traces)
            sweep, window, traces = best
            summary = _sweep_summary(sweep)
            summary["window"] = window
            summary["per_window"] = {str(w): s for w, s in per_window.items()}
            report["aggregations"][name] = summary
            wwaggr_best = (sweep, window, traces)
    if wwaggr_best is not None:
        sweep, window, traces = wwaggr_best
        ladder = config.raw["threshold_count_ladder"]
        upper = 1.0 if distance.bounded_unit else max(
            max((float(t.max()) for t in traces), default=1.0), 1e-9
        )
        report["threshold_count"] = threshold_count_sweep(
            traces, truths, ladder, margin, upper
        )
    if config.raw["distance_comparison"] and "wwaggr" in config.aggregations:
        report["distance_comparison"] = _distance_comparison(
            config, matrices, truths, margin
        )
    return report


def _sweep_summary(sweep):
    return {
        "best_f1": sweep.best_f1,
        "best_threshold": sweep.best_threshold,
        "f1_at_fixed": sweep.f1_at_fixed,
        "fixed_threshold": sweep.fixed_threshold,
    }


def _distance_comparison(config, matrices, truths, margin):
    out = {}
    for kind in ("w1", "w2", "mmd"):
        distance = DistanceKind(kind)
        best = None
        for window in config.window_grid:
            sweep, traces = _sweep_for(
                config, matrices, truths, "wwaggr", window, distance, margin
            )
            if best is None or sweep.best_f1 > best[0].best_f1:
                best = (sweep, window)
        sweep, window = best
        summary = _sweep_summary(sweep)
        summary["window"] = window
        summary["curve"] = [
            [t, f1] for t, f1 in zip(sweep.thresholds, sweep.f1_per_threshold)
        ]
        out[kind] = summary
    return out


def run_experiment(config: ExperimentConfig, dataset=None):
    """Full in-memory pipeline, the programmatic twin of the CLI flow.

    dataset, when given, is a (train_pairs, test_pairs) tuple of
    (series, LabeledSequence) lists; otherwise the configured generator
    runs. Returns a dict with members, calibrators, reports.
    """
    if dataset is None:
        train_pairs, test_pairs = generate(config.dataset_spec())
    else:
        train_pairs, test_pairs = dataset
    holdout_fraction = config.raw["calibration"]["holdout_fraction"]
    fit_pairs, val_pairs = split_holdout(train_pairs, holdout_fraction)
    members, model_ids = build_experiment_members(config, fit_pairs)
    calibrators, calibration_reports = calibrate_on_validation(
        config, members, model_ids, val_pairs
    )
    test_matrices, test_truths = score_pairs(members, model_ids, test_pairs)
    test_matrices = [calibrate_matrix(m, calibrators) for m in test_matrices]
    report = evaluate_aggregations(config, test_matrices, test_truths)
    report["calibration"] = {
        "kind": config.raw["calibration"]["kind"],
        "per_model_ece": {
            mid: {"before": r.ece_before, "after": r.ece_after}
            for mid, r in calibration_reports.items()
        },
    }
    return {
        "config": config,
        "members": members,
        "model_ids": model_ids,
        "calibrators": calibrators,
        "test_matrices": test_matrices,
        "test_truths": test_truths,
        "report": report,
    }
