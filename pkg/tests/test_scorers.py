import numpy as np
import pytest

from wwaggr.calibration import apply_beta, fit_beta
from wwaggr.errors import ConfigError, DomainError, FitError
from wwaggr.scorers import (
    BootstrapDiversity,
    CosineProjectionScorer,
    CosineProjectionSpec,
    EnsembleSpec,
    LogisticSpec,
    NaiveDiversity,
    NoiseInjectionDiversity,
    WindowStatSpec,
    apply_miscalibration,
    build_ensemble,
    ensemble_score_matrix,
    score_cosine_projection,
    score_window_stat,
    scorer_from_dict,
    scorer_to_dict,
    train_logistic_scorer,
)
from wwaggr.types import LabeledSequence, ScoreSequence


def make_seq(rng, T=128, D=8, theta=None, delta=0.0):
    x = rng.normal(size=(T, D))
    if theta is not None:
        x[theta:] += delta
    return x, LabeledSequence(length=T, change_point=theta)


def make_dataset(rng, n, delta=0.6, T=128, D=8):
    out = []
    for _ in range(n):
        if rng.uniform() < 0.5:
            theta = int(rng.integers(32, 96))
            out.append(make_seq(rng, T, D, theta, delta))
        else:
            out.append(make_seq(rng, T, D))
    return out


def rank_auc(scores, labels):
    # Mann-Whitney two-sample statistic, the hand oracle for AUC
    pos = np.sort(scores[labels == 1])
    neg = np.sort(scores[labels == 0])
    wins = 0.0
    for p in pos:
        wins += np.searchsorted(neg, p, side="left")
        wins += 0.5 * (
            np.searchsorted(neg, p, side="right")
            - np.searchsorted(neg, p, side="left")
        )
    return wins / (len(pos) * len(neg))


class TestWindowStat:
    def test_constant_series_scores_exactly_zero(self):
        spec = WindowStatSpec(feature_window=8)
        got = score_window_stat(np.full((40, 3), 2.5), spec)
        assert got.values.max() == 0.0

    def test_large_shift_scores_high_near_change(self):
        spec = WindowStatSpec(feature_window=8)
        rng = np.random.default_rng(0)
        x, _ = make_seq(rng, D=4, theta=64, delta=10.0)
        scores = score_window_stat(x, spec).values
        assert scores.max() > 0.9
        assert 56 <= int(np.argmax(scores)) <= 80

    def test_prefix_is_zero(self):
        spec = WindowStatSpec(feature_window=5)
        rng = np.random.default_rng(1)
        scores = score_window_stat(rng.normal(size=(30, 2)), spec).values
        assert (scores[:9] == 0.0).all()

    def test_random_input_bounded(self):
        spec = WindowStatSpec(feature_window=4, sharpness=2.0)
        rng = np.random.default_rng(2)
        for _ in range(10):
            scores = score_window_stat(rng.normal(size=(50, 3)), spec)
            assert isinstance(scores, ScoreSequence)

    def test_too_short_series(self):
        with pytest.raises(DomainError, match="too short"):
            score_window_stat(np.zeros((7, 2)), WindowStatSpec(feature_window=4))


class TestCosineProjection:
    def test_identical_windows_score_zero(self):
        # periodic series: adjacent windows are identical, similarity 1
        spec = CosineProjectionSpec(embed_dim=8, feature_window=4, seed=0)
        x = np.tile(np.array([[1.0, -2.0], [0.5, 3.0], [2.0, 0.0], [-1.0, 1.0]]), (6, 1))
        scores = score_cosine_projection(x, spec).values
        np.testing.assert_allclose(scores[7:], 0.0, atol=1e-12)

    def test_anticorrelated_windows_score_zero(self):
        # sign-flipped adjacent windows embed to opposite vectors
        spec = CosineProjectionSpec(embed_dim=12, feature_window=3, seed=1)
        block = np.array([[4.0], [1.0], [-2.0]])
        x = np.vstack([block, -block, block, -block])
        scores = score_cosine_projection(x, spec).values
        assert scores[5] == 0.0

    def test_spikes_when_mean_direction_rotates(self):
        # cosine similarity is scale-free, so the clean probe is a change
        # of direction: the windows straddling it embed near-orthogonally
        spec = CosineProjectionSpec(embed_dim=16, feature_window=8, seed=0)
        rng = np.random.default_rng(3)
        x = rng.normal(size=(128, 4), scale=0.5)
        x[:64, 0] += 5.0
        x[64:, 1] += 5.0
        scores = score_cosine_projection(x, spec).values
        assert scores[60:72].max() > 0.5
        assert scores[60:72].max() > 3 * scores[20:55].max()

    def test_deterministic_in_seed(self):
        spec = CosineProjectionSpec(embed_dim=8, feature_window=4, seed=9)
        rng = np.random.default_rng(4)
        x = rng.normal(size=(40, 3))
        a = score_cosine_projection(x, spec).values
        b = score_cosine_projection(x, spec).values
        np.testing.assert_array_equal(a, b)
        other = score_cosine_projection(
            x, CosineProjectionSpec(embed_dim=8, feature_window=4, seed=10)
        ).values
        assert not np.array_equal(a, other)

    def test_too_short_series(self):
        with pytest.raises(DomainError, match="too short"):
            score_cosine_projection(np.zeros((5, 2)), CosineProjectionSpec(feature_window=3))


class TestLogisticScorer:
    def test_separates_well_separated_classes(self):
        rng = np.random.default_rng(42)
        train = make_dataset(rng, 60, delta=2.0, D=4)
        test = make_dataset(rng, 30, delta=2.0, D=4)
        scorer = train_logistic_scorer(train, LogisticSpec(seed=0))
        all_s, all_y = [], []
        for series, truth in test:
            all_s.append(scorer.score(series).values[15:])
            all_y.append(truth.step_labels()[15:])
        auc = rank_auc(np.concatenate(all_s), np.concatenate(all_y))
        assert auc > 0.9

    def test_deterministic_given_seed_and_data(self):
        rng = np.random.default_rng(5)
        train = make_dataset(rng, 20, delta=1.0, D=3)
        spec = LogisticSpec(seed=7, epochs=40)
        a = train_logistic_scorer(train, spec)
        b = train_logistic_scorer(train, spec)
        np.testing.assert_array_equal(a.weights, b.weights)
        series = train[0][0]
        np.testing.assert_array_equal(a.score(series).values, b.score(series).values)

    def test_degenerate_training_set_rejected(self):
        rng = np.random.default_rng(6)
        all_cp = [make_seq(rng, theta=50, delta=1.0) for _ in range(4)]
        no_cp = [make_seq(rng) for _ in range(4)]
        with pytest.raises(FitError, match="degenerate"):
            train_logistic_scorer(all_cp, LogisticSpec())
        with pytest.raises(FitError, match="degenerate"):
            train_logistic_scorer(no_cp, LogisticSpec())
        with pytest.raises(FitError):
            train_logistic_scorer([], LogisticSpec())


class TestMiscalibration:
    def test_gamma_one_is_identity(self):
        seq = ScoreSequence([0.2, 0.8, 0.5])
        np.testing.assert_array_equal(
            apply_miscalibration(seq, 1.0).values, seq.values
        )

    def test_gamma_two_squares(self):
        got = apply_miscalibration(ScoreSequence([0.5]), 2.0)
        assert got.values[0] == 0.25

    def test_preserves_range_and_order(self):
        rng = np.random.default_rng(7)
        s = np.sort(rng.uniform(size=50))
        out = apply_miscalibration(ScoreSequence(s), 3.5).values
        assert (np.diff(out) >= 0).all()
        assert (out >= 0).all() and (out <= 1).all()

    def test_rejects_bad_gamma(self):
        with pytest.raises(DomainError):
            apply_miscalibration(ScoreSequence([0.5]), 0.0)

    def test_beta_fit_inverts_gamma_warp(self):
        # scores warped by s**2 against Bernoulli(s) labels: the fitted
        # transform composed with the warp lands near the identity
        rng = np.random.default_rng(8)
        p = rng.uniform(0.02, 0.98, size=10_000)
        y = (rng.uniform(size=p.size) < p).astype(float)
        warped = p**2
        cal = fit_beta(warped, y)
        grid = np.linspace(0.1, 0.9, 9)
        recovered = apply_beta(cal, grid**2).values
        np.testing.assert_allclose(recovered, grid, atol=0.05)

    def test_spec_gamma_applied_by_scorers(self):
        spec_plain = WindowStatSpec(feature_window=4)
        spec_warp = WindowStatSpec(feature_window=4, miscalibration_gamma=2.0)
        rng = np.random.default_rng(9)
        x = rng.normal(size=(40, 2))
        a = score_window_stat(x, spec_plain).values
        b = score_window_stat(x, spec_warp).values
        np.testing.assert_allclose(b, a**2, atol=1e-15)


class TestEnsembles:
    def _train(self, seed=42, n=60):
        return make_dataset(np.random.default_rng(seed), n)

    def test_naive_ensemble_has_diversity(self):
        train = self._train()
        spec = EnsembleSpec(
            base=LogisticSpec(), size=10, diversity=NaiveDiversity(tuple(range(10)))
        )
        members = build_ensemble(spec, train)
        x, _ = make_seq(np.random.default_rng(0), theta=64, delta=0.6)
        mat = ensemble_score_matrix(members, x)
        assert mat.n_models == 10
        corr = np.corrcoef(mat.values)[np.triu_indices(10, 1)]
        assert (corr < 1.0).all()

    def test_prediction_variance_peaks_at_change(self):
        # the disagreement signal the window aggregation feeds on: member
        # variance at the change point, averaged over seeds, exceeds the
        # variance deep inside the pre-change region
        train = self._train()
        spec = EnsembleSpec(
            base=LogisticSpec(), size=10, diversity=NaiveDiversity(tuple(range(10)))
        )
        members = build_ensemble(spec, train)
        var_theta, var_pre = [], []
        for seed in range(20):
            x, truth = make_seq(np.random.default_rng(100 + seed), theta=64, delta=0.6)
            values = ensemble_score_matrix(members, x).values
            var_theta.append(values[:, 64].var())
            var_pre.append(values[:, 35].var())
        assert np.mean(var_theta) > np.mean(var_pre)

    def test_bootstrap_identical_seeds_identical_models(self):
        train = self._train(n=20)
        spec = EnsembleSpec(
            base=LogisticSpec(epochs=30),
            size=2,
            diversity=BootstrapDiversity(seeds=(5, 5), sample_fraction=1.0),
        )
        a, b = build_ensemble(spec, train)
        np.testing.assert_array_equal(a.weights, b.weights)
        assert a.bias == b.bias

    def test_bootstrap_different_seeds_differ(self):
        train = self._train(n=20)
        spec = EnsembleSpec(
            base=LogisticSpec(epochs=30),
            size=2,
            diversity=BootstrapDiversity(seeds=(1, 2), sample_fraction=0.8),
        )
        a, b = build_ensemble(spec, train)
        assert not np.array_equal(a.weights, b.weights)

    def test_noise_injection_training(self):
        train = self._train(n=20)
        spec = EnsembleSpec(
            base=LogisticSpec(epochs=30),
            size=3,
            diversity=NoiseInjectionDiversity(seeds=(0, 1, 2), noise_scale=0.05),
        )
        members = build_ensemble(spec, train)
        x, _ = make_seq(np.random.default_rng(1), theta=64, delta=0.6)
        mat = ensemble_score_matrix(members, x)
        corr = np.corrcoef(mat.values)[np.triu_indices(3, 1)]
        assert (corr < 1.0).all()

    def test_unsupervised_ensembles_need_no_training_data(self):
        spec = EnsembleSpec(
            base=CosineProjectionSpec(),
            size=4,
            diversity=NaiveDiversity(tuple(range(4))),
        )
        members = build_ensemble(spec)
        x, _ = make_seq(np.random.default_rng(2), theta=64, delta=3.0)
        mat = ensemble_score_matrix(members, x)
        assert mat.n_models == 4
        assert mat.model_ids[0] == "cosine_projection_0"

    def test_every_member_output_is_valid_scores(self):
        train = self._train(n=30)
        for base in (WindowStatSpec(), LogisticSpec(epochs=30), CosineProjectionSpec()):
            spec = EnsembleSpec(
                base=base, size=2, diversity=NaiveDiversity((0, 1))
            )
            members = build_ensemble(spec, train)
            x, _ = make_seq(np.random.default_rng(3), theta=70, delta=1.0)
            for m in members:
                m.score(x)  # ScoreSequence invariants checked on build

    def test_spec_validation(self):
        with pytest.raises(ConfigError):
            EnsembleSpec(base=WindowStatSpec(), size=2, diversity=NaiveDiversity((1,)))
        with pytest.raises(ConfigError):
            BootstrapDiversity(seeds=(0,), sample_fraction=0.0)
        with pytest.raises(ConfigError):
            LogisticSpec(feature_window=0)


class TestPersistence:
    def test_logistic_roundtrip(self):
        rng = np.random.default_rng(11)
        train = make_dataset(rng, 20, delta=1.0, D=3)
        scorer = train_logistic_scorer(train, LogisticSpec(seed=3, epochs=30))
        doc = scorer_to_dict(scorer)
        loaded = scorer_from_dict(doc)
        x = train[0][0]
        np.testing.assert_array_equal(
            scorer.score(x).values, loaded.score(x).values
        )

    def test_unsupervised_roundtrip(self):
        for scorer in (
            CosineProjectionScorer(CosineProjectionSpec(seed=2)),
            scorer_from_dict(scorer_to_dict(CosineProjectionScorer(CosineProjectionSpec(seed=2)))),
        ):
            assert scorer.spec.seed == 2

    def test_unknown_kind_rejected(self):
        with pytest.raises(DomainError):
            scorer_from_dict({"kind": "transformer", "spec": {}})
