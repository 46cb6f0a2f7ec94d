import json
import math

import numpy as np
import pytest
from scipy.special import expit, logit

from wwaggr.calibration import (
    BetaCalibrator,
    TemperatureCalibrator,
    apply_beta,
    calibrate_matrix,
    calibrator_from_dict,
    calibrator_to_dict,
    compare_calibration,
    cross_entropy,
    expected_calibration_error,
    fit_beta,
    fit_ensemble_calibrators,
    fit_temperature,
    load_calibrators,
    save_calibrators,
)
from wwaggr.errors import DomainError, FitError, ShapeError
from wwaggr.types import EnsembleScoreMatrix, LabeledSequence


def beta_closed_form(s, a, b, c):
    # direct evaluation of the closed-form transform, the hand oracle
    return 1.0 / (1.0 + (1.0 - s) ** b / s**a * math.exp(-c))


class TestApplyBeta:
    def test_identity_parameters(self):
        cal = BetaCalibrator(a=1.0, b=1.0, c=0.0)
        grid = np.linspace(0.01, 0.99, 99)
        np.testing.assert_allclose(apply_beta(cal, grid).values, grid, atol=1e-12)

    def test_hand_value_c_ln2(self):
        cal = BetaCalibrator(a=1.0, b=1.0, c=math.log(2.0))
        got = apply_beta(cal, np.array([0.5])).values[0]
        assert got == pytest.approx(2.0 / 3.0, abs=1e-12)
        assert got == pytest.approx(beta_closed_form(0.5, 1, 1, math.log(2)))

    def test_symmetric_fixed_point(self):
        cal = BetaCalibrator(a=2.0, b=2.0, c=0.0)
        assert apply_beta(cal, np.array([0.5])).values[0] == pytest.approx(0.5)

    def test_matches_closed_form_on_grid(self):
        rng = np.random.default_rng(0)
        for _ in range(10):
            a, b = rng.uniform(0.2, 3.0, size=2)
            c = rng.uniform(0.0, 2.0)
            cal = BetaCalibrator(a=a, b=b, c=c)
            s = rng.uniform(0.05, 0.95, size=30)
            expected = [beta_closed_form(v, a, b, c) for v in s]
            np.testing.assert_allclose(apply_beta(cal, s).values, expected, atol=1e-12)

    def test_monotone_increasing_for_nonnegative_exponents(self):
        rng = np.random.default_rng(1)
        grid = np.linspace(0.001, 0.999, 400)
        for _ in range(10):
            cal = BetaCalibrator(
                a=rng.uniform(0.0, 3.0), b=rng.uniform(0.0, 3.0), c=rng.uniform(0.0, 2.0)
            )
            out = apply_beta(cal, grid).values
            assert (np.diff(out) >= -1e-12).all()

    def test_outputs_strictly_inside_unit_interval(self):
        cal = BetaCalibrator(a=3.0, b=0.5, c=1.5)
        out = apply_beta(cal, np.array([0.0, 1.0, 0.5])).values
        assert (out > 0.0).all() and (out < 1.0).all()

    def test_equal_exponents_reduce_to_logit_rescaling(self):
        grid = np.linspace(0.05, 0.95, 50)
        for a, c in [(0.7, 0.0), (2.0, 0.4), (1.3, 1.0)]:
            cal = BetaCalibrator(a=a, b=a, c=c)
            expected = expit(a * logit(grid) + c)
            np.testing.assert_allclose(apply_beta(cal, grid).values, expected, atol=1e-12)

    def test_parameter_validation(self):
        with pytest.raises(DomainError):
            BetaCalibrator(a=1.0, b=1.0, c=-0.1)
        with pytest.raises(DomainError):
            BetaCalibrator(a=1.0, b=1.0, c=0.0, clip_epsilon=0.6)


class TestFitBeta:
    @pytest.mark.parametrize("seed", range(6))
    def test_recovers_identity_on_calibrated_data(self, seed):
        # labels drawn Bernoulli(s): the population optimum is the identity
        rng = np.random.default_rng(seed)
        s = rng.uniform(0.02, 0.98, size=10_000)
        y = (rng.uniform(size=s.size) < s).astype(float)
        cal = fit_beta(s, y)
        grid = np.arange(0.1, 0.95, 0.1)
        np.testing.assert_allclose(apply_beta(cal, grid).values, grid, atol=0.02)

    def test_scores_equal_labels_drives_loss_down(self):
        s = np.array([0.0, 1.0] * 50)
        y = np.array([0.0, 1.0] * 50)
        cal = fit_beta(s, y)
        assert cross_entropy(apply_beta(cal, s).values, y) < 0.01

    def test_never_worse_than_identity(self):
        rng = np.random.default_rng(3)
        s = rng.uniform(0.02, 0.98, size=2000) ** 3
        y = (rng.uniform(size=s.size) < s ** (1 / 3.0)).astype(float)
        cal = fit_beta(s, y)
        fitted = cross_entropy(apply_beta(cal, s).values, y)
        identity = cross_entropy(np.clip(s, 1e-6, 1 - 1e-6), y)
        assert fitted <= identity + 1e-6

    def test_single_class_labels_rejected(self):
        with pytest.raises(FitError):
            fit_beta(np.array([0.2, 0.8]), np.array([1.0, 1.0]))
        with pytest.raises(FitError):
            fit_temperature(np.array([0.2, 0.8]), np.array([0.0, 0.0]))

    def test_length_mismatch(self):
        with pytest.raises(ShapeError):
            fit_beta(np.array([0.2, 0.8]), np.array([1.0]))


class TestFitTemperature:
    @pytest.mark.parametrize("seed", range(4))
    def test_near_one_on_calibrated_data(self, seed):
        rng = np.random.default_rng(seed)
        s = rng.uniform(0.02, 0.98, size=10_000)
        y = (rng.uniform(size=s.size) < s).astype(float)
        t = fit_temperature(s, y)
        assert abs(t.temperature - 1.0) < 0.05

    def test_overconfident_scores_need_temperature_above_one(self):
        # true probability 0.6 reported as 0.9 (and 0.4 as 0.1): the
        # population optimum is logit(0.9)/logit(0.6) ~ 5.4
        rng = np.random.default_rng(0)
        true_p = np.where(rng.uniform(size=20_000) < 0.5, 0.6, 0.4)
        reported = np.where(true_p == 0.6, 0.9, 0.1)
        y = (rng.uniform(size=true_p.size) < true_p).astype(float)
        t = fit_temperature(reported, y)
        assert t.temperature > 1.0
        # grid-evaluation oracle: fitted T beats T = 1
        z = logit(np.clip(reported, 1e-6, 1 - 1e-6))
        nll = lambda T: np.mean(np.logaddexp(0, z / T) - y * (z / T))
        assert nll(t.temperature) < nll(1.0)

    def test_apply(self):
        t = TemperatureCalibrator(temperature=2.0)
        s = np.array([0.5, 0.9])
        expected = expit(logit(s) / 2.0)
        np.testing.assert_allclose(t.apply(s).values, expected, atol=1e-12)

    def test_validation(self):
        with pytest.raises(DomainError):
            TemperatureCalibrator(temperature=0.0)


class TestECE:
    def test_perfect_binary_scores(self):
        s = np.array([0.0, 1.0, 1.0, 0.0])
        y = np.array([0.0, 1.0, 1.0, 0.0])
        assert expected_calibration_error(s, y, 10).ece_after == 0.0

    def test_half_rate_at_half_confidence(self):
        s = np.full(100, 0.5)
        y = np.array([0.0, 1.0] * 50)
        assert expected_calibration_error(s, y, 15).ece_after == pytest.approx(0.0)

    def test_totally_wrong_confident_scores(self):
        s = np.full(50, 0.9)
        y = np.zeros(50)
        assert expected_calibration_error(s, y, 10).ece_after == pytest.approx(0.9)

    def test_bin_counts_sum_to_n(self):
        rng = np.random.default_rng(5)
        s = rng.uniform(size=500)
        y = (rng.uniform(size=500) < 0.5).astype(float)
        report = expected_calibration_error(s, y, 15)
        assert sum(b.count for b in report.per_bin) == 500
        assert report.n_bins == 15 and len(report.per_bin) == 15

    def test_compare_calibration_direction_on_warped_scores(self):
        # one-seed version of the acceptance check: fitting on warped
        # scores reduces ECE, and the 3-parameter transform beats the
        # single-parameter one
        rng = np.random.default_rng(0)
        p = rng.uniform(0.02, 0.98, size=8000)
        y = (rng.uniform(size=p.size) < p).astype(float)
        s = p**2
        beta = fit_beta(s[:4000], y[:4000])
        temp = fit_temperature(s[:4000], y[:4000])
        report = compare_calibration(s[4000:], beta.apply(s[4000:]).values, y[4000:])
        assert report.ece_after < report.ece_before
        e_temp = expected_calibration_error(
            temp.apply(s[4000:]).values, y[4000:]
        ).ece_after
        assert report.ece_after < e_temp

    def test_length_mismatch(self):
        with pytest.raises(ShapeError):
            expected_calibration_error(np.array([0.5]), np.array([1.0, 0.0]))


class TestEnsembleCalibration:
    def _holdout(self, rng, n_seq=6, n_models=3, length=40):
        matrices, truths = [], []
        for _ in range(n_seq):
            theta = int(rng.integers(10, 30))
            truth = LabeledSequence(length=length, change_point=theta)
            labels = truth.step_labels()
            base = np.where(labels == 1, 0.85, 0.1)
            rows = np.clip(
                base + rng.normal(0, 0.05, size=(n_models, length)), 0.0, 1.0
            )
            matrices.append(EnsembleScoreMatrix(rows ** 2))  # warped
            truths.append(truth)
        return matrices, truths

    def test_fit_and_apply_per_model(self):
        rng = np.random.default_rng(2)
        matrices, truths = self._holdout(rng)
        cals = fit_ensemble_calibrators(matrices, truths, kind="beta")
        assert set(cals) == {"model_0", "model_1", "model_2"}
        out = calibrate_matrix(matrices[0], cals)
        assert out.model_ids == matrices[0].model_ids
        assert out.values.shape == matrices[0].values.shape
        # warped scores get pushed back up toward the true rate
        post = truths[0].step_labels() == 1
        assert out.values[:, post].mean() > matrices[0].values[:, post].mean()

    def test_none_kind_is_passthrough(self):
        rng = np.random.default_rng(3)
        matrices, truths = self._holdout(rng)
        assert fit_ensemble_calibrators(matrices, truths, kind="none") == {}
        assert calibrate_matrix(matrices[0], {}) is matrices[0]

    def test_persistence_roundtrip(self, tmp_path):
        cals = {
            "m0": BetaCalibrator(a=1.2, b=0.8, c=0.3, clip_epsilon=1e-5),
            "m1": TemperatureCalibrator(temperature=2.5),
        }
        path = tmp_path / "calibrators.json"
        save_calibrators(cals, path)
        doc = json.loads(path.read_text())
        assert doc["m0"]["kind"] == "beta" and doc["m1"]["kind"] == "temperature"
        loaded = load_calibrators(path)
        assert loaded["m0"] == cals["m0"]
        assert loaded["m1"] == cals["m1"]

    def test_dict_roundtrip_rejects_unknown(self):
        with pytest.raises(DomainError):
            calibrator_from_dict({"kind": "platt"})
        with pytest.raises(DomainError):
            calibrator_to_dict(object())
