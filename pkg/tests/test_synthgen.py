import numpy as np
import pytest

from wwaggr.errors import SpecError
from wwaggr.synthgen import (
    CorrelationShift,
    DatasetSpec,
    MeanShift,
    RegimeSpec,
    VarianceShift,
    default_dataset_spec,
    generate,
)


class TestSpecs:
    def test_invalid_correlation_rejected(self):
        with pytest.raises(SpecError):
            RegimeSpec(dimension=8, shift=CorrelationShift(rho=-0.5))
        RegimeSpec(dimension=8, shift=CorrelationShift(rho=0.5))

    def test_invalid_variance_factor(self):
        with pytest.raises(SpecError):
            VarianceShift(factor=0.0)

    def test_theta_range_bounds(self):
        with pytest.raises(SpecError):
            DatasetSpec(length=100, theta_range=(10, 100))
        DatasetSpec(length=100, theta_range=(10, 99))

    def test_bad_cp_fraction(self):
        with pytest.raises(SpecError):
            DatasetSpec(cp_fraction=1.5)


class TestGenerate:
    def test_shapes_and_counts(self):
        spec = DatasetSpec(n_train=7, n_test=3, length=50, theta_range=(10, 40))
        train, test = generate(spec)
        assert len(train) == 7 and len(test) == 3
        series, truth = train[0]
        assert series.shape == (50, 8)
        assert truth.length == 50

    def test_cp_fraction_zero_means_no_labels(self):
        spec = DatasetSpec(n_train=20, n_test=10, cp_fraction=0.0)
        train, test = generate(spec)
        assert all(not t.has_change for _, t in train + test)

    def test_degenerate_theta_range(self):
        spec = DatasetSpec(
            n_train=20, n_test=5, length=100, cp_fraction=1.0, theta_range=(50, 50)
        )
        train, test = generate(spec)
        assert all(t.change_point == 50 for _, t in train + test)

    def test_reproducible_bytes(self):
        spec = default_dataset_spec(seed=3)
        a_train, a_test = generate(spec)
        b_train, b_test = generate(spec)
        for (xa, ta), (xb, tb) in zip(a_train + a_test, b_train + b_test):
            assert xa.tobytes() == xb.tobytes()
            assert ta == tb

    def test_seed_changes_data(self):
        a, _ = generate(default_dataset_spec(seed=0))
        b, _ = generate(default_dataset_spec(seed=1))
        assert not np.array_equal(a[0][0], b[0][0])

    def test_pre_change_mean_converges(self):
        spec = DatasetSpec(
            n_train=200,
            n_test=0,
            length=64,
            cp_fraction=0.5,
            theta_range=(20, 50),
            regime=RegimeSpec(dimension=4, pre_mean=1.5, shift=MeanShift(delta=2.0)),
            seed=11,
        )
        train, _ = generate(spec)
        pre = np.concatenate([x[:20] for x, _ in train])  # always pre-change
        se = pre.std() / np.sqrt(pre.shape[0])
        assert abs(pre.mean() - 1.5) < 3 * se

    def test_mean_shift_moves_post_change(self):
        spec = DatasetSpec(
            n_train=100, n_test=0, cp_fraction=1.0, theta_range=(60, 60),
            regime=RegimeSpec(dimension=3, shift=MeanShift(delta=2.0)), seed=5,
        )
        train, _ = generate(spec)
        post = np.concatenate([x[60:] for x, _ in train])
        assert abs(post.mean() - 2.0) < 0.05

    def test_variance_shift(self):
        spec = DatasetSpec(
            n_train=100, n_test=0, cp_fraction=1.0, theta_range=(60, 60),
            regime=RegimeSpec(dimension=3, shift=VarianceShift(factor=4.0)), seed=6,
        )
        train, _ = generate(spec)
        post = np.concatenate([x[60:] for x, _ in train])
        assert abs(post.var() - 4.0) < 0.2

    def test_correlation_shift(self):
        spec = DatasetSpec(
            n_train=150, n_test=0, cp_fraction=1.0, theta_range=(60, 60),
            regime=RegimeSpec(dimension=4, shift=CorrelationShift(rho=0.7)), seed=7,
        )
        train, _ = generate(spec)
        post = np.vstack([x[60:] for x, _ in train])
        corr = np.corrcoef(post.T)
        off = corr[np.triu_indices(4, 1)]
        assert np.allclose(off, 0.7, atol=0.05)

    def test_theta_uniform_over_range(self):
        spec = DatasetSpec(
            n_train=500, n_test=0, cp_fraction=1.0, theta_range=(30, 90), seed=8
        )
        train, _ = generate(spec)
        thetas = np.array([t.change_point for _, t in train])
        assert thetas.min() >= 30 and thetas.max() <= 90
        assert abs(thetas.mean() - 60.0) < 3.0
