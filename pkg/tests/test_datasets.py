import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fwgan import datasets
from fwgan.datasets import DatasetError, SyntheticSpec


def _mc_bounds_ok(x, mean, cov, k=3.0):
    """Sample mean and covariance within k Monte-Carlo standard errors."""
    n = x.shape[0]
    xm = x.mean(0)
    se_mean = np.sqrt(np.diag(cov) / n)
    ok = np.all(np.abs(xm - mean) <= k * se_mean)
    c = x - mean
    for i in range(2):
        for j in range(i, 2):
            prod = c[:, i] * c[:, j]
            se = prod.std() / math.sqrt(n)
            ok &= abs(prod.mean() - cov[i, j]) <= k * se
    return bool(ok)


class TestSynthetic:
    @pytest.mark.parametrize("name", datasets.SYNTHETIC_NAMES)
    def test_moments_within_mc_bounds(self, name):
        x = datasets.sample_synthetic(name, 100_000, seed=1)
        mean, cov = datasets.analytic_moments(name)
        assert _mc_bounds_ok(x, mean, cov)

    def test_mog_mean(self):
        x = datasets.sample_synthetic("MoG", 100_000, seed=0)
        assert np.all(np.abs(x.mean(0)) < 0.05)

    def test_funnel_first_marginal(self):
        x = datasets.sample_synthetic("Funnel", 100_000, seed=0)
        assert abs(x[:, 0].mean()) < 0.02
        assert abs(x[:, 0].var() - 1.0) < 0.05

    @pytest.mark.parametrize("name", datasets.SYNTHETIC_NAMES)
    def test_deterministic(self, name):
        a = datasets.sample_synthetic(SyntheticSpec(name, 300, 5))
        b = datasets.sample_synthetic(SyntheticSpec(name, 300, 5))
        assert np.array_equal(a, b)
        assert a.shape == (300, 2)

    def test_seed_changes_sample(self):
        a = datasets.sample_synthetic("Banana", 50, seed=0)
        b = datasets.sample_synthetic("Banana", 50, seed=1)
        assert not np.array_equal(a, b)

    def test_unknown_name(self):
        with pytest.raises(DatasetError):
            SyntheticSpec("Spiral")
        with pytest.raises(DatasetError):
            datasets.sample_synthetic("Spiral", 10)

    def test_nonpositive_n(self):
        with pytest.raises(DatasetError):
            SyntheticSpec("MoG", 0)

    def test_mog_modes(self):
        x = datasets.sample_synthetic("MoG", 20_000, seed=3)
        d = np.linalg.norm(x[:, None, :] - datasets.mog_centers()[None], axis=2)
        nearest = d.argmin(1)
        counts = np.bincount(nearest, minlength=8)
        assert np.all(np.abs(counts / len(x) - 1 / 8) < 0.015)
        assert np.quantile(d.min(1), 0.99) < 0.7

    def test_cosine_curve(self):
        x = datasets.sample_synthetic("Cosine", 20_000, seed=2)
        resid = x[:, 1] - 2 * np.cos(2 * x[:, 0])
        assert abs(resid.std() - 0.2) < 0.01
        assert np.all(np.abs(x[:, 0]) <= 4)

    @pytest.mark.parametrize("name", ["MoG", "Banana", "Cosine", "Funnel"])
    def test_density_integrates_to_one(self, name):
        lim = {"MoG": 3.5, "Banana": 6.0, "Cosine": 4.0, "Funnel": 6.0}[name]
        ylim = {"Banana": (-4.0, 20.0), "Cosine": (-3.5, 3.5), "Funnel": (-20.0, 20.0)}.get(name, (-lim, lim))
        xs = np.linspace(-lim, lim, 801)
        ys = np.linspace(*ylim, 1601)
        gx, gy = np.meshgrid(xs, ys)
        p = datasets.density(name, np.stack([gx.ravel(), gy.ravel()], 1)).reshape(gx.shape)
        mass = np.trapezoid(np.trapezoid(p, xs, axis=1), ys)
        assert mass == pytest.approx(1.0, abs=0.02)

    def test_density_unsupported(self):
        with pytest.raises(DatasetError):
            datasets.density("Rings", np.zeros((1, 2)))


class TestLoadCsv:
    def test_plain(self, tmp_path):
        p = tmp_path / "a.csv"
        p.write_text("1,2\n3,4\n5,6")
        np.testing.assert_array_equal(datasets.load_csv(p).matrix, [[1, 2], [3, 4], [5, 6]])

    def test_header(self, tmp_path):
        p = tmp_path / "h.csv"
        p.write_text("a,b\n1,2\n3,4\n")
        np.testing.assert_array_equal(datasets.load_csv(p, has_header=True).matrix, [[1, 2], [3, 4]])

    def test_delimiter(self, tmp_path):
        p = tmp_path / "s.csv"
        p.write_text("1;2\n3;4\n")
        np.testing.assert_array_equal(datasets.load_csv(p, delimiter=";").matrix, [[1, 2], [3, 4]])

    def test_ragged_names_line(self, tmp_path):
        p = tmp_path / "r.csv"
        p.write_text("1,2\n3,4,5\n")
        with pytest.raises(DatasetError, match=":2:"):
            datasets.load_csv(p)

    def test_non_numeric_names_line(self, tmp_path):
        p = tmp_path / "n.csv"
        p.write_text("1,2\n3,4\nx,6\n")
        with pytest.raises(DatasetError, match=":3:"):
            datasets.load_csv(p)

    def test_empty(self, tmp_path):
        p = tmp_path / "e.csv"
        p.write_text("")
        with pytest.raises(DatasetError):
            datasets.load_csv(p)

    def test_missing(self, tmp_path):
        with pytest.raises(FileNotFoundError):
            datasets.load_csv(tmp_path / "nope.csv")

    def test_write_round_trip(self, tmp_path):
        x = np.random.default_rng(0).normal(size=(20, 3)) / 7
        datasets.write_csv(tmp_path / "w.csv", x, ["a", "b", "c"])
        back = datasets.load_csv(tmp_path / "w.csv", has_header=True).matrix
        assert np.array_equal(back, x)


class TestStandardizeSplit:
    def test_split_sizes(self):
        ds = datasets.standardize_split(np.arange(200.0).reshape(100, 2), 0.2, seed=0)
        assert len(ds.train_idx) == 80 and len(ds.valid_idx) == 20
        assert not set(ds.train_idx) & set(ds.valid_idx)
        assert sorted(set(ds.train_idx) | set(ds.valid_idx)) == list(range(100))

    def test_constant_column(self):
        x = np.column_stack([np.full(50, 3.0), np.arange(50.0)])
        ds = datasets.standardize_split(x, 0.2)
        assert ds.stds[0] == 1e-8
        np.testing.assert_allclose(ds.matrix[:, 0], 0.0, atol=1e-9)

    @settings(max_examples=30, deadline=None)
    @given(st.integers(0, 10_000), st.floats(0.05, 0.5))
    def test_train_stats(self, seed, frac):
        rng = np.random.default_rng(seed)
        x = rng.normal(3.0, 5.0, size=(60, 3))
        ds = datasets.standardize_split(x, frac, seed)
        train = ds.train
        np.testing.assert_allclose(train.mean(0), 0.0, atol=1e-9)
        np.testing.assert_allclose(train.std(0), 1.0, atol=1e-9)

    def test_valid_uses_train_stats(self):
        x = np.random.default_rng(1).normal(size=(40, 2))
        ds = datasets.standardize_split(x, 0.25, seed=4)
        np.testing.assert_allclose(ds.valid, (x[ds.valid_idx] - ds.means) / ds.stds)

    def test_deterministic_partition(self):
        x = np.zeros((30, 1)) + np.arange(30.0)[:, None]
        a = datasets.standardize_split(x, 0.3, seed=7)
        b = datasets.standardize_split(x, 0.3, seed=7)
        assert np.array_equal(a.train_idx, b.train_idx)
        assert np.array_equal(a.valid_idx, b.valid_idx)

    def test_too_small(self):
        with pytest.raises(DatasetError):
            datasets.standardize_split(np.zeros((2, 1)), 0.2)

    @pytest.mark.parametrize("frac", [0.0, 1.0, -0.1])
    def test_bad_fraction(self, frac):
        with pytest.raises(DatasetError):
            datasets.standardize_split(np.zeros((10, 1)), frac)
