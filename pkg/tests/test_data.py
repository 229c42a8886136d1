import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from infebm.data import (Dataset, HistogramBinner, bin_features, bin_of, load_csv,
                         load_features)


def write(tmp_path, text, name="d.csv"):
    path = tmp_path / name
    path.write_text(text)
    return str(path)


def test_load_csv_basic(tmp_path):
    ds = load_csv(write(tmp_path, "x,y\n1,2\n3,4\n5,6\n"), "y")
    assert (ds.n, ds.p) == (3, 1)
    assert ds.feature_names == ["x"]
    np.testing.assert_array_equal(ds.y, [2, 4, 6])


def test_load_csv_drops_non_numeric_rows(tmp_path):
    ds = load_csv(write(tmp_path, "a,b,y\n1,2,3\n1,oops,3\n4,5,6\n7,,8\n"), "y")
    assert ds.n == 2
    assert ds.n_rejected == 2


def test_load_csv_target_anywhere(tmp_path):
    ds = load_csv(write(tmp_path, "y,a\n1,10\n2,20\n"), "y")
    np.testing.assert_array_equal(ds.X[:, 0], [10, 20])


def test_load_csv_errors(tmp_path):
    with pytest.raises(ValueError, match="zero usable rows"):
        load_csv(write(tmp_path, ""), "y")
    with pytest.raises(ValueError, match="zero usable rows"):
        load_csv(write(tmp_path, "x,y\nq,r\n"), "y")
    with pytest.raises(KeyError):
        load_csv(write(tmp_path, "x,z\n1,2\n"), "y")
    with pytest.raises(FileNotFoundError):
        load_csv(str(tmp_path / "missing.csv"), "y")


def test_load_features_reorders_and_checks(tmp_path):
    path = write(tmp_path, "b,a,y\n1,2,3\n4,5,6\n")
    np.testing.assert_array_equal(load_features(path, ["a", "b"]), [[2, 1], [5, 4]])
    with pytest.raises(KeyError, match="schema"):
        load_features(path, ["a", "c"])


def test_dataset_validation():
    with pytest.raises(ValueError):
        Dataset(np.zeros((1, 2)), np.zeros(1))
    with pytest.raises(ValueError):
        Dataset(np.array([[0.0], [np.nan]]), np.zeros(2))


def test_median_split():
    b = bin_features(np.array([[1.0], [2.0], [3.0], [4.0]]), max_bins=2)
    np.testing.assert_allclose(b.edges[0], [2.5])
    np.testing.assert_array_equal(b.bin_index[:, 0], [0, 0, 1, 1])
    np.testing.assert_array_equal(b.counts[0], [2, 2])


def test_constant_feature_single_bin():
    b = bin_features(np.array([[7.0], [7.0], [7.0]]), max_bins=255)
    assert b.n_bins[0] == 1
    np.testing.assert_array_equal(b.counts[0], [3])
    assert b.constant[0]


def test_uniform_draws_fill_all_bins(rng):
    b = bin_features(rng.random((1000, 1)), max_bins=255)
    assert b.n_bins[0] == 255
    assert b.counts[0].sum() == 1000


def test_bin_of_right_closed():
    b = bin_features(np.array([[1.0], [2.0], [3.0], [4.0]]), max_bins=2)
    assert bin_of(b, 0, 1.0) == 0
    assert bin_of(b, 0, 2.5) == 1
    b2 = bin_features(np.array([[0.5], [1.5], [2.5]]), max_bins=3)
    np.testing.assert_allclose(b2.edges[0], [1.0, 2.0], atol=0.2)
    assert bin_of(b2, 0, 99.0) == 2
    assert bin_of(b2, 0, -99.0) == 0


@settings(max_examples=60, deadline=None)
@given(arrays(float, st.tuples(st.integers(2, 60), st.integers(1, 3)),
              elements=st.floats(-1e3, 1e3, allow_nan=False).map(lambda v: round(v, 1))),
       st.integers(2, 40))
def test_binning_invariants(X, max_bins):
    b = bin_features(X, max_bins)
    for k in range(X.shape[1]):
        assert np.all(np.diff(b.edges[k]) > 0)
        assert b.n_bins[k] <= max_bins
        assert np.all(b.counts[k] >= 1)
        assert b.counts[k].sum() == X.shape[0]
        np.testing.assert_array_equal(b.bins_of(X)[:, k], b.bin_index[:, k])
        order = np.argsort(X[:, k], kind="stable")
        assert np.all(np.diff(b.bin_index[order, k]) >= 0)


def test_histogram_binner_is_sklearn_transformer(rng):
    X = rng.random((50, 2))
    binner = HistogramBinner(max_bins=8)
    out = binner.fit_transform(X)
    assert out.shape == (50, 2)
    assert binner.get_params() == {"max_bins": 8}
    assert out.max() < 8
