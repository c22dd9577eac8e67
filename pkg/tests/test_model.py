import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from signreg.model import (
    DataError,
    Dataset,
    DimensionError,
    GramMatrix,
    SupportSet,
    empirical_norm_sq,
    load_csv,
    lq_norm,
    restrict,
    standardize,
)


def test_norm_of_zero_is_zero():
    d = Dataset(np.random.default_rng(0).standard_normal((5, 3)), np.zeros(5))
    assert empirical_norm_sq(d, np.zeros(3)) == 0.0


def test_norm_unit_column():
    n = 4
    X = np.sqrt(n) * np.eye(n)
    d = Dataset(X, np.zeros(n))
    e1 = np.zeros(n)
    e1[0] = 1.0
    assert empirical_norm_sq(d, e1) == pytest.approx(1.0, abs=1e-15)


def test_norm_matches_dense_quadratic_form():
    rng = np.random.default_rng(1)
    X = rng.standard_normal((5, 3))
    beta = np.array([1.0, -2.0, 0.5])
    d = Dataset(X, np.zeros(5))
    sigma = X.T @ X / 5
    assert empirical_norm_sq(d, beta) == pytest.approx(beta @ sigma @ beta, rel=1e-13)
    assert d.gram().quad(beta) == pytest.approx(beta @ sigma @ beta, rel=1e-13)


def test_restrict():
    b = np.array([1.0, 2.0, 3.0])
    np.testing.assert_array_equal(restrict(b, SupportSet((0, 2))), [1, 0, 3])
    np.testing.assert_array_equal(restrict(b, SupportSet((0, 1, 2))), b)
    np.testing.assert_array_equal(restrict(b, SupportSet(())), [0, 0, 0])


def test_lq_norm_values():
    assert lq_norm([3.0, 4.0], 2) == pytest.approx(5.0)
    assert lq_norm([1.0, -1.0, 1.0], 1) == 3.0
    # (1 + 2^1.5)^(2/3), evaluated with mpmath at 30 digits
    assert lq_norm([1.0, -2.0], 1.5) == pytest.approx(2.44726081477147549, rel=1e-14)
    assert lq_norm([1.0, -7.0], np.inf) == 7.0
    with pytest.raises(ValueError):
        lq_norm([1.0], 0.5)


@settings(max_examples=100, deadline=None)
@given(arrays(np.float64, st.integers(1, 8), elements=st.floats(-1e3, 1e3)),
       st.floats(1.0, 4.0))
def test_lq_norm_between_l_inf_and_l1(v, q):
    n = lq_norm(v, q)
    assert np.abs(v).max() * (1 - 1e-12) <= n <= np.abs(v).sum() * (1 + 1e-12) + 1e-300


def test_support_set_validation():
    assert SupportSet((2, 0)).indices == (0, 2)
    with pytest.raises(ValueError):
        SupportSet((1, 1))
    with pytest.raises(IndexError):
        SupportSet((5,), p=3)
    assert SupportSet.parse("0, 3,1").indices == (0, 1, 3)
    assert SupportSet.of([0.0, 2.0, 0.0, -1.0]).indices == (1, 3)
    assert SupportSet((1,)).complement(3).indices == (0, 2)


def test_dataset_rejects_bad_input():
    with pytest.raises(DimensionError):
        Dataset(np.zeros((3, 2)), np.zeros(4))
    with pytest.raises(DataError):
        Dataset(np.array([[1.0, np.nan]]), np.zeros(1))


def test_gram_requires_symmetry():
    with pytest.raises(ValueError):
        GramMatrix(np.array([[1.0, 0.5], [0.0, 1.0]]))


def test_load_csv_header_and_response(tmp_path):
    f = tmp_path / "d.csv"
    f.write_text("a,b,y\n1,2,3\n4,5,6\n")
    d = load_csv(f)
    np.testing.assert_array_equal(d.design, [[1, 2], [4, 5]])
    np.testing.assert_array_equal(d.response, [3, 6])
    assert d.feature_names == ("a", "b") or list(d.feature_names) == ["a", "b"]
    d2 = load_csv(f, response="a")
    np.testing.assert_array_equal(d2.response, [1, 4])


def test_load_csv_reports_line_and_column(tmp_path):
    f = tmp_path / "bad.csv"
    f.write_text("1,2,3\n4,x,6\n")
    with pytest.raises(DataError, match="line 2, column 2"):
        load_csv(f)


def test_standardize_scales_only():
    rng = np.random.default_rng(2)
    X = rng.standard_normal((10, 3)) * [1.0, 5.0, 0.1]
    X[:, 2] = 0.0
    d, scales = standardize(Dataset(X, np.zeros(10)))
    np.testing.assert_allclose(np.mean(d.design[:, :2] ** 2, axis=0), 1.0)
    assert scales[2] == 1.0
    np.testing.assert_allclose(d.design * scales, X)
