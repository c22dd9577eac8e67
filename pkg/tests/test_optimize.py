import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from oracles import nnls_bruteforce
from signreg.optimize import (
    SolveOptions,
    accelerated_projected_gradient,
    kkt_residual_l1,
    kkt_residual_nonneg,
    project_l1_ball,
    project_nonneg,
    project_simplex,
)

vectors = arrays(np.float64, st.integers(1, 10), elements=st.floats(-50, 50))


def test_project_nonneg():
    np.testing.assert_array_equal(project_nonneg([1.0, -2.0, 0.0]), [1, 0, 0])
    np.testing.assert_array_equal(project_nonneg([1.0, 2.0]), [1, 2])
    np.testing.assert_array_equal(project_nonneg([-1.0, -2.0]), [0, 0])


def test_project_simplex_examples():
    np.testing.assert_allclose(project_simplex([0.5, 0.5]), [0.5, 0.5])
    np.testing.assert_allclose(project_simplex([2.0, 0.0]), [1.0, 0.0])
    np.testing.assert_allclose(project_simplex([1.0, 1.0, 1.0]), [1 / 3] * 3)


def test_project_l1_ball_examples():
    np.testing.assert_allclose(project_l1_ball([0.3, -0.2], 1.0), [0.3, -0.2])
    np.testing.assert_allclose(project_l1_ball([2.0, 0.0], 1.0), [1.0, 0.0])
    np.testing.assert_allclose(project_l1_ball([1.0, 1.0], 1.0), [0.5, 0.5])
    with pytest.raises(ValueError):
        project_l1_ball([1.0], 0.0)


@settings(max_examples=200, deadline=None)
@given(vectors)
def test_simplex_projection_is_optimal(v):
    x = project_simplex(v)
    assert np.all(x >= 0)
    assert x.sum() == pytest.approx(1.0, abs=1e-12)
    # variational inequality: (v - x)'(y - x) <= 0 for every vertex y
    r = v - x
    assert np.max(r) <= r @ x + 1e-9


@settings(max_examples=200, deadline=None)
@given(vectors, st.floats(0.1, 20.0))
def test_l1_projection_is_optimal(v, radius):
    x = project_l1_ball(v, radius)
    assert np.abs(x).sum() <= radius * (1 + 1e-12)
    r = v - x
    # support function of the ball: max over the 2p vertices of r'y is radius*||r||_inf
    assert radius * np.max(np.abs(r)) <= r @ x + 1e-8 * (1 + radius * np.max(np.abs(r)))


def test_kkt_residuals():
    assert kkt_residual_nonneg([0.0, 3.0], [1.0, 0.0]) == 0.0
    assert kkt_residual_nonneg([-0.2, 0.0], [0.0, 1.0]) == pytest.approx(0.2)
    with pytest.raises(ValueError):
        kkt_residual_nonneg([0.0], [-1.0])
    assert kkt_residual_l1([-0.5, 0.2], [1.0, 0.0], 0.5) == 0.0
    assert kkt_residual_l1([0.0, 0.7], [0.0, 0.0], 0.5) == pytest.approx(0.2)


def _quad(c):
    return lambda x: (float((x[0] - c) ** 2), np.array([2 * (x[0] - c)]))


def test_engine_scalar_problems():
    x, d = accelerated_projected_gradient(_quad(2.0), project_nonneg, [0.0])
    assert x[0] == pytest.approx(2.0, abs=1e-8) and d.converged
    x, d = accelerated_projected_gradient(_quad(-1.0), project_nonneg, [3.0])
    assert x[0] == 0.0 and d.converged


def test_engine_on_simplex():
    fg = lambda x: (float(x @ x), 2 * x)
    x, d = accelerated_projected_gradient(fg, project_simplex, [1.0, 0.0, 0.0])
    np.testing.assert_allclose(x, [1 / 3] * 3, atol=1e-8)
    assert x @ x == pytest.approx(1 / 3, abs=1e-10)


def test_engine_nnls_against_active_set_oracle():
    rng = np.random.default_rng(3)
    X = rng.standard_normal((12, 5))
    y = rng.standard_normal(12)
    n = len(y)
    fg = lambda b: (float(np.mean((y - X @ b) ** 2)), -2 * X.T @ (y - X @ b) / n)
    residual = lambda b, g: kkt_residual_nonneg(g, b)
    b, d = accelerated_projected_gradient(fg, project_nonneg, np.zeros(5),
                                          SolveOptions(tol=1e-10), residual)
    ref, _ = nnls_bruteforce(X, y)
    assert d.kkt_residual <= 1e-8
    np.testing.assert_allclose(b, ref, atol=1e-7)


def test_options_validation():
    with pytest.raises(ValueError):
        SolveOptions(tol=0.0)
    with pytest.raises(ValueError):
        SolveOptions(backtrack=1.5)
