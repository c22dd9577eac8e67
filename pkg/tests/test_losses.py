import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.integrate import quad
from scipy.optimize import minimize_scalar

from signreg.losses import (
    LossError,
    LossSpec,
    MarginInputs,
    MarginUnavailable,
    empirical_grad,
    empirical_loss,
    loss_grad,
    loss_value,
    margin_constant,
    smoothed_check_value_grad,
)
from signreg.model import Dataset

LOGISTIC = LossSpec("logistic")
SQUARED = LossSpec("squared")


def test_parse():
    assert LossSpec.parse("check:0.3") == LossSpec("check", gamma=0.3)
    assert LossSpec.parse("lad") == LossSpec("check", gamma=0.5)
    assert str(LossSpec.parse("check:0.25")) == "check:0.25"
    with pytest.raises(LossError):
        LossSpec.parse("check:1.5")
    with pytest.raises(LossError):
        LossSpec.parse("hinge")


def test_pointwise_values():
    assert loss_value(LOGISTIC, 0.0, 1.0) == pytest.approx(np.log(2.0), rel=1e-15)
    lad = LossSpec("check", 0.5)
    assert loss_value(lad, 0.0, 1.0) == 0.5
    assert loss_value(lad, 0.0, -1.0) == 0.5
    # log(1 + e^2), mpmath
    assert loss_value(LOGISTIC, 2.0, 0.0) == pytest.approx(2.12692801104297250, rel=1e-15)
    assert loss_value(SQUARED, 1.0, 3.0) == 4.0


def test_pointwise_gradients():
    assert loss_grad(LOGISTIC, 0.0, 1.0) == -0.5
    assert loss_grad(LossSpec("check", 0.3), 0.0, 2.0) == pytest.approx(-0.3)
    # G(1.5), mpmath
    assert loss_grad(LOGISTIC, 1.5, 0.0) == pytest.approx(0.81757447619364366, rel=1e-15)


def test_logistic_requires_binary_response():
    with pytest.raises(LossError):
        loss_value(LOGISTIC, 0.0, 0.5)


def test_smoothed_check_values():
    v, g = smoothed_check_value_grad(0.5, 0.7, 0.0)
    assert v == 0.0 and g == 0.0
    v, g = smoothed_check_value_grad(0.5, 1.0, 10.0)
    assert v == pytest.approx(5.0 - 0.125)
    v, _ = smoothed_check_value_grad(0.3, 1e-9, 2.0)
    assert v == pytest.approx(0.6, abs=1e-8)
    with pytest.raises(LossError):
        smoothed_check_value_grad(0.5, 0.0, 1.0)


@settings(max_examples=60, deadline=None)
@given(st.floats(0.05, 0.95), st.floats(0.01, 3.0), st.floats(-8.0, 8.0))
def test_smoothed_check_matches_numerical_prox(gamma, mu, z):
    # Moreau envelope: min_u rho(u) + (z - u)^2 / (2 mu)
    rho = lambda u: gamma * u if u > 0 else (gamma - 1.0) * u
    res = minimize_scalar(lambda u: rho(u) + (z - u) ** 2 / (2 * mu),
                          bounds=(z - 10 - 10 * mu, z + 10 + 10 * mu), method="bounded",
                          options={"xatol": 1e-12})
    v, _ = smoothed_check_value_grad(gamma, mu, z)
    assert v == pytest.approx(res.fun, abs=1e-8)


def test_empirical_loss_values():
    rng = np.random.default_rng(0)
    X = rng.standard_normal((6, 2))
    y = rng.standard_normal(6)
    b, *_ = np.linalg.lstsq(X, y, rcond=None)
    d = Dataset(X, y)
    assert empirical_loss(SQUARED, d, b) == pytest.approx(np.mean((y - X @ b) ** 2), rel=1e-13)
    yb = (rng.random(6) < 0.5).astype(float)
    assert empirical_loss(LOGISTIC, Dataset(X, yb), np.zeros(2)) == pytest.approx(np.log(2))
    lad = LossSpec("check", 0.5)
    assert empirical_loss(lad, Dataset(np.ones((2, 1)), np.array([1.0, -1.0])), [0.0]) == 0.5


def _fd_check(spec, seed, points=1000, h=1e-6):
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(points):
        n, p = 8, 3
        X = rng.standard_normal((n, p))
        y = (rng.random(n) < 0.5).astype(float) if spec.kind == "logistic" else rng.standard_normal(n)
        d = Dataset(X, y)
        b = rng.standard_normal(p)
        g = empirical_grad(spec, d, b)
        fd = np.array([(empirical_loss(spec, d, b + h * e) - empirical_loss(spec, d, b - h * e)) / (2 * h)
                       for e in np.eye(p)])
        worst = max(worst, np.max(np.abs(fd - g)))
    return worst


def test_logistic_gradient_finite_difference():
    assert _fd_check(LOGISTIC, 0) < 1e-5


def test_smoothed_check_gradient_finite_difference():
    assert _fd_check(LossSpec("check", 0.3, smoothing_mu=0.5), 1) < 1e-5


def test_margin_constant_logistic():
    assert margin_constant(LOGISTIC, MarginInputs(0.0, 0.0)) == 0.125
    # 1/2 G(2)(1 - G(2)), mpmath
    assert margin_constant(LOGISTIC, MarginInputs(1.5, 0.5)) == pytest.approx(
        0.0524967927017532587, rel=1e-14)
    assert margin_constant(SQUARED, MarginInputs(1.0, 1.0)) == 1.0


def test_margin_constant_check_needs_density():
    spec = LossSpec("check", 0.5)
    with pytest.raises(MarginUnavailable):
        margin_constant(spec, MarginInputs(1.0, 1.0))
    assert margin_constant(spec, MarginInputs(1.0, 1.0, density_lower=0.2)) == 0.1


def test_check_expected_loss_curvature_is_density():
    # E rho_gamma(Y - a) for standard Laplace Y; its second derivative in a is the density
    gamma = 0.3
    dens = lambda u: 0.5 * np.exp(-abs(u))

    def piece(f, lo, hi):
        # split at the density kink so quad sees smooth integrands
        cuts = [lo] + [c for c in (0.0,) if lo < c < hi] + [hi]
        return sum(quad(f, u, v, epsabs=1e-14, epsrel=1e-13)[0] for u, v in zip(cuts, cuts[1:]))

    def expected(a):
        left = piece(lambda u: (gamma - 1.0) * (u - a) * dens(u), -np.inf, a)
        right = piece(lambda u: gamma * (u - a) * dens(u), a, np.inf)
        return left + right

    # truncation error of the central difference is about h^2/12 * max density
    h = 1e-2
    for a in (-1.0, 0.4, 2.0):
        second = (expected(a + h) - 2 * expected(a) + expected(a - h)) / h**2
        assert second == pytest.approx(dens(a), abs=1e-5)
