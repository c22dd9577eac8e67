import numpy as np
import pytest

from oracles import compatibility_random_search, random_cone_points, simplex_qp_enumeration, toeplitz
from signreg.conditions import (
    GuardError,
    NotPSDError,
    column_norm_constant,
    compatibility_constant,
    condition_report,
    positive_eigenvalue_constant,
    re_ratio,
    restricted_eigenvalue_bracket,
    simplex_kkt_residual,
)
from signreg.model import Dataset, standardize


def test_tau_identity():
    tau, cert, info = positive_eigenvalue_constant(np.eye(4))
    assert tau == pytest.approx(0.25, abs=1e-10)
    np.testing.assert_allclose(cert, 0.25, atol=1e-6)
    assert info["converged"]


@pytest.mark.parametrize("a", [0.0, 0.3, 0.9])
def test_tau_two_by_two(a):
    tau, cert, _ = positive_eigenvalue_constant(np.array([[1.0, a], [a, 1.0]]))
    assert tau == pytest.approx((1 + a) / 2, abs=1e-10)
    np.testing.assert_allclose(cert, [0.5, 0.5], atol=1e-6)


def test_tau_toeplitz_against_enumeration():
    S = toeplitz(12, 0.5)
    tau, cert, info = positive_eigenvalue_constant(S)
    ref, _ = simplex_qp_enumeration(S)
    assert abs(tau - ref) <= 1e-8
    assert tau >= 0.25
    assert cert @ S @ cert == pytest.approx(tau, abs=1e-12)
    assert simplex_kkt_residual(2 * S @ cert, cert) <= 1e-10


def test_tau_scale_covariant():
    rng = np.random.default_rng(0)
    A = rng.standard_normal((5, 5))
    S = A @ A.T
    t1, _, _ = positive_eigenvalue_constant(S)
    t2, _, _ = positive_eigenvalue_constant(3.5 * S)
    assert t2 == pytest.approx(3.5 * t1, rel=1e-8)


def test_non_psd_is_rejected_with_direction():
    S = np.array([[1.0, 2.0], [2.0, 1.0]])
    with pytest.raises(NotPSDError) as exc:
        positive_eigenvalue_constant(S)
    d = exc.value.direction
    assert d @ S @ d < 0


def test_compatibility_identity():
    for S_idx, L in [((0,), 0.0), ((1, 3), 2.0), ((0, 1, 2, 4), 10.0)]:
        r = compatibility_constant(np.eye(5), S_idx, L)
        assert r.phi_sq == pytest.approx(1.0, abs=1e-9)
        assert r.certified


def test_compatibility_zero_L():
    assert compatibility_constant(np.eye(2), (0,), 0.0).phi_sq == pytest.approx(1.0, abs=1e-12)


def test_compatibility_random_search_p6():
    rng = np.random.default_rng(1)
    A = rng.standard_normal((6, 6))
    S = A @ A.T / 6
    r = compatibility_constant(S, (1, 4), 3.0)
    ref = compatibility_random_search(S, (1, 4), 3.0, 10**6, seed=1)
    assert r.phi_sq <= ref + 1e-9
    assert ref - r.phi_sq <= 1e-3


def test_compatibility_monotone_in_L():
    rng = np.random.default_rng(2)
    for _ in range(5):
        A = rng.standard_normal((6, 6))
        S = A @ A.T / 6
        vals = [compatibility_constant(S, (0, 2), L).phi_sq for L in (0.0, 0.5, 1.0, 2.0, 4.0)]
        assert all(b <= a + 1e-9 for a, b in zip(vals, vals[1:]))


def test_compatibility_guard():
    S = toeplitz(20, 0.5)
    with pytest.raises(GuardError, match="estimate"):
        compatibility_constant(S, tuple(range(15)), 1.0, mode="exact")
    r = compatibility_constant(S, tuple(range(15)), 1.0, mode="auto", max_estimate_patterns=16)
    assert not r.certified


def test_re_identity_and_diagonal():
    lo, up, _ = restricted_eigenvalue_bracket(np.eye(6), (0, 1), 2.0, 3)
    assert lo == pytest.approx(1.0) and up == pytest.approx(1.0)
    d = np.array([0.3, 1.0, 2.0, 1.5])
    lo, up, _ = restricted_eigenvalue_bracket(np.diag(d), (0, 2), 1.0, 3)
    assert lo == pytest.approx(0.3)
    assert lo <= up


def test_re_upper_beats_random_cone_samples():
    S = toeplitz(20, 0.5)
    tau, _, _ = positive_eigenvalue_constant(S)
    L = 3.0 / tau
    S_idx = (2, 9, 15)
    lo, up, _ = restricted_eigenvalue_bracket(S, S_idx, L, 6)
    assert lo <= up
    rng = np.random.default_rng(3)
    mask = np.zeros(20, dtype=bool)
    mask[list(S_idx)] = True
    B = random_cone_points(rng, 20, S_idx, L, 10**5)
    sampled = min(re_ratio(S, b, mask, 6) for b in B)
    assert up <= sampled + 1e-12


def test_compatibility_at_least_re_lower_bound():
    rng = np.random.default_rng(4)
    for _ in range(10):
        A = rng.standard_normal((6, 6))
        S = A @ A.T / 6
        lo, _, _ = restricted_eigenvalue_bracket(S, (0, 3), 1.5, 3, starts=4, steps=20)
        phi = compatibility_constant(S, (0, 3), 1.5).phi_sq
        assert phi >= lo - 1e-9


def test_column_norm_constant():
    rng = np.random.default_rng(5)
    X = rng.standard_normal((5, 3))
    assert column_norm_constant(X) == pytest.approx(np.max(np.mean(X**2, axis=0)))
    d, _ = standardize(Dataset(X, np.zeros(5)))
    assert column_norm_constant(d) == pytest.approx(1.0)
    X[:, 1] = 0.0
    assert column_norm_constant(X) == pytest.approx(max(np.mean(X[:, 0] ** 2), np.mean(X[:, 2] ** 2)))
    assert column_norm_constant(np.zeros((3, 2))) == 0.0


def test_condition_report_invariants():
    rep = condition_report(toeplitz(12, 0.5), (0, 1, 2))
    assert rep.tau_sq >= 0.25
    assert rep.compat_L == pytest.approx(3 * rep.C / rep.tau_sq)
    assert rep.check_invariants() == []
    assert rep.re_lower <= rep.re_upper
