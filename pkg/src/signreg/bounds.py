"""Oracle inequalities, the tuning-parameter rate and empirical-process checks."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np
from scipy.special import expit

from .losses import LossSpec, empirical_loss
from .model import Dataset, lq_norm
from .optimize import project_l1_ball


class BoundError(ValueError):
    pass


def lambda_rate(n: int, p: int, C: float, c_L: float, t: float) -> float:
    """lambda = 2 c_L C (4 sqrt(2 log(2p)/n) + sqrt(2t/n)).

    Holds with probability at least 1 - exp(-t) for a c_L-Lipschitz loss and
    columns with empirical second moment at most C.
    """
    if n < 1 or p < 1:
        raise BoundError("n and p must be positive")
    if not (C > 0 and c_L > 0 and t > 0):
        raise BoundError("C, c_L and t must be positive")
    return 2.0 * c_L * C * (4.0 * np.sqrt(2.0 * np.log(2.0 * p) / n) + np.sqrt(2.0 * t / n))


@dataclass
class OracleBound:
    eps: float
    M: float
    prediction: float
    kappa: float
    lam: float = 0.0
    t: Optional[float] = None
    excess: float = 0.0
    lq: dict = field(default_factory=dict)
    hypotheses: dict = field(default_factory=dict)

    @property
    def hypotheses_hold(self) -> bool:
        return all(self.hypotheses.values())

    def to_dict(self) -> dict:
        return {
            "eps": self.eps,
            "M": self.M,
            "prediction": self.prediction,
            "kappa": self.kappa,
            "lambda": self.lam,
            "t": self.t,
            "excess": self.excess,
            "lq": {str(k): v for k, v in self.lq.items()},
            "hypotheses": dict(self.hypotheses),
            "hypotheses_hold": self.hypotheses_hold,
        }


def oracle_bounds(margin_c: float, phi_sq: float, tau_sq: float, C: float, s_star: int,
                  lam: float, excess: float = 0.0, q: Sequence[float] = (),
                  t: Optional[float] = None) -> OracleBound:
    """Oracle bounds for the sign-constrained estimator.

    With kappa = (12 / (c phi^2)) (1 + 3C/tau^2)^2:

    * eps = 4 * excess + kappa * s* * lambda^2
    * M = eps / lambda bounds the l1 estimation error
    * the excess risk of the estimator is at most 5/4 * eps
    * for each q in ``q``, ||beta_hat - beta*||_q^q <= kappa^q s* lambda^q

    The l_q bounds need the target to be the best sign-constrained fit with
    zero approximation error and are refused when ``excess`` is nonzero.
    ``t`` is only carried along for reporting. The returned ``hypotheses`` record whether M <= 1 and the constants lie
    in their admissible ranges.
    """
    for name, v in (("margin_c", margin_c), ("phi_sq", phi_sq), ("tau_sq", tau_sq),
                    ("C", C), ("lam", lam)):
        if not (np.isfinite(v) and v > 0):
            raise BoundError(f"{name} must be positive and finite, got {v}")
    if s_star < 1:
        raise BoundError("s_star must be at least 1")
    if excess < 0:
        raise BoundError("excess must be non-negative")
    q = list(q)
    if q and excess != 0:
        raise BoundError(
            "l_q error bounds require zero approximation error (the target must be "
            "the true regression function); got excess = %g" % excess
        )
    for qq in q:
        if qq < 1:
            raise BoundError(f"q must be >= 1, got {qq}")
    kappa = 12.0 / (margin_c * phi_sq) * (1.0 + 3.0 * C / tau_sq) ** 2
    eps = 4.0 * excess + kappa * s_star * lam**2
    M = eps / lam
    hyp = {
        "M_le_1": bool(M <= 1.0),
        "tau_sq_le_C": bool(tau_sq <= C * (1 + 1e-12)),
        "phi_sq_le_sC": bool(phi_sq <= s_star * C * (1 + 1e-12)),
    }
    lq = {qq: kappa**qq * s_star * lam**qq for qq in q}
    return OracleBound(eps=eps, M=M, prediction=1.25 * eps, kappa=kappa, lam=float(lam), t=t,
                       excess=float(excess), lq=lq, hypotheses=hyp)


def lq_error(beta_hat, true_beta, q: float) -> float:
    """||beta_hat - beta*||_q^q (the quantity bounded by the l_q oracle bound)."""
    d = np.asarray(beta_hat, dtype=float) - np.asarray(true_beta, dtype=float)
    if np.isinf(q):
        return lq_norm(d, q)
    return lq_norm(d, q) ** q


def excess_risk_logistic(design, beta, true_beta) -> float:
    """Mean KL(p_i || G(x_i'beta)) with p_i = G(x_i'beta*); the logistic excess risk."""
    X = np.asarray(design, dtype=float)
    a = X @ np.asarray(beta, dtype=float)
    a0 = X @ np.asarray(true_beta, dtype=float)
    p = expit(a0)
    # E[l(a)] - E[l(a0)] with E l(a) = log(1 + e^a) - p a
    d = np.logaddexp(0.0, a) - np.logaddexp(0.0, a0) - p * (a - a0)
    return float(np.mean(np.maximum(d, 0.0)))


def expected_loss_logistic(design, true_beta) -> Callable:
    """Return beta -> (1/n) sum_i E[l(x_i'beta, Y_i)] for Bernoulli(G(x_i'beta*)) responses."""
    X = np.asarray(design, dtype=float)
    p = expit(X @ np.asarray(true_beta, dtype=float))

    def f(beta):
        a = X @ np.asarray(beta, dtype=float)
        return float(np.mean(np.logaddexp(0.0, a) - p * a))

    return f


def _expected(spec: LossSpec, dataset: Dataset, true_beta, expected_loss):
    if expected_loss is not None:
        return expected_loss
    if spec.kind == "logistic":
        return expected_loss_logistic(dataset.design, true_beta)
    raise BoundError(f"no closed-form expected loss for {spec}; pass expected_loss")


def empirical_process_deviation(dataset: Dataset, spec: LossSpec, true_beta, beta,
                                expected_loss: Optional[Callable] = None) -> float:
    """v(beta) - v(beta*) with v = empirical loss minus expected loss.

    The expected loss is closed form for the logistic loss; other losses
    need ``expected_loss(beta)``.
    """
    ev = _expected(spec, dataset, true_beta, expected_loss)
    v = empirical_loss(spec, dataset, beta) - ev(beta)
    v0 = empirical_loss(spec, dataset, true_beta) - ev(true_beta)
    return float(v - v0)


@dataclass
class SupEstimate:
    value: float
    argmax: np.ndarray
    evaluations: int
    lower_estimate: bool = True


def sup_deviation_estimate(dataset: Dataset, spec: LossSpec, true_beta, center_beta, M: float,
                           samples: int = 2000, seed: int = 0,
                           expected_loss: Optional[Callable] = None,
                           ascent_steps: int = 200) -> SupEstimate:
    """Lower estimate of sup |v(beta) - v(beta*)| over ||beta - center||_1 <= M.

    Candidates are the 2p vertices of the ball and ``samples`` seeded points
    inside it; the best one is refined by a coordinate pattern search that
    stays in the ball. The value is a lower estimate of the supremum, not a
    certificate.
    """
    if not M >= 0:
        raise BoundError("M must be non-negative")
    ev = _expected(spec, dataset, true_beta, expected_loss)
    center = np.asarray(center_beta, dtype=float)
    p = center.size

    def dev(b):
        return abs(empirical_process_deviation(dataset, spec, true_beta, b, ev))

    if M == 0:
        return SupEstimate(value=dev(center), argmax=center.copy(), evaluations=1)
    rng = np.random.default_rng(seed)
    eye = np.eye(p)
    cands = [center + M * eye[j] for j in range(p)] + [center - M * eye[j] for j in range(p)]
    for _ in range(samples):
        d = rng.laplace(size=p)
        d *= M * rng.random() ** (1.0 / p) / np.abs(d).sum()
        cands.append(center + d)
    vals = [dev(b) for b in cands]
    k = int(np.argmax(vals))
    best, arg = vals[k], cands[k]
    evals = len(cands)
    step = 0.25 * M
    for _ in range(ascent_steps):
        improved = False
        for j in range(p):
            for sgn in (1.0, -1.0):
                trial = center + project_l1_ball(arg + sgn * step * eye[j] - center, M)
                v = dev(trial)
                evals += 1
                if v > best:
                    best, arg, improved = v, trial, True
        if not improved:
            step *= 0.5
            if step < 1e-6 * M:
                break
    return SupEstimate(value=float(best), argmax=arg, evaluations=evals)
