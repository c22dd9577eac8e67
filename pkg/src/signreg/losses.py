"""Pointwise losses l(a, y), their (sub)gradients and curvature constants.

Three losses are supported:

* ``squared``: (y - a)^2
* ``logistic``: -(y log G(a) + (1 - y) log(1 - G(a))), G the logistic cdf
* ``check``: rho_gamma(y - a), the quantile check loss

The check loss is nonsmooth; gradient methods use its Moreau envelope with
parameter ``mu`` and a continuation ``mu_k = mu0 * 2**-k``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy.special import expit

from .model import Dataset, DimensionError, max_abs_entry

KINDS = ("squared", "logistic", "check")


class LossError(ValueError):
    pass


class MarginUnavailable(LossError):
    pass


@dataclass(frozen=True)
class LossSpec:
    kind: str
    gamma: float = 0.5
    smoothing_mu: float = 0.0
    mu0: float = 1.0
    stages: int = 8

    def __post_init__(self):
        if self.kind not in KINDS:
            raise LossError(f"unknown loss {self.kind!r}; expected one of {KINDS}")
        if self.kind == "check" and not 0.0 < self.gamma < 1.0:
            raise LossError(f"check loss needs gamma in (0, 1), got {self.gamma}")
        if self.smoothing_mu < 0:
            raise LossError("smoothing_mu must be >= 0")
        if self.mu0 <= 0 or self.stages < 1:
            raise LossError("continuation needs mu0 > 0 and at least one stage")

    @classmethod
    def parse(cls, text: str, **kwargs) -> "LossSpec":
        """Parse ``"squared"``, ``"logistic"`` or ``"check:<gamma>"``."""
        text = text.strip().lower()
        if text.startswith("check"):
            _, _, g = text.partition(":")
            try:
                gamma = float(g) if g else 0.5
            except ValueError:
                raise LossError(f"bad check-loss quantile in {text!r}") from None
            return cls("check", gamma=gamma, **kwargs)
        if text in ("lad", "quantile"):
            return cls("check", gamma=0.5, **kwargs)
        return cls(text, **kwargs)

    def __str__(self):
        return f"check:{self.gamma:g}" if self.kind == "check" else self.kind

    @property
    def lipschitz(self) -> Optional[float]:
        """c_L in |l(a,y) - l(b,y)| <= c_L |a - b|; None when unbounded."""
        if self.kind == "squared":
            return None
        return 1.0

    @property
    def smooth(self) -> bool:
        return self.kind != "check"

    def continuation(self) -> list[float]:
        return [self.mu0 * 2.0**-k for k in range(self.stages)]

    def check_response(self, y) -> None:
        y = np.asarray(y, dtype=float)
        if self.kind == "logistic" and not np.all((y == 0.0) | (y == 1.0)):
            raise LossError("logistic loss needs responses in {0, 1}")


def check_loss(gamma: float, z):
    """rho_gamma(z) = gamma*z for z > 0, (gamma - 1)*z for z <= 0."""
    z = np.asarray(z, dtype=float)
    return np.where(z > 0, gamma * z, (gamma - 1.0) * z)


def loss_value(spec: LossSpec, a, y):
    a = np.asarray(a, dtype=float)
    y = np.asarray(y, dtype=float)
    spec.check_response(y)
    if spec.kind == "squared":
        out = (y - a) ** 2
    elif spec.kind == "logistic":
        out = np.logaddexp(0.0, a) - y * a
    elif spec.smoothing_mu > 0:
        out = smoothed_check_value_grad(spec.gamma, spec.smoothing_mu, y - a)[0]
    else:
        out = check_loss(spec.gamma, y - a)
    return out if out.ndim else float(out)


def loss_grad(spec: LossSpec, a, y):
    """Derivative of l(a, y) in a.

    For the exact check loss at a kink (y == a) the midpoint (1 - 2 gamma)/2
    of the subdifferential [-gamma, 1 - gamma] is returned.
    """
    a = np.asarray(a, dtype=float)
    y = np.asarray(y, dtype=float)
    spec.check_response(y)
    if spec.kind == "squared":
        out = 2.0 * (a - y)
    elif spec.kind == "logistic":
        out = expit(a) - y
    elif spec.smoothing_mu > 0:
        out = -smoothed_check_value_grad(spec.gamma, spec.smoothing_mu, y - a)[1]
    else:
        g = spec.gamma
        z = y - a
        out = np.where(z > 0, -g, np.where(z < 0, 1.0 - g, 0.5 - g))
    return out if out.ndim else float(out)


def smoothed_check_value_grad(gamma: float, mu: float, z):
    """Moreau envelope of rho_gamma with parameter mu, and its derivative in z.

    The envelope is quadratic z^2/(2 mu) on [-(1-gamma) mu, gamma mu] and
    linear outside; the derivative is clip(z/mu, gamma - 1, gamma).
    """
    if not mu > 0:
        raise LossError(f"smoothing parameter must be positive, got {mu}")
    z = np.asarray(z, dtype=float)
    lo, hi = gamma - 1.0, gamma
    grad = np.clip(z / mu, lo, hi)
    val = np.where(
        z > hi * mu,
        hi * z - 0.5 * mu * hi * hi,
        np.where(z < lo * mu, lo * z - 0.5 * mu * lo * lo, 0.5 * z * z / mu),
    )
    if val.ndim == 0:
        return float(val), float(grad)
    return val, grad


def empirical_loss(spec: LossSpec, dataset: Dataset, beta) -> float:
    """L(f_beta) = (1/n) sum_i l(x_i' beta, y_i)."""
    beta = np.asarray(beta, dtype=float)
    if beta.shape != (dataset.p,):
        raise DimensionError(f"beta has shape {beta.shape}, expected ({dataset.p},)")
    a = dataset.design @ beta
    return float(np.mean(loss_value(spec, a, dataset.response)))


def empirical_grad(spec: LossSpec, dataset: Dataset, beta) -> np.ndarray:
    beta = np.asarray(beta, dtype=float)
    if beta.shape != (dataset.p,):
        raise DimensionError(f"beta has shape {beta.shape}, expected ({dataset.p},)")
    a = dataset.design @ beta
    w = np.atleast_1d(loss_grad(spec, a, dataset.response))
    return dataset.design.T @ w / dataset.n


def curvature_bound(spec: LossSpec) -> float:
    """Upper bound on d^2 l / da^2 (for step sizes)."""
    if spec.kind == "squared":
        return 2.0
    if spec.kind == "logistic":
        return 0.25
    if spec.smoothing_mu > 0:
        return 1.0 / spec.smoothing_mu
    raise LossError("exact check loss has no curvature bound")


@dataclass(frozen=True)
class MarginInputs:
    K_X: float
    K_0: float
    density_lower: Optional[float] = None

    def __post_init__(self):
        if not (np.isfinite(self.K_X) and np.isfinite(self.K_0)):
            raise LossError("K_X and K_0 must be finite")
        if self.K_X < 0 or self.K_0 < 0:
            raise LossError("K_X and K_0 must be non-negative")
        if self.density_lower is not None and not self.density_lower > 0:
            raise LossError("density_lower must be positive")

    @classmethod
    def from_data(cls, design, true_beta, density_lower=None) -> "MarginInputs":
        design = np.asarray(design, dtype=float)
        f0 = design @ np.asarray(true_beta, dtype=float)
        return cls(max_abs_entry(design), float(np.max(np.abs(f0))), density_lower)


def margin_constant(spec: LossSpec, inputs: MarginInputs) -> float:
    """c = 1/2 min_i inf_{|a| <= K_X + K_0} of the expected-loss curvature."""
    K = inputs.K_X + inputs.K_0
    if spec.kind == "logistic":
        # G(1 - G) is unimodal and even, so the infimum sits at a = +-K
        g = expit(K)
        return 0.5 * float(g * (1.0 - g))
    if spec.kind == "check":
        if inputs.density_lower is None:
            raise MarginUnavailable(
                "margin unavailable: the check loss needs a lower bound on the "
                "response density over |a| <= K_X + K_0"
            )
        # d^2/da^2 E rho_gamma(Y - a) = g_Y(a)
        return 0.5 * float(inputs.density_lower)
    return 1.0
