"""Projections, an accelerated projected-gradient engine and KKT residuals."""

from __future__ import annotations

from dataclasses import asdict, dataclass, field
from typing import Callable, Optional

import numpy as np


class SolverError(RuntimeError):
    """Raised when the engine meets a non-finite objective or gradient."""

    def __init__(self, message: str, diagnostics: "SolveDiagnostics"):
        super().__init__(message)
        self.diagnostics = diagnostics


@dataclass(frozen=True)
class SolveOptions:
    tol: float = 1e-8
    max_iter: int = 50_000
    backtrack: float = 0.5
    restart: bool = True

    def __post_init__(self):
        if not self.tol > 0:
            raise ValueError("tol must be positive")
        if self.max_iter < 1:
            raise ValueError("max_iter must be positive")
        if not 0 < self.backtrack < 1:
            raise ValueError("backtrack factor must lie in (0, 1)")


@dataclass
class SolveDiagnostics:
    iterations: int
    final_objective: float
    kkt_residual: float
    converged: bool
    tol: float
    smoothing_trace: list = field(default_factory=list)
    message: str = ""

    def to_dict(self) -> dict:
        d = asdict(self)
        for k in ("final_objective", "kkt_residual"):
            v = d[k]
            d[k] = v if np.isfinite(v) else None
        return d


def project_nonneg(v) -> np.ndarray:
    return np.maximum(np.asarray(v, dtype=float), 0.0)


def project_simplex(v, radius: float = 1.0) -> np.ndarray:
    """Euclidean projection onto {x >= 0, sum(x) = radius} (sorted-threshold rule)."""
    v = np.asarray(v, dtype=float)
    if v.size == 0:
        return v.copy()
    u = np.sort(v)[::-1]
    css = np.cumsum(u) - radius
    k = np.arange(1, v.size + 1)
    rho = np.flatnonzero(u - css / k > 0)[-1]
    theta = css[rho] / (rho + 1.0)
    return np.maximum(v - theta, 0.0)


def project_l1_ball(v, r: float) -> np.ndarray:
    v = np.asarray(v, dtype=float)
    if not r > 0:
        raise ValueError(f"l1-ball radius must be positive, got {r}")
    a = np.abs(v)
    if a.sum() <= r:
        return v.copy()
    return np.sign(v) * project_simplex(a, r)


def kkt_residual_nonneg(grad, beta) -> float:
    """First-order residual for minimisation over beta >= 0.

    max(|g_j| on the free set, max(-g_j, 0) on the active set); zero exactly
    at a KKT point.
    """
    g = np.asarray(grad, dtype=float)
    b = np.asarray(beta, dtype=float)
    if np.any(b < 0):
        raise ValueError("beta has negative entries")
    if g.size == 0:
        return 0.0
    free = b > 0
    r_free = np.abs(g[free]).max() if free.any() else 0.0
    r_act = np.maximum(-g[~free], 0.0).max() if (~free).any() else 0.0
    return float(max(r_free, r_act))


def kkt_residual_l1(grad, beta, lam: float) -> float:
    """Residual of 0 in grad + lam * d||beta||_1."""
    g = np.asarray(grad, dtype=float)
    b = np.asarray(beta, dtype=float)
    if g.size == 0:
        return 0.0
    nz = b != 0
    r_nz = np.abs(g[nz] + lam * np.sign(b[nz])).max() if nz.any() else 0.0
    r_z = np.maximum(np.abs(g[~nz]) - lam, 0.0).max() if (~nz).any() else 0.0
    return float(max(r_nz, r_z))


def gradient_mapping_residual(project: Callable) -> Callable:
    """Default certificate ||x - P(x - g)||_inf (zero iff x is stationary)."""

    def residual(x, g):
        return float(np.max(np.abs(x - project(x - g)))) if x.size else 0.0

    return residual


def accelerated_projected_gradient(
    objective_grad: Callable,
    project: Callable,
    init,
    opts: SolveOptions = SolveOptions(),
    residual: Optional[Callable] = None,
    step_init: Optional[float] = None,
):
    """Minimise a smooth convex function over a closed convex set.

    ``objective_grad(x)`` returns ``(f(x), grad f(x))`` and ``project`` is the
    Euclidean projection onto the feasible set. Steps come from backtracking
    (the step shrinks by ``opts.backtrack`` until the quadratic upper model
    holds); momentum is reset whenever the objective would increase, so the
    accepted iterates are monotone. Convergence is declared on
    ``residual(x, grad f(x)) <= opts.tol``.

    Returns ``(x, SolveDiagnostics)``.
    """
    if residual is None:
        residual = gradient_mapping_residual(project)
    x = project(np.array(init, dtype=float))
    fx, gx = objective_grad(x)
    if not (np.isfinite(fx) and np.all(np.isfinite(gx))):
        diag = SolveDiagnostics(0, float(fx), np.inf, False, opts.tol, message="non-finite at init")
        raise SolverError("non-finite objective or gradient at the initial point", diag)

    step = step_init if step_init is not None else 1.0
    x_prev = x
    t = 1.0
    res = residual(x, gx)
    it = 0
    while res > opts.tol and it < opts.max_iter:
        it += 1
        t_next = 0.5 * (1.0 + np.sqrt(1.0 + 4.0 * t * t))
        momentum = (t - 1.0) / t_next
        if momentum > 0:
            y = x + momentum * (x - x_prev)
            fy, gy = objective_grad(y)
        else:
            y, fy, gy = x, fx, gx
        while True:
            z = project(y - step * gy)
            d = z - y
            fz, gz = objective_grad(z)
            finite = np.isfinite(fz) and np.all(np.isfinite(gz))
            if finite and fz <= fy + gy @ d + (0.5 / step) * (d @ d) + 1e-15 * abs(fy):
                break
            step *= opts.backtrack
            if step < 1e-300:
                diag = SolveDiagnostics(it, float(fx), res, False, opts.tol, message="step underflow")
                raise SolverError("non-finite objective or gradient along the path", diag)
        if opts.restart and momentum > 0 and fz > fx:
            # momentum overshoot: drop it and retry from x
            x_prev = x
            t = 1.0
            continue
        x_prev, x, fx, gx = x, z, fz, gz
        t = t_next
        res = residual(x, gx)

    diag = SolveDiagnostics(
        iterations=it,
        final_objective=float(fx),
        kkt_residual=float(res),
        converged=bool(res <= opts.tol),
        tol=opts.tol,
    )
    return x, diag
