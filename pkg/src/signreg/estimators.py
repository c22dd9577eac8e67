"""Sign-constrained empirical-loss minimisation and the cross-validated Lasso."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Optional

import highspy
import numpy as np
from scipy import sparse
from scipy.optimize import linprog

from . import _kernels as K
from .losses import LossSpec, check_loss, curvature_bound, loss_grad, loss_value
from .model import Dataset, standardize as _standardize
from .optimize import SolveDiagnostics, SolveOptions, kkt_residual_l1, kkt_residual_nonneg

log = logging.getLogger(__name__)

# Inner fits of the cross-validation path only rank lambdas, so they run to a
# looser tolerance than user-facing fits.
CV_OPTIONS = SolveOptions(tol=1e-6, max_iter=5_000)
GROW = 1.2


@dataclass
class FitResult:
    beta_hat: np.ndarray
    objective: float
    diagnostics: SolveDiagnostics
    loss: str = ""
    constraint: str = "nonneg"
    lambda_used: Optional[float] = None
    cv_trace: Optional[list] = None
    standardized: bool = False
    extra: dict = field(default_factory=dict)

    @property
    def converged(self) -> bool:
        return self.diagnostics.converged

    def to_dict(self) -> dict:
        b = self.beta_hat
        return {
            "beta_hat": [float(v) for v in b],
            "constraint": self.constraint,
            "cv_trace": self.cv_trace,
            "diagnostics": self.diagnostics.to_dict(),
            "extra": self.extra,
            "l1_norm": float(np.abs(b).sum()),
            "lambda_used": self.lambda_used,
            "loss": self.loss,
            "objective": float(self.objective),
            "standardized": self.standardized,
            "support_size": int(np.count_nonzero(b)),
        }


class _Problem:
    """Design and response prepared for the compiled kernel."""

    def __init__(self, X: np.ndarray, y: np.ndarray):
        self.X = np.ascontiguousarray(X, dtype=float)
        self.XT = np.ascontiguousarray(X.T)
        self.y = np.ascontiguousarray(y, dtype=float)
        self.n, self.p = self.X.shape
        self._spec_norm = None

    @property
    def spec_norm(self) -> float:
        """Largest eigenvalue of X'X/n, from the power method (slightly inflated)."""
        if self._spec_norm is None:
            est = K.power_norm_sq(self.X, self.XT, 50)
            self._spec_norm = 1.05 * est if est > 0 else 1.0
        return self._spec_norm

    def step_for(self, spec: LossSpec, mu: float) -> float:
        if spec.kind == "check":
            curv = 1.0 / mu
        else:
            curv = curvature_bound(spec)
        return 1.0 / (curv * self.spec_norm)


def _run_kernel(prob: _Problem, spec: LossSpec, lam: float, nonneg: bool, beta0,
                opts: SolveOptions, mu: float):
    code = K.KIND_CODES[spec.kind]
    step = prob.step_for(spec, mu)
    beta, it, obj, res, _ = K.prox_grad(
        prob.X, prob.XT, prob.y, code, float(spec.gamma), float(mu), float(lam),
        bool(nonneg), np.ascontiguousarray(beta0, dtype=float), step, float(opts.tol),
        int(opts.max_iter), float(opts.backtrack), bool(opts.restart), 5, GROW,
    )
    if not np.isfinite(obj) or not np.all(np.isfinite(beta)):
        raise FloatingPointError("non-finite iterate in proximal-gradient kernel")
    return beta, int(it), float(obj), float(res)


def _solve(prob: _Problem, spec: LossSpec, lam: float, nonneg: bool, opts: SolveOptions,
           beta0=None, stages=None, certify=True):
    """Core solve; returns (beta, exact objective, SolveDiagnostics)."""
    beta = np.zeros(prob.p) if beta0 is None else np.array(beta0, dtype=float)
    if spec.kind != "check":
        beta, it, obj, res = _run_kernel(prob, spec, lam, nonneg, beta, opts, 0.0)
        diag = SolveDiagnostics(it, obj, res, res <= opts.tol, opts.tol)
        return beta, obj, diag

    mus = spec.continuation() if stages is None else stages
    trace = []
    total = 0
    for k, mu in enumerate(mus):
        last = k == len(mus) - 1
        stage_opts = opts if last else SolveOptions(max(opts.tol, 1e-6), opts.max_iter,
                                                    opts.backtrack, opts.restart)
        beta, it, obj, res = _run_kernel(prob, spec, lam, nonneg, beta, stage_opts, mu)
        total += it
        trace.append({"mu": mu, "iterations": it, "smoothed_objective": obj, "kkt_residual": res})

    if certify:
        beta = _polish_check(prob, spec.gamma, lam, nonneg, beta, mus[-1])
        res = check_kkt_residual(prob.X, prob.y, spec.gamma, beta, lam, nonneg)
        if res > opts.tol:
            lp_beta = _check_lp(prob, spec.gamma, lam, nonneg)
            if lp_beta is not None:
                lp_res = check_kkt_residual(prob.X, prob.y, spec.gamma, lp_beta, lam, nonneg)
                if lp_res < res:
                    beta, res = lp_beta, lp_res
                    trace.append({"lp_vertex_polish": True, "kkt_residual": lp_res})
    else:
        res = float("nan")
    obj = _check_objective(prob, spec.gamma, lam, beta)
    diag = SolveDiagnostics(total, obj, res, bool(res <= opts.tol), opts.tol, smoothing_trace=trace,
                            message="" if certify else "smoothed solution, exact KKT not evaluated")
    return beta, obj, diag


def _check_objective(prob: _Problem, gamma: float, lam: float, beta) -> float:
    z = prob.y - prob.X @ beta
    return float(np.mean(check_loss(gamma, z)) + lam * np.abs(beta).sum())


def _polish_check(prob: _Problem, gamma: float, lam: float, nonneg: bool, beta, mu: float):
    """Snap a smoothed check-loss solution onto the exact piecewise-linear optimum.

    Observations in the quadratic zone of the envelope are taken to be
    interpolated exactly and the non-zero coefficients are refitted by least
    squares on them; the refit is kept only if it lowers the exact objective
    (and stays feasible).
    """
    best = np.asarray(beta, dtype=float).copy()
    best_obj = _check_objective(prob, gamma, lam, best)
    scale = max(1.0, float(np.abs(best).max()))
    cand = best.copy()
    for _ in range(3):
        active = np.flatnonzero(np.abs(cand) > 1e-7 * scale)
        z = prob.y - prob.X @ cand
        kink = np.flatnonzero(np.abs(z) <= mu * max(gamma, 1.0 - gamma))
        new = np.zeros(prob.p)
        if active.size and kink.size:
            A = prob.X[np.ix_(kink, active)]
            sol = np.linalg.lstsq(A, prob.y[kink], rcond=None)[0]
            new[active] = sol
        elif active.size:
            new[active] = cand[active]
        if nonneg and np.any(new < 0):
            break
        if not nonneg and np.any(np.sign(new[active]) != np.sign(cand[active])):
            break
        obj = _check_objective(prob, gamma, lam, new)
        if obj <= best_obj + 1e-15 * max(1.0, abs(best_obj)):
            if np.array_equal(new, best):
                break
            best, best_obj = new, obj
            cand = new
        else:
            break
    return best


def _check_lp(prob: _Problem, gamma: float, lam: float, nonneg: bool):
    """Exact check-loss fit as a linear program (vertex solution), or None.

    Variables [b+, b-, u, v] with X(b+ - b-) + u - v = y; the lasso part b-
    is dropped under the sign constraint.
    """
    n, p = prob.n, prob.p
    X = prob.X
    blocks = [X] if nonneg else [X, -X]
    A_eq = np.hstack(blocks + [np.eye(n), -np.eye(n)])
    nb = p if nonneg else 2 * p
    c = np.concatenate([np.full(nb, lam), np.full(n, gamma / n), np.full(n, (1.0 - gamma) / n)])
    out = linprog(c, A_eq=A_eq, b_eq=prob.y, bounds=(0, None), method="highs-ds")
    if out.status != 0:
        return None
    beta = out.x[:p].copy()
    if not nonneg:
        beta -= out.x[p:2 * p]
    return beta


def check_kkt_residual(X, y, gamma: float, beta, lam: float = 0.0, nonneg: bool = True,
                       kink_tol: Optional[float] = None) -> float:
    """KKT residual against the exact check-loss subdifferential.

    Observations with |y_i - x_i' beta| <= kink_tol sit at the kink, where the
    loss derivative may be any value in [-gamma, 1 - gamma]. The best such
    selection is found by a small linear program; the residual is then
    re-evaluated directly at that (clipped) selection, so the returned value
    is attained by a genuine subgradient.
    """
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    beta = np.asarray(beta, dtype=float)
    n, p = X.shape
    if nonneg and np.any(beta < 0):
        raise ValueError("beta has negative entries")
    z = y - X @ beta
    if kink_tol is None:
        kink_tol = 1e-9 * (1.0 + float(np.abs(y).max()))
    at_kink = np.abs(z) <= kink_tol
    w = np.where(z > 0, -gamma, 1.0 - gamma)
    kidx = np.flatnonzero(at_kink)

    def residual(w_full):
        g = X.T @ w_full / n
        if nonneg:
            return kkt_residual_nonneg(g + lam, beta)
        return kkt_residual_l1(g, beta, lam)

    if kidx.size == 0:
        return residual(w)

    w_fix = w.copy()
    w_fix[kidx] = 0.0
    g_fix = X.T @ w_fix / n
    B = X[kidx].T / n  # p x k: contribution of the free selections
    k = kidx.size
    rows, rhs = [], []

    def le(coef, bound):  # coef . w - t <= bound
        rows.append(np.append(coef, -1.0))
        rhs.append(bound)

    for j in range(p):
        bj = beta[j]
        if bj > 0:
            target = -lam  # g_j == -lam
            le(B[j], target - g_fix[j])
            le(-B[j], -(target - g_fix[j]))
        elif bj < 0:
            target = lam
            le(B[j], target - g_fix[j])
            le(-B[j], -(target - g_fix[j]))
        elif nonneg:
            le(-B[j], g_fix[j] + lam)  # -(g_j + lam) <= t
        else:
            le(B[j], lam - g_fix[j])
            le(-B[j], lam + g_fix[j])
    c = np.zeros(k + 1)
    c[-1] = 1.0
    bounds = [(-gamma, 1.0 - gamma)] * k + [(0.0, None)]
    out = linprog(c, A_ub=np.array(rows), b_ub=np.array(rhs), bounds=bounds, method="highs",
                  options={"primal_feasibility_tolerance": 1e-10,
                           "dual_feasibility_tolerance": 1e-10})
    if out.status != 0:
        w[kidx] = 0.5 - gamma
        return residual(w)
    w[kidx] = np.clip(out.x[:k], -gamma, 1.0 - gamma)
    return residual(w)


def _prepare(dataset: Dataset, spec: LossSpec, standardize: bool):
    spec.check_response(dataset.response)
    if standardize:
        data, scales = _standardize(dataset)
    else:
        data, scales = dataset, np.ones(dataset.p)
    return _Problem(data.design, data.response), scales


def fit_sign_constrained(dataset: Dataset, spec: LossSpec, opts: SolveOptions = SolveOptions(),
                         standardize: bool = False, init=None) -> FitResult:
    """Minimise the empirical loss over beta >= 0.

    With ``standardize`` the columns are scaled to unit empirical norm
    before fitting and the coefficients mapped back; positive scaling keeps
    the constraint set unchanged.
    """
    prob, scales = _prepare(dataset, spec, standardize)
    beta0 = None if init is None else np.asarray(init, dtype=float) * scales
    beta, obj, diag = _solve(prob, spec, 0.0, True, opts, beta0=beta0)
    if not diag.converged:
        log.warning("sign-constrained %s fit did not converge: KKT residual %.3g after %d iterations",
                    spec, diag.kkt_residual, diag.iterations)
    return FitResult(beta / scales, obj, diag, loss=str(spec), constraint="nonneg",
                     standardized=standardize)


def fit_lasso(dataset: Dataset, spec: LossSpec, lam: float, opts: SolveOptions = SolveOptions(),
              standardize: bool = False, init=None) -> FitResult:
    """Minimise (1/n) sum_i l(x_i' beta, y_i) + lam * ||beta||_1.

    With ``standardize`` the penalty acts on the coefficients of the scaled
    design (the usual convention), so the solution differs from the
    unscaled problem unless lam == 0.
    """
    if not lam >= 0:
        raise ValueError(f"lambda must be >= 0, got {lam}")
    prob, scales = _prepare(dataset, spec, standardize)
    beta0 = None if init is None else np.asarray(init, dtype=float) * scales
    beta, obj, diag = _solve(prob, spec, float(lam), False, opts, beta0=beta0)
    if not diag.converged:
        log.warning("lasso %s fit (lambda=%.3g) did not converge: KKT residual %.3g",
                    spec, lam, diag.kkt_residual)
    return FitResult(beta / scales, obj, diag, loss=str(spec), constraint="lasso",
                     lambda_used=float(lam), standardized=standardize)


def _grad_at_zero(X, y, spec: LossSpec) -> np.ndarray:
    n = X.shape[0]
    w = np.atleast_1d(loss_grad(LossSpec(spec.kind, spec.gamma), np.zeros(n), y))
    return X.T @ w / n


def lambda_max(dataset: Dataset, spec: LossSpec, standardize: bool = False) -> float:
    """Smallest lambda at which the Lasso solution is identically zero."""
    spec.check_response(dataset.response)
    data = _standardize(dataset)[0] if standardize else dataset
    return float(np.max(np.abs(_grad_at_zero(data.design, data.response, spec))))


def lambda_grid(lmax: float, grid_size: int = 100, ratio: float = 1e-3) -> np.ndarray:
    """Log-spaced grid from lmax down to ratio * lmax (descending)."""
    if grid_size < 1:
        raise ValueError("grid_size must be >= 1")
    if grid_size == 1:
        return np.array([lmax])
    return lmax * np.logspace(0.0, np.log10(ratio), grid_size)


def make_folds(y, folds: int, seed: int, binary: bool = False):
    """Seeded K-fold split; returns (list of index arrays, info dict).

    For binary responses a split whose training part is single-class is
    re-drawn (up to 20 times) and then replaced by a stratified split.
    """
    y = np.asarray(y)
    n = y.shape[0]
    if folds < 2:
        raise ValueError("need at least 2 folds")
    if n < folds:
        raise ValueError(f"n={n} observations cannot fill {folds} folds")
    rng = np.random.default_rng(seed)
    info = {"reshuffles": 0, "stratified": False}

    def degenerate(parts):
        if not binary:
            return False
        for part in parts:
            train = np.setdiff1d(np.arange(n), part, assume_unique=True)
            if np.unique(y[train]).size < 2:
                return True
        return False

    for attempt in range(21):
        parts = np.array_split(rng.permutation(n), folds)
        if not degenerate(parts):
            return parts, info
        info["reshuffles"] = attempt + 1

    info["stratified"] = True
    order = np.concatenate([rng.permutation(np.flatnonzero(y == c)) for c in np.unique(y)])
    parts = [order[k::folds] for k in range(folds)]
    return parts, info


def _check_lp_path(prob: _Problem, gamma: float, lambdas) -> np.ndarray:
    """Exact check-loss Lasso along a grid: one LP, re-solved with changed penalty costs.

    The basis of the previous grid point stays primal feasible when only the
    costs change, so each warm-started simplex solve is short.
    """
    n, p = prob.n, prob.p
    A = sparse.csc_matrix(np.hstack([prob.X, -prob.X, np.eye(n), -np.eye(n)]))
    nv = 2 * p + 2 * n
    h = highspy.Highs()
    h.setOptionValue("output_flag", False)
    lp = highspy.HighsLp()
    lp.num_col_, lp.num_row_ = nv, n
    lp.col_cost_ = np.concatenate([np.full(2 * p, float(lambdas[0])), np.full(n, gamma / n),
                                   np.full(n, (1.0 - gamma) / n)])
    lp.col_lower_ = np.zeros(nv)
    lp.col_upper_ = np.full(nv, highspy.kHighsInf)
    lp.row_lower_ = lp.row_upper_ = np.asarray(prob.y, dtype=float)
    lp.a_matrix_.format_ = highspy.MatrixFormat.kColwise
    lp.a_matrix_.start_, lp.a_matrix_.index_, lp.a_matrix_.value_ = A.indptr, A.indices, A.data
    h.passModel(lp)
    cols = np.arange(2 * p, dtype=np.int32)
    betas = np.empty((len(lambdas), p))
    for k, lam in enumerate(lambdas):
        h.changeColsCost(2 * p, cols, np.full(2 * p, float(lam)))
        h.run()
        if h.getModelStatus() != highspy.HighsModelStatus.kOptimal:
            beta = _check_lp(prob, gamma, float(lam), False)
            if beta is None:
                raise RuntimeError(f"check-loss LP failed at lambda={lam:.3g}")
        else:
            x = np.asarray(h.getSolution().col_value)
            beta = x[:p] - x[p:2 * p]
        betas[k] = beta
    return betas


def lasso_path(prob: _Problem, spec: LossSpec, lambdas, opts: SolveOptions = CV_OPTIONS):
    """Lasso fits along a descending lambda grid.

    Squared and logistic losses use warm-started proximal-Newton coordinate
    descent; the check loss is solved exactly as a warm-started LP.
    """
    if spec.kind == "check":
        return _check_lp_path(prob, spec.gamma, lambdas)
    betas = np.empty((len(lambdas), prob.p))
    beta = np.zeros(prob.p)
    for k, lam in enumerate(lambdas):
        beta, _, _, _ = K.cd_lasso(prob.X, prob.XT, prob.y, K.KIND_CODES[spec.kind],
                                   float(lam), beta, float(opts.tol), 100, int(opts.max_iter))
        betas[k] = beta
    return betas


def _validation_loss(spec: LossSpec, X, y, betas) -> np.ndarray:
    exact = LossSpec(spec.kind, spec.gamma)
    A = X @ betas.T  # n_val x n_lambda
    return np.mean(loss_value(exact, A, y[:, None]), axis=0)


def cross_validate_lambda(dataset: Dataset, spec: LossSpec, folds: int = 10, grid_size: int = 100,
                          seed: int = 0, one_se: bool = False, standardize: bool = False,
                          opts: SolveOptions = CV_OPTIONS):
    """K-fold cross-validation of the Lasso penalty.

    The grid is log-spaced on [1e-3 * lambda_max, lambda_max] with lambda_max
    from the full data; the selected lambda minimises the mean validation
    loss (the same unpenalised loss), or with ``one_se`` is the largest lambda
    within one standard error of that minimum.

    Returns ``(lambda_star, cv_trace)`` with one dict per grid point.
    """
    spec.check_response(dataset.response)
    data = _standardize(dataset)[0] if standardize else dataset
    X, y = data.design, data.response
    lmax = float(np.max(np.abs(_grad_at_zero(X, y, spec))))
    grid = lambda_grid(lmax, grid_size)
    parts, info = make_folds(y, folds, seed, binary=spec.kind == "logistic")
    if info["reshuffles"] or info["stratified"]:
        log.info("cross-validation folds: %d reshuffles, stratified=%s",
                 info["reshuffles"], info["stratified"])

    losses = np.empty((len(parts), grid.size))
    all_idx = np.arange(data.n)
    for k, val in enumerate(parts):
        train = np.setdiff1d(all_idx, val, assume_unique=True)
        prob = _Problem(X[train], y[train])
        betas = lasso_path(prob, spec, grid, opts)
        losses[k] = _validation_loss(spec, X[val], y[val], betas)

    mean = losses.mean(axis=0)
    se = losses.std(axis=0, ddof=1) / np.sqrt(len(parts)) if len(parts) > 1 else np.zeros_like(mean)
    best = int(np.argmin(mean))
    if one_se:
        ok = np.flatnonzero(mean <= mean[best] + se[best])
        best = int(ok.min())  # grid is descending: smallest index = largest lambda
    trace = [
        {"lambda": float(l), "mean_loss": float(m), "se": float(s)}
        for l, m, s in zip(grid, mean, se)
    ]
    return float(grid[best]), trace


def fit_lasso_cv(dataset: Dataset, spec: LossSpec, folds: int = 10, grid_size: int = 100,
                 seed: int = 0, one_se: bool = False, standardize: bool = False,
                 opts: SolveOptions = SolveOptions(), cv_opts: SolveOptions = CV_OPTIONS) -> FitResult:
    lam, trace = cross_validate_lambda(dataset, spec, folds, grid_size, seed, one_se,
                                       standardize, cv_opts)
    res = fit_lasso(dataset, spec, lam, opts, standardize=standardize)
    res.cv_trace = trace
    res.extra["folds"] = folds
    res.extra["one_se"] = one_se
    return res
