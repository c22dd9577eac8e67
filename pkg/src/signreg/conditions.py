"""Design-matrix constants: positive-eigenvalue, compatibility and RE constants.

All three are minima of the quadratic form beta' Sigma beta over different
sets:

* positive eigenvalue tau^2: over the standard simplex (convex QP);
* compatibility phi^2(L, S): |S| times the minimum over
  {||beta_S||_1 = 1, ||beta_{S^c}||_1 <= L}, computed exactly by splitting
  the non-convex equality into one convex QP per sign pattern on S;
* restricted eigenvalue phi^2(L, S, N): non-convex; only a certified lower
  bound (smallest eigenvalue) and a searched upper bound are returned.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from typing import Optional

import clarabel
import numpy as np
from scipy import sparse

from .model import Dataset, GramMatrix, SupportSet
from .optimize import (
    SolveOptions,
    accelerated_projected_gradient,
    project_l1_ball,
    project_simplex,
)

QP_OPTIONS = SolveOptions(tol=1e-11, max_iter=200_000)
EXACT_SUPPORT_LIMIT = 14
# gradient-mapping residual a sign-pattern subproblem must reach to count as solved
PATTERN_TOL = 1e-6


class NotPSDError(ValueError):
    def __init__(self, eigenvalue: float, direction: np.ndarray):
        super().__init__(
            f"Gram matrix is not positive semidefinite: eigenvalue {eigenvalue:.3g} "
            f"along direction {np.array2string(direction, precision=3)}"
        )
        self.eigenvalue = eigenvalue
        self.direction = direction


class GuardError(ValueError):
    """Exact computation refused because the problem exceeds the desk-scale guard."""


def _as_gram(sigma) -> GramMatrix:
    return sigma if isinstance(sigma, GramMatrix) else GramMatrix(np.asarray(sigma, dtype=float))


def _eig_extremes(S: np.ndarray):
    vals, vecs = np.linalg.eigh(S)
    return vals[0], vecs[:, 0], vals[-1]


def check_psd(sigma, rtol: float = 1e-10) -> tuple[float, float]:
    """Return (smallest, largest) eigenvalue; raise NotPSDError on negative curvature."""
    S = _as_gram(sigma).sigma
    lo, vec, hi = _eig_extremes(S)
    if lo < -rtol * max(1.0, abs(hi)):
        raise NotPSDError(float(lo), vec)
    return float(lo), float(hi)


def simplex_kkt_residual(g, beta) -> float:
    """KKT residual for min f over the simplex: all g_j >= nu, equality on the support."""
    g = np.asarray(g, dtype=float)
    beta = np.asarray(beta, dtype=float)
    nu = float(g @ beta)
    on = beta > 0
    r_on = np.abs(g[on] - nu).max() if on.any() else 0.0
    r_all = np.maximum(nu - g, 0.0).max()
    return float(max(r_on, r_all))


def _face_minimizer(S: np.ndarray, T: np.ndarray) -> Optional[np.ndarray]:
    """Minimiser of b'Sb subject to sum(b) = 1 with b supported on T (signs unchecked)."""
    k = T.size
    K = np.zeros((k + 1, k + 1))
    K[:k, :k] = 2.0 * S[np.ix_(T, T)]
    K[:k, k] = K[k, :k] = 1.0
    rhs = np.zeros(k + 1)
    rhs[k] = 1.0
    sol, *_ = np.linalg.lstsq(K, rhs, rcond=None)
    b = np.zeros(S.shape[0])
    b[T] = sol[:k]
    return b if np.isfinite(b).all() else None


def _simplex_polish(S: np.ndarray, b: np.ndarray, max_swaps: int = 50):
    """Active-set finish from an approximate simplex minimiser.

    Solves the equality-constrained QP on the current face, drops indices that
    turn negative and adds the most violated one; stops at a KKT point.
    """
    T = np.flatnonzero(b > 1e-9 * b.max())
    best = None
    for _ in range(max_swaps):
        c = _face_minimizer(S, T)
        if c is None:
            break
        if (c[T] < 0).any():
            T = T[c[T] > 0]
            if T.size == 0:
                break
            continue
        c = np.maximum(c, 0.0)
        c /= c.sum()
        g = 2.0 * S @ c
        res = simplex_kkt_residual(g, c)
        if best is None or res < best[1]:
            best = (c, res)
        j = int(np.argmin(g))
        if g[j] >= g @ c or j in T:
            break
        T = np.sort(np.append(T, j))
    return best


def positive_eigenvalue_constant(sigma, opts: SolveOptions = QP_OPTIONS, seed: int = 0,
                                 n_random: int = 8, start_iter: int = 200):
    """tau^2 = min of beta' Sigma beta over {beta >= 0, sum(beta) = 1}.

    Multi-start from every vertex, the barycentre and ``n_random`` seeded
    Dirichlet points, each run for ``start_iter`` engine iterations and then
    finished by an exact active-set step on the face it found. Returns
    ``(tau_sq, certificate, info)`` where ``info`` carries the KKT residual of
    the certificate.
    """
    G = _as_gram(sigma)
    S = G.sigma
    p = G.p
    _, hi = check_psd(G)
    step = 1.0 / (2.0 * hi) if hi > 0 else 1.0

    def fg(b):
        Sb = S @ b
        return float(b @ Sb), 2.0 * Sb

    residual = lambda b, g: simplex_kkt_residual(g, b)
    rng = np.random.default_rng(seed)
    starts = [np.eye(p)[j] for j in range(p)] + [np.full(p, 1.0 / p)]
    starts += list(rng.dirichlet(np.ones(p), size=n_random))
    short = SolveOptions(tol=opts.tol, max_iter=min(start_iter, opts.max_iter))

    best = None
    for b0 in starts:
        b, diag = accelerated_projected_gradient(fg, project_simplex, b0, short, residual, step)
        cands = [(b, diag.kkt_residual)]
        polished = _simplex_polish(S, b)
        if polished is not None:
            cands.append(polished)
        for c, res in cands:
            val = float(c @ S @ c)
            if best is None or val < best[0] - 1e-15 or (val <= best[0] + 1e-15 and res < best[2]):
                best = (val, c, res)
    val, b, res = best
    if res > opts.tol:
        # no start certified: fall back to the full engine budget from the best point
        b2, diag = accelerated_projected_gradient(fg, project_simplex, b, opts, residual, step)
        if float(b2 @ S @ b2) <= val:
            val, b, res = float(b2 @ S @ b2), b2, diag.kkt_residual
    info = {
        "kkt_residual": res,
        "converged": res <= opts.tol,
        "starts": len(starts),
        "tol": opts.tol,
    }
    return val, b, info


@dataclass
class CompatibilityResult:
    phi_sq: float
    certified: bool
    L: float
    support: tuple
    minimizer: np.ndarray
    subproblems: int
    max_kkt_residual: float

    def to_dict(self) -> dict:
        return {
            "phi_sq": self.phi_sq,
            "certified": self.certified,
            "L": self.L,
            "support": list(self.support),
            "minimizer": [float(v) for v in self.minimizer],
            "subproblems": self.subproblems,
            "max_kkt_residual": self.max_kkt_residual,
        }


def _sign_pattern_qp(S, s_idx, c_idx, signs, L, settings):
    """min beta'Sigma beta with signs*beta_S on the simplex and ||beta_{S^c}||_1 <= L.

    Solved by interior point in split variables z = (u, v+, v-) >= 0 with
    beta_S = signs*u and beta_{S^c} = v+ - v-; the answer is projected back
    onto the feasible set so the reported value is attained exactly.
    """
    k = len(s_idx)
    p = S.shape[0]
    m = len(c_idx) if L > 0 else 0
    order = np.concatenate([s_idx, c_idx])
    D = np.concatenate([signs, np.ones(p - k)])
    Q = S[np.ix_(order, order)] * D[:, None] * D[None, :]
    B = np.zeros((p, k + 2 * m))
    B[:k, :k] = np.eye(k)
    B[k:k + m, k:k + m] = np.eye(m)
    B[k:k + m, k + m:] = -np.eye(m)
    nz = k + 2 * m
    P = sparse.csc_matrix(np.triu(2.0 * B.T @ Q @ B))
    rows = [np.concatenate([np.ones(k), np.zeros(2 * m)])[None, :], -np.eye(nz)]
    rhs = [1.0] + [0.0] * nz
    cones = [clarabel.ZeroConeT(1)]
    if m:
        rows.append(np.concatenate([np.zeros(k), np.ones(2 * m)])[None, :])
        rhs.append(L)
        cones.append(clarabel.NonnegativeConeT(nz + 1))
    else:
        cones.append(clarabel.NonnegativeConeT(nz))
    A = sparse.csc_matrix(np.vstack(rows))
    sol = clarabel.DefaultSolver(P, np.zeros(nz), A, np.array(rhs), cones, settings).solve()
    z = np.asarray(sol.x)
    x = B @ z

    def project(v):
        out = np.zeros_like(v)
        out[:k] = project_simplex(v[:k])
        if m:
            out[k:] = project_l1_ball(v[k:], L)
        return out

    # gradient-mapping residual at step 1/(2||Q||), scaled back to unit step
    step = 1.0 / max(2.0 * np.linalg.norm(Q, 2), 1e-300)

    def residual(v):
        return float(np.max(np.abs(v - project(v - step * 2.0 * Q @ v)))) / step

    x = project(x)
    res = residual(x)
    status = str(sol.status)
    if res > PATTERN_TOL and np.isfinite(x).all():
        # interior point stopped short: finish with the projected-gradient engine
        fg = lambda v: (float(v @ Q @ v), 2.0 * Q @ v)
        x2, _ = accelerated_projected_gradient(
            fg, project, x, SolveOptions(tol=PATTERN_TOL, max_iter=50_000),
            lambda v, g: residual(v), step)
        if float(x2 @ Q @ x2) <= float(x @ Q @ x) + 1e-15:
            x, res = x2, residual(x2)
    beta = np.empty(p)
    beta[order] = D * x
    return float(x @ Q @ x), beta, res, status


def compatibility_constant(sigma, support, L: float, mode: str = "auto",
                           seed: int = 0,
                           max_estimate_patterns: int = 256) -> CompatibilityResult:
    """phi^2(L, S) = min |S| beta'Sigma beta over ||beta_S||_1 = 1, ||beta_{S^c}||_1 <= L.

    ``mode="exact"`` solves every sign pattern on S (up to the global sign
    flip, which leaves the objective unchanged) and raises GuardError when
    |S| exceeds EXACT_SUPPORT_LIMIT. ``mode="auto"`` falls back to a seeded
    random subset of patterns above the limit; that value is an upper
    estimate and is flagged ``certified=False``.
    """
    G = _as_gram(sigma)
    S = G.sigma
    p = G.p
    if not isinstance(support, SupportSet):
        support = SupportSet(tuple(support), p)
    if support.size < 1:
        raise ValueError("compatibility constant needs a non-empty support")
    if L < 0:
        raise ValueError("L must be non-negative")
    if mode not in ("exact", "auto"):
        raise ValueError(f"unknown mode {mode!r}")
    k = support.size
    s_idx = np.array(support.indices)
    c_idx = np.flatnonzero(~support.mask(p))
    check_psd(G)

    certified = k <= EXACT_SUPPORT_LIMIT
    if certified:
        tails = itertools.product((1.0, -1.0), repeat=k - 1)
        patterns = [np.array((1.0,) + t) for t in tails]
    elif mode == "exact":
        raise GuardError(
            f"exact compatibility constant needs 2^{k - 1} subproblems for |S|={k}; "
            f"the exact mode is limited to |S| <= {EXACT_SUPPORT_LIMIT}. "
            "Use the estimate mode for a non-certified upper estimate."
        )
    else:
        rng = np.random.default_rng(seed)
        patterns = [np.ones(k)]
        patterns += [np.concatenate([[1.0], rng.choice([1.0, -1.0], size=k - 1)])
                     for _ in range(max_estimate_patterns - 1)]

    settings = clarabel.DefaultSettings()
    settings.verbose = False
    settings.tol_gap_abs = settings.tol_gap_rel = settings.tol_feas = 1e-12
    settings.max_iter = 500
    best_val, best_beta, worst_res = np.inf, None, 0.0
    for signs in patterns:
        val, beta, res, status = _sign_pattern_qp(S, s_idx, c_idx, signs, float(L), settings)
        if status not in ("Solved", "AlmostSolved") and res > PATTERN_TOL:
            raise RuntimeError(f"compatibility subproblem not solved: {status}")
        worst_res = max(worst_res, res)
        if val < best_val:
            best_val, best_beta = val, beta
    return CompatibilityResult(
        phi_sq=k * best_val,
        certified=bool(certified and worst_res <= PATTERN_TOL),
        L=float(L),
        support=support.indices,
        minimizer=best_beta,
        subproblems=len(patterns),
        max_kkt_residual=worst_res,
    )


def _re_select(beta, s_mask, N):
    """N-set of the restricted-eigenvalue cone: S plus the largest other entries."""
    extra = N - int(s_mask.sum())
    others = np.flatnonzero(~s_mask)
    n_mask = s_mask.copy()
    if extra > 0 and others.size:
        top = others[np.argsort(-np.abs(beta[others]), kind="stable")[:extra]]
        n_mask[top] = True
    return n_mask


def _re_repair(beta, s_mask, L):
    """Shrink the off-support part radially until ||beta_{S^c}||_1 <= L ||beta_S||_1."""
    on = np.abs(beta[s_mask]).sum()
    off = np.abs(beta[~s_mask]).sum()
    if on == 0:
        return None
    if off > L * on:
        beta = beta.copy()
        beta[~s_mask] *= (L * on / off) if off > 0 else 0.0
    return beta


def re_ratio(S, beta, s_mask, N) -> float:
    n_mask = _re_select(beta, s_mask, N)
    den = float(beta[n_mask] @ beta[n_mask])
    return float(beta @ S @ beta) / den if den > 0 else np.inf


def restricted_eigenvalue_bracket(sigma, support, L: float, N: int, seed: int = 0,
                                  starts: int = 32, steps: int = 300):
    """Bracket [lower, upper] for the (L, S, N) restricted-eigenvalue constant phi^2.

    ``lower`` is the smallest eigenvalue of Sigma (clipped at 0), valid because
    beta'Sigma beta >= lambda_min ||beta||^2 >= lambda_min ||beta_N||^2.
    ``upper`` is the smallest ratio beta'Sigma beta / ||beta_N||^2 found by
    multi-start descent over the cone. Returns ``(lower, upper, info)``.
    """
    G = _as_gram(sigma)
    S = G.sigma
    p = G.p
    if not isinstance(support, SupportSet):
        support = SupportSet(tuple(support), p)
    if not support.size <= N <= p:
        raise ValueError(f"need |S| <= N <= p, got |S|={support.size}, N={N}, p={p}")
    if L < 0:
        raise ValueError("L must be non-negative")
    lo, _ = check_psd(G)
    lower = max(lo, 0.0)
    s_mask = support.mask(p)
    rng = np.random.default_rng(seed)

    cands = [np.eye(p)[j] for j in support.indices]
    cands.append(s_mask / s_mask.sum())
    # smallest eigenvectors of principal N x N blocks containing S
    others = np.flatnonzero(~s_mask)
    for _ in range(8):
        pick = rng.choice(others, size=N - support.size, replace=False) if others.size else []
        idx = np.concatenate([np.flatnonzero(s_mask), np.asarray(pick, dtype=int)])
        v = np.linalg.eigh(S[np.ix_(idx, idx)])[1][:, 0]
        b = np.zeros(p)
        b[idx] = v
        cands.append(b)
    cands += list(rng.standard_normal((starts, p)))

    best_val, best_beta = np.inf, None
    for b0 in cands:
        b = _re_repair(np.asarray(b0, dtype=float), s_mask, L)
        if b is None:
            continue
        val = re_ratio(S, b, s_mask, N)
        step = 0.5
        for _ in range(steps):
            n_mask = _re_select(b, s_mask, N)
            den = float(b[n_mask] @ b[n_mask])
            g = 2.0 * (S @ b - val * np.where(n_mask, b, 0.0)) / den
            improved = False
            while step > 1e-12:
                trial = _re_repair(b - step * g * np.linalg.norm(b), s_mask, L)
                if trial is not None:
                    tv = re_ratio(S, trial, s_mask, N)
                    if tv < val:
                        b, val = trial / np.linalg.norm(trial), tv
                        step *= 1.5
                        improved = True
                        break
                step *= 0.5
            if not improved:
                break
        if val < best_val:
            best_val, best_beta = val, b
    upper = max(best_val, lower)
    info = {"argmin": best_beta, "starts": len(cands), "lambda_min": lo}
    return lower, upper, info


def column_norm_constant(data) -> float:
    """C = max_j ||psi_j||^2 under the empirical norm."""
    if isinstance(data, GramMatrix):
        return data.column_norm_constant()
    if isinstance(data, Dataset):
        return float(np.max(np.mean(data.design**2, axis=0)))
    X = np.asarray(data, dtype=float)
    return float(np.max(np.mean(X**2, axis=0)))


@dataclass
class ConditionReport:
    tau_sq: float
    tau_sq_certificate: np.ndarray
    tau_sq_kkt: float
    C: float
    phi_sq_compat: Optional[float] = None
    compat_L: Optional[float] = None
    compat_support: Optional[tuple] = None
    compat_certified: Optional[bool] = None
    re_lower: Optional[float] = None
    re_upper: Optional[float] = None
    re_N: Optional[int] = None
    K_X: Optional[float] = None
    K_0: Optional[float] = None
    margin_c: Optional[float] = None
    notes: list = field(default_factory=list)

    def check_invariants(self) -> list[str]:
        """Violations of tau^2 <= C, phi^2 <= s C and re_lower <= re_upper."""
        bad = []
        if not 0 <= self.tau_sq <= self.C:
            bad.append(f"tau_sq={self.tau_sq} not in [0, C={self.C}]")
        if self.phi_sq_compat is not None:
            s = len(self.compat_support)
            if self.phi_sq_compat > s * self.C:
                bad.append(f"phi_sq={self.phi_sq_compat} exceeds s*C={s * self.C}")
        if self.re_lower is not None and self.re_lower > self.re_upper:
            bad.append(f"re_lower={self.re_lower} > re_upper={self.re_upper}")
        return bad

    def to_dict(self) -> dict:
        d = {}
        for k, v in self.__dict__.items():
            if isinstance(v, np.ndarray):
                v = [float(x) for x in v]
            elif isinstance(v, tuple):
                v = list(v)
            d[k] = v
        return d


def condition_report(sigma, support=None, L="auto", N: Optional[int] = None,
                     mode: str = "auto", K_X: Optional[float] = None,
                     K_0: Optional[float] = None, margin_c: Optional[float] = None,
                     seed: int = 0) -> ConditionReport:
    """Compute every constant that applies; ``L="auto"`` means 3C/tau^2."""
    G = _as_gram(sigma)
    tau_sq, cert, info = positive_eigenvalue_constant(G, seed=seed)
    C = G.column_norm_constant()
    rep = ConditionReport(tau_sq=tau_sq, tau_sq_certificate=cert, tau_sq_kkt=info["kkt_residual"],
                          C=C, K_X=K_X, K_0=K_0, margin_c=margin_c)
    if support is not None and len(support) > 0:
        if not isinstance(support, SupportSet):
            support = SupportSet(tuple(support), G.p)
        if L == "auto":
            if tau_sq <= 0:
                raise ValueError("L='auto' needs tau^2 > 0")
            L = 3.0 * C / tau_sq
        comp = compatibility_constant(G, support, float(L), mode=mode, seed=seed)
        rep.phi_sq_compat = comp.phi_sq
        rep.compat_L = comp.L
        rep.compat_support = comp.support
        rep.compat_certified = comp.certified
        if not comp.certified:
            rep.notes.append("compatibility constant is a non-certified upper estimate")
        N = min(2 * support.size, G.p) if N is None else N
        lo, up, _ = restricted_eigenvalue_bracket(G, support, float(L), N, seed=seed)
        rep.re_lower, rep.re_upper, rep.re_N = lo, up, N
    return rep
