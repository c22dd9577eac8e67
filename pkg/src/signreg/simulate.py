"""Toeplitz-design Monte Carlo: sign-constrained fit versus cross-validated Lasso.

Seed tree: every replication draws from
``SeedSequence(config.seed, spawn_key=(round(rho * 1e6), p, s, rep, attempt))``
which is spawned into four independent streams (design, coefficients,
responses, CV folds). All streams use PCG64. ``attempt`` only advances when
a logistic sample has a single response class and must be regenerated.
"""

from __future__ import annotations

import csv
import hashlib
import json
import logging
import os
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np
from scipy.linalg import LinAlgError, cholesky

from .estimators import fit_lasso_cv, fit_sign_constrained
from .losses import LossSpec
from .model import Dataset, GramMatrix

log = logging.getLogger(__name__)

SCHEMA_VERSION = "signreg-results/1"
COLUMNS = (
    "model", "rho", "p", "s", "n", "rep", "seed", "attempts", "data_sha256",
    "status", "l1_err_sign", "l1_err_lasso", "log_ratio", "lasso_lambda",
)
WORKERS_ENV = "SIGNREG_WORKERS"
MODELS = ("logistic", "lad")
MAX_ATTEMPTS = 100


class ConfigError(ValueError):
    pass


class SchemaError(ValueError):
    pass


def toeplitz_sigma(p: int, rho: float) -> GramMatrix:
    """Sigma_{kk'} = rho^(|k - k'| / p)."""
    if p < 1:
        raise ConfigError("p must be at least 1")
    if not 0.0 < rho < 1.0:
        raise ConfigError(f"rho must lie in (0, 1), got {rho}")
    k = np.arange(p)
    return GramMatrix(rho ** (np.abs(k[:, None] - k[None, :]) / p))


def _generator(seed) -> np.random.Generator:
    # PCG64 accepts an integer or a SeedSequence
    return np.random.Generator(np.random.PCG64(seed))


def sample_gaussian(sigma, n: int, seed, jitter: bool = False) -> np.ndarray:
    """n rows i.i.d. N(0, Sigma): standard normals (PCG64) times the Cholesky factor.

    ``jitter`` adds 1e-10 * I before factorising; without it a failed
    factorisation raises LinAlgError pointing at the flag.
    """
    S = sigma.sigma if isinstance(sigma, GramMatrix) else np.asarray(sigma, dtype=float)
    if jitter:
        S = S + 1e-10 * np.eye(S.shape[0])
    try:
        U = cholesky(S, lower=False)
    except LinAlgError as exc:
        raise LinAlgError(f"Cholesky failed ({exc}); retry with jitter=True (adds 1e-10 I)") from None
    Z = _generator(seed).standard_normal((n, S.shape[0]))
    return Z @ U


def sparse_beta(p: int, s: int, seed) -> np.ndarray:
    """Zero vector with ``s`` entries equal to 1 at uniformly chosen positions."""
    if not 1 <= s <= p:
        raise ConfigError(f"need 1 <= s <= p, got s={s}, p={p}")
    b = np.zeros(p)
    b[_generator(seed).choice(p, size=s, replace=False)] = 1.0
    return b


def gen_responses(model: str, design, true_beta, seed) -> np.ndarray:
    """Bernoulli(G(x'beta*)) for ``logistic``; x'beta* + standard Laplace noise for ``lad``.

    Laplace noise uses the inverse cdf -sign(u) log(1 - 2|u|), u ~ U(-1/2, 1/2).
    """
    a = np.asarray(design, dtype=float) @ np.asarray(true_beta, dtype=float)
    rng = _generator(seed)
    if model == "logistic":
        u = rng.random(a.size)
        return (u < 1.0 / (1.0 + np.exp(-a))).astype(float)
    if model == "lad":
        u = rng.random(a.size) - 0.5
        return a - np.sign(u) * np.log1p(-2.0 * np.abs(u))
    raise ConfigError(f"unknown model {model!r}; expected one of {MODELS}")


@dataclass(frozen=True)
class ExperimentConfig:
    model: str
    rho_grid: tuple
    p_grid: tuple
    s_grid: tuple
    n: int
    reps: int = 50
    seed: int = 0
    cv_folds: int = 10
    standardize: bool = True
    t_param: Optional[float] = None

    def __post_init__(self):
        for name in ("rho_grid", "p_grid", "s_grid"):
            object.__setattr__(self, name, tuple(getattr(self, name)))
        if self.model not in MODELS:
            raise ConfigError(f"unknown model {self.model!r}; expected one of {MODELS}")
        if not self.rho_grid or not self.p_grid or not self.s_grid:
            raise ConfigError("rho_grid, p_grid and s_grid must be non-empty")
        if any(not 0.0 < r < 1.0 for r in self.rho_grid):
            raise ConfigError("every rho must lie in (0, 1)")
        if any(s > p for p in self.p_grid for s in self.s_grid):
            raise ConfigError("every s must be <= every p in the grid")
        if min(self.s_grid) < 1 or min(self.p_grid) < 1:
            raise ConfigError("p and s must be positive")
        if self.reps < 1 or self.n < 2:
            raise ConfigError("need reps >= 1 and n >= 2")
        if self.cv_folds < 2 or self.cv_folds > self.n:
            raise ConfigError("cv_folds must lie in [2, n]")

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        known = set(cls.__dataclass_fields__)
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        try:
            return cls(**d)
        except TypeError as exc:
            raise ConfigError(str(exc)) from None

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        path = Path(path)
        text = path.read_text()
        if path.suffix.lower() == ".toml":
            if sys.version_info >= (3, 11):
                import tomllib
            else:
                import tomli as tomllib

            try:
                d = tomllib.loads(text)
            except tomllib.TOMLDecodeError as exc:
                raise ConfigError(f"{path}: {exc}") from None
        else:
            try:
                d = json.loads(text)
            except json.JSONDecodeError as exc:
                raise ConfigError(f"{path}: {exc}") from None
        return cls.from_dict(d)

    def to_dict(self) -> dict:
        d = asdict(self)
        for k in ("rho_grid", "p_grid", "s_grid"):
            d[k] = list(d[k])
        return d

    def config_hash(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()

    def cells(self) -> list[tuple]:
        return [(r, p, s) for p in self.p_grid for s in self.s_grid for r in self.rho_grid]


def rho_key(rho: float) -> int:
    return int(round(rho * 1e6))


def rep_seed(config_seed: int, rho: float, p: int, s: int, rep: int, attempt: int = 0):
    return np.random.SeedSequence(config_seed, spawn_key=(rho_key(rho), p, s, rep, attempt))


def check_seed_injectivity(config: ExperimentConfig) -> None:
    """Every (cell, rep) must map to a distinct seed state; raise otherwise."""
    seen = {}
    for rho, p, s in config.cells():
        for rep in range(config.reps):
            state = tuple(rep_seed(config.seed, rho, p, s, rep).generate_state(4))
            key = (rho, p, s, rep)
            if state in seen:
                raise ConfigError(f"seed collision between {seen[state]} and {key}")
            seen[state] = key


@dataclass
class RepRecord:
    model: str
    rho: float
    p: int
    s: int
    n: int
    rep: int
    seed: int
    attempts: int
    data_sha256: str
    status: str
    l1_err_sign: float
    l1_err_lasso: float
    log_ratio: float
    lasso_lambda: float
    runtime_ms: float = 0.0

    def row(self) -> list[str]:
        out = []
        for c in COLUMNS:
            v = getattr(self, c)
            out.append(repr(float(v)) if isinstance(v, float) else str(v))
        return out


def data_hash(design, response) -> str:
    h = hashlib.sha256()
    h.update(np.ascontiguousarray(design, dtype="<f8").tobytes())
    h.update(np.ascontiguousarray(response, dtype="<f8").tobytes())
    return h.hexdigest()


def generate_rep(model: str, rho: float, p: int, s: int, n: int, config_seed: int, rep: int):
    """Data for one replication; returns (design, response, true_beta, seed_int, attempts, folds_seed)."""
    sigma = toeplitz_sigma(p, rho)
    for attempt in range(MAX_ATTEMPTS):
        ss = rep_seed(config_seed, rho, p, s, rep, attempt)
        s_design, s_beta, s_resp, s_folds = ss.spawn(4)
        X = sample_gaussian(sigma, n, s_design)
        beta = sparse_beta(p, s, s_beta)
        y = gen_responses(model, X, beta, s_resp)
        if model == "logistic" and (y.min() == y.max()):
            continue
        seed_int = int(ss.generate_state(1, np.uint64)[0])
        folds_seed = int(s_folds.generate_state(1, np.uint64)[0])
        return X, y, beta, seed_int, attempt + 1, folds_seed
    raise RuntimeError(f"no usable sample after {MAX_ATTEMPTS} attempts")


def _loss_for(model: str) -> LossSpec:
    return LossSpec("logistic") if model == "logistic" else LossSpec("check", gamma=0.5)


def run_rep(model: str, rho: float, p: int, s: int, n: int, config_seed: int, rep: int,
            cv_folds: int = 10, standardize: bool = True) -> RepRecord:
    """Generate one dataset and fit both estimators on it; never raises on solver trouble."""
    t0 = time.perf_counter()
    X, y, beta, seed_int, attempts, folds_seed = generate_rep(model, rho, p, s, n, config_seed, rep)
    digest = data_hash(X, y)
    data = Dataset(X, y)
    spec = _loss_for(model)
    status = "ok"
    e_sign = e_lasso = lr = lam = float("nan")
    try:
        fs = fit_sign_constrained(data, spec, standardize=standardize)
        fl = fit_lasso_cv(data, spec, folds=cv_folds, seed=folds_seed, standardize=standardize)
        lam = float(fl.lambda_used)
        e_sign = float(np.abs(fs.beta_hat - beta).sum())
        e_lasso = float(np.abs(fl.beta_hat - beta).sum())
        if not (fs.converged and fl.converged):
            status = "nonconverged"
        elif e_sign == 0.0 or e_lasso == 0.0:
            status = "zero_error"
        else:
            lr = float(np.log(e_sign / e_lasso))
    except Exception as exc:  # a failing rep is recorded, never fatal
        log.warning("rep %s failed: %s", (rho, p, s, rep), exc)
        status = "failed"
    return RepRecord(model, float(rho), p, s, n, rep, seed_int, attempts, digest, status,
                     e_sign, e_lasso, lr, lam, 1e3 * (time.perf_counter() - t0))


@dataclass
class CellSummary:
    rho: float
    p: int
    s: int
    mean_log_ratio: float
    se: float
    count: int
    excluded: dict = field(default_factory=dict)


def summarize(records) -> list[CellSummary]:
    """Mean and standard error of log_ratio per cell over reps with status ``ok``."""
    cells = {}
    for r in records:
        cells.setdefault((r.rho, r.p, r.s), []).append(r)
    out = []
    for (rho, p, s), rs in sorted(cells.items(), key=lambda kv: (kv[0][1], kv[0][2], kv[0][0])):
        vals = np.array([r.log_ratio for r in rs if r.status == "ok"])
        excluded = {}
        for r in rs:
            if r.status != "ok":
                excluded[r.status] = excluded.get(r.status, 0) + 1
        k = vals.size
        mean = float(vals.mean()) if k else float("nan")
        se = float(vals.std(ddof=1) / np.sqrt(k)) if k > 1 else float("nan")
        out.append(CellSummary(rho, p, s, mean, se, k, excluded))
    return out


@dataclass
class ExperimentResult:
    config: ExperimentConfig
    records: list
    summary: list
    resumed_cells: int = 0


def _header_line() -> str:
    return f"# schema={SCHEMA_VERSION}\n"


def read_results(path) -> list[RepRecord]:
    """Parse a results CSV; raise SchemaError on a missing or different schema line."""
    path = Path(path)
    with path.open(newline="") as fh:
        first = fh.readline()
        if first.strip() != _header_line().strip():
            raise SchemaError(f"{path}: expected schema line {_header_line().strip()!r}, "
                              f"found {first.strip()!r}")
        reader = csv.reader(fh)
        header = next(reader, None)
        if tuple(header or ()) != COLUMNS:
            raise SchemaError(f"{path}: column header does not match {SCHEMA_VERSION}")
        out = []
        for lineno, row in enumerate(reader, start=3):
            if len(row) != len(COLUMNS):
                raise SchemaError(f"{path}:{lineno}: expected {len(COLUMNS)} fields, got {len(row)}")
            d = dict(zip(COLUMNS, row))
            try:
                out.append(RepRecord(
                    model=d["model"], rho=float(d["rho"]), p=int(d["p"]), s=int(d["s"]),
                    n=int(d["n"]), rep=int(d["rep"]), seed=int(d["seed"]),
                    attempts=int(d["attempts"]), data_sha256=d["data_sha256"],
                    status=d["status"], l1_err_sign=float(d["l1_err_sign"]),
                    l1_err_lasso=float(d["l1_err_lasso"]), log_ratio=float(d["log_ratio"]),
                    lasso_lambda=float(d["lasso_lambda"]),
                ))
            except ValueError as exc:
                raise SchemaError(f"{path}:{lineno}: {exc}") from None
    return out


def worker_count() -> int:
    raw = os.environ.get(WORKERS_ENV, "1")
    try:
        w = int(raw)
    except ValueError:
        raise ConfigError(f"{WORKERS_ENV} must be an integer, got {raw!r}") from None
    return max(1, w)


def _run_rep_args(args):
    return run_rep(*args)


def run_experiment(config: ExperimentConfig, out_csv=None, workers: Optional[int] = None,
                   progress=None) -> ExperimentResult:
    """Run every (rho, p, s) cell for ``config.reps`` replications.

    With ``out_csv`` the rows of each finished cell are appended and flushed,
    and cells already present in the file are skipped, so an interrupted run
    resumes where it stopped. Records are ordered by (cell, rep) whatever the
    worker count, which makes the CSV independent of scheduling.
    """
    check_seed_injectivity(config)
    workers = worker_count() if workers is None else max(1, workers)
    done = {}
    if out_csv is not None:
        out_csv = Path(out_csv)
        if out_csv.exists() and out_csv.stat().st_size > 0:
            for r in read_results(out_csv):
                done.setdefault((r.rho, r.p, r.s), []).append(r)
        else:
            out_csv.parent.mkdir(parents=True, exist_ok=True)
            with out_csv.open("w", newline="") as fh:
                fh.write(_header_line())
                csv.writer(fh, lineterminator="\n").writerow(COLUMNS)

    pool = ProcessPoolExecutor(max_workers=workers) if workers > 1 else None
    records, resumed = [], 0
    try:
        for rho, p, s in config.cells():
            key = (float(rho), p, s)
            prior = done.get(key)
            if prior is not None and len(prior) == config.reps:
                records.extend(sorted(prior, key=lambda r: r.rep))
                resumed += 1
                continue
            if prior is not None:
                raise SchemaError(f"cell {key} is partially present in {out_csv}; remove it to rerun")
            jobs = [(config.model, float(rho), p, s, config.n, config.seed, rep,
                     config.cv_folds, config.standardize) for rep in range(config.reps)]
            cell = list(pool.map(_run_rep_args, jobs)) if pool else [_run_rep_args(j) for j in jobs]
            records.extend(cell)
            if out_csv is not None:
                with out_csv.open("a", newline="") as fh:
                    w = csv.writer(fh, lineterminator="\n")
                    for r in cell:
                        w.writerow(r.row())
            if progress is not None:
                progress(key, cell)
    finally:
        if pool is not None:
            pool.shutdown()
    return ExperimentResult(config, records, summarize(records), resumed)
