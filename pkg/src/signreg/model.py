"""Shared data model: datasets, Gram matrices, support sets and norms.

A coefficient vector ``beta`` of length ``p`` represents the function
``f_beta = sum_j beta_j * psi_j`` where ``psi_j`` is the j-th design column.
Inner products are empirical: ``<f, g> = (1/n) sum_i f(X_i) g(X_i)``.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np


class DataError(ValueError):
    """Malformed or inconsistent input data."""


class DimensionError(ValueError):
    pass


def _as_vector(v, name: str = "beta") -> np.ndarray:
    v = np.asarray(v, dtype=float)
    if v.ndim != 1:
        raise DimensionError(f"{name} must be one-dimensional, got shape {v.shape}")
    return v


@dataclass(frozen=True)
class Dataset:
    """Fixed design matrix with a response vector.

    The arrays are stored read-only so a Dataset can be shared freely
    between workers.
    """

    design: np.ndarray
    response: np.ndarray
    feature_names: Optional[tuple] = None

    def __post_init__(self):
        X = np.array(self.design, dtype=float, order="F")
        y = np.array(self.response, dtype=float)
        if X.ndim != 2:
            raise DimensionError(f"design must be 2-d, got shape {X.shape}")
        n, p = X.shape
        if n < 1 or p < 1:
            raise DimensionError("design needs n >= 1 and p >= 1")
        if y.shape != (n,):
            raise DimensionError(f"response has shape {y.shape}, expected ({n},)")
        if not np.all(np.isfinite(X)):
            raise DataError("design contains non-finite entries")
        if not np.all(np.isfinite(y)):
            raise DataError("response contains non-finite entries")
        names = self.feature_names
        if names is not None:
            names = tuple(str(s) for s in names)
            if len(names) != p:
                raise DimensionError(f"{len(names)} feature names for {p} columns")
        X.setflags(write=False)
        y.setflags(write=False)
        object.__setattr__(self, "design", X)
        object.__setattr__(self, "response", y)
        object.__setattr__(self, "feature_names", names)

    @property
    def n(self) -> int:
        return self.design.shape[0]

    @property
    def p(self) -> int:
        return self.design.shape[1]

    def is_binary(self) -> bool:
        return bool(np.all((self.response == 0.0) | (self.response == 1.0)))

    def gram(self) -> "GramMatrix":
        X = self.design
        return GramMatrix(X.T @ X / self.n)

    def subset(self, rows) -> "Dataset":
        rows = np.asarray(rows)
        return Dataset(self.design[rows], self.response[rows], self.feature_names)

    def column_scales(self) -> np.ndarray:
        """Root-mean-square of each column (the empirical norm of psi_j)."""
        return np.sqrt(np.mean(self.design**2, axis=0))


@dataclass(frozen=True)
class GramMatrix:
    """Symmetric positive-semidefinite p x p matrix of inner products."""

    sigma: np.ndarray

    def __post_init__(self):
        S = np.array(self.sigma, dtype=float)
        if S.ndim != 2 or S.shape[0] != S.shape[1]:
            raise DimensionError(f"Gram matrix must be square, got shape {S.shape}")
        if not np.all(np.isfinite(S)):
            raise DataError("Gram matrix contains non-finite entries")
        scale = max(np.max(np.abs(S)), 1.0)
        if np.max(np.abs(S - S.T)) > 1e-12 * scale:
            raise DataError("Gram matrix is not symmetric")
        if np.any(np.diag(S) < 0):
            raise DataError("Gram matrix has a negative diagonal entry")
        S = 0.5 * (S + S.T)
        S.setflags(write=False)
        object.__setattr__(self, "sigma", S)

    @property
    def p(self) -> int:
        return self.sigma.shape[0]

    def quad(self, beta) -> float:
        beta = _as_vector(beta)
        return float(beta @ self.sigma @ beta)

    def column_norm_constant(self) -> float:
        return float(np.max(np.diag(self.sigma)))


@dataclass(frozen=True)
class SupportSet:
    indices: tuple = field(default_factory=tuple)
    p: Optional[int] = None

    def __post_init__(self):
        idx = tuple(sorted(int(i) for i in self.indices))
        if len(set(idx)) != len(idx):
            raise ValueError(f"duplicate indices in support {idx}")
        if idx and idx[0] < 0:
            raise IndexError(f"negative index in support {idx}")
        if self.p is not None and idx and idx[-1] >= self.p:
            raise IndexError(f"index {idx[-1]} out of range for p={self.p}")
        object.__setattr__(self, "indices", idx)

    @classmethod
    def of(cls, beta, p: Optional[int] = None) -> "SupportSet":
        beta = _as_vector(beta)
        return cls(tuple(np.flatnonzero(beta != 0)), p=len(beta) if p is None else p)

    @classmethod
    def parse(cls, text: str, p: Optional[int] = None) -> "SupportSet":
        text = text.strip()
        if not text:
            return cls((), p)
        return cls(tuple(int(tok) for tok in text.split(",")), p)

    @property
    def size(self) -> int:
        return len(self.indices)

    def __len__(self):
        return len(self.indices)

    def __iter__(self):
        return iter(self.indices)

    def mask(self, p: int) -> np.ndarray:
        if self.indices and self.indices[-1] >= p:
            raise IndexError(f"index {self.indices[-1]} out of range for p={p}")
        m = np.zeros(p, dtype=bool)
        m[list(self.indices)] = True
        return m

    def complement(self, p: int) -> "SupportSet":
        return SupportSet(tuple(np.flatnonzero(~self.mask(p))), p)


def empirical_norm_sq(dataset: Dataset, beta) -> float:
    """Squared empirical norm (1/n) sum_i (x_i' beta)^2 of f_beta."""
    beta = _as_vector(beta)
    if beta.shape[0] != dataset.p:
        raise DimensionError(f"beta has length {beta.shape[0]}, design has {dataset.p} columns")
    fitted = dataset.design @ beta
    return float(fitted @ fitted) / dataset.n


def restrict(beta, support) -> np.ndarray:
    """Zero out every entry of beta outside the support."""
    beta = _as_vector(beta)
    if not isinstance(support, SupportSet):
        support = SupportSet(tuple(support))
    return np.where(support.mask(beta.shape[0]), beta, 0.0)


def lq_norm(beta, q: float) -> float:
    beta = _as_vector(beta)
    if q == np.inf:
        return float(np.max(np.abs(beta))) if beta.size else 0.0
    if not q >= 1:
        raise ValueError(f"l_q norm needs q >= 1, got {q}")
    if q == 1:
        return float(np.sum(np.abs(beta)))
    if q == 2:
        return float(np.linalg.norm(beta))
    a = np.abs(beta)
    m = a.max() if a.size else 0.0
    if m == 0:
        return 0.0
    # scale first so large entries do not overflow a**q
    return float(m * np.sum((a / m) ** q) ** (1.0 / q))


def load_csv(
    path,
    response: Optional[str] = None,
    header: Optional[bool] = None,
) -> Dataset:
    """Read a comma-separated file into a Dataset.

    ``response`` names the response column (or gives its 0-based index for
    headerless files); by default the last column is the response. With
    ``header=None`` a header row is detected by whether the first row parses
    as numbers.
    """
    text = Path(path).read_text()
    rows = [r for r in csv.reader(io.StringIO(text))]
    # keep original line numbers for error messages
    numbered = [(i + 1, r) for i, r in enumerate(rows) if r and any(c.strip() for c in r)]
    if not numbered:
        raise DataError(f"{path}: no data rows")

    first_line, first = numbered[0]
    if header is None:
        header = not all(_is_number(c) for c in first)
    names: Optional[list] = None
    if header:
        names = [c.strip() for c in first]
        numbered = numbered[1:]
        if not numbered:
            raise DataError(f"{path}: header but no data rows")

    width = len(numbered[0][1])
    if names is not None and len(names) != width:
        raise DataError(
            f"{path}: line {numbered[0][0]} has {width} fields, header has {len(names)}"
        )
    if width < 2:
        raise DataError(f"{path}: need at least one feature column and a response column")

    if response is None:
        resp_col = width - 1
    elif names is not None and response in names:
        resp_col = names.index(response)
    else:
        try:
            resp_col = int(response)
        except ValueError:
            raise DataError(f"{path}: response column {response!r} not found") from None
        if not 0 <= resp_col < width:
            raise DataError(f"{path}: response column index {resp_col} out of range")

    values = np.empty((len(numbered), width))
    for r, (lineno, row) in enumerate(numbered):
        if len(row) != width:
            raise DataError(f"{path}: line {lineno} has {len(row)} fields, expected {width}")
        for c, cell in enumerate(row):
            try:
                v = float(cell)
            except ValueError:
                raise DataError(
                    f"{path}: line {lineno}, column {c + 1}: cannot parse {cell.strip()!r}"
                ) from None
            if not np.isfinite(v):
                raise DataError(f"{path}: line {lineno}, column {c + 1}: non-finite value")
            values[r, c] = v

    keep = [c for c in range(width) if c != resp_col]
    feature_names = [names[c] for c in keep] if names is not None else None
    return Dataset(values[:, keep], values[:, resp_col], feature_names)


def _is_number(s: str) -> bool:
    try:
        float(s)
    except ValueError:
        return False
    return True


def standardize(dataset: Dataset) -> tuple[Dataset, np.ndarray]:
    """Scale columns to unit empirical norm (no centering).

    Returns the scaled dataset and the scales; a coefficient fitted on the
    scaled design maps back through ``beta / scales``. All-zero columns keep
    scale 1.
    """
    scales = dataset.column_scales()
    scales = np.where(scales > 0, scales, 1.0)
    return Dataset(dataset.design / scales, dataset.response, dataset.feature_names), scales


def max_abs_entry(design) -> float:
    """K_X: the largest absolute design entry."""
    return float(np.max(np.abs(np.asarray(design, dtype=float))))


__all__: Sequence[str] = [
    "DataError",
    "DimensionError",
    "Dataset",
    "GramMatrix",
    "SupportSet",
    "empirical_norm_sq",
    "restrict",
    "lq_norm",
    "load_csv",
    "standardize",
    "max_abs_entry",
]
