"""Dataset ingestion, standardisation, splitting and the Gaussian-mixture generator."""
from __future__ import annotations

import csv
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable

import numpy as np
from scipy import special


class DataError(ValueError):
    """Malformed or degenerate input data."""


@dataclass(frozen=True, eq=False)
class Dataset:
    values: np.ndarray
    column_names: tuple[str, ...]
    standardization: tuple[np.ndarray, np.ndarray] | None = None  # (mean, sd)
    target_column: int | None = None

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if v.ndim != 2:
            raise DataError("dataset values must be a 2-d array")
        if not np.all(np.isfinite(v)):
            raise DataError("dataset contains NaN or inf")
        if len(self.column_names) != v.shape[1]:
            raise DataError("one column name per column required")
        object.__setattr__(self, "values", v)

    @property
    def n(self) -> int:
        return self.values.shape[0]

    @property
    def d(self) -> int:
        return self.values.shape[1]

    @classmethod
    def from_array(cls, values, column_names=None) -> "Dataset":
        values = np.asarray(values, dtype=float)
        values = values[:, None] if values.ndim == 1 else values
        names = column_names or tuple(f"x{i}" for i in range(values.shape[1]))
        return cls(values, tuple(names))


def load_csv(path, has_header: bool = True, delimiter: str = ",") -> Dataset:
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"no such file: {path}")
    with path.open(newline="") as fh:
        rows = [r for r in csv.reader(fh, delimiter=delimiter) if r and any(c.strip() for c in r)]
    if has_header:
        if not rows:
            raise DataError("file has no header row")
        header, rows = [c.strip() for c in rows[0]], rows[1:]
    else:
        header = None
    if not rows:
        raise DataError("file has no data rows")
    width = len(header) if header else len(rows[0])
    values = np.empty((len(rows), width))
    first_line = 2 if has_header else 1
    for i, row in enumerate(rows):
        if len(row) != width:
            raise DataError(f"row {i + first_line}: expected {width} fields, got {len(row)}")
        for j, cell in enumerate(row):
            try:
                values[i, j] = float(cell)
            except ValueError:
                raise DataError(f"row {i + first_line}, column {j + 1}: non-numeric value {cell.strip()!r}") from None
    if not np.all(np.isfinite(values)):
        raise DataError("file contains NaN or inf")
    return Dataset(values, tuple(header) if header else tuple(f"x{i}" for i in range(width)))


def write_csv(path, values, column_names=None) -> None:
    values = np.asarray(values, dtype=float)
    values = values[:, None] if values.ndim == 1 else values
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh)
        if column_names is not None:
            w.writerow(column_names)
        for row in values:
            w.writerow([repr(float(x)) for x in row])


def column_stats(values) -> tuple[np.ndarray, np.ndarray]:
    values = np.asarray(values, dtype=float)
    mean = values.mean(axis=0)
    sd = values.std(axis=0)
    bad = np.flatnonzero(~(sd > 0))
    if bad.size:
        raise DataError(f"constant column(s) {bad.tolist()} cannot be standardised")
    return mean, sd


def standardize(ds: Dataset) -> Dataset:
    """Centre and scale every column; the (mean, sd) used are stored for inversion.

    Standardising already-standardised data is (numerically) a no-op, but the
    stored transform composes with the earlier one so ``destandardize`` still
    returns the raw scale.
    """
    mean, sd = column_stats(ds.values)
    z = (ds.values - mean) / sd
    if ds.standardization is not None:
        m0, s0 = ds.standardization
        mean, sd = m0 + s0 * mean, s0 * sd
    return replace(ds, values=z, standardization=(mean, sd))


def destandardize(ds_or_values, standardization=None):
    """Map standardised values back. Accepts a Dataset or (values, (mean, sd))."""
    if isinstance(ds_or_values, Dataset):
        if ds_or_values.standardization is None:
            return ds_or_values
        mean, sd = ds_or_values.standardization
        return replace(ds_or_values, values=ds_or_values.values * sd + mean, standardization=None)
    mean, sd = standardization
    return np.asarray(ds_or_values, dtype=float) * sd + mean


def split(ds: Dataset, train_fraction: float = 0.5, seed=None) -> tuple[Dataset, Dataset]:
    if not 0.0 < train_fraction < 1.0:
        raise DataError("train_fraction must lie in (0, 1)")
    n_train = int(round(train_fraction * ds.n))
    if n_train < 1 or n_train >= ds.n:
        raise DataError(f"split of {ds.n} rows at {train_fraction} leaves an empty side")
    perm = np.random.default_rng(seed).permutation(ds.n)
    tr, te = np.sort(perm[:n_train]), np.sort(perm[n_train:])
    return replace(ds, values=ds.values[tr]), replace(ds, values=ds.values[te])


def split_indices(n: int, train_fraction: float, seed=None) -> tuple[np.ndarray, np.ndarray]:
    ds = Dataset.from_array(np.arange(n, dtype=float))
    tr, te = split(ds, train_fraction, seed)
    return tr.values[:, 0].astype(int), te.values[:, 0].astype(int)


GMM_WEIGHTS = (0.2, 0.3, 0.1, 0.4)


def wishart_bartlett(rng: np.random.Generator, d: int, dof: int | None = None) -> np.ndarray:
    """One Wishart(dof, I_d) draw via the Bartlett decomposition ``A A^T``.

    ``A`` is lower triangular with ``A_ii = sqrt(chi2(dof - i))`` and standard
    normal entries below the diagonal.
    """
    dof = d if dof is None else dof
    if dof < d:
        raise ValueError("degrees of freedom must be >= d")
    A = np.zeros((d, d))
    A[np.diag_indices(d)] = np.sqrt(rng.chisquare(dof - np.arange(d)))
    low = np.tril_indices(d, -1)
    A[low] = rng.standard_normal(len(low[0]))
    return A @ A.T


@dataclass(frozen=True, eq=False)
class GmmSpec:
    """Mixture of 4 Gaussians with uniform means and Wishart covariances.

    Parameters are drawn from ``seed`` at construction unless given.
    """

    dimension: int
    seed: int | None = None
    weights: tuple[float, ...] = GMM_WEIGHTS
    means: np.ndarray | None = None
    covariances: np.ndarray | None = None
    max_retries: int = 100
    _chol: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        d = self.dimension
        if d < 1:
            raise ValueError("dimension must be >= 1")
        w = np.asarray(self.weights, dtype=float)
        if np.any(w < 0) or abs(w.sum() - 1.0) > 1e-12:
            raise ValueError("mixture weights must be non-negative and sum to 1")
        rng = np.random.default_rng(self.seed)
        k = w.size
        means = self.means
        if means is None:
            means = rng.uniform(-50.0, 50.0, size=(k, d))
        covs = self.covariances
        chol = np.empty((k, d, d))
        if covs is None:
            covs = np.empty((k, d, d))
            for c in range(k):
                for _ in range(self.max_retries):
                    S = wishart_bartlett(rng, d)
                    try:
                        chol[c] = np.linalg.cholesky(S)
                    except np.linalg.LinAlgError:
                        continue
                    covs[c] = S
                    break
                else:
                    raise ArithmeticError("could not draw a positive definite covariance")
        else:
            covs = np.asarray(covs, dtype=float).reshape(k, d, d)
            for c in range(k):
                chol[c] = np.linalg.cholesky(covs[c])
        object.__setattr__(self, "means", np.asarray(means, dtype=float).reshape(k, d))
        object.__setattr__(self, "covariances", covs)
        object.__setattr__(self, "_chol", chol)

    def log_density(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float).reshape(-1, self.dimension)
        d = self.dimension
        comps = []
        for w, mu, L in zip(self.weights, self.means, self._chol):
            if w == 0:
                continue
            z = np.linalg.solve(L, (x - mu).T)  # triangular solve, small d
            logdet = 2.0 * np.sum(np.log(np.diag(L)))
            comps.append(np.log(w) - 0.5 * (np.sum(z * z, axis=0) + logdet + d * np.log(2 * np.pi)))
        return special.logsumexp(np.stack(comps), axis=0)


def gmm_generate(spec: GmmSpec, n: int, seed=None, return_labels: bool = False):
    """Draw ``n`` points from the mixture.

    Returns ``(Dataset, oracle_log_density)``, plus the component labels when
    ``return_labels``.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    rng = np.random.default_rng(seed)
    labels = rng.choice(len(spec.weights), size=n, p=np.asarray(spec.weights))
    z = rng.standard_normal((n, spec.dimension))
    x = spec.means[labels] + np.einsum("nij,nj->ni", spec._chol[labels], z)
    ds = Dataset.from_array(x)
    oracle: Callable = spec.log_density
    return (ds, oracle, labels) if return_labels else (ds, oracle)
