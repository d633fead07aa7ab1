"""Synthetic data generators, CSV ingestion, standardization and splits."""

from __future__ import annotations

import csv
import dataclasses
import math
from dataclasses import dataclass, field

import numpy as np
from scipy import special

LINREG_WEIGHTS = np.array([3.0, -2.0, 1.5, 0.8, 0.2, 0.0, 0.0, 0.0, 0.0, 0.0])
FRIEDMAN_P = 10


class DatasetError(ValueError):
    """Base class for dataset ingestion errors."""


class MissingColumnError(DatasetError):
    pass


class NonNumericCellError(DatasetError):
    pass


class EmptyFileError(DatasetError):
    pass


class CopulaError(ValueError):
    pass


@dataclass
class Dataset:
    """Raw design matrix and response with a train/test split.

    Standardization statistics are computed on the training rows and applied
    to both parts by :meth:`train` and :meth:`test`.
    """

    X: np.ndarray
    y: np.ndarray
    task: str = "regression"
    feature_names: list = field(default_factory=list)
    train_idx: np.ndarray | None = None
    test_idx: np.ndarray | None = None
    x_mean: np.ndarray | None = None
    x_sd: np.ndarray | None = None
    y_mean: float = 0.0
    y_sd: float = 1.0
    standardize_x: bool = True
    standardize_y: bool = True
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.X = np.asarray(self.X, dtype=float)
        self.y = np.asarray(self.y, dtype=float)
        if self.X.ndim != 2 or self.y.shape[0] != self.X.shape[0]:
            raise DatasetError("X must be N x p with one response per row")
        if not (np.all(np.isfinite(self.X)) and np.all(np.isfinite(self.y))):
            raise DatasetError("dataset contains non-finite entries")
        if not self.feature_names:
            self.feature_names = [f"x{i + 1}" for i in range(self.X.shape[1])]
        if self.train_idx is None:
            self.train_idx = np.arange(self.n)
            self.test_idx = np.arange(0)
        if self.x_mean is None:
            self._fit_stats()

    @property
    def n(self) -> int:
        return self.X.shape[0]

    @property
    def p(self) -> int:
        return self.X.shape[1]

    def _fit_stats(self):
        Xtr = self.X[self.train_idx]
        if self.standardize_x and len(Xtr) > 0:
            self.x_mean = Xtr.mean(axis=0)
            sd = Xtr.std(axis=0)
            self.x_sd = np.where(sd > 0, sd, 1.0)
        else:
            self.x_mean = np.zeros(self.p)
            self.x_sd = np.ones(self.p)
        if self.task == "regression" and self.standardize_y and len(Xtr) > 0:
            ytr = self.y[self.train_idx]
            self.y_mean = float(ytr.mean())
            sd = float(ytr.std())
            self.y_sd = sd if sd > 0 else 1.0
        else:
            self.y_mean, self.y_sd = 0.0, 1.0

    def split(self, train_frac: float, seed) -> "Dataset":
        """Random split with floor(train_frac * N) training rows."""
        if not 0.0 < train_frac <= 1.0:
            raise DatasetError("train_frac must lie in (0, 1]")
        perm = np.random.default_rng(seed).permutation(self.n)
        n_train = int(math.floor(train_frac * self.n))
        out = dataclasses.replace(self, train_idx=np.sort(perm[:n_train]),
                                  test_idx=np.sort(perm[n_train:]), x_mean=None)
        return out

    def with_test(self, other: "Dataset") -> "Dataset":
        """All rows of self for training and all rows of ``other`` for testing."""
        X = np.vstack([self.X, other.X])
        y = np.concatenate([self.y, other.y])
        return Dataset(X, y, self.task, list(self.feature_names), np.arange(self.n),
                       np.arange(self.n, self.n + other.n), standardize_x=self.standardize_x,
                       standardize_y=self.standardize_y, meta=dict(self.meta))

    def transform_x(self, X) -> np.ndarray:
        return (np.asarray(X, dtype=float) - self.x_mean) / self.x_sd

    def transform_y(self, y) -> np.ndarray:
        return (np.asarray(y, dtype=float) - self.y_mean) / self.y_sd

    def restore_y(self, f) -> np.ndarray:
        """Map model-scale outputs back to the response scale."""
        return np.asarray(f) * self.y_sd + self.y_mean

    def train(self):
        return self.transform_x(self.X[self.train_idx]), self._y_model(self.train_idx)

    def test(self):
        return self.transform_x(self.X[self.test_idx]), self._y_model(self.test_idx)

    def _y_model(self, idx):
        y = self.y[idx]
        return self.transform_y(y) if self.task == "regression" else y

    def to_csv(self, path, header_lines=(), target_name="y"):
        with open(path, "w", newline="") as fh:
            for line in header_lines:
                fh.write(f"# {line}\n")
            writer = csv.writer(fh)
            writer.writerow([*self.feature_names, target_name])
            for row, target in zip(self.X, self.y):
                writer.writerow([*(repr(float(v)) for v in row), repr(float(target))])


def gen_linreg(N: int, rho: float, seed, noiseless: bool = False) -> Dataset:
    """Equicorrelated Gaussian design with a five-signal sparse weight vector."""
    p = LINREG_WEIGHTS.size
    if not 0.0 <= rho < 1.0:
        raise ValueError("rho must lie in [0, 1)")
    if N < p:
        raise ValueError(f"need N >= {p}")
    rng = np.random.default_rng(seed)
    shared = rng.standard_normal((N, 1))
    X = math.sqrt(rho) * shared + math.sqrt(1.0 - rho) * rng.standard_normal((N, p))
    y = X @ LINREG_WEIGHTS
    if not noiseless:
        y = y + rng.standard_normal(N)
    return Dataset(X, y, "regression", meta={"generator": "linreg", "rho": rho,
                                              "weights": LINREG_WEIGHTS.tolist()})


def spearman_to_pearson(spearman: np.ndarray) -> np.ndarray:
    return 2.0 * np.sin(np.pi * np.asarray(spearman, dtype=float) / 6.0)


def default_spearman(p: int = FRIEDMAN_P, base: float = 0.5) -> np.ndarray:
    idx = np.arange(p)
    return base ** np.abs(idx[:, None] - idx[None, :])


def gaussian_copula_uniform(N: int, spearman_target, seed) -> np.ndarray:
    """Uniform marginals whose rank correlation approximates the target."""
    S = np.asarray(spearman_target, dtype=float)
    if S.ndim != 2 or S.shape[0] != S.shape[1] or not np.allclose(S, S.T):
        raise CopulaError("Spearman target must be a symmetric square matrix")
    if not np.allclose(np.diag(S), 1.0):
        raise CopulaError("Spearman target must have a unit diagonal")
    R = spearman_to_pearson(S)
    eigvals = np.linalg.eigvalsh(R)
    if eigvals[0] <= 0:
        raise CopulaError(f"implied Pearson matrix is not positive definite "
                          f"(smallest eigenvalue {eigvals[0]:.6g})")
    L = np.linalg.cholesky(R)
    Z = np.random.default_rng(seed).standard_normal((N, S.shape[0])) @ L.T
    return special.ndtr(Z)


def friedman_mean(X: np.ndarray) -> np.ndarray:
    X = np.atleast_2d(X)
    return (10.0 * np.sin(np.pi * X[:, 0] * X[:, 1]) + 20.0 * (X[:, 2] - 0.5) ** 2
            + 10.0 * X[:, 3] + 5.0 * X[:, 4])


def gen_friedman(N: int, correlated: bool = False, spearman_target=None, seed=None,
                 noise_sd: float = 1.0) -> Dataset:
    """Friedman benchmark on [0,1]^10 with independent or copula-linked inputs."""
    if N < 1:
        raise ValueError("N must be positive")
    rng = np.random.default_rng(seed)
    if correlated:
        S = default_spearman() if spearman_target is None else spearman_target
        X = gaussian_copula_uniform(N, S, rng)
    else:
        X = rng.uniform(size=(N, FRIEDMAN_P))
    y = friedman_mean(X) + noise_sd * rng.standard_normal(N)
    return Dataset(X, y, "regression", meta={"generator": "friedman", "correlated": bool(correlated)})


def load_csv(path, schema: dict) -> Dataset:
    """Read a headed CSV.

    ``schema`` keys: ``target`` (column name), optional ``features`` (list),
    ``categorical`` (column -> ordered list of levels), ``task`` and
    ``standardize_y``. Lines starting with '#' are skipped.
    """
    with open(path, newline="") as fh:
        lines = [ln for ln in fh if not ln.startswith("#") and ln.strip()]
    if not lines:
        raise EmptyFileError(f"{path}: file is empty")
    reader = csv.reader(lines)
    header = [h.strip() for h in next(reader)]
    rows = list(reader)
    if not rows:
        raise EmptyFileError(f"{path}: no data rows")
    target = schema["target"]
    categorical = schema.get("categorical", {})
    features = schema.get("features") or [h for h in header if h != target]
    for col in [target, *features, *categorical]:
        if col not in header:
            raise MissingColumnError(f"{path}: missing column {col!r}")
    index = {name: i for i, name in enumerate(header)}

    def parse(value, col, line_no):
        value = value.strip()
        if col in categorical:
            levels = categorical[col]
            if value not in levels:
                raise NonNumericCellError(
                    f"{path}:{line_no}: level {value!r} of {col!r} not in {levels}")
            return float(levels.index(value))
        try:
            return float(value)
        except ValueError:
            raise NonNumericCellError(f"{path}:{line_no}: non-numeric value {value!r} in {col!r}") from None

    X = np.empty((len(rows), len(features)))
    y = np.empty(len(rows))
    for r, row in enumerate(rows):
        if len(row) != len(header):
            raise DatasetError(f"{path}:{r + 2}: expected {len(header)} fields, got {len(row)}")
        X[r] = [parse(row[index[c]], c, r + 2) for c in features]
        y[r] = parse(row[index[target]], target, r + 2)
    task = schema.get("task", "regression")
    return Dataset(X, y, task, list(features), standardize_y=schema.get("standardize_y", True),
                   standardize_x=schema.get("standardize_x", True))


def gen_logistic_toy(N: int, seed=None, shift: float = 1.0) -> Dataset:
    """Two Gaussian features with labels from the sign of x1 + x2, pushed apart by ``shift``."""
    if N < 2:
        raise ValueError("N must be at least 2")
    rng = np.random.default_rng(seed)
    X = rng.standard_normal((N, 2))
    y = (X.sum(axis=1) > 0).astype(float)
    X += shift * (2.0 * y - 1.0)[:, None] / math.sqrt(2.0)
    return Dataset(X, y, "binary_classification", standardize_y=False,
                   meta={"generator": "logistic_toy", "shift": shift})
