"""Dataset construction, standardization, batch schedules and subsampling helpers."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from .exceptions import InputError


@dataclass(frozen=True)
class Standardization:
    """Per-column location/scale learned on training data, reusable on new data."""

    mean: np.ndarray
    sd: np.ndarray
    ddof: int = 1

    def transform(self, X):
        X = np.asarray(X, dtype=float)
        return (X - self.mean) / self.sd


def standardize(X, ddof=1, column_names=None):
    """Center and scale columns to sample sd 1 (``ddof=1`` divisor by default).

    Returns ``(Z, stats)`` where ``stats`` reproduces the transform on new
    data. A constant column has no scale and is rejected.
    """
    X = np.asarray(X, dtype=float)
    if X.ndim != 2:
        raise InputError("design matrix must be 2-dimensional")
    n = X.shape[0]
    if n < 2:
        raise InputError("need at least 2 rows to standardize")
    mean = X.mean(axis=0)
    sd = X.std(axis=0, ddof=ddof)
    bad = np.flatnonzero(sd <= 0)
    if bad.size:
        name = column_names[bad[0]] if column_names is not None else f"column {bad[0]}"
        raise InputError(f"constant column cannot be standardized: {name}")
    stats = Standardization(mean=mean, sd=sd, ddof=ddof)
    return stats.transform(X), stats


@dataclass
class Dataset:
    """Response plus per-parameter standardized design matrices.

    ``X[k]`` holds only covariate columns (n x J_k); the intercept is implicit
    and handled by the coefficient state. ``stats[k]`` maps raw covariates of
    new data into the same standardized space.
    """

    y: np.ndarray
    X: list
    columns: list
    stats: list

    def __post_init__(self):
        self.y = np.asarray(self.y, dtype=float)
        n = self.y.shape[0]
        for k, Xk in enumerate(self.X):
            if Xk.shape[0] != n:
                raise InputError(f"design matrix for parameter {k} has {Xk.shape[0]} rows, expected {n}")

    @property
    def n(self):
        return self.y.shape[0]

    @property
    def n_cols(self):
        return [Xk.shape[1] for Xk in self.X]

    def subset(self, rows):
        rows = np.asarray(rows)
        return Dataset(y=self.y[rows], X=[Xk[rows] for Xk in self.X],
                       columns=self.columns, stats=self.stats)


def build_dataset(y, raw, column_names, param_columns=None, n_params=1, ddof=1):
    """Assemble a Dataset from one raw covariate matrix.

    ``param_columns`` optionally restricts each distribution parameter to a
    list of column names; by default every column is a candidate for every
    parameter.
    """
    y = np.asarray(y, dtype=float)
    raw = np.asarray(raw, dtype=float)
    column_names = list(column_names)
    if raw.shape[1] != len(column_names):
        raise InputError("column_names length does not match covariate matrix")
    Xs, cols, stats = [], [], []
    for k in range(n_params):
        if param_columns is not None:
            wanted = param_columns[k]
            missing = [c for c in wanted if c not in column_names]
            if missing:
                raise InputError(f"unknown column(s) for parameter {k}: {missing}")
            idx = [column_names.index(c) for c in wanted]
        else:
            idx = list(range(len(column_names)))
        names_k = [column_names[i] for i in idx]
        if idx:
            Z, st = standardize(raw[:, idx], ddof=ddof, column_names=names_k)
        else:
            Z, st = np.empty((raw.shape[0], 0)), Standardization(np.empty(0), np.empty(0), ddof)
        Xs.append(Z)
        cols.append(names_k)
        stats.append(st)
    return Dataset(y=y, X=Xs, columns=cols, stats=stats)


def load_csv(path):
    """Read a numeric RFC-4180 CSV with a header row.

    Returns ``(column_names, data)`` with ``data`` an (n, p) float array.
    """
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise InputError(f"{path}: empty file, header row required") from None
        rows = []
        for i, row in enumerate(reader):
            if not row:
                continue
            if len(row) != len(header):
                raise InputError(f"{path}: row {i + 2} has {len(row)} fields, expected {len(header)}")
            try:
                rows.append([float(v) for v in row])
            except ValueError as exc:
                raise InputError(f"{path}: row {i + 2}: {exc}") from None
    if not rows:
        raise InputError(f"{path}: no data rows")
    return header, np.asarray(rows, dtype=float)


@dataclass(frozen=True)
class BatchSchedule:
    """Precomputed batch index sets ``i_1..i_T``, read-only during fitting."""

    seed: int
    bs: int
    batches: list
    strata: dict | None = None

    def __len__(self):
        return len(self.batches)

    def __getitem__(self, t):
        return self.batches[t]


def make_batches(n, bs, T, seed, strata=None, replace=False):
    """Sample ``T`` batches of size ``bs`` without replacement within a batch.

    ``strata`` maps stratum name -> (member index array, per-batch count); a
    stratified batch draws exactly the configured count from each stratum.
    Sampling with replacement must be enabled explicitly when a stratum is
    smaller than its per-batch count.
    """
    if not 1 <= bs <= n:
        raise InputError(f"batch size {bs} must be in [1, {n}]")
    rng = np.random.default_rng(seed)
    batches = []
    if strata is None:
        full = bs == n
        for _ in range(T):
            batches.append(rng.permutation(n) if full else rng.choice(n, size=bs, replace=False))
    else:
        sizes = sum(count for _, count in strata.values())
        if sizes != bs:
            raise InputError(f"stratum counts sum to {sizes}, expected batch size {bs}")
        for name, (members, count) in strata.items():
            if count > len(members) and not replace:
                raise InputError(
                    f"stratum {name!r} has {len(members)} members but {count} requested per "
                    "batch; enable sampling with replacement explicitly")
        for _ in range(T):
            parts = [rng.choice(members, size=count, replace=replace or count > len(members))
                     for members, count in strata.values()]
            batches.append(np.concatenate(parts))
    meta = None
    if strata is not None:
        meta = {name: (len(members), count) for name, (members, count) in strata.items()}
    return BatchSchedule(seed=seed, bs=bs, batches=batches, strata=meta)


def zero_positive_strata(y, zero_count, positive_count):
    """Stratum spec for count responses: fixed draws from zeros and positives."""
    y = np.asarray(y)
    zeros = np.flatnonzero(y == 0)
    positives = np.flatnonzero(y != 0)
    if zeros.size == 0 or positives.size == 0:
        raise InputError("zero/positive stratification needs both zero and positive responses")
    return {"zeros": (zeros, zero_count), "positives": (positives, positive_count)}


def intercept_adjustment(beta0_sub, tau0, t0):
    """Undo zero-class subsampling bias on a logit-link intercept.

    ``tau0`` is the zero fraction in the full data, ``t0`` the zero fraction
    in the subsampled batches. Only the logit intercept changes; every other
    coefficient passes through untouched.
    """
    if not 0.0 < tau0 < 1.0:
        raise InputError(f"tau0 must be in (0, 1), got {tau0}")
    if not 0.0 < t0 < 1.0:
        raise InputError(f"t0 must be in (0, 1), got {t0}")
    return beta0_sub - np.log((1.0 - tau0) / tau0 * t0 / (1.0 - t0))
