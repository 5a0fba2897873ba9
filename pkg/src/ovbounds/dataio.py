"""Tabular data ingestion and reproducible cross-fitting fold plans."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
import pandas as pd


class DataError(ValueError):
    """Raised when input data violates an ingestion contract."""


def _readonly(values, dtype=float) -> np.ndarray:
    arr = np.asarray(values, dtype=dtype).copy()
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class Dataset:
    """Observed triples (Y, D, X) with optional group labels.

    Parameters
    ----------
    outcome : ndarray of shape (n,)
        Outcome values Y.
    treatment : ndarray of shape (n,)
        Treatment values D. Must lie in {0, 1} when the target functional
        requires a binary treatment.
    covariates : ndarray of shape (n, p)
        Observed covariates X. ``p`` may be zero.
    column_names : tuple of p strings
        Names for the covariate columns.
    group_label : ndarray of shape (n,), optional
        Integer cluster labels; rows sharing a label are always placed in
        the same cross-fitting fold.
    treatment_name : str
        Name the treatment column carries in weight/direction expressions.
    """

    outcome: np.ndarray
    treatment: np.ndarray
    covariates: np.ndarray
    column_names: tuple
    group_label: Optional[np.ndarray] = None
    treatment_name: str = "d"

    def __post_init__(self):
        outcome = _readonly(self.outcome)
        treatment = _readonly(self.treatment)
        raw_cov = np.asarray(self.covariates, dtype=float)
        if raw_cov.size == 0:
            raw_cov = np.empty((outcome.shape[0], 0))
        elif raw_cov.ndim == 1:  # a single covariate arrives as a vector
            raw_cov = raw_cov.reshape(-1, 1)
        covariates = _readonly(raw_cov)
        object.__setattr__(self, "outcome", outcome)
        object.__setattr__(self, "treatment", treatment)
        object.__setattr__(self, "covariates", covariates)
        object.__setattr__(self, "column_names", tuple(self.column_names))

        n = outcome.shape[0]
        if n < 2:
            raise DataError(f"need at least 2 rows, got {n}")
        if outcome.ndim != 1 or treatment.ndim != 1 or covariates.ndim != 2:
            raise DataError("outcome/treatment must be vectors and covariates a matrix")
        if treatment.shape[0] != n or covariates.shape[0] != n:
            raise DataError("outcome, treatment and covariates must share the same length")
        if len(self.column_names) != covariates.shape[1]:
            raise DataError(
                f"{covariates.shape[1]} covariate columns but "
                f"{len(self.column_names)} column names"
            )
        for arr, what in ((outcome, "outcome"), (treatment, "treatment"), (covariates, "covariates")):
            if not np.all(np.isfinite(arr)):
                raise DataError(f"non-finite values in {what}")
        if self.group_label is not None:
            groups = _readonly(self.group_label, dtype=np.int64)
            if groups.shape != (n,):
                raise DataError("group_label must have one entry per row")
            object.__setattr__(self, "group_label", groups)
        if self.treatment_name in self.column_names:
            raise DataError(f"treatment name {self.treatment_name!r} collides with a covariate")

    @property
    def n(self) -> int:
        return self.outcome.shape[0]

    @property
    def p(self) -> int:
        return self.covariates.shape[1]

    @property
    def wcolumns(self) -> tuple:
        """Names of the observed-regressor matrix columns, treatment first."""
        return (self.treatment_name,) + self.column_names

    @property
    def wmatrix(self) -> np.ndarray:
        """Observed regressors ``[D, X]`` as an (n, 1+p) matrix."""
        return np.column_stack([self.treatment, self.covariates])

    def is_binary_treatment(self) -> bool:
        return bool(np.all((self.treatment == 0.0) | (self.treatment == 1.0)))

    def require_binary_treatment(self):
        if not self.is_binary_treatment():
            raise DataError("this functional requires a binary treatment in {0, 1}")

    def drop_covariate(self, name: str) -> "Dataset":
        """Return a copy without covariate ``name`` (used for benchmarking refits)."""
        if name not in self.column_names:
            raise DataError(f"unknown covariate {name!r}")
        keep = [j for j, c in enumerate(self.column_names) if c != name]
        return Dataset(
            outcome=self.outcome,
            treatment=self.treatment,
            covariates=self.covariates[:, keep],
            column_names=tuple(self.column_names[j] for j in keep),
            group_label=self.group_label,
            treatment_name=self.treatment_name,
        )


@dataclass(frozen=True)
class CsvSchema:
    """Column-role mapping for :func:`load_csv`.

    ``covariates=None`` selects every column not otherwise assigned, in file
    order.
    """

    outcome: str
    treatment: str
    covariates: Optional[Sequence[str]] = None
    group: Optional[str] = None


def load_csv(path, schema: CsvSchema) -> Dataset:
    """Load a CSV file (RFC-4180, header row, '.' decimals) into a Dataset.

    Rows with a missing value in any selected column are rejected with an
    error listing the offending row indices; they are never silently dropped.
    """
    try:
        frame = pd.read_csv(path)
    except FileNotFoundError:
        raise DataError(f"no such file: {path}") from None
    except pd.errors.EmptyDataError:
        raise DataError(f"empty file: {path}") from None

    if schema.covariates is None:
        assigned = {schema.outcome, schema.treatment, schema.group}
        covariates = [c for c in frame.columns if c not in assigned]
    else:
        covariates = list(schema.covariates)

    selected = [schema.outcome, schema.treatment] + covariates
    if schema.group is not None:
        selected.append(schema.group)
    missing_cols = [c for c in selected if c not in frame.columns]
    if missing_cols:
        raise DataError(f"missing columns in {path}: {missing_cols}")

    frame = frame[selected]
    if len(frame) == 0:
        raise DataError(f"no data rows in {path}")

    na_rows = np.nonzero(frame.isna().any(axis=1).to_numpy())[0]
    if na_rows.size:
        shown = ", ".join(str(i) for i in na_rows[:20])
        more = "" if na_rows.size <= 20 else f" (+{na_rows.size - 20} more)"
        raise DataError(f"missing values in rows [{shown}]{more}")

    numeric_cols = [c for c in selected if schema.group is None or c != schema.group]
    numeric = {}
    for col in numeric_cols:
        converted = pd.to_numeric(frame[col], errors="coerce")
        bad = np.nonzero(converted.isna().to_numpy())[0]
        if bad.size:
            raise DataError(f"non-numeric cells in column {col!r}, rows {bad[:20].tolist()}")
        numeric[col] = converted.to_numpy(dtype=float)

    group_label = None
    if schema.group is not None:
        codes, _ = pd.factorize(frame[schema.group], sort=True)
        group_label = codes.astype(np.int64)

    cov = (
        np.column_stack([numeric[c] for c in covariates])
        if covariates
        else np.empty((len(frame), 0))
    )
    return Dataset(
        outcome=numeric[schema.outcome],
        treatment=numeric[schema.treatment],
        covariates=cov,
        column_names=tuple(covariates),
        group_label=group_label,
        treatment_name=schema.treatment,
    )


@dataclass(frozen=True)
class FoldPlan:
    """A deterministic partition of {0..n-1} into ``num_folds`` folds."""

    n: int
    num_folds: int
    assignment: np.ndarray
    seed: int

    def __post_init__(self):
        assignment = _readonly(self.assignment, dtype=np.int64)
        object.__setattr__(self, "assignment", assignment)
        if assignment.shape != (self.n,):
            raise ValueError("assignment must have one entry per row")
        counts = np.bincount(assignment, minlength=self.num_folds)
        if counts.size != self.num_folds or np.any(counts == 0):
            raise ValueError("every fold must receive at least one row")

    def test_indices(self, fold: int) -> np.ndarray:
        return np.nonzero(self.assignment == fold)[0]

    def train_indices(self, fold: int) -> np.ndarray:
        return np.nonzero(self.assignment != fold)[0]

    def iter_folds(self):
        for fold in range(self.num_folds):
            yield fold, self.train_indices(fold), self.test_indices(fold)


DEFAULT_NUM_FOLDS = 5


def make_fold_plan(
    n: int,
    num_folds: int = DEFAULT_NUM_FOLDS,
    seed: int = 0,
    groups: Optional[np.ndarray] = None,
    strata: Optional[np.ndarray] = None,
) -> FoldPlan:
    """Construct a reproducible fold assignment.

    Without constraints, rows are shuffled and dealt round-robin so fold
    sizes differ by at most one. With ``strata``, strata are processed in
    sorted order and rows dealt round-robin within each stratum (the dealing
    counter continues across strata, preserving global balance). With
    ``groups``, whole groups are assigned to the currently smallest fold,
    largest group first; rows sharing a group label always share a fold.
    When both are given, each group must lie inside a single stratum.
    """
    if num_folds < 2:
        raise ValueError(f"need at least 2 folds, got {num_folds}")
    if num_folds > n:
        raise ValueError(f"cannot split {n} rows into {num_folds} folds")
    rng = np.random.default_rng(seed)
    assignment = np.full(n, -1, dtype=np.int64)

    if groups is not None:
        groups = np.asarray(groups)
        if groups.shape != (n,):
            raise ValueError("groups must have one entry per row")
        unique_groups = np.unique(groups)
        if unique_groups.size < num_folds:
            raise ValueError(
                f"{unique_groups.size} distinct groups cannot fill {num_folds} folds"
            )
        group_rows = {g: np.nonzero(groups == g)[0] for g in unique_groups}
        if strata is not None:
            strata = np.asarray(strata)
            if strata.shape != (n,):
                raise ValueError("strata must have one entry per row")
            group_stratum = {}
            for g, rows in group_rows.items():
                values = np.unique(strata[rows])
                if values.size != 1:
                    raise ValueError(f"group {g!r} spans multiple strata")
                group_stratum[g] = values[0]
            stratum_order = np.unique(strata)
            buckets = [
                [g for g in unique_groups if group_stratum[g] == s] for s in stratum_order
            ]
        else:
            buckets = [list(unique_groups)]

        fold_sizes = np.zeros(num_folds, dtype=np.int64)
        for bucket in buckets:
            order = rng.permutation(len(bucket))
            shuffled = [bucket[i] for i in order]
            # stable sort: ties in size keep the shuffled order
            shuffled.sort(key=lambda g: -group_rows[g].size)
            for g in shuffled:
                fold = int(np.argmin(fold_sizes))
                assignment[group_rows[g]] = fold
                fold_sizes[fold] += group_rows[g].size
    elif strata is not None:
        strata = np.asarray(strata)
        if strata.shape != (n,):
            raise ValueError("strata must have one entry per row")
        counter = 0
        for s in np.unique(strata):
            rows = np.nonzero(strata == s)[0]
            rows = rows[rng.permutation(rows.size)]
            for r in rows:
                assignment[r] = counter % num_folds
                counter += 1
    else:
        order = rng.permutation(n)
        assignment[order] = np.arange(n) % num_folds

    return FoldPlan(n=n, num_folds=num_folds, assignment=assignment, seed=seed)
