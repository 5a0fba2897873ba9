"""Shared helpers: mock learners, deterministic cell datasets."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import pytest

from ovbounds import Dataset


@dataclass(frozen=True)
class FixedFit:
    """A 'fitted model' that applies a fixed function of the features."""

    fn: object
    training_r2: float = 0.0

    def predict(self, features):
        return np.asarray(self.fn(np.atleast_2d(features)), dtype=float)


@dataclass(frozen=True)
class FixedFunctionLearner:
    """Learner whose fit ignores the data and returns a fixed predictor."""

    fn: object

    def fit(self, features, targets):
        return FixedFit(self.fn)


class FailingLearner:
    def fit(self, features, targets):
        raise RuntimeError("this learner always fails")


def build_cell_dataset(cells) -> Dataset:
    """Expand (d, x, y, count) cells into a dataset with exact frequencies.

    ``x`` may be a scalar or tuple; rows are emitted in cell order so the
    empirical joint distribution is exactly the requested one.
    """
    d_rows, x_rows, y_rows = [], [], []
    for d, x, y, count in cells:
        x = np.atleast_1d(np.asarray(x, dtype=float))
        for _ in range(count):
            d_rows.append(float(d))
            x_rows.append(x)
            y_rows.append(float(y))
    x_mat = np.vstack(x_rows)
    return Dataset(
        outcome=np.array(y_rows),
        treatment=np.array(d_rows),
        covariates=x_mat,
        column_names=tuple(f"x{j}" for j in range(1, x_mat.shape[1] + 1)),
    )


@pytest.fixture
def rng():
    return np.random.default_rng(20240817)
