"""Pluggable regression learners: penalized linear models and tree ensembles.

Both learners expose ``fit(features, targets) -> RegressionFit`` and are
deterministic given their hyperparameters and seed. The coordinate-descent
solver for penalized quadratics is shared with the variational Riesz
estimator, which minimizes a quadratic form of the same shape.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from typing import Optional, Protocol, Sequence, Union

import numpy as np
from sklearn.ensemble import RandomForestRegressor


class ConvergenceWarning(UserWarning):
    """Emitted when coordinate descent stops at the sweep limit."""


CD_TOL = 1e-7
CD_MAX_SWEEPS = 10_000


class RegressionFit(Protocol):
    def predict(self, features: np.ndarray) -> np.ndarray: ...

    @property
    def training_r2(self) -> float: ...


class RegressionLearner(Protocol):
    def fit(self, features: np.ndarray, targets: np.ndarray) -> RegressionFit: ...


# ---------------------------------------------------------------------------
# Coordinate descent on penalized quadratics
# ---------------------------------------------------------------------------


def solve_penalized_quadratic(
    gram: np.ndarray,
    linear: np.ndarray,
    l1: Union[float, np.ndarray] = 0.0,
    l2: Union[float, np.ndarray] = 0.0,
    tol: float = CD_TOL,
    max_sweeps: int = CD_MAX_SWEEPS,
    warm_start: Optional[np.ndarray] = None,
) -> tuple[np.ndarray, dict]:
    """Minimize ``0.5 x'Ax - b'x + sum_j l1_j |x_j| + 0.5 sum_j l2_j x_j^2``.

    ``gram`` must be symmetric positive semidefinite. Penalty levels may be
    scalars or per-coordinate vectors; a zero diagonal entry with zero l2
    leaves the coordinate at its current value (degenerate direction).

    Returns the solution and an info dict with ``converged``, ``sweeps`` and
    ``max_delta``. Hitting the sweep limit emits a
    :class:`ConvergenceWarning` instead of failing; callers can inspect the
    flag.
    """
    A = np.asarray(gram, dtype=float)
    b = np.asarray(linear, dtype=float)
    q = b.shape[0]
    if A.shape != (q, q):
        raise ValueError(f"gram matrix shape {A.shape} does not match {q} coordinates")
    if not (np.all(np.isfinite(A)) and np.all(np.isfinite(b))):
        raise ValueError("non-finite values in quadratic problem")
    l1 = np.broadcast_to(np.asarray(l1, dtype=float), (q,))
    l2 = np.broadcast_to(np.asarray(l2, dtype=float), (q,))
    if np.any(l1 < 0) or np.any(l2 < 0):
        raise ValueError("penalty weights must be nonnegative")

    x = np.zeros(q) if warm_start is None else np.array(warm_start, dtype=float)
    Ax = A @ x
    diag = np.diag(A)
    converged = False
    sweeps = 0
    max_delta = np.inf
    for sweeps in range(1, max_sweeps + 1):
        max_delta = 0.0
        for j in range(q):
            denom = diag[j] + l2[j]
            if denom <= 0.0:
                continue
            residual = b[j] - Ax[j] + diag[j] * x[j]
            shrunk = np.sign(residual) * max(abs(residual) - l1[j], 0.0)
            new = shrunk / denom
            delta = new - x[j]
            if delta != 0.0:
                Ax += A[:, j] * delta
                x[j] = new
                if abs(delta) > max_delta:
                    max_delta = abs(delta)
        if max_delta < tol:
            converged = True
            break
    if not converged:
        warnings.warn(
            f"coordinate descent stopped after {sweeps} sweeps "
            f"(last max coefficient change {max_delta:.3e})",
            ConvergenceWarning,
        )
    return x, {"converged": converged, "sweeps": sweeps, "max_delta": max_delta}


def kkt_violation(
    gram: np.ndarray,
    linear: np.ndarray,
    solution: np.ndarray,
    l1: Union[float, np.ndarray] = 0.0,
    l2: Union[float, np.ndarray] = 0.0,
) -> float:
    """Largest violation of the subgradient optimality conditions."""
    q = solution.shape[0]
    l1 = np.broadcast_to(np.asarray(l1, dtype=float), (q,))
    l2 = np.broadcast_to(np.asarray(l2, dtype=float), (q,))
    grad = gram @ solution - linear + l2 * solution
    at_zero = solution == 0.0
    violation = np.where(
        at_zero,
        np.maximum(np.abs(grad) - l1, 0.0),
        np.abs(grad + l1 * np.sign(solution)),
    )
    return float(np.max(violation)) if q else 0.0


# ---------------------------------------------------------------------------
# Feature dictionaries
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Dictionary:
    """Deterministic basis expansion of a raw feature matrix.

    Term order is intercept, raw columns, squares, then pairwise products
    (i < j, lexicographic); the expansion is truncated at ``max_columns`` in
    that order. With the observed-regressor convention (treatment in column
    0), the pairwise block contains every treatment-covariate interaction.
    """

    include_intercept: bool = False
    raw: bool = True
    squares: bool = True
    interactions: bool = True
    max_columns: int = 5000

    def width(self, num_features: int) -> int:
        p = num_features
        q = int(self.include_intercept) + p * int(self.raw) + p * int(self.squares)
        if self.interactions:
            q += p * (p - 1) // 2
        return min(q, self.max_columns)

    def transform(self, features: np.ndarray) -> np.ndarray:
        X = np.atleast_2d(np.asarray(features, dtype=float))
        n, p = X.shape
        blocks = []
        if self.include_intercept:
            blocks.append(np.ones((n, 1)))
        if self.raw:
            blocks.append(X)
        if self.squares:
            blocks.append(X**2)
        if self.interactions and p > 1:
            i_idx, j_idx = np.triu_indices(p, k=1)
            blocks.append(X[:, i_idx] * X[:, j_idx])
        out = np.hstack(blocks) if blocks else np.empty((n, 0))
        return out[:, : self.max_columns]

    def term_names(self, names: Sequence[str]) -> list[str]:
        names = list(names)
        terms = []
        if self.include_intercept:
            terms.append("1")
        if self.raw:
            terms.extend(names)
        if self.squares:
            terms.extend(f"{c}^2" for c in names)
        if self.interactions:
            for i in range(len(names)):
                for j in range(i + 1, len(names)):
                    terms.append(f"{names[i]}*{names[j]}")
        return terms[: self.max_columns]

    @property
    def description(self) -> str:
        parts = [
            name
            for flag, name in [
                (self.include_intercept, "intercept"),
                (self.raw, "raw"),
                (self.squares, "squares"),
                (self.interactions, "pairwise interactions"),
            ]
            if flag
        ]
        return " + ".join(parts) + f" (cap {self.max_columns})"


# ---------------------------------------------------------------------------
# Penalized linear regression
# ---------------------------------------------------------------------------


@dataclass
class PenalizedLinearFit:
    """Elastic-net linear fit on (optionally dictionary-expanded) features."""

    coef: np.ndarray
    intercept: float
    kept: np.ndarray
    center: np.ndarray
    scale: np.ndarray
    std_coef: np.ndarray
    dictionary: Optional[Dictionary]
    training_r2: float
    l1_weight: float
    l2_weight: float
    diagnostics: dict = field(default_factory=dict)

    def _expanded(self, features: np.ndarray) -> np.ndarray:
        X = np.atleast_2d(np.asarray(features, dtype=float))
        return self.dictionary.transform(X) if self.dictionary is not None else X

    def predict(self, features: np.ndarray) -> np.ndarray:
        phi = self._expanded(features)
        return phi[:, self.kept] @ self.coef + self.intercept

    def standardized_objective(self, features: np.ndarray, targets: np.ndarray) -> float:
        """Objective value of this fit's solution on the problem it solved."""
        phi = self._expanded(features)[:, self.kept]
        z = (phi - self.center) / self.scale
        y = np.asarray(targets, dtype=float)
        resid = (y - y.mean()) - z @ self.std_coef
        return float(
            0.5 * np.mean(resid**2)
            + self.l1_weight * np.sum(np.abs(self.std_coef))
            + 0.5 * self.l2_weight * np.sum(self.std_coef**2)
        )


def _training_r2(targets: np.ndarray, predictions: np.ndarray) -> float:
    ss_tot = float(np.sum((targets - targets.mean()) ** 2))
    ss_res = float(np.sum((targets - predictions) ** 2))
    if ss_tot == 0.0:
        return 1.0 if ss_res <= 1e-12 else 0.0
    return 1.0 - ss_res / ss_tot


def fit_penalized_linear(
    features: np.ndarray,
    targets: np.ndarray,
    dictionary: Optional[Dictionary] = None,
    l1_weight: float = 0.0,
    l2_weight: float = 0.0,
    seed: int = 0,
    tol: float = CD_TOL,
    max_sweeps: int = CD_MAX_SWEEPS,
) -> PenalizedLinearFit:
    """Minimize ``(1/2n)||y - phi(x)b||^2 + l1 |b|_1 + (l2/2) |b|_2^2``.

    Features are standardized internally (penalties act on the standardized
    scale; coefficients are mapped back on output) and the intercept is
    unpenalized. Constant columns are dropped. Cyclic coordinate descent is
    deterministic, so ``seed`` is accepted for contract uniformity only.
    """
    del seed
    X = np.atleast_2d(np.asarray(features, dtype=float))
    y = np.asarray(targets, dtype=float)
    if X.shape[0] != y.shape[0]:
        raise ValueError("features and targets must share the same length")
    if X.shape[0] < 2:
        raise ValueError("need at least 2 rows")
    if not (np.all(np.isfinite(X)) and np.all(np.isfinite(y))):
        raise ValueError("non-finite values in training data")

    phi = dictionary.transform(X) if dictionary is not None else X
    center_all = phi.mean(axis=0)
    scale_all = phi.std(axis=0)
    kept = np.nonzero(scale_all > 0.0)[0]
    center = center_all[kept]
    scale = scale_all[kept]
    z = (phi[:, kept] - center) / scale
    y_mean = float(y.mean())
    yc = y - y_mean

    n = y.shape[0]
    gram = z.T @ z / n
    linear = z.T @ yc / n
    std_coef, info = solve_penalized_quadratic(
        gram, linear, l1=l1_weight, l2=l2_weight, tol=tol, max_sweeps=max_sweeps
    )

    coef = std_coef / scale if kept.size else std_coef
    intercept = y_mean - float(center @ coef) if kept.size else y_mean
    fit = PenalizedLinearFit(
        coef=coef,
        intercept=intercept,
        kept=kept,
        center=center,
        scale=scale,
        std_coef=std_coef,
        dictionary=dictionary,
        training_r2=0.0,
        l1_weight=l1_weight,
        l2_weight=l2_weight,
        diagnostics=dict(info, num_terms=int(kept.size)),
    )
    fit.training_r2 = _training_r2(y, fit.predict(X))
    return fit


@dataclass(frozen=True)
class PenalizedLinearLearner:
    dictionary: Optional[Dictionary] = None
    l1_weight: float = 0.0
    l2_weight: float = 0.0
    seed: int = 0
    tol: float = CD_TOL
    max_sweeps: int = CD_MAX_SWEEPS

    def fit(self, features: np.ndarray, targets: np.ndarray) -> PenalizedLinearFit:
        return fit_penalized_linear(
            features,
            targets,
            dictionary=self.dictionary,
            l1_weight=self.l1_weight,
            l2_weight=self.l2_weight,
            seed=self.seed,
            tol=self.tol,
            max_sweeps=self.max_sweeps,
        )


# ---------------------------------------------------------------------------
# Tree ensembles
# ---------------------------------------------------------------------------


@dataclass
class TreeEnsembleFit:
    model: RandomForestRegressor
    training_r2: float

    def predict(self, features: np.ndarray) -> np.ndarray:
        X = np.atleast_2d(np.asarray(features, dtype=float))
        return self.model.predict(X)


def fit_tree_ensemble(
    features: np.ndarray,
    targets: np.ndarray,
    num_trees: int = 500,
    max_depth: Optional[int] = None,
    min_leaf: int = 5,
    subsample: float = 1.0,
    max_features: Union[float, str] = 1 / 3,
    seed: int = 0,
    n_jobs: int = 1,
) -> TreeEnsembleFit:
    """Bagged regression trees with feature subsampling (random forest).

    Predictions average the per-tree predictions; output is deterministic
    given ``seed``. The bootstrap is indexed by the seeded sampler, so
    row-permutation invariance is not guaranteed for this learner.
    """
    X = np.atleast_2d(np.asarray(features, dtype=float))
    y = np.asarray(targets, dtype=float)
    if not (0.0 < subsample <= 1.0):
        raise ValueError("subsample must be in (0, 1]")
    if X.shape[0] < 2 * min_leaf:
        raise ValueError(f"need at least {2 * min_leaf} rows for min_leaf={min_leaf}")
    model = RandomForestRegressor(
        n_estimators=num_trees,
        max_depth=max_depth,
        min_samples_leaf=min_leaf,
        max_features=max_features,
        bootstrap=True,
        max_samples=None if subsample == 1.0 else subsample,
        random_state=seed,
        n_jobs=n_jobs,
    )
    model.fit(X, y)
    return TreeEnsembleFit(model=model, training_r2=_training_r2(y, model.predict(X)))


@dataclass(frozen=True)
class TreeEnsembleLearner:
    num_trees: int = 500
    max_depth: Optional[int] = None
    min_leaf: int = 5
    subsample: float = 1.0
    max_features: Union[float, str] = 1 / 3
    seed: int = 0
    n_jobs: int = 1

    def fit(self, features: np.ndarray, targets: np.ndarray) -> TreeEnsembleFit:
        return fit_tree_ensemble(
            features,
            targets,
            num_trees=self.num_trees,
            max_depth=self.max_depth,
            min_leaf=self.min_leaf,
            subsample=self.subsample,
            max_features=self.max_features,
            seed=self.seed,
            n_jobs=self.n_jobs,
        )


# ---------------------------------------------------------------------------
# Cross-validated learner selection
# ---------------------------------------------------------------------------


def cross_val_mse(learner: RegressionLearner, features, targets, plan) -> float:
    """Out-of-fold mean squared error of ``learner`` under ``plan``."""
    X = np.atleast_2d(np.asarray(features, dtype=float))
    y = np.asarray(targets, dtype=float)
    predictions = np.empty_like(y)
    for _, train, test in plan.iter_folds():
        fit = learner.fit(X[train], y[train])
        predictions[test] = fit.predict(X[test])
    return float(np.mean((y - predictions) ** 2))


CV_TIE_TOL = 1e-12


def select_learner_cv(candidates: Sequence[RegressionLearner], features, targets, plan):
    """Return the candidate with lowest cross-validated MSE under ``plan``.

    Ties (within ``CV_TIE_TOL``) go to the earlier candidate. Candidates
    whose fits fail are skipped with a warning; if every candidate fails the
    collected errors are raised together.
    """
    if not candidates:
        raise ValueError("need at least one candidate learner")
    scores = []
    failures = []
    for idx, candidate in enumerate(candidates):
        try:
            scores.append((idx, cross_val_mse(candidate, features, targets, plan)))
        except Exception as exc:  # noqa: BLE001 - per-candidate isolation
            failures.append((idx, exc))
            warnings.warn(f"candidate {idx} failed cross-validation: {exc}")
    if not scores:
        raise RuntimeError(f"all candidates failed cross-validation: {failures}")
    best_idx, best_mse = scores[0]
    for idx, mse in scores[1:]:
        if mse < best_mse - CV_TIE_TOL:
            best_idx, best_mse = idx, mse
    return candidates[best_idx]
