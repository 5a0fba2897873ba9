"""Target functionals of a regression function and their per-row scores.

A functional is the population mean of a row-level score ``m(w, f)`` that is
linear in the evaluated function ``f``. The score needs ``f`` at
counterfactual points (treated/untreated rows, shifted treatments,
transported rows), so functions are passed as evaluable objects rather than
fitted values.
"""

from __future__ import annotations

import ast
from dataclasses import dataclass, replace
from typing import Mapping, Optional, Protocol, Sequence

import numpy as np

from .dataio import Dataset

BINARY_ATE = "binary_ate"
BINARY_APO = "binary_apo"
PLM_COEFFICIENT = "plm_coefficient"
ACD = "acd"
POLICY_TRANSPORT = "policy_transport"
DISTRIBUTION_SHIFT = "distribution_shift"

KINDS = (
    BINARY_ATE,
    BINARY_APO,
    PLM_COEFFICIENT,
    ACD,
    POLICY_TRANSPORT,
    DISTRIBUTION_SHIFT,
)

BINARY_KINDS = (BINARY_ATE, BINARY_APO)


class FunctionalError(ValueError):
    """Raised when a functional is evaluated outside its contract."""


# ---------------------------------------------------------------------------
# Arithmetic expressions over named columns
# ---------------------------------------------------------------------------

_BINOPS = {
    ast.Add: np.add,
    ast.Sub: np.subtract,
    ast.Mult: np.multiply,
    ast.Div: np.divide,
}
_COMPARES = {
    ast.Lt: np.less,
    ast.LtE: np.less_equal,
    ast.Gt: np.greater,
    ast.GtE: np.greater_equal,
    ast.Eq: np.equal,
    ast.NotEq: np.not_equal,
}


class ColumnExpr:
    """A tiny arithmetic expression over named columns.

    Supports numeric constants, column names, ``+ - * /``, unary minus and
    comparison operators (which evaluate to 0/1 indicators). Examples:
    ``"1"``, ``"inc / 10000"``, ``"(age > 30) * 0.5 + 0.5"``.
    """

    def __init__(self, source: str):
        self.source = source
        try:
            tree = ast.parse(source, mode="eval")
        except SyntaxError as exc:
            raise FunctionalError(f"cannot parse expression {source!r}: {exc}") from None
        self._tree = tree.body
        self._validate(self._tree)

    def _validate(self, node: ast.AST):
        if isinstance(node, ast.Constant):
            if not isinstance(node.value, (int, float)):
                raise FunctionalError(f"non-numeric constant in {self.source!r}")
        elif isinstance(node, ast.Name):
            pass
        elif isinstance(node, ast.BinOp) and type(node.op) in _BINOPS:
            self._validate(node.left)
            self._validate(node.right)
        elif isinstance(node, ast.UnaryOp) and isinstance(node.op, (ast.USub, ast.UAdd)):
            self._validate(node.operand)
        elif isinstance(node, ast.Compare):
            if len(node.ops) != 1 or type(node.ops[0]) not in _COMPARES:
                raise FunctionalError(f"unsupported comparison in {self.source!r}")
            self._validate(node.left)
            self._validate(node.comparators[0])
        else:
            raise FunctionalError(
                f"unsupported syntax {type(node).__name__} in {self.source!r}"
            )

    def variables(self) -> frozenset:
        names = {
            node.id for node in ast.walk(self._tree) if isinstance(node, ast.Name)
        }
        return frozenset(names)

    def evaluate(self, env: Mapping[str, np.ndarray]) -> np.ndarray:
        def recurse(node):
            if isinstance(node, ast.Constant):
                return float(node.value)
            if isinstance(node, ast.Name):
                if node.id not in env:
                    raise FunctionalError(
                        f"unknown column {node.id!r} in expression {self.source!r}"
                    )
                return np.asarray(env[node.id], dtype=float)
            if isinstance(node, ast.BinOp):
                return _BINOPS[type(node.op)](recurse(node.left), recurse(node.right))
            if isinstance(node, ast.UnaryOp):
                operand = recurse(node.operand)
                return -operand if isinstance(node.op, ast.USub) else +operand
            if isinstance(node, ast.Compare):
                result = _COMPARES[type(node.ops[0])](
                    recurse(node.left), recurse(node.comparators[0])
                )
                return np.asarray(result, dtype=float)
            raise FunctionalError(f"unsupported node {type(node).__name__}")

        return recurse(self._tree)


# ---------------------------------------------------------------------------
# Functional specification
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class FunctionalSpec:
    """Which linear functional of the regression function is targeted.

    ``weight``, ``direction`` and ``transport`` values are
    :class:`ColumnExpr` sources over the observed-regressor column names
    (treatment first). ``shift_samples`` holds the two empirical samples
    (rows of observed regressors) defining a distribution-shift contrast.
    """

    kind: str
    weight: Optional[str] = None
    apo_level: Optional[int] = None
    transport: Optional[Mapping[str, str]] = None
    direction: Optional[str] = None
    fd_step: float = 0.01
    shift_samples: Optional[tuple] = None
    columns: Optional[tuple] = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise FunctionalError(f"unknown functional kind {self.kind!r}; choose from {KINDS}")
        if self.kind == BINARY_APO:
            if self.apo_level not in (0, 1):
                raise FunctionalError("binary_apo requires apo_level in {0, 1}")
        if self.kind == ACD and self.fd_step <= 0:
            raise FunctionalError("acd requires a positive fd_step")
        if self.kind == POLICY_TRANSPORT and not self.transport:
            raise FunctionalError("policy_transport requires a transport map")
        if self.kind == DISTRIBUTION_SHIFT:
            if self.shift_samples is None or len(self.shift_samples) != 2:
                raise FunctionalError(
                    "distribution_shift requires shift_samples=(target_rows, baseline_rows)"
                )
            object.__setattr__(
                self,
                "shift_samples",
                tuple(np.atleast_2d(np.asarray(s, dtype=float)) for s in self.shift_samples),
            )
        if self.weight is not None:
            ColumnExpr(self.weight)
        if self.direction is not None:
            ColumnExpr(self.direction)
        if self.transport is not None:
            for expr in self.transport.values():
                ColumnExpr(expr)
        if self.columns is not None:
            object.__setattr__(self, "columns", tuple(self.columns))

    @property
    def requires_binary(self) -> bool:
        return self.kind in BINARY_KINDS

    def bind_columns(self, names: Sequence[str]) -> "FunctionalSpec":
        """Attach observed-regressor column names (treatment first)."""
        return replace(self, columns=tuple(names))

    def for_dataset(self, data: Dataset) -> "FunctionalSpec":
        return self.bind_columns(data.wcolumns)

    def wnames(self, num_columns: int) -> tuple:
        if self.columns is not None:
            if len(self.columns) != num_columns:
                raise FunctionalError(
                    f"spec has {len(self.columns)} column names but rows have {num_columns}"
                )
            return self.columns
        return ("d",) + tuple(f"x{j}" for j in range(1, num_columns))


def _env(spec: FunctionalSpec, rows: np.ndarray) -> dict:
    names = spec.wnames(rows.shape[1])
    return {name: rows[:, j] for j, name in enumerate(names)}


def weight_values(spec: FunctionalSpec, rows: np.ndarray) -> np.ndarray:
    """Evaluate the weighting expression on rows; defaults to 1."""
    if spec.weight is None:
        return np.ones(rows.shape[0])
    values = np.broadcast_to(
        ColumnExpr(spec.weight).evaluate(_env(spec, rows)), (rows.shape[0],)
    ).astype(float)
    if np.any(values < 0):
        raise FunctionalError(f"weight expression {spec.weight!r} takes negative values")
    return values


# ---------------------------------------------------------------------------
# Evaluable functions
# ---------------------------------------------------------------------------


class EvaluableFunction(Protocol):
    def evaluate(self, rows: np.ndarray) -> np.ndarray: ...


@dataclass(frozen=True)
class FunctionFromCallable:
    fn: object

    def evaluate(self, rows: np.ndarray) -> np.ndarray:
        return np.asarray(self.fn(np.atleast_2d(rows)), dtype=float)


@dataclass(frozen=True)
class RegressionFunction:
    """Adapter making a fitted regression model evaluable on row matrices."""

    fit: object

    def evaluate(self, rows: np.ndarray) -> np.ndarray:
        return np.asarray(self.fit.predict(np.atleast_2d(rows)), dtype=float)


@dataclass(frozen=True)
class LinearBasisFunction:
    """``rows -> dictionary.transform(rows) @ coef + intercept``."""

    dictionary: object
    coef: np.ndarray
    intercept: float = 0.0

    def evaluate(self, rows: np.ndarray) -> np.ndarray:
        return self.dictionary.transform(np.atleast_2d(rows)) @ self.coef + self.intercept


@dataclass(frozen=True)
class BasisMatrixFunction:
    """Matrix-valued function returning every dictionary column at once."""

    dictionary: object

    def evaluate(self, rows: np.ndarray) -> np.ndarray:
        return self.dictionary.transform(np.atleast_2d(rows))


@dataclass(frozen=True)
class PerturbedFunction:
    """``base + scale * direction``, used for orthogonality derivatives."""

    base: EvaluableFunction
    direction: EvaluableFunction
    scale: float

    def evaluate(self, rows: np.ndarray) -> np.ndarray:
        return self.base.evaluate(rows) + self.scale * self.direction.evaluate(rows)


# ---------------------------------------------------------------------------
# Scores
# ---------------------------------------------------------------------------


def _with_treatment(rows: np.ndarray, value) -> np.ndarray:
    out = rows.copy()
    out[:, 0] = value
    return out


def _weighted(values: np.ndarray, weights: np.ndarray) -> np.ndarray:
    if values.ndim == 2:
        return values * weights[:, None]
    return values * weights


def _check_finite(values: np.ndarray, what: str):
    if not np.all(np.isfinite(values)):
        raise FunctionalError(f"function evaluated to non-finite values at {what}")


def m_score(spec: FunctionalSpec, f: EvaluableFunction, rows: np.ndarray) -> np.ndarray:
    """Per-row score of the target functional for an evaluable ``f``.

    ``f.evaluate`` may return a vector (one value per row) or a matrix (one
    column per basis function); the score is applied columnwise in the
    latter case. The distribution-shift score is a constant (its integral
    contrast) replicated to all rows.
    """
    rows = np.atleast_2d(np.asarray(rows, dtype=float))
    n = rows.shape[0]
    weights = weight_values(spec, rows)

    if spec.kind == PLM_COEFFICIENT:
        raise FunctionalError(
            "the partially linear coefficient is estimated by residual "
            "partialling-out, not through a row-level score"
        )

    if spec.kind in BINARY_KINDS:
        d = rows[:, 0]
        if not np.all((d == 0.0) | (d == 1.0)):
            raise FunctionalError(f"{spec.kind} requires treatment values in {{0, 1}}")
        if spec.kind == BINARY_ATE:
            values = f.evaluate(_with_treatment(rows, 1.0)) - f.evaluate(
                _with_treatment(rows, 0.0)
            )
        else:
            values = f.evaluate(_with_treatment(rows, float(spec.apo_level)))
        _check_finite(values, "counterfactual treatment levels")
        return _weighted(values, weights)

    if spec.kind == ACD:
        h = spec.fd_step
        up = f.evaluate(_with_treatment(rows, rows[:, 0] + h))
        down = f.evaluate(_with_treatment(rows, rows[:, 0] - h))
        _check_finite(up, "d + h")
        _check_finite(down, "d - h")
        derivative = (up - down) / (2.0 * h)
        if spec.direction is not None:
            t = np.broadcast_to(
                ColumnExpr(spec.direction).evaluate(_env(spec, rows)), (n,)
            ).astype(float)
            derivative = _weighted(derivative, t)
        return _weighted(derivative, weights)

    if spec.kind == POLICY_TRANSPORT:
        names = spec.wnames(rows.shape[1])
        env = _env(spec, rows)
        transported = rows.copy()
        for column, expr in spec.transport.items():
            if column not in names:
                raise FunctionalError(f"transport targets unknown column {column!r}")
            transported[:, names.index(column)] = np.broadcast_to(
                ColumnExpr(expr).evaluate(env), (n,)
            )
        values = f.evaluate(transported) - f.evaluate(rows)
        _check_finite(values, "transported rows")
        return _weighted(values, weights)

    if spec.kind == DISTRIBUTION_SHIFT:
        target, baseline = spec.shift_samples
        contrasts = []
        for sample in (target, baseline):
            values = f.evaluate(sample)
            _check_finite(values, "shift sample")
            contrasts.append(
                np.mean(_weighted(values, weight_values(spec, sample)), axis=0)
            )
        contrast = contrasts[0] - contrasts[1]
        if np.ndim(contrast) == 0:
            return np.full(n, float(contrast))
        return np.broadcast_to(contrast, (n, contrast.shape[0])).copy()

    raise FunctionalError(f"unhandled kind {spec.kind!r}")


def plugin_theta(spec: FunctionalSpec, g_fit: EvaluableFunction, data: Dataset) -> float:
    """Plug-in value of the functional: the sample mean of the score."""
    if spec.requires_binary:
        data.require_binary_treatment()
    bound = spec if spec.columns is not None else spec.for_dataset(data)
    return float(np.mean(m_score(bound, g_fit, data.wmatrix)))
