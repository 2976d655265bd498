"""
Constant- and variable-step BDF coefficients, deflation and exactness checks.

Rows are written oldest node first: ``alpha[j]`` multiplies y_{n+j}, so
``alpha[k]`` is the coefficient of the newest value. A row built from the
ratio vector ``ratios`` lives on a stencil with steps h_n, ..., h_{n+k-1}
where ``ratios[i] = h_{n+i+1} / h_{n+i}`` (oldest pair first). A two-ratio
row ``(rho_2, rho_1)`` in this convention is the BDF3 row with newest ratio
``rho_1 = h_{n+2}/h_{n+1}``.

Two arithmetic modes are supported: floats (numpy float64) and exact
rationals (``fractions.Fraction`` in numpy object arrays).
"""

import logging
import math
from dataclasses import dataclass
from enum import Enum
from fractions import Fraction
from typing import Any, Optional, Sequence, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator

from zerostab_errors import InvalidMethodError, InvalidRatioError, NotPreconsistentError

logger = logging.getLogger(__name__)

MAX_STEP_NUMBER = 6
PRECONSISTENCY_TOL = 1e-13
NODE_RATIO_RTOL = 1e-10


class MethodFamily(str, Enum):
    BDF = "bdf"


class Normalization(str, Enum):
    """Scaling of variable-step rows.

    CLASSICAL writes two-step rows as (r^2, -(1+r)^2, 1+2r)/2, that is with
    beta_2 = (1+r)/2, and uses beta_k = 1 for every other k. UNIT_BETA uses
    beta_k = 1 throughout. The two coincide at unit ratios.
    """

    CLASSICAL = "classical"
    UNIT_BETA = "unit-beta"


class MethodSpec(BaseModel):
    """A k-step method of a supported family."""

    model_config = ConfigDict(frozen=True)

    family: MethodFamily = MethodFamily.BDF
    k: int = Field(ge=1, le=MAX_STEP_NUMBER)

    @field_validator("family", mode="before")
    @classmethod
    def _lower_family(cls, value: Any) -> Any:
        return value.lower() if isinstance(value, str) else value

    @property
    def name(self) -> str:
        return f"{self.family.value.upper()}{self.k}"


def method_spec(k: int, family: str = "bdf") -> MethodSpec:
    """Build a MethodSpec, turning validation failures into InvalidMethodError."""
    try:
        return MethodSpec(family=family, k=k)
    except ValidationError as e:
        raise InvalidMethodError(
            f"Unsupported method {family!r} with k={k}: "
            f"step number must be in 1..{MAX_STEP_NUMBER}"
        ) from e


@dataclass(frozen=True)
class CoefficientRow:
    """One row of variable-step coefficients alpha_{j,n}, beta_{j,n}."""

    alpha: Tuple
    beta: Tuple
    ratios: Tuple

    @property
    def k(self) -> int:
        return len(self.alpha) - 1

    @property
    def exact(self) -> bool:
        return all(isinstance(a, Fraction) for a in self.alpha)

    def as_float(self) -> "CoefficientRow":
        return CoefficientRow(
            alpha=tuple(float(a) for a in self.alpha),
            beta=tuple(float(b) for b in self.beta),
            ratios=tuple(float(r) for r in self.ratios),
        )


@dataclass(frozen=True)
class DeflatedRow:
    """Coefficients gamma_0..gamma_{k-1} of the extraneous factor rho_R."""

    gamma: Tuple

    @property
    def k(self) -> int:
        return len(self.gamma)

    @property
    def leading(self):
        return self.gamma[-1]

    def reconstruct(self) -> Tuple:
        """Convolve with the backward difference (-1, 1) to recover the alpha row."""
        return convolve_nabla(self.gamma)


def convolve_nabla(gamma: Sequence) -> Tuple:
    """Return gamma * (-1, 1): a_0 = -c_0, a_j = c_{j-1} - c_j, a_k = c_{k-1}."""
    k = len(gamma)
    zero = gamma[0] * 0
    padded_low = [zero] + list(gamma)
    padded_high = list(gamma) + [zero]
    return tuple(padded_low[j] - padded_high[j] for j in range(k + 1))


def _unit(exact: bool):
    return Fraction(1) if exact else 1.0


def _to_fraction(value: Any) -> Fraction:
    try:
        return Fraction(value)
    except (TypeError, ValueError, OverflowError) as e:
        raise InvalidRatioError(f"Step ratio {value!r} is not a finite number") from e


def ratio_array(ratios: Any, k: int, exact: bool = False) -> np.ndarray:
    """Validate ratios and return a 2-D array of shape (rows, k - 1).

    A 1-D input is treated as a single ratio vector. Ratios must be finite and
    strictly positive; they are never clamped.
    """
    if exact:
        raw = np.asarray(ratios, dtype=object)
        arr = np.vectorize(_to_fraction, otypes=[object])(raw) if raw.size else raw
    else:
        try:
            arr = np.asarray(ratios, dtype=float)
        except (TypeError, ValueError) as e:
            raise InvalidRatioError(f"Step ratios must be numbers: {ratios!r}") from e

    if arr.ndim == 1:
        arr = arr.reshape(1, -1)
    if arr.ndim != 2 or arr.shape[1] != k - 1:
        raise InvalidRatioError(
            f"A {k}-step row needs {k - 1} step ratio(s), got shape {np.shape(ratios)}"
        )
    if arr.size:
        if not exact and not np.all(np.isfinite(arr)):
            raise InvalidRatioError("Step ratios must be finite")
        if not all(r > 0 for r in arr.ravel()):
            raise InvalidRatioError("Step ratios must be strictly positive")
    return arr


def stencil_nodes(ratios: np.ndarray, unit=1.0) -> np.ndarray:
    """Nodes x_0..x_k for each ratio vector, scaled so the newest step is ``unit``
    and the newest node is zero."""
    rows, m = ratios.shape
    k = m + 1
    dtype = object if ratios.dtype == object or not isinstance(unit, float) else float
    steps = np.empty((rows, k), dtype=dtype)
    steps[:, k - 1] = unit
    for i in range(k - 2, -1, -1):
        steps[:, i] = steps[:, i + 1] / ratios[:, i]
    nodes = np.empty((rows, k + 1), dtype=dtype)
    nodes[:, k] = unit * 0
    for i in range(k - 1, -1, -1):
        nodes[:, i] = nodes[:, i + 1] - steps[:, i]
    return nodes


def newton_derivative_weights(nodes: np.ndarray) -> np.ndarray:
    """Weights w with p'(x_k) = sum_j w_j y_j for the interpolant through (x_j, y_j).

    The divided-difference table is built once for all unit data vectors and the
    derivative of the Newton form is evaluated at the last node by Horner's rule.
    Works on float arrays and on object arrays of exact or symbolic numbers.
    """
    m = nodes.shape[-1]
    k = m - 1
    table = np.broadcast_to(np.eye(m, dtype=int).astype(nodes.dtype), nodes.shape + (m,)).copy()
    coef = [table[..., 0, :]]
    for order in range(1, m):
        width = nodes[..., order:] - nodes[..., :-order]
        table = (table[..., 1:, :] - table[..., :-1, :]) / width[..., :, None]
        coef.append(table[..., 0, :])

    x = nodes[..., k][..., None]
    p = coef[k]
    dp = np.zeros_like(p)
    for j in range(k - 1, -1, -1):
        shift = x - nodes[..., j][..., None]
        dp = p + shift * dp
        p = coef[j] + shift * p
    return dp


def bdf_alpha_batch(k: int, ratios: np.ndarray, normalization: Normalization = Normalization.CLASSICAL,
                    unit=1.0) -> Tuple[np.ndarray, np.ndarray]:
    """Alpha and beta_k for a batch of validated ratio vectors (shape (rows, k - 1)).

    alpha_j = h_{n+k-1} * l_j'(t_{n+k}) with beta_k = 1; the CLASSICAL two-step
    rows are then multiplied by (1 + r)/2.
    """
    nodes = stencil_nodes(ratios, unit=unit)
    alpha = newton_derivative_weights(nodes)
    beta_k = np.full(ratios.shape[0], unit, dtype=alpha.dtype)
    if k == 2 and normalization == Normalization.CLASSICAL:
        beta_k = (unit + ratios[:, 0]) / 2
        alpha = alpha * beta_k[:, None]
    return alpha, beta_k


def _row_from_arrays(alpha: np.ndarray, beta_k, ratios: np.ndarray, exact: bool) -> CoefficientRow:
    convert = Fraction if exact else float
    k = alpha.shape[-1] - 1
    zero = convert(0)
    return CoefficientRow(
        alpha=tuple(convert(a) for a in alpha),
        beta=tuple([zero] * k + [convert(beta_k)]),
        ratios=tuple(convert(r) for r in ratios),
    )


def bdf_variable_row(spec: MethodSpec, ratios: Sequence, exact: bool = False,
                     normalization: Normalization = Normalization.CLASSICAL) -> CoefficientRow:
    """Coefficients of BDF-k on a stencil with the given consecutive step ratios."""
    if spec.family != MethodFamily.BDF:
        raise InvalidMethodError(f"No coefficient generator for family {spec.family.value}")
    arr = ratio_array(ratios, spec.k, exact=exact)
    if arr.shape[0] != 1:
        raise InvalidRatioError("bdf_variable_row takes a single ratio vector")
    alpha, beta_k = bdf_alpha_batch(spec.k, arr, normalization=normalization, unit=_unit(exact))
    row = _row_from_arrays(alpha[0], beta_k[0], arr[0], exact)
    logger.debug(f"{spec.name} row for ratios {row.ratios}: alpha={row.alpha}")
    return row


def bdf_constant_row(spec: MethodSpec, exact: bool = False) -> CoefficientRow:
    """The standard constant step size row (all ratios equal to one)."""
    ones = [Fraction(1) if exact else 1.0] * (spec.k - 1)
    return bdf_variable_row(spec, ones, exact=exact)


def deflate_alpha_batch(alpha: np.ndarray, tol: float = PRECONSISTENCY_TOL) -> np.ndarray:
    """Deflate many rows at once; gamma_j is the sum of alpha_{j+1..k}."""
    gamma = np.cumsum(alpha[..., :0:-1], axis=-1)[..., ::-1]
    remainder = alpha[..., 0] + gamma[..., 0]
    if alpha.dtype == object:
        bad = [i for i, rem in enumerate(np.ravel(remainder)) if rem != 0]
    else:
        scale = np.maximum(1.0, np.sum(np.abs(alpha), axis=-1))
        bad = np.flatnonzero(np.abs(remainder) > tol * scale).tolist()
    if bad:
        raise NotPreconsistentError(
            f"Row sums do not vanish (first offending row {bad[0]}); "
            f"the rows are not preconsistent"
        )
    return gamma


def deflate_row(row: CoefficientRow, tol: float = PRECONSISTENCY_TOL) -> DeflatedRow:
    """Synthetic division of the alpha row by (zeta - 1), right to left."""
    alpha = row.alpha
    k = len(alpha) - 1
    if k < 1:
        raise NotPreconsistentError("A row needs at least two coefficients")
    acc = alpha[0] * 0
    gamma = [None] * k
    for j in range(k, 0, -1):
        acc = acc + alpha[j]
        gamma[j - 1] = acc
    remainder = alpha[0] + gamma[0]

    if row.exact:
        if remainder != 0:
            raise NotPreconsistentError(f"Nonzero deflation remainder {remainder}")
    else:
        scale = max(1.0, math.fsum(abs(float(a)) for a in alpha))
        if abs(float(remainder)) > tol * scale:
            raise NotPreconsistentError(
                f"Deflation remainder {float(remainder):.3e} exceeds tolerance {tol:.1e}"
            )
    return DeflatedRow(gamma=tuple(gamma))


def exactness_residual(row: CoefficientRow, nodes: Sequence, max_degree: Optional[int] = None):
    """Max |sum_j alpha_j q(t_j) - h sum_j beta_j q'(t_j)| over q = 1, t, ..., t^d.

    ``h`` is the newest step t_k - t_{k-1}. The degree defaults to k.
    """
    k = row.k
    t = list(nodes)
    if len(t) != k + 1:
        raise InvalidRatioError(f"Expected {k + 1} nodes for a {k}-step row, got {len(t)}")
    steps = [t[i + 1] - t[i] for i in range(k)]
    if any(step <= 0 for step in steps):
        raise InvalidRatioError("Nodes must be strictly increasing")
    for i, expected in enumerate(row.ratios):
        actual = steps[i + 1] / steps[i]
        if row.exact and all(isinstance(x, Fraction) for x in t):
            mismatch = actual != expected
        else:
            mismatch = abs(float(actual) - float(expected)) > NODE_RATIO_RTOL * abs(float(expected))
        if mismatch:
            raise InvalidRatioError(
                f"Node spacing ratio {float(actual):.6g} does not match row ratio {float(expected):.6g}"
            )

    degree = k if max_degree is None else max_degree
    h = steps[-1]
    exact = row.exact and all(isinstance(x, (Fraction, int)) for x in t)
    residual = Fraction(0) if exact else 0.0
    for d in range(degree + 1):
        lhs_terms = [a * x ** d for a, x in zip(row.alpha, t)]
        rhs_terms = [h * b * d * x ** (d - 1) for b, x in zip(row.beta, t)] if d > 0 else []
        if exact:
            value = abs(sum(lhs_terms) - sum(rhs_terms))
        else:
            value = abs(math.fsum(float(v) for v in lhs_terms) - math.fsum(float(v) for v in rhs_terms))
        residual = max(residual, value)
    return residual
