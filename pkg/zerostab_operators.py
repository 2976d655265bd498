"""
Banded lower-triangular operators of a multistep method on a grid.

Row i of an N x N operator is the equation that produces y_{i+1}; unknowns
are y_1..y_N and the start values enter through the right-hand side. Band
storage is row-wise: ``bands[i, c] = M[i, i - b + c]`` with the diagonal in
the last column and zeros where the column index would be negative.

For a k-step method the row for y_{i+1} uses the stencil ending at t_{i+1}.
Steps before t_0 are taken equal to h_0, so the leading rows are truncated
versions of full rows and H^{-1} A = phi~^{-1} R D holds exactly with
phi~ = N H.
"""

import logging
import math
from dataclasses import dataclass
from fractions import Fraction
from typing import Optional, Sequence, Tuple

import numpy as np
from scipy.linalg import solve_banded

from zerostab_errors import GridError, SingularMatrixError
from zerostab_grid import Grid
from zerostab_method import (
    MethodSpec,
    Normalization,
    bdf_alpha_batch,
    bdf_constant_row,
    deflate_alpha_batch,
    deflate_row,
    ratio_array,
)
from zerostab_serialize import format_float

logger = logging.getLogger(__name__)

INVERSE_BLOCK = 256


def _zeros(shape, exact: bool) -> np.ndarray:
    return np.full(shape, Fraction(0), dtype=object) if exact else np.zeros(shape)


@dataclass(frozen=True, eq=False)
class BandedLowerMatrix:
    """Lower-triangular matrix with ``bandwidth`` subdiagonals stored by rows."""

    bands: np.ndarray
    toeplitz: Optional[Tuple] = None
    name: str = ""

    @property
    def n(self) -> int:
        return self.bands.shape[0]

    @property
    def bandwidth(self) -> int:
        return self.bands.shape[1] - 1

    @property
    def exact(self) -> bool:
        return self.bands.dtype == object

    @classmethod
    def from_band_rows(cls, rows: np.ndarray, name: str = "", toeplitz=None) -> "BandedLowerMatrix":
        """Build from full-length band rows, zeroing entries left of column 0."""
        rows = np.array(rows, dtype=object if rows.dtype == object else float)
        n, width = rows.shape
        b = width - 1
        for i in range(min(b, n)):
            rows[i, : b - i] = 0 * rows[i, b]
        return cls(bands=rows, toeplitz=toeplitz, name=name)

    @classmethod
    def toeplitz_matrix(cls, stencil: Sequence, n: int, name: str = "") -> "BandedLowerMatrix":
        """Lower-triangular Toeplitz matrix; ``stencil`` is lowest-index first, diagonal last."""
        stencil = tuple(stencil)
        exact = any(isinstance(s, Fraction) for s in stencil)
        row = np.array(stencil, dtype=object if exact else float)
        rows = np.tile(row, (n, 1))
        return cls.from_band_rows(rows, name=name, toeplitz=stencil)

    def diagonal(self) -> np.ndarray:
        return self.bands[:, -1]

    def entry(self, i: int, j: int):
        c = j - i + self.bandwidth
        if j > i or c < 0:
            return 0
        return self.bands[i, c]

    def full_row_sums(self) -> np.ndarray:
        """Row sums of the rows that are not truncated by the top-left corner."""
        return np.sum(self.bands[self.bandwidth:], axis=1)

    def matvec(self, x) -> np.ndarray:
        x = np.asarray(x)
        out = _zeros(self.n, self.exact or x.dtype == object)
        b = self.bandwidth
        for d in range(b + 1):
            out[d:] = out[d:] + self.bands[d:, b - d] * x[: self.n - d]
        return out

    def scale_rows(self, factors) -> "BandedLowerMatrix":
        factors = np.asarray(factors)
        return BandedLowerMatrix(bands=self.bands * factors[:, None], name=self.name)

    def matmul(self, other: "BandedLowerMatrix") -> "BandedLowerMatrix":
        if other.n != self.n:
            raise ValueError(f"Dimension mismatch: {self.n} vs {other.n}")
        b1, b2 = self.bandwidth, other.bandwidth
        b = b1 + b2
        n = self.n
        out = _zeros((n, b + 1), self.exact or other.exact)
        for d1 in range(min(b1, n - 1) + 1):
            x = self.bands[:, b1 - d1]
            for d2 in range(b2 + 1):
                y = _zeros(n, other.exact)
                y[d1:] = other.bands[: n - d1, b2 - d2]
                out[:, b - d1 - d2] = out[:, b - d1 - d2] + x * y
        return BandedLowerMatrix(bands=out, name=f"{self.name}*{other.name}")

    def subtract(self, other: "BandedLowerMatrix") -> "BandedLowerMatrix":
        b = max(self.bandwidth, other.bandwidth)
        return BandedLowerMatrix(bands=_pad(self, b) - _pad(other, b), name=f"{self.name}-{other.name}")

    def to_dense(self) -> np.ndarray:
        """Dense copy, for inspection of small matrices."""
        dense = _zeros((self.n, self.n), self.exact)
        for i in range(self.n):
            for c in range(self.bandwidth + 1):
                j = i - self.bandwidth + c
                if j >= 0:
                    dense[i, j] = self.bands[i, c]
        return dense

    def to_triplets(self) -> str:
        """Nonzero entries as "row col value" lines."""
        lines = []
        for i in range(self.n):
            for c in range(self.bandwidth + 1):
                j = i - self.bandwidth + c
                value = self.bands[i, c]
                if j >= 0 and value != 0:
                    text = str(value) if isinstance(value, Fraction) else format_float(value)
                    lines.append(f"{i} {j} {text}")
        return "\n".join(lines) + "\n"


def _pad(M: BandedLowerMatrix, b: int) -> np.ndarray:
    extra = b - M.bandwidth
    if extra == 0:
        return M.bands
    return np.concatenate([_zeros((M.n, extra), M.exact), M.bands], axis=1)


@dataclass(frozen=True, eq=False)
class DiagonalMatrix:
    d: np.ndarray
    name: str = ""

    @property
    def n(self) -> int:
        return len(self.d)

    def inverse(self) -> "DiagonalMatrix":
        if any(x == 0 for x in self.d):
            raise SingularMatrixError(f"Diagonal matrix {self.name} has a zero entry")
        if self.d.dtype == object:
            inv = np.array([1 / x for x in self.d], dtype=object)
        else:
            inv = 1.0 / self.d
        return DiagonalMatrix(d=inv, name=f"{self.name}^-1")

    def inf_norm(self) -> float:
        return max(abs(x) for x in self.d)


def stencil_ratios(grid: Grid, k: int) -> np.ndarray:
    """Ratio vectors (oldest first) for the N rows; steps before t_0 repeat h_0."""
    one = Fraction(1) if grid.exact else 1.0
    padded = np.concatenate([np.array([one] * k, dtype=grid.r.dtype), grid.r])
    idx = np.arange(grid.N)[:, None] + 1 + np.arange(k - 1)[None, :]
    return padded[idx]


def _alpha_rows(spec: MethodSpec, grid: Grid, normalization: Normalization) -> np.ndarray:
    if grid.N < 1:
        raise GridError("Grid has no steps")
    ratios = ratio_array(stencil_ratios(grid, spec.k), spec.k, exact=grid.exact)
    alpha, _ = bdf_alpha_batch(spec.k, ratios, normalization=normalization,
                               unit=Fraction(1) if grid.exact else 1.0)
    return alpha


def assemble_A(spec: MethodSpec, grid: Grid,
               normalization: Normalization = Normalization.CLASSICAL) -> BandedLowerMatrix:
    """Operator of the variable-step alpha rows; bandwidth k."""
    alpha = _alpha_rows(spec, grid, normalization)
    M = BandedLowerMatrix.from_band_rows(alpha, name="A")
    logger.debug(f"Assembled A for {spec.name} on {grid.source}, N={grid.N}")
    return M


def assemble_R(spec: MethodSpec, grid: Grid,
               normalization: Normalization = Normalization.CLASSICAL) -> BandedLowerMatrix:
    """Extraneous operator: deflated rows of A; bandwidth k - 1."""
    gamma = deflate_alpha_batch(_alpha_rows(spec, grid, normalization))
    return BandedLowerMatrix.from_band_rows(gamma, name="R")


def assemble_R_uniform(spec: MethodSpec, N: int, exact: bool = True) -> BandedLowerMatrix:
    """R_{k,N}(1), the Toeplitz extraneous operator of the constant step method."""
    gamma = deflate_row(bdf_constant_row(spec, exact=exact)).gamma
    return BandedLowerMatrix.toeplitz_matrix(gamma, N, name="R(1)")


def assemble_D(N: int, exact: bool = False) -> BandedLowerMatrix:
    """D = N * (bidiagonal -1, 1); its inverse is cumulative summation divided by N."""
    scale = Fraction(N) if exact else float(N)
    return BandedLowerMatrix.toeplitz_matrix((-scale, scale), N, name="D")


def assemble_H(grid: Grid) -> DiagonalMatrix:
    return DiagonalMatrix(d=np.array(grid.h), name="H")


def phi_tilde(grid: Grid) -> DiagonalMatrix:
    """The realised step modulation N H."""
    return DiagonalMatrix(d=grid.N * np.array(grid.h), name="phi~")


def factorization_residual(spec: MethodSpec, grid: Grid,
                           normalization: Normalization = Normalization.CLASSICAL):
    """||H^{-1} A - phi~^{-1} R D||_inf."""
    A = assemble_A(spec, grid, normalization)
    R = assemble_R(spec, grid, normalization)
    D = assemble_D(grid.N, exact=grid.exact)
    h_inv = assemble_H(grid).inverse().d
    phi_inv = phi_tilde(grid).inverse().d

    lhs = A.scale_rows(h_inv)
    rhs = R.matmul(D).scale_rows(phi_inv)
    residual = inf_norm(lhs.subtract(rhs))
    logger.debug(f"Factorization residual for {spec.name}, N={grid.N}: {float(residual):.3e}")
    return residual


def _check_diagonal(M: BandedLowerMatrix):
    diag = M.diagonal()
    if any(x == 0 for x in diag):
        i = next(i for i, x in enumerate(diag) if x == 0)
        raise SingularMatrixError(f"Zero diagonal entry in row {i} of {M.name or 'matrix'}")


def forward_solve(M: BandedLowerMatrix, rhs) -> np.ndarray:
    """Solve M x = rhs by forward substitution; rhs may hold several columns."""
    _check_diagonal(M)
    b, n = M.bandwidth, M.n
    rhs = np.asarray(rhs)

    if not M.exact and rhs.dtype != object:
        ab = np.zeros((b + 1, n))
        for d in range(b + 1):
            ab[d, : n - d] = M.bands[d:, b - d]
        return solve_banded((b, 0), ab, rhs.astype(float))

    x = np.array(rhs, dtype=object)
    for i in range(n):
        acc = x[i]
        for d in range(1, min(b, i) + 1):
            acc = acc - M.bands[i, b - d] * x[i - d]
        x[i] = acc / M.bands[i, b]
    return x


def inf_norm(M: BandedLowerMatrix):
    if M.exact:
        return max(sum((abs(x) for x in row), Fraction(0)) for row in M.bands)
    return float(np.max(np.sum(np.abs(M.bands), axis=1)))


def toeplitz_inverse_column(stencil: Sequence, n: int) -> np.ndarray:
    """First column u of the inverse of a lower-triangular Toeplitz matrix.

    u solves the scalar recursion sum_m s_{b-m} u_{i-m} = [i == 0].
    """
    stencil = list(stencil)
    b = len(stencil) - 1
    lead = stencil[b]
    if lead == 0:
        raise SingularMatrixError("Toeplitz stencil has a zero diagonal")
    exact = isinstance(lead, Fraction)
    u = _zeros(n, exact)
    for i in range(n):
        acc = (Fraction(1) if exact else 1.0) if i == 0 else 0 * lead
        for m in range(1, min(b, i) + 1):
            acc = acc - stencil[b - m] * u[i - m]
        u[i] = acc / lead
    return u


def inverse_inf_norm(M: BandedLowerMatrix):
    """||M^{-1}||_inf (largest absolute row sum of the inverse).

    Toeplitz matrices have Toeplitz inverses, so the norm is the absolute
    sum of the first column. Otherwise the inverse is formed block-column by
    block-column with banded solves, accumulating absolute row sums.
    """
    if M.toeplitz is not None:
        u = toeplitz_inverse_column(M.toeplitz, M.n)
        if M.exact:
            return sum((abs(x) for x in u), Fraction(0))
        return math.fsum(np.abs(u))

    n = M.n
    if M.exact:
        sums = [Fraction(0)] * n
        for j in range(n):
            e = np.array([Fraction(0)] * n, dtype=object)
            e[j] = Fraction(1)
            col = forward_solve(M, e)
            for i in range(j, n):
                sums[i] += abs(col[i])
        return max(sums)

    sums = np.zeros(n)
    for start in range(0, n, INVERSE_BLOCK):
        stop = min(start + INVERSE_BLOCK, n)
        block = np.zeros((n, stop - start))
        block[np.arange(start, stop), np.arange(stop - start)] = 1.0
        sums += np.sum(np.abs(forward_solve(M, block)), axis=1)
    return float(np.max(sums))


def lower_log_norm_inf(M: BandedLowerMatrix):
    """m_inf[M] = min over rows of (diagonal - sum of |off-diagonal|).

    When positive, ||M^{-1}||_inf <= 1 / m_inf[M].
    """
    if M.exact:
        return min(row[-1] - sum((abs(x) for x in row[:-1]), Fraction(0)) for row in M.bands)
    return float(np.min(M.bands[:, -1] - np.sum(np.abs(M.bands[:, :-1]), axis=1)))


def toeplitz_lower_log_norm(stencil: Sequence):
    """m_inf of a Toeplitz operator, attained on any full row."""
    stencil = list(stencil)
    off = stencil[:-1]
    if any(isinstance(s, Fraction) for s in stencil):
        return stencil[-1] - sum((abs(s) for s in off), Fraction(0))
    return stencil[-1] - math.fsum(abs(s) for s in off)
