"""
Recursion experiments: homogeneous runs, boundedness sweeps and quadrature
convergence studies for variable-step BDF methods.
"""

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from fractions import Fraction
from typing import Callable, List, Optional, Sequence, Union

import numpy as np

from zerostab_errors import SingularMatrixError, UsageError
from zerostab_grid import Grid, GridMap, build_grid
from zerostab_method import MethodSpec, Normalization, bdf_alpha_batch, deflate_alpha_batch, ratio_array
from zerostab_serialize import to_csv

logger = logging.getLogger(__name__)

GROWTH_RATIO_LIMIT = 1.05
LOG_FLOOR = 1e-250
DEFAULT_RANDOM_INITS = 10
MIN_SWEEP_SIZES = 4


@dataclass(frozen=True, eq=False)
class RunResult:
    """One run of the homogeneous recursion.

    ``u_amplification`` is max |u_n| over max |u| of the start values; u is
    the scaled difference sequence N (y_{n+1} - y_n).
    """

    N: int
    y: np.ndarray
    u: np.ndarray
    sup_y: float
    sup_u: float
    growth_rate: Optional[float]
    initial_norm: float
    u_amplification: float

    def summary(self) -> dict:
        return {
            "N": self.N,
            "sup_y": self.sup_y,
            "sup_u": self.sup_u,
            "growth_rate": self.growth_rate,
            "initial_norm": self.initial_norm,
            "u_amplification": self.u_amplification,
        }


def _stencil_rows(spec: MethodSpec, grid: Grid, normalization: Normalization):
    k = spec.k
    ratios = ratio_array(grid.stencil_ratios(k), k, exact=grid.exact)
    alpha, beta_k = bdf_alpha_batch(k, ratios, normalization=normalization,
                                    unit=Fraction(1) if grid.exact else 1.0)
    if any(a == 0 for a in alpha[:, -1]):
        raise SingularMatrixError("Vanishing leading coefficient")
    return alpha, beta_k


def _check_init(spec: MethodSpec, init: Sequence) -> np.ndarray:
    if len(init) != spec.k:
        raise UsageError(f"{spec.name} needs {spec.k} start values, got {len(init)}")
    exact = any(isinstance(x, Fraction) for x in init)
    return np.array(list(init), dtype=object if exact else float)


def fit_growth_rate(u: np.ndarray) -> Optional[float]:
    """exp of the least-squares slope of log|u_n| over the second half of the run."""
    n = np.arange(len(u))
    half = len(u) // 2
    mags = np.abs(np.asarray(u[half:], dtype=float))
    keep = mags > LOG_FLOOR
    if np.count_nonzero(keep) < 2:
        return None
    slope, _ = np.polyfit(n[half:][keep], np.log(mags[keep]), 1)
    return float(math.exp(slope))


def _result(spec: MethodSpec, grid: Grid, y: np.ndarray, init: np.ndarray,
            u: Optional[np.ndarray] = None) -> RunResult:
    N = grid.N
    if u is None:
        u = N * (y[1:] - y[:-1])
    u_init = u[: spec.k - 1]
    sup_u = float(max((abs(x) for x in u), default=0.0))
    init_u = float(max((abs(x) for x in u_init), default=0.0))
    if init_u > 0:
        amplification = sup_u / init_u
    else:
        amplification = 0.0 if sup_u == 0 else math.inf
    return RunResult(
        N=N,
        y=y,
        u=u,
        sup_y=float(max(abs(x) for x in y)),
        sup_u=sup_u,
        growth_rate=fit_growth_rate(u),
        initial_norm=float(max(abs(x) for x in init)),
        u_amplification=amplification,
    )


def run_homogeneous(spec: MethodSpec, grid: Grid, init: Sequence,
                    normalization: Normalization = Normalization.CLASSICAL) -> RunResult:
    """Advance sum_j alpha_{j,n} y_{n+j} = 0 from y_0..y_{k-1} across the grid.

    Exact arithmetic is used when the grid carries Fractions.
    """
    k = spec.k
    init = _check_init(spec, init)
    alpha, _ = _stencil_rows(spec, grid, normalization)
    exact = grid.exact or init.dtype == object
    y = np.empty(grid.N + 1, dtype=object if exact else float)
    y[:k] = init
    for n in range(grid.N - k + 1):
        row = alpha[n]
        acc = row[0] * y[n]
        for j in range(1, k):
            acc = acc + row[j] * y[n + j]
        y[n + k] = -acc / row[k]
    result = _result(spec, grid, y, init)
    logger.debug(f"{spec.name} N={grid.N}: sup_y={result.sup_y:.6g}, sup_u={result.sup_u:.6g}")
    return result


def run_factored(spec: MethodSpec, grid: Grid, init: Sequence,
                 normalization: Normalization = Normalization.CLASSICAL) -> RunResult:
    """Run the deflated recursion for u, then integrate y_{n+1} = y_n + u_n / N."""
    k = spec.k
    init = _check_init(spec, init)
    alpha, _ = _stencil_rows(spec, grid, normalization)
    gamma = deflate_alpha_batch(alpha)
    N = grid.N
    exact = grid.exact or init.dtype == object

    u = np.empty(N, dtype=object if exact else float)
    u[: k - 1] = N * (init[1:] - init[:-1])
    for n in range(N - k + 1):
        row = gamma[n]
        acc = 0 * row[0]
        for j in range(k - 1):
            acc = acc + row[j] * u[n + j]
        u[n + k - 1] = -acc / row[k - 1]

    y = np.empty(N + 1, dtype=u.dtype)
    y[0] = init[0]
    for n in range(N):
        y[n + 1] = y[n] + u[n] / N
    return _result(spec, grid, y, init, u=u)


def init_policy(k: int, seed: int = 0, n_random: int = DEFAULT_RANDOM_INITS) -> List[np.ndarray]:
    """Alternating +-1 start values followed by seeded standard normal vectors."""
    rng = np.random.default_rng(seed)
    inits = [np.array([(-1.0) ** j for j in range(k)])]
    inits.extend(rng.standard_normal(k) for _ in range(n_random))
    return inits


GridSource = Union[GridMap, Callable[[int], Grid]]


def _grid_factory(source: GridSource) -> Callable[[int], Grid]:
    if isinstance(source, GridMap):
        return lambda N: build_grid(source, N)
    return source


@dataclass(frozen=True)
class SweepPoint:
    N: int
    worst: RunResult
    amplification: float


@dataclass(frozen=True)
class SweepResult:
    method: str
    points: List[SweepPoint]
    verdict: str
    max_successive_ratio: float
    growth_limit: float = GROWTH_RATIO_LIMIT

    def rows(self) -> List[tuple]:
        return [(p.N, p.worst.sup_y, p.worst.sup_u, p.worst.growth_rate, p.amplification)
                for p in self.points]

    def to_csv(self) -> str:
        return to_csv(["N", "sup_y", "sup_u", "growth_rate", "u_amplification"], self.rows())

    def to_dict(self) -> dict:
        return {
            "method": self.method,
            "verdict": self.verdict,
            "heuristic": True,
            "growth_limit": self.growth_limit,
            "max_successive_ratio": self.max_successive_ratio,
            "runs": [p.worst.summary() | {"u_amplification": p.amplification} for p in self.points],
        }


def boundedness_sweep(spec: MethodSpec, grids: GridSource, Ns: Sequence[int], seed: int = 0,
                      n_random: int = DEFAULT_RANDOM_INITS, jobs: int = 1,
                      normalization: Normalization = Normalization.CLASSICAL) -> SweepResult:
    """Run every start vector of the init policy for each N and judge boundedness.

    The verdict is UNSTABLE when the worst u-amplification grows by more than
    GROWTH_RATIO_LIMIT between consecutive grid sizes.
    """
    Ns = list(Ns)
    if len(Ns) < MIN_SWEEP_SIZES:
        raise UsageError(f"A sweep needs at least {MIN_SWEEP_SIZES} grid sizes, got {len(Ns)}")
    if any(b <= a for a, b in zip(Ns, Ns[1:])):
        raise UsageError("Sweep grid sizes must be strictly increasing")
    factory = _grid_factory(grids)
    inits = init_policy(spec.k, seed=seed, n_random=n_random)

    def run_size(N: int) -> SweepPoint:
        grid = factory(N)
        runs = [run_homogeneous(spec, grid, init, normalization) for init in inits]
        worst = max(runs, key=lambda run: run.u_amplification)
        return SweepPoint(N=N, worst=worst, amplification=worst.u_amplification)

    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            points = list(pool.map(run_size, Ns))
    else:
        points = [run_size(N) for N in Ns]

    ratios = [b.amplification / a.amplification for a, b in zip(points, points[1:])
              if a.amplification > 0]
    max_ratio = max(ratios, default=1.0)
    verdict = "UNSTABLE" if max_ratio > GROWTH_RATIO_LIMIT else "STABLE"
    logger.info(f"{spec.name} sweep over N={Ns}: {verdict} (max successive ratio {max_ratio:.4g})")
    return SweepResult(method=spec.name, points=points, verdict=verdict, max_successive_ratio=max_ratio)


@dataclass(frozen=True)
class ConvergenceResult:
    Ns: List[int]
    errors: List[float]
    fitted_order: Optional[float]

    def rows(self) -> List[tuple]:
        return list(zip(self.Ns, self.errors))

    def to_csv(self) -> str:
        return to_csv(["N", "error"], self.rows())

    def to_dict(self) -> dict:
        return {"Ns": self.Ns, "errors": self.errors, "fitted_order": self.fitted_order}


def integrate_quadrature(spec: MethodSpec, grid: Grid, f: Callable, antiderivative: Callable,
                         normalization: Normalization = Normalization.CLASSICAL) -> np.ndarray:
    """Solve y' = f(t) with exact start values y_j = F(t_j), j < k."""
    k = spec.k
    alpha, beta_k = _stencil_rows(spec, grid, normalization)
    t = np.asarray(grid.t, dtype=float)
    h = np.asarray(grid.h, dtype=float)
    alpha = np.asarray(alpha, dtype=float)
    beta_k = np.asarray(beta_k, dtype=float)
    y = np.empty(grid.N + 1)
    y[:k] = [antiderivative(x) for x in t[:k]]
    for n in range(grid.N - k + 1):
        row = alpha[n]
        rhs = h[n + k - 1] * beta_k[n] * f(t[n + k]) - math.fsum(row[j] * y[n + j] for j in range(k))
        y[n + k] = rhs / row[k]
    return y


def quadrature_convergence(spec: MethodSpec, grids: GridSource, f: Callable, antiderivative: Callable,
                           Ns: Sequence[int],
                           normalization: Normalization = Normalization.CLASSICAL) -> ConvergenceResult:
    """Errors |y_N - F(1)| over Ns and the observed order from a log-log fit."""
    factory = _grid_factory(grids)
    exact_value = antiderivative(1.0)
    Ns = list(Ns)
    errors = []
    for N in Ns:
        y = integrate_quadrature(spec, factory(N), f, antiderivative, normalization)
        errors.append(abs(float(y[-1]) - exact_value))

    usable = [(N, e) for N, e in zip(Ns, errors) if e > 0]
    order = None
    if len(usable) >= 2:
        slope, _ = np.polyfit(np.log([N for N, _ in usable]), np.log([e for _, e in usable]), 1)
        order = float(-slope)
    logger.info(f"{spec.name} quadrature errors {errors}, observed order {order}")
    return ConvergenceResult(Ns=Ns, errors=errors, fitted_order=order)
