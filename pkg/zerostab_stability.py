"""
Stability certificates for multistep methods on smooth grids.

The extraneous operator of a k-step method on a smooth grid splits as
R = T_0 + sum_j V_j T_j + O(V^2), where T_0 is the lower-triangular Toeplitz
operator of the constant step deflated row and T_j its derivative with
respect to the j-th step increment (v_1 is the newest). Bounds on
S_j = ||T_j T_0^{-1}||_inf turn into a largest admissible increment w_max
and a minimal step count N* = ceil(||phi'/phi||_inf / w_max).
"""

import logging
import math
from dataclasses import dataclass
from fractions import Fraction
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np
import sympy
from pydantic import BaseModel, Field
from scipy.optimize import bisect

from zerostab_errors import (
    InvalidMethodError,
    RootFindingError,
    SingularMapError,
    UnstableMethodError,
)
from zerostab_grid import Grid
from zerostab_method import (
    CoefficientRow,
    MethodSpec,
    Normalization,
    bdf_alpha_batch,
    bdf_constant_row,
    deflate_row,
)
from zerostab_operators import toeplitz_inverse_column, toeplitz_lower_log_norm

logger = logging.getLogger(__name__)

ROOT_RESIDUAL_TOL = 1e-12
SERIES_TAIL_TOL = 1e-12
C0_TRUNCATION = 1e-16
FD_STEP = 1e-5
BISECT_XTOL = 1e-14
MAX_SERIES_TERMS = 2_000_000
ABERTH_MAX_ITER = 500

BDF3_RAMP_UP_INTERVAL = (0.75, 1 + 2 / 19)
BDF3_CLASSICAL_INTERVAL = (0.836, 1.127)


# Roots of the extraneous polynomial

@dataclass(frozen=True)
class RootResult:
    roots: Tuple[complex, ...]
    q: float
    residual: float
    max_root_simple: bool
    method: str

    @property
    def strongly_stable(self) -> bool:
        return self.q < 1


def _residual(coeffs: np.ndarray, roots: np.ndarray) -> float:
    """Max of |p(z)| scaled by sum |c_j||z|^j (coefficients lowest degree first)."""
    if roots.size == 0:
        return 0.0
    values = np.abs(np.polynomial.polynomial.polyval(roots, coeffs))
    scale = np.polynomial.polynomial.polyval(np.abs(roots), np.abs(coeffs))
    return float(np.max(values / np.maximum(scale, 1.0)))


def _newton_polish(coeffs: np.ndarray, roots: np.ndarray, iterations: int = 3) -> np.ndarray:
    p = np.polynomial.Polynomial(coeffs)
    dp = p.deriv()
    for _ in range(iterations):
        d = dp(roots)
        safe = np.abs(d) > 0
        candidate = roots.copy()
        candidate[safe] = roots[safe] - p(roots[safe]) / d[safe]
        better = np.abs(p(candidate)) < np.abs(p(roots))
        roots = np.where(better, candidate, roots)
    return roots


def aberth_roots(coeffs: Sequence, tol: float = 1e-15, max_iter: int = ABERTH_MAX_ITER) -> np.ndarray:
    """Aberth-Ehrlich simultaneous iteration; coefficients lowest degree first."""
    c = np.asarray(coeffs, dtype=complex)[::-1]
    n = len(c) - 1
    if n < 1:
        return np.array([], dtype=complex)
    deriv = c[:-1] * np.arange(n, 0, -1)
    radius = 1.0 + float(np.max(np.abs(c[1:] / c[0])))
    angles = 2 * math.pi * np.arange(n) / n + 0.4
    x = radius * np.exp(1j * angles)

    for _ in range(max_iter):
        converged = True
        for i in range(n):
            pv = np.polyval(c, x[i])
            dpv = np.polyval(deriv, x[i])
            others = np.delete(x, i)
            denom = dpv - pv * np.sum(1.0 / (x[i] - others))
            if denom == 0:
                continue
            delta = pv / denom
            if abs(delta) > tol * (1 + abs(x[i])):
                converged = False
            x[i] -= delta
        if converged:
            return x
    raise RootFindingError(f"Aberth iteration did not converge in {max_iter} iterations")


def _max_root_simple(roots: np.ndarray, q: float) -> bool:
    top = roots[np.abs(np.abs(roots) - q) <= 1e-8 * max(q, 1.0)]
    if len(top) < 2:
        return True
    gaps = np.abs(top[:, None] - top[None, :]) + np.eye(len(top))
    return bool(np.min(gaps) > 1e-6)


def extraneous_roots(gamma: Sequence) -> RootResult:
    """Roots of rho_R(zeta) = sum_j gamma_j zeta^j.

    Companion matrix eigenvalues with Newton polishing; on failure the
    Aberth iteration is run from a fixed start before giving up.
    """
    coeffs = np.array([float(g) for g in gamma])
    if coeffs[-1] == 0:
        raise RootFindingError("Leading coefficient of the extraneous polynomial vanishes")
    if len(coeffs) == 1:
        return RootResult(roots=(), q=0.0, residual=0.0, max_root_simple=True, method="none")

    roots = _newton_polish(coeffs, np.polynomial.polynomial.polyroots(coeffs).astype(complex))
    method = "companion"
    residual = _residual(coeffs, roots)
    if residual > ROOT_RESIDUAL_TOL:
        logger.warning(f"Companion roots residual {residual:.3e}; restarting with Aberth iteration")
        roots = _newton_polish(coeffs, aberth_roots(coeffs))
        method = "aberth"
        residual = _residual(coeffs, roots)
        if residual > ROOT_RESIDUAL_TOL:
            raise RootFindingError(f"Root residual {residual:.3e} exceeds {ROOT_RESIDUAL_TOL:.0e}")

    q = float(np.max(np.abs(roots)))
    roots = roots[np.lexsort((roots.imag, -np.abs(roots)))]
    return RootResult(
        roots=tuple(complex(z) for z in roots),
        q=q,
        residual=residual,
        max_root_simple=_max_root_simple(roots, q),
        method=method,
    )


def constant_deflated_row(spec: MethodSpec, exact: bool = True) -> Tuple:
    return deflate_row(bdf_constant_row(spec, exact=exact)).gamma


def extraneous_root_radius(spec: MethodSpec) -> RootResult:
    result = extraneous_roots(constant_deflated_row(spec))
    logger.debug(f"{spec.name}: extraneous root radius q={result.q:.15g}")
    return result


# Inverse norm of the constant step extraneous operator

@dataclass(frozen=True)
class C0Result:
    c0: float
    geometric_bound: float
    K: float
    q: float
    terms: int
    max_root_simple: bool


def extraneous_sequence(gamma: Sequence, terms: Optional[int] = None, q: Optional[float] = None) -> np.ndarray:
    """u with u_1 = 1 and sum_j delta_j u_{n+j} = 0, delta = gamma / gamma_{k-1}.

    With ``terms`` unset the sequence is continued until |u_n| falls below
    the truncation level on a full window of k - 1 values.
    """
    gamma = [float(g) for g in gamma]
    lead = gamma[-1]
    b = len(gamma) - 1
    stencil = [g / lead for g in gamma]
    if terms is not None:
        return toeplitz_inverse_column(stencil, terms)

    if q is not None and q >= 1:
        raise UnstableMethodError(f"Extraneous root radius q={q:.6g} >= 1; the sequence does not decay")
    u: List[float] = [1.0]
    window = max(b, 1)
    while True:
        n = len(u)
        acc = 0.0
        for m in range(1, min(b, n) + 1):
            acc -= stencil[b - m] * u[n - m]
        u.append(acc)
        if n >= 8 and max(abs(x) for x in u[-window:]) < C0_TRUNCATION:
            break
        if n >= MAX_SERIES_TERMS:
            raise RootFindingError("Extraneous sequence did not decay")
    return np.array(u)


def c0_from_gamma(gamma: Sequence, roots: Optional[RootResult] = None,
                  N_probe: Optional[int] = None) -> C0Result:
    roots = roots or extraneous_roots(gamma)
    q = roots.q
    if q >= 1:
        raise UnstableMethodError(
            f"Method is not strongly stable (extraneous root radius q={q:.6g}); C0 is not finite"
        )
    lead = float(gamma[-1])
    u = extraneous_sequence(gamma, terms=N_probe, q=q)
    c0 = math.fsum(np.abs(u)) / lead
    if q == 0:
        return C0Result(c0=c0, geometric_bound=c0, K=float(np.max(np.abs(u))), q=q,
                        terms=len(u), max_root_simple=True)

    n = np.arange(1, len(u) + 1)
    significant = np.abs(u) > 0
    K = float(np.max(np.abs(u[significant]) * np.exp(-n[significant] * math.log(q))))
    bound = K * q / ((1 - q) * lead)
    return C0Result(c0=c0, geometric_bound=bound, K=K, q=q, terms=len(u),
                    max_root_simple=roots.max_root_simple)


def c0_constant(spec: MethodSpec, N_probe: Optional[int] = None) -> C0Result:
    """||R_{k,N}(1)^{-1}||_inf as N grows, and the explicit geometric bound K q/((1-q) alpha_k)."""
    gamma = constant_deflated_row(spec)
    result = c0_from_gamma(gamma, extraneous_roots(gamma), N_probe=N_probe)
    logger.info(f"{spec.name}: C0={result.c0:.15g}, bound={result.geometric_bound:.15g}")
    return result


# Perturbation stencils

@dataclass(frozen=True)
class PerturbationSet:
    """Toeplitz stencils T_0..T_{k-1}, lowest index first, diagonal last.

    ``T[j]`` for j >= 1 is the derivative of the deflated row with respect to
    v_j = r - 1 of the j-th newest step ratio. ``quadratic`` is the
    second-order term of a two-step row.
    """

    T: Tuple[Tuple, ...]
    quadratic: Optional[Tuple] = None
    exact: bool = True
    method: str = "symbolic"

    @property
    def k(self) -> int:
        return len(self.T)

    def slope(self) -> Tuple:
        """Stencil of T_1 + ... + T_{k-1} (all increments equal)."""
        width = len(self.T[0])
        zero = Fraction(0) if self.exact else 0.0
        return tuple(sum((t[m] for t in self.T[1:]), zero) for m in range(width))

    def as_float(self) -> "PerturbationSet":
        return PerturbationSet(
            T=tuple(tuple(float(x) for x in t) for t in self.T),
            quadratic=None if self.quadratic is None else tuple(float(x) for x in self.quadratic),
            exact=False,
            method=self.method,
        )

    def to_dict(self) -> dict:
        out = {"T": [list(t) for t in self.T]}
        if self.quadratic is not None:
            out["quadratic"] = list(self.quadratic)
        return out


def _deflated_symbolic(k: int, ratios: List, normalization: Normalization) -> List:
    alpha, _ = bdf_alpha_batch(k, np.array([ratios], dtype=object),
                               normalization=normalization, unit=sympy.Integer(1))
    alpha = list(alpha[0])
    return [sympy.Add(*alpha[j + 1:]) for j in range(k)]


def _rational(expr) -> Fraction:
    # stencil entries are rational functions of the ratios evaluated at rationals
    value = sympy.cancel(sympy.together(expr))
    if not value.is_Rational:
        raise InvalidMethodError(f"Expected a rational stencil entry, got {value}")
    return Fraction(int(value.p), int(value.q))


def _deflated_float(k: int, ratios: List[float], normalization: Normalization) -> np.ndarray:
    alpha, _ = bdf_alpha_batch(k, np.array([ratios], dtype=float), normalization=normalization)
    return np.cumsum(alpha[0, :0:-1])[::-1]


def perturbation_matrices(spec: MethodSpec, method: str = "symbolic",
                          normalization: Normalization = Normalization.CLASSICAL) -> PerturbationSet:
    """Stencils of T_0 and of the derivatives T_j at unit ratios.

    ``method="symbolic"`` differentiates the rational coefficient functions
    exactly; ``method="finite-difference"`` uses central differences with one
    Richardson extrapolation level.
    """
    k = spec.k
    if k < 2:
        raise InvalidMethodError("Perturbation stencils need a method with k >= 2")
    T0 = constant_deflated_row(spec, exact=True)

    if method == "symbolic":
        x = sympy.Symbol("x")
        Ts = [T0]
        quadratic = None
        for j in range(1, k):
            ratios = [sympy.Integer(1)] * (k - 1)
            ratios[k - 1 - j] = 1 + x
            gamma = _deflated_symbolic(k, ratios, normalization)
            Ts.append(tuple(_rational(sympy.diff(g, x).subs(x, 0)) for g in gamma))
            if k == 2:
                quadratic = tuple(_rational(sympy.diff(g, x, 2).subs(x, 0) / 2) for g in gamma)
        pert = PerturbationSet(T=tuple(Ts), quadratic=quadratic, exact=True, method=method)

    elif method == "finite-difference":
        def central(j: int, step: float) -> np.ndarray:
            up, down = [1.0] * (k - 1), [1.0] * (k - 1)
            up[k - 1 - j] += step
            down[k - 1 - j] -= step
            return (_deflated_float(k, up, normalization) - _deflated_float(k, down, normalization)) / (2 * step)

        Ts = [tuple(float(g) for g in T0)]
        for j in range(1, k):
            coarse, fine = central(j, FD_STEP), central(j, FD_STEP / 2)
            Ts.append(tuple((4 * fine - coarse) / 3))
        quadratic = None
        if k == 2:
            base = _deflated_float(k, [1.0], normalization)
            step = 1e-3
            second = (_deflated_float(k, [1 + step], normalization) - 2 * base
                      + _deflated_float(k, [1 - step], normalization)) / step ** 2
            quadratic = tuple(second / 2)
        pert = PerturbationSet(T=tuple(Ts), quadratic=quadratic, exact=False, method=method)

    else:
        raise InvalidMethodError(f"Unknown differentiation method {method!r}")

    logger.debug(f"{spec.name} perturbation stencils: {pert.to_dict()}")
    return pert


# Toeplitz symbol norms

def series_inverse(stencil: Sequence, q: float, tol: float = SERIES_TAIL_TOL) -> np.ndarray:
    """Power series of 1/T(z) for the symbol T(z) = sum_m s_{b-m} z^m, up to a negligible tail."""
    if q >= 1:
        raise UnstableMethodError(f"Symbol has a root inside the unit disk (q={q:.6g})")
    terms = 64
    while True:
        u = toeplitz_inverse_column([float(s) for s in stencil], terms)
        window = max(len(stencil) - 1, 1)
        tail = float(np.max(np.abs(u[-window:]))) * window / (1 - q)
        if tail < tol * 1e-2 or terms >= MAX_SERIES_TERMS:
            return u
        terms *= 2


def symbol_product_norm(stencil: Sequence, base: Sequence, q: float,
                        tol: float = SERIES_TAIL_TOL) -> float:
    """||T T_base^{-1}||_inf in the limit N -> infinity: the l1 norm of the series T(z)/T_base(z)."""
    u = series_inverse(base, q, tol)
    numer = np.array([float(s) for s in stencil][::-1])
    product = np.convolve(numer, u)[: len(u)]
    return math.fsum(np.abs(product))


# Thresholds

@dataclass(frozen=True)
class RampUp:
    """m_inf[T_0 + v (T_1 + ... + T_{k-1}) + v^2 Q] near v = 0.

    Q is the second-order term of a two-step row and is zero for k >= 3, where
    m_inf is piecewise linear. With Q present v_max can be irrational, and is
    then kept as a sympy number (sqrt(2) for BDF2).
    """

    intercept: Fraction
    slope: Fraction
    v_max: Optional[Any]
    n_star: Optional[int]
    curvature: Fraction = Fraction(0)

    def to_dict(self) -> dict:
        out = {
            "m_inf_intercept": float(self.intercept),
            "m_inf_slope": float(self.slope),
            "v_max": None if self.v_max is None else float(self.v_max),
            "v_max_exact": None if self.v_max is None else str(self.v_max),
            "n_star": self.n_star,
        }
        if self.curvature:
            out["m_inf_curvature"] = float(self.curvature)
        return out


def _entry_polynomials(pert: PerturbationSet) -> List[Tuple[Fraction, Fraction, Fraction]]:
    base = [Fraction(x) for x in pert.T[0]]
    slope = [Fraction(x) for x in pert.slope()]
    quad = [Fraction(x) for x in pert.quadratic] if pert.quadratic is not None else [Fraction(0)] * len(base)
    return list(zip(base, slope, quad))


def ramp_up_log_norm(pert: PerturbationSet, v) -> Any:
    """m_inf[T_0 + v (T_1 + ... + T_{k-1}) + v^2 Q] for a common increment v."""
    quad = pert.quadratic if pert.quadratic is not None else (0,) * len(pert.T[0])
    entries = [b + v * s + v * v * c for b, s, c in zip(pert.T[0], pert.slope(), quad)]
    return toeplitz_lower_log_norm(entries)


def _sign(*values) -> int:
    for x in values:
        if x:
            return 1 if x > 0 else -1
    return 0


def _linear_root(polys, m_at) -> Optional[Fraction]:
    """Walk the linear pieces of m_inf exactly; breaks sit where off-diagonal entries vanish."""
    breaks = sorted({-b / s for b, s, _ in polys[:-1] if s != 0 and -b / s > 0})
    lo = Fraction(0)
    for hi in breaks + [None]:
        point = lo + 1 if hi is None else (lo + hi) / 2
        a = (m_at(point) - m_at(lo)) / (point - lo)
        if a < 0:
            root = lo - m_at(lo) / a
            if hi is None or root <= hi:
                return root
        lo = hi if hi is not None else lo
    return None


def _quadratic_root(polys) -> Optional[Any]:
    """Smallest positive zero of m_inf when the entries are quadratic in v."""
    v = sympy.Symbol("v", positive=True)
    entries = [sympy.Rational(b.numerator, b.denominator)
               + sympy.Rational(s.numerator, s.denominator) * v
               + sympy.Rational(c.numerator, c.denominator) * v ** 2 for b, s, c in polys]
    diag, off = entries[-1], [e for e in entries[:-1] if sympy.expand(e) != 0]

    breaks = sorted({r for e in off for r in sympy.solve(e, v)}, key=float)
    lo = sympy.Integer(0)
    for hi in breaks + [None]:
        point = lo + 1 if hi is None else (lo + hi) / 2
        m = sympy.expand(diag - sum(sympy.sign(e.subs(v, point)) * e for e in off))
        if m == 0:
            return lo
        roots = [r for r in sympy.solve(m, v) if bool(r > lo) and (hi is None or bool(r <= hi))]
        if roots:
            root = min(roots, key=float)
            return Fraction(int(root.p), int(root.q)) if root.is_Rational else root
        lo = hi
    return None


def ramp_up_threshold(pert: PerturbationSet, regularity=None) -> RampUp:
    """Largest v > 0 keeping the ramp-up log norm positive, and N* = ceil(regularity / v_max).

    Without a quadratic term m_inf is piecewise linear in v and the pieces are
    walked in rational arithmetic; with one, each piece is solved with sympy.
    """
    polys = _entry_polynomials(pert)
    exact_pert = PerturbationSet(
        T=tuple(tuple(Fraction(x) for x in t) for t in pert.T),
        quadratic=None if pert.quadratic is None else tuple(Fraction(x) for x in pert.quadratic),
    )

    def m_at(v: Fraction) -> Fraction:
        return ramp_up_log_norm(exact_pert, v)

    m0 = m_at(Fraction(0))
    first_slope = polys[-1][1]
    curvature = polys[-1][2]
    for b, s, c in polys[:-1]:
        sign = _sign(b, s, c)
        first_slope -= sign * s
        curvature -= sign * c

    if m0 <= 0:
        v_max = Fraction(0)
    elif pert.quadratic is None:
        v_max = _linear_root(polys, m_at)
    else:
        v_max = _quadratic_root(polys)

    n_star = None
    if regularity is not None and math.isfinite(regularity):
        if v_max is None:
            n_star = 0
        elif v_max > 0:
            if isinstance(v_max, Fraction):
                n_star = math.ceil(Fraction(regularity) / v_max)
            else:
                n_star = math.ceil(regularity / float(v_max))
    return RampUp(intercept=m0, slope=first_slope, v_max=v_max, n_star=n_star, curvature=curvature)


def admissible_w(s_terms: Sequence[float]) -> float:
    """Largest w with sum_i s_i w^(i+1) <= 1 (s_terms[i] multiplies w^(i+1))."""
    s_terms = [float(s) for s in s_terms]
    if not any(s > 0 for s in s_terms):
        return math.inf

    def g(w: float) -> float:
        return math.fsum(s * w ** (i + 1) for i, s in enumerate(s_terms)) - 1.0

    upper = 1.0
    while g(upper) < 0:
        upper *= 2
    if g(upper) == 0:
        return upper
    return bisect(g, 0.0, upper, xtol=BISECT_XTOL, rtol=4 * np.finfo(float).eps)


class StabilityReport(BaseModel):
    method: str
    k: int
    q: float
    roots: List[List[float]]
    root_residual: float
    max_root_simple: bool
    c0: float
    geometric_bound: float = Field(serialization_alias="theorem2_bound")
    K: float
    m_inf: Dict[str, Any]
    s_norms: List[float]
    s_quadratic: Optional[float] = None
    w_max: float
    w_max_linear: float
    regularity: float
    n_star: Optional[int]
    N: Optional[int] = None
    w: Optional[float] = None
    c_phi_bound: Optional[float] = None
    ramp_up: Optional[Dict[str, Any]] = None
    comparison: Optional[Dict[str, Any]] = None
    verdict: Dict[str, Any]


def c_phi_bound(c0: float, s_terms: Sequence[float], w: float) -> Optional[float]:
    """C0 / (1 - sum_i s_i w^(i+1)), or None when the denominator is not positive."""
    denom = 1.0 - math.fsum(float(s) * w ** (i + 1) for i, s in enumerate(s_terms))
    if denom <= 0:
        return None
    return c0 / denom


def _s_terms(pert: PerturbationSet, s_norms: List[float], s_quadratic: Optional[float],
             include_quadratic: bool) -> List[float]:
    if pert.k == 2 and include_quadratic and s_quadratic is not None:
        return [s_norms[0], s_quadratic]
    return [math.fsum(s_norms)]


def stability_threshold(spec: MethodSpec, pert: Optional[PerturbationSet], regularity: float,
                        N: Optional[int] = None, include_quadratic: bool = True) -> StabilityReport:
    """Certificate for BDF-k on grids with ||phi'/phi||_inf = regularity.

    w_max solves S_1 w + S_2 w^2 = 1 for two-step methods (quadratic term
    included) and w sum_j S_j = 1 otherwise. N* = ceil(regularity / w_max).
    With ``N`` given, C_phi is evaluated at the model increment w = regularity / N.
    """
    if regularity < 0 or math.isnan(regularity):
        raise SingularMapError(f"Regularity must be non-negative, got {regularity}")
    if math.isinf(regularity):
        raise SingularMapError("Grid map has unbounded phi'/phi; no step count certifies stability")

    gamma = constant_deflated_row(spec)
    roots = extraneous_roots(gamma)
    if not roots.strongly_stable:
        raise UnstableMethodError(f"{spec.name} is not strongly stable (q={roots.q:.6g})")
    c0 = c0_from_gamma(gamma, roots)

    m_inf: Dict[str, Any] = {"T0": float(toeplitz_lower_log_norm(gamma)),
                             "T0_exact": str(toeplitz_lower_log_norm(gamma))}
    s_norms: List[float] = []
    s_quadratic = None
    ramp = None
    if spec.k >= 2:
        pert = pert or perturbation_matrices(spec)
        s_norms = [symbol_product_norm(t, pert.T[0], roots.q) for t in pert.T[1:]]
        if pert.quadratic is not None:
            s_quadratic = symbol_product_norm(pert.quadratic, pert.T[0], roots.q)
        ramp = ramp_up_threshold(pert, regularity)
        m_inf["ramp_up_intercept"] = float(ramp.intercept)
        m_inf["ramp_up_slope"] = float(ramp.slope)

    w_max_linear = 1.0 / math.fsum(s_norms) if s_norms and math.fsum(s_norms) > 0 else math.inf
    terms = _s_terms(pert, s_norms, s_quadratic, include_quadratic) if s_norms else []
    w_max = admissible_w(terms) if terms else math.inf
    n_star = 0 if regularity == 0 or math.isinf(w_max) else math.ceil(regularity / w_max)

    w = None
    c_phi = None
    if N is not None:
        w = regularity / N
        c_phi = c_phi_bound(c0.c0, terms, w) if terms else c0.c0

    comparison = None
    if spec.k == 3:
        comparison = {
            "ramp_up_ratio_interval": list(BDF3_RAMP_UP_INTERVAL),
            "classical_ratio_interval": list(BDF3_CLASSICAL_INTERVAL),
        }

    verdict = {
        "strongly_stable": True,
        "log_norm_positive": m_inf["T0"] > 0,
        "certified": None if N is None else bool(N > n_star and c_phi is not None),
    }
    report = StabilityReport(
        method=spec.name,
        k=spec.k,
        q=roots.q,
        roots=[[z.real, z.imag] for z in roots.roots],
        root_residual=roots.residual,
        max_root_simple=roots.max_root_simple,
        c0=c0.c0,
        geometric_bound=c0.geometric_bound,
        K=c0.K,
        m_inf=m_inf,
        s_norms=s_norms,
        s_quadratic=s_quadratic,
        w_max=w_max,
        w_max_linear=w_max_linear,
        regularity=float(regularity),
        n_star=n_star,
        N=N,
        w=w,
        c_phi_bound=c_phi,
        ramp_up=None if ramp is None else ramp.to_dict(),
        comparison=comparison,
        verdict=verdict,
    )
    logger.info(f"{spec.name}: w_max={w_max:.6g}, N*={n_star} for regularity {regularity:.6g}")
    return report


@dataclass(frozen=True)
class GridCertificate:
    w: float
    w_max: float
    admissible: bool
    c_phi_bound: Optional[float]

    def to_dict(self) -> dict:
        return {"w": self.w, "w_max": self.w_max, "admissible": self.admissible,
                "c_phi_bound": self.c_phi_bound}


def certify_grid(spec: MethodSpec, grid: Grid, pert: Optional[PerturbationSet] = None,
                 include_quadratic: bool = True) -> GridCertificate:
    """C_phi evaluated at the realised largest increment w = max |v_n| of ``grid``."""
    gamma = constant_deflated_row(spec)
    roots = extraneous_roots(gamma)
    c0 = c0_from_gamma(gamma, roots)
    w = grid.max_abs_v()
    if spec.k < 2:
        return GridCertificate(w=w, w_max=math.inf, admissible=True, c_phi_bound=c0.c0)

    pert = pert or perturbation_matrices(spec)
    s_norms = [symbol_product_norm(t, pert.T[0], roots.q) for t in pert.T[1:]]
    s_quadratic = None
    if pert.quadratic is not None:
        s_quadratic = symbol_product_norm(pert.quadratic, pert.T[0], roots.q)
    terms = _s_terms(pert, s_norms, s_quadratic, include_quadratic)
    w_max = admissible_w(terms)
    bound = c_phi_bound(c0.c0, terms, w)
    return GridCertificate(w=w, w_max=w_max, admissible=w < w_max, c_phi_bound=bound)


# Two-step closed forms

def bdf2_amplification(r: float) -> float:
    """One-step amplification r^2 / (1 + 2r) of the two-step extraneous recursion."""
    return r * r / (1 + 2 * r)


def bdf2_ratio_log_norm(r: float) -> float:
    """m_inf of the two-step extraneous operator at constant ratio r."""
    return (1 + 2 * r - r * r) / 2


def bdf2_exact_ratio_bound(regularity: Optional[float] = None) -> dict:
    """Window 0 < r <= 1 + sqrt(2) of diagonal dominance, and N* = regularity / sqrt(2)."""
    r_max = 1 + math.sqrt(2)
    out = {
        "ratio_window": [0.0, r_max],
        "r_max": r_max,
        "v_max": r_max - 1,
        "amplification_at_r_max": bdf2_amplification(r_max),
    }
    if regularity is not None:
        out["n_star"] = regularity / math.sqrt(2)
    return out


def analyze_alpha_row(alpha: Sequence) -> dict:
    """Root radius and C0 for an arbitrary preconsistent constant step row."""
    row = CoefficientRow(alpha=tuple(alpha), beta=tuple(0 * a for a in alpha), ratios=())
    gamma = deflate_row(row).gamma
    roots = extraneous_roots(gamma)
    out = {
        "alpha": list(alpha),
        "gamma": list(gamma),
        "q": roots.q,
        "roots": [[z.real, z.imag] for z in roots.roots],
        "root_residual": roots.residual,
        "strongly_stable": roots.strongly_stable,
    }
    if not roots.strongly_stable:
        raise UnstableMethodError(
            f"Row is not strongly stable: extraneous root radius q={roots.q:.15g}"
        )
    c0 = c0_from_gamma(gamma, roots)
    out.update({"c0": c0.c0, "theorem2_bound": c0.geometric_bound, "K": c0.K,
                "m_inf": float(toeplitz_lower_log_norm(gamma))})
    return out
