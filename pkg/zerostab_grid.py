"""
Smooth nonuniform grids.

A grid map Phi sends the uniform grid tau_n = n/N to t_n = Phi(tau_n). Its
derivative phi is the step size modulation, and the regularity of the map is
sup |phi'/phi|. Grids can also be given directly by a step sequence or
generated adaptively by a digital-filter step size controller.
"""

import logging
import math
from dataclasses import dataclass, field
from enum import Enum
from fractions import Fraction
from typing import Callable, Dict, List, Optional, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field
from scipy.optimize import minimize_scalar

from zerostab_errors import ControllerError, GridError, UsageError
from zerostab_serialize import to_csv

logger = logging.getLogger(__name__)

ENDPOINT_TOL = 1e-14
MIN_STEP = 1e-12
MAX_CONTROLLER_STEPS = 10_000_000
DEFAULT_SAMPLING = 10_000


class MapFamily(str, Enum):
    IDENTITY = "identity"
    EXP = "exp"
    POWER = "power"
    SIGMOID = "sigmoid"
    CUSTOM = "custom"


@dataclass(frozen=True)
class GridMap:
    """Base class for deformation maps of [0, 1] onto itself."""

    family = MapFamily.CUSTOM

    def phi_map(self, tau):
        raise NotImplementedError

    def density(self, tau):
        raise NotImplementedError

    def log_derivative(self, tau):
        """phi'/phi, or None when the family has no analytic derivative."""
        return None

    @property
    def constant_log_derivative(self) -> Optional[float]:
        return None

    @property
    def singular(self) -> bool:
        return False

    def params(self) -> Dict[str, float]:
        return {}

    @property
    def label(self) -> str:
        params = ",".join(f"{key}={value:g}" for key, value in self.params().items())
        return f"{self.family.value}:{params}" if params else self.family.value

    def model_steps(self, N: int) -> np.ndarray:
        """Midpoint model h_n ~ phi(tau_{n+1/2}) / N."""
        tau = (np.arange(N) + 0.5) / N
        return self.density(tau) / N


@dataclass(frozen=True)
class IdentityMap(GridMap):
    family = MapFamily.IDENTITY

    def phi_map(self, tau):
        return np.asarray(tau, dtype=float)

    def density(self, tau):
        return np.ones_like(np.asarray(tau, dtype=float))

    def log_derivative(self, tau):
        return np.zeros_like(np.asarray(tau, dtype=float))

    @property
    def constant_log_derivative(self) -> float:
        return 0.0


@dataclass(frozen=True)
class ExpRampMap(GridMap):
    """Phi(tau) = (exp(c tau) - 1) / (exp(c) - 1); every step ratio equals exp(c/N)."""

    c: float = 2.0
    family = MapFamily.EXP

    def __post_init__(self):
        if not math.isfinite(self.c):
            raise GridError(f"exp map needs a finite rate, got c={self.c}")

    def phi_map(self, tau):
        tau = np.asarray(tau, dtype=float)
        if self.c == 0:
            return tau
        return np.expm1(self.c * tau) / math.expm1(self.c)

    def density(self, tau):
        tau = np.asarray(tau, dtype=float)
        if self.c == 0:
            return np.ones_like(tau)
        return self.c * np.exp(self.c * tau) / math.expm1(self.c)

    def log_derivative(self, tau):
        return np.full_like(np.asarray(tau, dtype=float), self.c)

    @property
    def constant_log_derivative(self) -> float:
        return self.c

    def params(self) -> Dict[str, float]:
        return {"c": self.c}


@dataclass(frozen=True)
class PowerMap(GridMap):
    """Phi(tau) = tau**a. phi'/phi = (a - 1)/tau is unbounded unless a = 1."""

    a: float = 2.0
    family = MapFamily.POWER

    def __post_init__(self):
        if not (math.isfinite(self.a) and self.a > 0):
            raise GridError(f"power map needs a > 0, got a={self.a}")

    def phi_map(self, tau):
        return np.power(np.asarray(tau, dtype=float), self.a)

    def density(self, tau):
        tau = np.asarray(tau, dtype=float)
        with np.errstate(divide="ignore"):
            return self.a * np.power(tau, self.a - 1)

    def log_derivative(self, tau):
        tau = np.asarray(tau, dtype=float)
        with np.errstate(divide="ignore", invalid="ignore"):
            return np.where(tau > 0, (self.a - 1) / tau, math.inf if self.a != 1 else 0.0)

    @property
    def constant_log_derivative(self) -> Optional[float]:
        return 0.0 if self.a == 1 else None

    @property
    def singular(self) -> bool:
        return self.a != 1

    def params(self) -> Dict[str, float]:
        return {"a": self.a}


def _log_cosh(x):
    return np.logaddexp(x, -x) - math.log(2.0)


@dataclass(frozen=True)
class SigmoidMap(GridMap):
    """Smooth blend of two step sizes.

    phi is proportional to 1 + a tanh((tau - c)/w); |a| < 1 keeps it positive.
    """

    a: float = 0.5
    c: float = 0.5
    w: float = 0.1
    family = MapFamily.SIGMOID

    def __post_init__(self):
        if not (abs(self.a) < 1 and self.w > 0 and math.isfinite(self.c)):
            raise GridError(
                f"sigmoid map needs |a| < 1 and w > 0, got a={self.a}, w={self.w}"
            )

    def _raw(self, tau):
        tau = np.asarray(tau, dtype=float)
        return tau + self.a * self.w * (_log_cosh((tau - self.c) / self.w) - _log_cosh(-self.c / self.w))

    @property
    def _scale(self) -> float:
        return float(self._raw(1.0))

    def phi_map(self, tau):
        return self._raw(tau) / self._scale

    def density(self, tau):
        tau = np.asarray(tau, dtype=float)
        return (1.0 + self.a * np.tanh((tau - self.c) / self.w)) / self._scale

    def log_derivative(self, tau):
        x = (np.asarray(tau, dtype=float) - self.c) / self.w
        sech2 = 1.0 / np.cosh(x) ** 2
        return (self.a / self.w) * sech2 / (1.0 + self.a * np.tanh(x))

    def params(self) -> Dict[str, float]:
        return {"a": self.a, "c": self.c, "w": self.w}


@dataclass(frozen=True)
class CallableMap(GridMap):
    """A user supplied map; phi'/phi is estimated by central differences."""

    phi_fn: Callable = field(default=None, compare=False)
    density_fn: Callable = field(default=None, compare=False)
    name: str = "custom"

    def phi_map(self, tau):
        return np.asarray(self.phi_fn(np.asarray(tau, dtype=float)), dtype=float)

    def density(self, tau):
        return np.asarray(self.density_fn(np.asarray(tau, dtype=float)), dtype=float)

    @property
    def label(self) -> str:
        return self.name


MAP_FAMILIES = {
    MapFamily.IDENTITY.value: IdentityMap,
    MapFamily.EXP.value: ExpRampMap,
    MapFamily.POWER.value: PowerMap,
    MapFamily.SIGMOID.value: SigmoidMap,
}


def parse_grid_map(text: str) -> GridMap:
    """Parse ``family:key=value,...``, e.g. ``exp:c=2`` or ``sigmoid:a=0.5,w=0.05``."""
    family, _, param_text = text.strip().partition(":")
    cls = MAP_FAMILIES.get(family.strip().lower())
    if cls is None:
        raise UsageError(f"Unknown grid family {family!r}; choose from {sorted(MAP_FAMILIES)}")

    params = {}
    for item in filter(None, (part.strip() for part in param_text.split(","))):
        key, sep, value = item.partition("=")
        if not sep:
            raise UsageError(f"Grid parameter {item!r} is not of the form key=value")
        try:
            params[key.strip()] = float(value)
        except ValueError as e:
            raise UsageError(f"Grid parameter {key}={value!r} is not a number") from e

    allowed = set(cls.__dataclass_fields__)
    unknown = set(params) - allowed
    if unknown:
        raise UsageError(f"Unknown parameter(s) {sorted(unknown)} for grid family {family!r}")
    return cls(**params)


@dataclass(frozen=True)
class Regularity:
    """Estimate of sup |phi'/phi| and where it is attained."""

    value: float
    tau: float
    t: float
    method: str

    def to_dict(self) -> dict:
        return {"value": self.value, "tau": self.tau, "t": self.t, "method": self.method}


def regularity(grid_map: GridMap, sampling: int = DEFAULT_SAMPLING) -> Regularity:
    """Estimate ||phi'/phi||_inf.

    The maximiser is also reported in physical time t = Phi(tau), where
    phi'/phi is the rate of change of the step size modulation mu(t).
    """
    if grid_map.singular:
        logger.info(f"Map {grid_map.label} has unbounded phi'/phi")
        return Regularity(value=math.inf, tau=0.0, t=0.0, method="analytic")

    constant = grid_map.constant_log_derivative
    if constant is not None:
        return Regularity(value=abs(constant), tau=0.0, t=0.0, method="analytic")

    if sampling < 2:
        raise UsageError("Regularity sampling needs at least two intervals")
    taus = np.linspace(0.0, 1.0, sampling + 1)
    phi = grid_map.density(taus)
    if not np.all(np.isfinite(phi)) or np.any(phi <= 0):
        bad = int(np.flatnonzero(~(phi > 0))[0]) if np.any(~(phi > 0)) else 0
        raise GridError(f"phi is not positive at tau={taus[bad]:.6g} for map {grid_map.label}")

    if grid_map.log_derivative(taus[:1]) is not None:
        values = np.abs(grid_map.log_derivative(taus))
        i = int(np.argmax(values))
        lo, hi = taus[max(i - 1, 0)], taus[min(i + 1, sampling)]
        refined = minimize_scalar(
            lambda x: -abs(float(grid_map.log_derivative(x))),
            bounds=(lo, hi), method="bounded", options={"xatol": 1e-12},
        )
        if -refined.fun > values[i]:
            value, tau = float(-refined.fun), float(refined.x)
        else:
            value, tau = float(values[i]), float(taus[i])
        method = "analytic"
    else:
        dphi = np.gradient(phi, taus, edge_order=2)
        values = np.abs(dphi / phi)
        i = int(np.argmax(values))
        value, tau = float(values[i]), float(taus[i])
        method = "central-difference"

    t = float(grid_map.phi_map(tau))
    logger.debug(f"Regularity of {grid_map.label}: {value:.6g} at tau={tau:.6g} ({method})")
    return Regularity(value=value, tau=tau, t=t, method=method)


@dataclass(frozen=True, eq=False)
class Grid:
    """A realised grid 0 = t_0 < ... < t_N = 1.

    ``r[i] = h[i+1]/h[i]`` and ``v = r - 1``. Object arrays of Fractions are
    accepted for exact work.
    """

    t: np.ndarray
    h: np.ndarray
    source: str = "custom"

    @classmethod
    def from_times(cls, t, source: str = "custom") -> "Grid":
        t = np.array(t, dtype=object if _is_exact(t) else float)
        if t.ndim != 1 or t.size < 2:
            raise GridError("A grid needs at least two points")
        if abs(float(t[0])) > ENDPOINT_TOL or abs(float(t[-1]) - 1.0) > ENDPOINT_TOL:
            raise GridError(f"Grid must span [0, 1], got [{float(t[0])}, {float(t[-1])}]")
        if t.dtype != object:
            t[0], t[-1] = 0.0, 1.0
        h = np.diff(t)
        if not all(step > 0 for step in h):
            n = next(i for i, step in enumerate(h) if not step > 0)
            raise GridError(f"Grid is not strictly increasing at step {n}")
        return cls(t=t, h=h, source=source)

    @classmethod
    def from_steps(cls, h, source: str = "steps") -> "Grid":
        """Grid with the given step sequence, rescaled to span [0, 1]."""
        exact = _is_exact(h)
        h = np.array(h, dtype=object if exact else float)
        if h.ndim != 1 or h.size < 1:
            raise GridError("A grid needs at least one step")
        if not exact and not np.all(np.isfinite(h)):
            raise GridError("Steps must be finite")
        if not all(step > 0 for step in h):
            raise GridError("Steps must be strictly positive")

        total = sum(h, Fraction(0)) if exact else math.fsum(h)
        h = h / total
        t = np.concatenate([[h[0] * 0], np.cumsum(h)])
        t[-1] = Fraction(1) if exact else 1.0
        return cls(t=t, h=h, source=source)

    @property
    def N(self) -> int:
        return len(self.h)

    @property
    def exact(self) -> bool:
        return self.h.dtype == object

    @property
    def r(self) -> np.ndarray:
        return self.h[1:] / self.h[:-1]

    @property
    def v(self) -> np.ndarray:
        return self.r - 1

    def max_abs_v(self) -> float:
        return float(max((abs(x) for x in self.v), default=0.0))

    def ratio_bounds(self) -> Tuple[float, float]:
        if self.N < 2:
            return 1.0, 1.0
        return float(min(self.r)), float(max(self.r))

    def stencil_ratios(self, k: int) -> np.ndarray:
        """Ratio vectors (oldest first) of every k-step stencil lying inside the grid."""
        if self.N < k:
            raise GridError(f"A {k}-step stencil needs at least {k} steps, got N={self.N}")
        rows = self.N - k + 1
        if k == 1:
            return np.empty((rows, 0), dtype=self.r.dtype)
        idx = np.arange(rows)[:, None] + np.arange(k - 1)[None, :]
        return self.r[idx]

    def rows(self) -> List[tuple]:
        """Rows (n, t_n, h_n, r_n, v_n); entries that do not exist are None."""
        r, v = self.r, self.v
        out = []
        for n in range(self.N + 1):
            out.append((
                n,
                self.t[n],
                self.h[n] if n < self.N else None,
                r[n] if n < self.N - 1 else None,
                v[n] if n < self.N - 1 else None,
            ))
        return out

    def to_csv(self) -> str:
        return to_csv(["n", "t", "h", "r", "v"], self.rows())

    def summary(self) -> dict:
        lo, hi = self.ratio_bounds()
        return {
            "source": self.source,
            "N": self.N,
            "min_ratio": lo,
            "max_ratio": hi,
            "max_abs_v": self.max_abs_v(),
            "ratio_of_ratios": ratio_of_ratios(self),
        }

    def to_dict(self) -> dict:
        return {**self.summary(), "t": list(self.t), "h": list(self.h)}


def _is_exact(values) -> bool:
    return any(isinstance(x, Fraction) for x in np.ravel(np.asarray(values, dtype=object)))


def build_grid(grid_map: GridMap, N: int) -> Grid:
    """t_n = Phi(n/N); steps and ratios come from the realised t."""
    if N < 1:
        raise GridError(f"Grid size must be positive, got N={N}")
    tau = np.arange(N + 1) / N
    t = np.array(grid_map.phi_map(tau), dtype=float)
    if not (abs(t[0]) <= ENDPOINT_TOL and abs(t[-1] - 1.0) <= ENDPOINT_TOL):
        raise GridError(
            f"Map {grid_map.label} must satisfy Phi(0) = 0 and Phi(1) = 1, got {t[0]:.17g} and {t[-1]:.17g}"
        )
    t[0], t[-1] = 0.0, 1.0
    h = np.diff(t)
    if not np.all(h > 0):
        n = int(np.flatnonzero(~(h > 0))[0])
        raise GridError(f"Map {grid_map.label} is not increasing: h_{n} = {h[n]:.3e} at N={N}")
    logger.debug(f"Built grid {grid_map.label} with N={N}")
    return Grid(t=t, h=h, source=grid_map.label)


def uniform_grid(N: int, exact: bool = False) -> Grid:
    step = Fraction(1, N) if exact else 1.0 / N
    return Grid.from_steps([step] * N, source="uniform")


def constant_ratio_grid(r, N: int) -> Grid:
    """Geometric grid where every step ratio equals r."""
    if not r > 0:
        raise GridError(f"Step ratio must be positive, got {r}")
    if isinstance(r, Fraction):
        steps = [r ** n for n in range(N)]
    else:
        steps = np.power(float(r), np.arange(N, dtype=float))
    return Grid.from_steps(steps, source=f"ratio:{float(r):g}")


def ratio_of_ratios(grid: Grid) -> float:
    """max |r_n / r_{n-1} - 1|, zero for grids with fewer than three steps."""
    r = grid.r
    if len(r) < 2:
        return 0.0
    return float(max(abs(x) for x in r[1:] / r[:-1] - 1))


class ControllerConfig(BaseModel):
    """Digital filter r = (eps/l_n)^(b1/p) (eps/l_{n-1})^(b2/p) r_{n-1}^(-a1)."""

    model_config = ConfigDict(frozen=True)

    epsilon: float = Field(gt=0)
    p: int = Field(ge=1)
    b1: float = 1.0
    b2: float = 0.0
    a1: float = 0.0
    startup_steps: int = Field(default=1, ge=1)


def controller_grid(cfg: ControllerConfig, error_model: Callable[[float], float],
                    t_end: float = 1.0) -> Grid:
    """Generate steps on [0, t_end] with the filter and return the grid rescaled to [0, 1].

    Each step is committed with the predicted size, then its local error
    l = h^p * error_model(t_new) is measured and the next ratio computed.
    The first ``startup_steps`` steps use h_0 = (eps / E(0))^(1/p) with the
    filter history seeded to r = 1.
    """
    if not t_end > 0:
        raise ControllerError(f"t_end must be positive, got {t_end}")

    def measure(t: float) -> float:
        value = float(error_model(t))
        if not (math.isfinite(value) and value > 0):
            raise ControllerError(f"Error model must be positive and finite, got {value} at t={t:.6g}")
        return value

    eps, p = cfg.epsilon, cfg.p
    h = (eps / measure(0.0)) ** (1.0 / p)
    steps: List[float] = []
    t = 0.0
    l_prev = eps
    r_prev = 1.0

    while True:
        if h < MIN_STEP * t_end:
            raise ControllerError(f"Step size underflow (h={h:.3e}) at t={t:.6g}")
        if len(steps) >= MAX_CONTROLLER_STEPS:
            raise ControllerError(f"Controller exceeded {MAX_CONTROLLER_STEPS} steps")

        remaining = t_end - t
        if h >= remaining:
            if steps and remaining < 0.5 * steps[-1]:
                span = steps.pop() + remaining
                steps.extend([span / 2, span / 2])
            else:
                steps.append(remaining)
            break

        steps.append(h)
        t += h
        l_now = h ** p * measure(t)
        if len(steps) < cfg.startup_steps:
            r = 1.0
        else:
            r = (eps / l_now) ** (cfg.b1 / p) * (eps / l_prev) ** (cfg.b2 / p) * r_prev ** (-cfg.a1)
        l_prev, r_prev = l_now, r
        h = r * h

    grid = Grid.from_steps(steps, source=f"controller:eps={eps:g},p={p}")
    logger.info(f"Controller produced N={grid.N} steps, max|v|={grid.max_abs_v():.4g}")
    return grid
