"""Fundamental functions, rate functions and Legendre-Fenchel conjugation.

A fundamental function A(mu) is the scaled limiting cumulant generating
function of a process; its conjugate D(alpha) = sup_mu (alpha mu - A(mu)) is
the rate function. Everything here is one-dimensional and immutable.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable, Mapping, Sequence

import numpy as np
import pandas as pd
from scipy.optimize import minimize_scalar
from scipy.special import xlogy

from ldp_lab.errors import (
    EmptyDomain,
    InvalidParameters,
    NonConvexInput,
    ProbeOutsideDomain,
    UnknownFamily,
)
from ldp_lab.extended import ExtendedReal

logger = logging.getLogger(__name__)

# ============================
# DEFAULTS
# ============================

CONVEXITY_TOL = 1e-9
TOUCHING_TOL = 1e-8
FIXED_POINT_RTOL = 1e-6

# distance kept from an open finite boundary when probing it
_OPEN_OFFSET = 1e-12

ArrayFn = Callable[[np.ndarray], np.ndarray]


# ============================
# DOMAINS
# ============================

@dataclass(frozen=True)
class Interval:
    """Effective domain with a closed/open flag per side."""

    lo: float = -math.inf
    hi: float = math.inf
    lo_closed: bool = False
    hi_closed: bool = False

    def __post_init__(self):
        if self.lo > self.hi:
            raise InvalidParameters(f"empty interval [{self.lo}, {self.hi}]")
        if (self.lo_closed and math.isinf(self.lo)) or (self.hi_closed and math.isinf(self.hi)):
            raise InvalidParameters("an infinite side cannot be closed")
        if self.lo == self.hi and not (self.lo_closed and self.hi_closed):
            raise InvalidParameters("a degenerate interval must be closed on both sides")

    @classmethod
    def real_line(cls) -> "Interval":
        return cls()

    @classmethod
    def point(cls, x: float) -> "Interval":
        return cls(x, x, True, True)

    @classmethod
    def closed(cls, lo: float, hi: float) -> "Interval":
        return cls(lo, hi, math.isfinite(lo), math.isfinite(hi))

    @classmethod
    def from_spec(cls, spec: Mapping | None) -> "Interval | None":
        if not spec:
            return None
        lo = float(spec.get("lo", -math.inf))
        hi = float(spec.get("hi", math.inf))
        return cls(lo, hi, bool(spec.get("lo_closed", False)), bool(spec.get("hi_closed", False)))

    @property
    def has_interior(self) -> bool:
        return self.lo < self.hi

    def contains(self, x):
        x = np.asarray(x, dtype=float)
        above = (x >= self.lo) if self.lo_closed else (x > self.lo)
        below = (x <= self.hi) if self.hi_closed else (x < self.hi)
        return above & below

    def in_interior(self, x):
        x = np.asarray(x, dtype=float)
        return (x > self.lo) & (x < self.hi)

    def search_bounds(self) -> tuple[float, float]:
        """Outermost points a search may evaluate (+-inf for unbounded sides)."""
        a, b = self.lo, self.hi
        if math.isfinite(a) and not self.lo_closed:
            a = a + _OPEN_OFFSET * max(1.0, abs(a))
        if math.isfinite(b) and not self.hi_closed:
            b = b - _OPEN_OFFSET * max(1.0, abs(b))
        return a, b


# ============================
# FUNDAMENTAL FUNCTION
# ============================

@dataclass(frozen=True, eq=False)
class FundamentalFunction:
    """A(mu) = lim (1/T) ln E exp(mu Z(T)); `func` is only called on domain points."""

    func: ArrayFn
    domain: Interval
    derivative: ArrayFn | None = None
    label: str = ""

    @classmethod
    def from_table(cls, mu, values, label: str = "table") -> "FundamentalFunction":
        mu = np.asarray(mu, dtype=float)
        values = np.asarray(values, dtype=float)
        if mu.ndim != 1 or mu.shape != values.shape or mu.size == 0:
            raise InvalidParameters("table needs matching 1-d mu and A columns")
        if np.any(np.diff(mu) <= 0):
            raise InvalidParameters("table mu values must be strictly increasing")
        finite = np.isfinite(values)
        if not finite.any():
            raise EmptyDomain("table has no finite A values")
        idx = np.flatnonzero(finite)
        if np.any(np.diff(idx) != 1):
            raise NonConvexInput("finite part of the table is not an interval")
        mu_f, val_f = mu[idx], values[idx]
        return cls(
            func=lambda m: np.interp(m, mu_f, val_f),
            domain=Interval.closed(mu_f[0], mu_f[-1]),
            label=label,
        )

    def values(self, mu) -> np.ndarray:
        mu = np.atleast_1d(np.asarray(mu, dtype=float))
        out = np.full(mu.shape, np.inf)
        mask = self.domain.contains(mu)
        if mask.any():
            out[mask] = self.func(mu[mask])
        return out

    def evaluate(self, mu: float) -> ExtendedReal:
        return ExtendedReal.from_float(float(self.values(mu)[0]))

    def derivative_at(self, mu):
        mu = np.atleast_1d(np.asarray(mu, dtype=float))
        if self.derivative is not None:
            return self.derivative(mu)
        return _central_difference(self.func, self.domain, mu)

    def with_domain(self, domain: Interval) -> "FundamentalFunction":
        return replace(self, domain=domain)


def _central_difference(func: ArrayFn, domain: Interval, x: np.ndarray, h: float = 1e-5) -> np.ndarray:
    # step shrinks near finite boundaries so both probes stay in the domain
    dist = np.minimum(x - domain.lo, domain.hi - x)
    step = np.minimum(h * np.maximum(1.0, np.abs(x)), dist / 4.0)
    return (func(x + step) - func(x - step)) / (2.0 * step)


# ============================
# RATE FUNCTION
# ============================

@dataclass(frozen=True, eq=False)
class RateFunction:
    """D(alpha) >= 0, either closed-form or backed by (alpha, D) grid values."""

    domain: Interval
    func: ArrayFn | None = None
    derivative: ArrayFn | None = None
    grid_alpha: np.ndarray | None = None
    grid_values: np.ndarray | None = None
    zero_point: float | None = None
    label: str = ""

    def __post_init__(self):
        if self.func is None and self.grid_alpha is None:
            raise InvalidParameters("rate function needs a closed form or a grid")

    @property
    def representation(self) -> str:
        return "closed-form" if self.func is not None else "grid"

    @classmethod
    def from_grid(cls, alpha, values, zero_point=None, label="grid") -> "RateFunction":
        alpha = np.asarray(alpha, dtype=float)
        values = np.asarray(values, dtype=float)
        finite = np.flatnonzero(np.isfinite(values))
        if finite.size == 0:
            raise InvalidParameters("rate function is +inf on the whole grid")
        domain = Interval.closed(alpha[finite[0]], alpha[finite[-1]])
        return cls(domain=domain, grid_alpha=alpha, grid_values=values,
                   zero_point=zero_point, label=label)

    def values(self, alpha) -> np.ndarray:
        alpha = np.atleast_1d(np.asarray(alpha, dtype=float))
        out = np.full(alpha.shape, np.inf)
        mask = self.domain.contains(alpha)
        if not mask.any():
            return out
        if self.func is not None:
            out[mask] = self.func(alpha[mask])
        else:
            keep = np.isfinite(self.grid_values)
            out[mask] = np.interp(alpha[mask], self.grid_alpha[keep], self.grid_values[keep])
        return out

    def evaluate(self, alpha: float) -> ExtendedReal:
        return ExtendedReal.from_float(float(self.values(alpha)[0]))

    def derivative_at(self, alpha):
        alpha = np.atleast_1d(np.asarray(alpha, dtype=float))
        if self.derivative is not None:
            return self.derivative(alpha)
        return _central_difference(lambda a: self.values(a), self.domain, alpha)

    def minimizer(self) -> float:
        if self.zero_point is not None:
            return float(self.zero_point)
        if self.grid_alpha is not None:
            return float(self.grid_alpha[int(np.argmin(self.grid_values))])
        a, b = self.domain.search_bounds()
        lo, hi = max(a, -1e3), min(b, 1e3)
        probe = np.linspace(lo, hi, 2001)
        best = float(probe[int(np.argmin(self.values(probe)))])
        res = minimize_scalar(lambda x: float(self.values(x)[0]),
                              bounds=(max(lo, best - 1.0), min(hi, best + 1.0)),
                              method="bounded", options={"xatol": 1e-12})
        return float(res.x) if res.fun <= self.values(best)[0] else best

    def invariant_violations(self, tol: float = CONVEXITY_TOL) -> list[str]:
        """Nonnegativity, midpoint convexity and boundary lsc on the grid."""
        problems = []
        if self.grid_alpha is None:
            a, b = self.domain.search_bounds()
            alpha = np.linspace(max(a, -50.0), min(b, 50.0), 401)
        else:
            alpha = self.grid_alpha
        d = self.values(alpha)
        finite = np.isfinite(d)
        if not finite.any():
            problems.append("D is +inf everywhere on the probe grid")
            return problems
        if np.any(d[finite] < -tol):
            problems.append("D takes negative values")
        idx = np.flatnonzero(finite)
        if idx.size >= 3:
            x, y = alpha[idx], d[idx]
            # midpoint test on consecutive triples of a possibly non-uniform grid
            w = (x[2:] - x[1:-1]) / (x[2:] - x[:-2])
            chord = w * y[:-2] + (1.0 - w) * y[2:]
            if np.any(y[1:-1] > chord + tol * (1.0 + np.abs(chord))):
                problems.append("D is not convex on the grid")
        # boundary lsc needs no probe: a sup of affine maps is lsc
        return problems


# ============================
# SEARCH SETTINGS
# ============================

@dataclass(frozen=True)
class MuSearch:
    """Bracket and budget for the one-dimensional sup searches."""

    lower: float = -10.0
    upper: float = 10.0
    n_probes: int = 201
    max_iter: int = 500
    xatol: float = 1e-12
    max_expansions: int = 40
    divergence_slope: float = 1e-10
    # log-type growth: the slope vanishes but each doubling still adds about as much
    divergence_rise: float = 1e-3

    def __post_init__(self):
        if not self.lower < self.upper:
            raise InvalidParameters("search bracket must satisfy lower < upper")
        if self.n_probes < 3:
            raise InvalidParameters("at least 3 probes are needed")

    def doubled(self) -> "MuSearch":
        # 2n - 1 probes on the same bracket is a superset of the n probes
        return replace(self, n_probes=2 * self.n_probes - 1, max_iter=2 * self.max_iter)


@dataclass(frozen=True)
class SupResult:
    value: ExtendedReal
    argmax: float | None


def _initial_bracket(domain: Interval, search: MuSearch) -> tuple[float, float]:
    a, b = domain.search_bounds()
    lo, hi = max(search.lower, a), min(search.upper, b)
    if lo < hi:
        return lo, hi
    width = search.upper - search.lower
    # the requested bracket misses the domain: slide it onto the domain
    if search.lower >= b:
        return max(a, b - width), b
    return a, min(b, a + width)


def _sup_concave(g: ArrayFn, gprime: ArrayFn, domain: Interval, search: MuSearch) -> SupResult:
    """sup of a concave g over the domain by probe scan, bracket growth and Brent refinement."""
    a, b = domain.search_bounds()
    if a == b:
        return SupResult(ExtendedReal.finite(float(g(np.array([a]))[0])), a)
    lo, hi = _initial_bracket(domain, search)

    expansions = 0
    edge_values: list[float] = []
    while True:
        mus = np.linspace(lo, hi, search.n_probes)
        vals = g(mus)
        i = int(np.argmax(vals))  # leftmost maximiser on ties
        at_left = i == 0 and lo > a
        at_right = i == mus.size - 1 and hi < b
        if not (at_left or at_right):
            break
        edge_values.append(float(vals[i]))
        if expansions == search.max_expansions:
            edge = mus[i]
            rises = np.diff(edge_values[-4:])
            if rises.size == 3 and np.all(rises > search.divergence_rise):
                return SupResult(ExtendedReal.inf(), None)
            outward = -float(gprime(np.array([edge]))[0]) if at_left else float(gprime(np.array([edge]))[0])
            if outward > search.divergence_slope:
                return SupResult(ExtendedReal.inf(), None)
            break
        width = hi - lo
        if at_left:
            lo = max(a, lo - width)
        else:
            hi = min(b, hi + width)
        expansions += 1

    best_x, best_v = float(mus[i]), float(vals[i])
    left, right = mus[max(i - 1, 0)], mus[min(i + 1, mus.size - 1)]
    if right > left:
        res = minimize_scalar(
            lambda x: -float(g(np.array([x]))[0]),
            bounds=(left, right),
            method="bounded",
            options={"xatol": search.xatol, "maxiter": search.max_iter},
        )
        if -res.fun > best_v:
            best_x, best_v = float(res.x), float(-res.fun)
    return SupResult(ExtendedReal.finite(best_v), best_x)


def _check_convex(A: FundamentalFunction, search: MuSearch) -> None:
    lo, hi = _initial_bracket(A.domain, search)
    mus = np.linspace(lo, hi, search.n_probes)
    vals = A.func(mus)
    second = vals[:-2] - 2.0 * vals[1:-1] + vals[2:]
    scale = 1.0 + np.abs(vals[1:-1])
    bad = np.flatnonzero(second < -CONVEXITY_TOL * scale)
    if bad.size:
        mu_bad = mus[bad[0] + 1]
        raise NonConvexInput(f"A ({A.label}) fails midpoint convexity near mu={mu_bad:.6g}")


# ============================
# CONJUGATION
# ============================

def legendre_transform(A: FundamentalFunction, alpha_grid: Sequence[float],
                       mu_search: MuSearch | None = None) -> RateFunction:
    """D(alpha) = sup_mu (alpha mu - A(mu)) on a strictly increasing alpha grid."""
    search = mu_search or MuSearch()
    alpha_grid = np.asarray(alpha_grid, dtype=float)
    if alpha_grid.ndim != 1 or alpha_grid.size == 0:
        raise InvalidParameters("alpha_grid must be a nonempty 1-d sequence")
    if np.any(np.diff(alpha_grid) <= 0):
        raise InvalidParameters("alpha_grid must be strictly increasing")
    if not A.domain.has_interior:
        raise EmptyDomain(f"dom A of {A.label!r} has empty interior")
    _check_convex(A, search)

    zero_in_dom = bool(A.domain.contains(0.0))
    a_at_zero = float(A.func(np.array([0.0]))[0]) if zero_in_dom else None

    values = np.empty(alpha_grid.size)
    for k, alpha in enumerate(alpha_grid):
        res = _sup_concave(
            lambda m, al=alpha: al * m - A.func(m),
            lambda m, al=alpha: al - A.derivative_at(m),
            A.domain,
            search,
        )
        v = float(res.value)
        if zero_in_dom and math.isfinite(v):
            v = max(v, -a_at_zero)
        values[k] = v

    zero_point = None
    if A.domain.in_interior(0.0):
        zero_point = float(A.derivative_at(0.0)[0])
    logger.debug("[conjugate] %s: %d alpha points, %d infinite",
                 A.label, alpha_grid.size, int(np.isinf(values).sum()))
    return RateFunction.from_grid(alpha_grid, values, zero_point=zero_point, label=f"L[{A.label}]")


def biconjugate(D: RateFunction, mu_grid: Sequence[float],
                search: MuSearch | None = None) -> FundamentalFunction:
    """A(mu) = sup_alpha (mu alpha - D(alpha)) evaluated on mu_grid."""
    search = search or MuSearch()
    mu_grid = np.asarray(mu_grid, dtype=float)
    if D.invariant_violations():
        raise InvalidParameters(f"rate function {D.label!r} violates its invariants")
    out = np.empty(mu_grid.size)
    for k, mu in enumerate(mu_grid):
        if D.representation == "grid":
            out[k] = _grid_sup(mu, D)
        else:
            res = _sup_concave(
                lambda al, m=mu: m * al - D.values(al),
                lambda al, m=mu: m - D.derivative_at(al),
                D.domain,
                search,
            )
            out[k] = float(res.value)
    return FundamentalFunction.from_table(mu_grid, out, label=f"L[{D.label}]")


def _grid_sup(mu: float, D: RateFunction) -> float:
    keep = np.isfinite(D.grid_values)
    x, d = D.grid_alpha[keep], D.grid_values[keep]
    g = mu * x - d
    i = int(np.argmax(g))
    best = float(g[i])
    if 0 < i < x.size - 1:
        # vertex of the parabola through the three nodes around the best node
        x0, x1, x2 = x[i - 1], x[i], x[i + 1]
        y0, y1, y2 = g[i - 1], g[i], g[i + 1]
        denom = (x0 - x1) * (x0 - x2) * (x1 - x2)
        c2 = (x2 * (y1 - y0) + x1 * (y0 - y2) + x0 * (y2 - y1)) / denom
        c1 = (x2 * x2 * (y0 - y1) + x1 * x1 * (y2 - y0) + x0 * x0 * (y1 - y2)) / denom
        c0 = (x1 * x2 * (x1 - x2) * y0 + x2 * x0 * (x2 - x0) * y1 + x0 * x1 * (x0 - x1) * y2) / denom
        if c2 < 0:
            xv = -c1 / (2.0 * c2)
            if x0 <= xv <= x2:
                best = max(best, float(c0 + c1 * xv + c2 * xv * xv))
    return best


def rate_of_set(D: RateFunction, lo: float, hi: float, closed: bool = False) -> ExtendedReal:
    """D(B) = inf over B of D for B = (lo, hi), or [lo, hi] when closed."""
    if not lo < hi:
        raise InvalidParameters("set bounds must satisfy lo < hi")
    dom = D.domain
    left, right = max(lo, dom.lo), min(hi, dom.hi)
    if left > right:
        return ExtendedReal.inf()
    left_in = bool(dom.contains(left)) and (closed or left > lo)
    right_in = bool(dom.contains(right)) and (closed or right < hi)
    if left == right and not (left_in and right_in):
        return ExtendedReal.inf()
    m = D.minimizer()
    if left < m < right or (m == left and left_in) or (m == right and right_in):
        return D.evaluate(m)
    # convex D: the infimum sits at the endpoint nearest the minimiser
    edge = left if m <= left else right
    edge_in = left_in if edge == left else right_in
    if edge_in or bool(dom.in_interior(edge)):
        return D.evaluate(edge)
    # open set edge that is not in dom D: approach it from inside
    a, b = dom.search_bounds()
    return D.evaluate(min(max(edge, a), b))


# ============================
# STRUCTURAL CHECKS
# ============================

@dataclass(frozen=True)
class SmoothnessProbes:
    interior: Sequence[float]
    boundary: Mapping[str, Sequence[float]] = field(default_factory=dict)
    rel_tol: float = 1e-4
    steep_threshold: float = 1e3


@dataclass(frozen=True)
class SmoothnessReport:
    nonempty_interior: bool
    differentiable: bool
    steep: bool
    evidence: str = "probe-level evidence"
    details: dict = field(default_factory=dict)

    @property
    def essentially_smooth(self) -> bool:
        return self.nonempty_interior and self.differentiable and self.steep


def default_probes(A: FundamentalFunction, n_interior: int = 11, depth: int = 8) -> SmoothnessProbes:
    """Interior points plus geometric approach sequences to each finite boundary."""
    a, b = A.domain.lo, A.domain.hi
    lo = a if math.isfinite(a) else -5.0
    hi = b if math.isfinite(b) else 5.0
    if not lo < hi:
        return SmoothnessProbes(interior=[])
    inner = np.linspace(lo, hi, n_interior + 2)[1:-1]
    boundary = {}
    gaps = (hi - lo) / 2.0 * 10.0 ** -np.arange(1, depth + 1)
    if math.isfinite(a):
        boundary["lo"] = list(a + gaps)
    if math.isfinite(b):
        boundary["hi"] = list(b - gaps)
    return SmoothnessProbes(interior=list(inner), boundary=boundary)


def check_essential_smoothness(A: FundamentalFunction, probes: SmoothnessProbes | None = None) -> SmoothnessReport:
    if not A.domain.has_interior:
        return SmoothnessReport(False, False, False, details={"reason": "dom A has empty interior"})
    probes = probes or default_probes(A)
    interior = np.asarray(probes.interior, dtype=float)
    if interior.size and not np.all(A.domain.in_interior(interior)):
        raise ProbeOutsideDomain(f"interior probes leave dom A of {A.label!r}")

    unstable = []
    for mu in interior:
        dist = min(mu - A.domain.lo, A.domain.hi - mu)
        h = min(1e-4 * max(1.0, abs(mu)), dist / 4.0)
        d1 = (A.func(np.array([mu + h])) - A.func(np.array([mu - h])))[0] / (2 * h)
        d2 = (A.func(np.array([mu + h / 2])) - A.func(np.array([mu - h / 2])))[0] / h
        if not (np.isfinite(d1) and abs(d1 - d2) <= probes.rel_tol * max(1.0, abs(d2))):
            unstable.append(float(mu))

    steep = True
    slopes = {}
    for side, finite in (("lo", math.isfinite(A.domain.lo)), ("hi", math.isfinite(A.domain.hi))):
        if not finite:
            continue  # +-inf is not part of the boundary
        seq = np.asarray(probes.boundary.get(side, ()), dtype=float)
        if seq.size < 2:
            steep = False
            slopes[side] = []
            continue
        if not np.all(A.domain.in_interior(seq)):
            raise ProbeOutsideDomain(f"boundary sequence '{side}' leaves dom A")
        mags = np.abs(A.derivative_at(seq))
        slopes[side] = mags.tolist()
        if not (np.all(np.diff(mags) > 0) and mags[-1] >= probes.steep_threshold):
            steep = False

    return SmoothnessReport(
        nonempty_interior=True,
        differentiable=not unstable,
        steep=steep,
        details={"unstable_probes": unstable, "boundary_slopes": slopes},
    )


@dataclass(frozen=True)
class LevelSet:
    level: float
    lo: float | None
    hi: float | None
    bounded: bool
    closed: bool

    @property
    def compact(self) -> bool:
        return self.bounded and self.closed


def level_set(D: RateFunction, v: float) -> LevelSet:
    """{alpha: D(alpha) <= v}, an interval because D is convex."""
    if D.representation == "grid":
        d = D.grid_values
        hit = np.flatnonzero(d <= v)
        if hit.size == 0:
            return LevelSet(v, None, None, True, True)
        first, last = hit[0], hit[-1]
        # touching the last finite grid node with nothing infinite beyond it is inconclusive
        open_left = first == 0 and np.isfinite(d[0])
        open_right = last == d.size - 1 and np.isfinite(d[-1])
        return LevelSet(v, float(D.grid_alpha[first]), float(D.grid_alpha[last]),
                        not (open_left or open_right), True)

    m = D.minimizer()
    if float(D.values(m)[0]) > v:
        return LevelSet(v, None, None, True, True)
    lo, lo_closed = _level_edge(D, m, v, -1)
    hi, hi_closed = _level_edge(D, m, v, +1)
    bounded = math.isfinite(lo) and math.isfinite(hi)
    return LevelSet(v, lo, hi, bounded, lo_closed and hi_closed)


def _level_edge(D: RateFunction, m: float, v: float, direction: int) -> tuple[float, bool]:
    a, b = D.domain.search_bounds()
    limit = a if direction < 0 else b
    closed_side = D.domain.lo_closed if direction < 0 else D.domain.hi_closed
    if math.isfinite(limit):
        if float(D.values(limit)[0]) <= v:
            edge = D.domain.lo if direction < 0 else D.domain.hi
            return edge, closed_side
        outside = limit
    else:
        step = 1.0
        outside = None
        while step <= 1e12:
            x = m + direction * step
            if float(D.values(x)[0]) > v:
                outside = x
                break
            step *= 2.0
        if outside is None:
            return direction * math.inf, False
    inside = m
    for _ in range(200):
        mid = 0.5 * (inside + outside)
        if float(D.values(mid)[0]) <= v:
            inside = mid
        else:
            outside = mid
        if abs(outside - inside) <= 1e-13 * max(1.0, abs(inside)):
            break
    return inside, True


@dataclass(frozen=True)
class GoodnessReport:
    levels: list[LevelSet]

    @property
    def good(self) -> bool:
        return all(ls.compact for ls in self.levels)


def check_goodness(D: RateFunction, levels: Sequence[float]) -> GoodnessReport:
    return GoodnessReport([level_set(D, float(v)) for v in levels])


# ============================
# FAMILIES
# ============================

def gaussian_fundamental(mean: float = 0.0, sd: float = 1.0) -> FundamentalFunction:
    if sd < 0:
        raise InvalidParameters("sd must be nonnegative")
    return FundamentalFunction(
        func=lambda m: mean * m + 0.5 * sd * sd * m * m,
        domain=Interval.real_line(),
        derivative=lambda m: mean + sd * sd * m,
        label=f"gaussian(mean={mean}, sd={sd})",
    )


def rademacher_fundamental(p: float = 0.5) -> FundamentalFunction:
    """Steps +1 with probability p, -1 otherwise."""
    if not 0.0 < p < 1.0:
        raise InvalidParameters("p must lie in (0, 1)")
    lp, lq = math.log(p), math.log1p(-p)
    shift = 0.5 * (lp - lq)
    return FundamentalFunction(
        func=lambda m: np.logaddexp(m + lp, -m + lq),
        domain=Interval.real_line(),
        derivative=lambda m: np.tanh(m + shift),
        label=f"rademacher(p={p})",
    )


def poisson_fundamental(rate: float = 1.0) -> FundamentalFunction:
    if rate <= 0:
        raise InvalidParameters("rate must be positive")
    return FundamentalFunction(
        func=lambda m: rate * np.expm1(m),
        domain=Interval.real_line(),
        derivative=lambda m: rate * np.exp(m),
        label=f"poisson(rate={rate})",
    )


def exponential_fundamental(rate: float = 1.0) -> FundamentalFunction:
    """Exponential steps with the given rate (mean 1/rate)."""
    if rate <= 0:
        raise InvalidParameters("rate must be positive")
    return FundamentalFunction(
        func=lambda m: -np.log1p(-m / rate),
        domain=Interval(-math.inf, rate),
        derivative=lambda m: 1.0 / (rate - m),
        label=f"exponential(rate={rate})",
    )


def gaussian_rate(mean: float = 0.0, sd: float = 1.0) -> RateFunction:
    return RateFunction(
        domain=Interval.real_line(),
        func=lambda a: (a - mean) ** 2 / (2.0 * sd * sd),
        derivative=lambda a: (a - mean) / (sd * sd),
        zero_point=mean,
        label=f"D[gaussian(mean={mean}, sd={sd})]",
    )


def rademacher_rate(p: float = 0.5) -> RateFunction:
    def func(a):
        up, down = (1.0 + a) / 2.0, (1.0 - a) / 2.0
        return xlogy(up, up / p) + xlogy(down, down / (1.0 - p))

    shift = 0.5 * math.log(p / (1.0 - p))
    return RateFunction(
        domain=Interval(-1.0, 1.0, True, True),
        func=func,
        derivative=lambda a: np.arctanh(a) - shift,
        zero_point=2.0 * p - 1.0,
        label=f"D[rademacher(p={p})]",
    )


def poisson_rate(rate: float = 1.0) -> RateFunction:
    return RateFunction(
        domain=Interval(0.0, math.inf, True, False),
        func=lambda a: xlogy(a, a / rate) - a + rate,
        derivative=lambda a: np.log(a / rate),
        zero_point=rate,
        label=f"D[poisson(rate={rate})]",
    )


def exponential_rate(rate: float = 1.0) -> RateFunction:
    return RateFunction(
        domain=Interval(0.0, math.inf),
        func=lambda a: rate * a - 1.0 - np.log(rate * a),
        derivative=lambda a: rate - 1.0 / a,
        zero_point=1.0 / rate,
        label=f"D[exponential(rate={rate})]",
    )


_FAMILIES = {
    "gaussian": (gaussian_fundamental, gaussian_rate),
    "rademacher": (rademacher_fundamental, rademacher_rate),
    "poisson": (poisson_fundamental, poisson_rate),
    "exponential": (exponential_fundamental, exponential_rate),
}


def load_table_csv(path: str | Path) -> FundamentalFunction:
    df = pd.read_csv(path)
    if list(df.columns[:2]) != ["mu", "A"]:
        raise InvalidParameters(f"{path}: expected header 'mu,A', got {list(df.columns)}")
    df = df.sort_values("mu")
    return FundamentalFunction.from_table(df["mu"].to_numpy(), df["A"].to_numpy(), label=Path(path).stem)


def fundamental_from_spec(spec: Mapping) -> FundamentalFunction:
    """Build A from {family, parameters, domain}."""
    family = str(spec.get("family", "")).lower()
    params = dict(spec.get("parameters") or {})
    if family == "table":
        if "path" in params:
            A = load_table_csv(params["path"])
        else:
            A = FundamentalFunction.from_table(params.get("mu", []), params.get("A", []))
    elif family in _FAMILIES:
        try:
            A = _FAMILIES[family][0](**params)
        except TypeError as e:
            raise InvalidParameters(f"bad parameters for {family}: {e}") from e
    else:
        raise UnknownFamily(f"unknown fundamental family {family!r}")
    domain = Interval.from_spec(spec.get("domain"))
    return A.with_domain(domain) if domain is not None else A


def rate_from_spec(spec: Mapping, alpha_grid: Sequence[float] | None = None) -> RateFunction:
    """Closed-form D for the bundled families, numeric conjugate for tables."""
    family = str(spec.get("family", "")).lower()
    if family in _FAMILIES:
        params = dict(spec.get("parameters") or {})
        try:
            return _FAMILIES[family][1](**params)
        except TypeError as e:
            raise InvalidParameters(f"bad parameters for {family}: {e}") from e
    A = fundamental_from_spec(spec)
    grid = alpha_grid if alpha_grid is not None else np.linspace(-10, 10, 2001)
    return legendre_transform(A, grid)
