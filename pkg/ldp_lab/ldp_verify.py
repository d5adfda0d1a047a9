"""Crude and tilted Monte Carlo checks of local, fdd and functional limits.

Every estimator samples the process through ProcessModel.sample_at. Tilted
estimators tilt each cell of the time grid at the mu solving A'(mu) = target
slope and weight hits by the product likelihood ratio.
"""

from __future__ import annotations

import logging
import math
from concurrent.futures import Executor
from dataclasses import dataclass
from typing import Callable, Mapping, Sequence

import numpy as np
import pandas as pd
from scipy.optimize import bisect, minimize_scalar
from sklearn.linear_model import LinearRegression

from ldp_lab.convex_core import FundamentalFunction, RateFunction, rate_of_set
from ldp_lab.errors import (
    InvalidParameters,
    InvalidPath,
    ScanExhausted,
    SlopeOutsideDomain,
    TargetOutsideDomain,
    ZeroHits,
)
from ldp_lab.extended import ExtendedReal
from ldp_lab.laws import StepLaw
from ldp_lab.montecarlo import RULE_OF_THREE, LogAccumulator, run_chunks
from ldp_lab.path_integral import CadlagPath, Partition, deviation_integral_J, tube_distance
from ldp_lab.process_lab import NOISE_PERTURBED, InitialLaw, LogMomentEstimate, ProcessModel, log_moment

logger = logging.getLogger(__name__)

# ============================
# DEFAULTS
# ============================

DEFAULT_N = 100_000
DEFAULT_T_GRID = (50, 100, 200, 400, 800)
MIN_SAMPLES = 100
TILT_TOL = 1e-10
METHODS = ("crude", "tilted")


# ============================
# TOLERANCE SCHEDULE
# ============================

@dataclass(frozen=True)
class EpsilonSchedule:
    """eps_T = max(c T^-p, floor)."""

    c: float = 1.0
    p: float = 1.0 / 3.0
    floor: float = 0.0

    def __post_init__(self):
        if self.c <= 0 or self.p < 0 or self.floor < 0:
            raise InvalidParameters("need c > 0, p >= 0 and floor >= 0")

    @classmethod
    def fixed(cls, eps: float) -> "EpsilonSchedule":
        return cls(c=eps, p=0.0)

    @classmethod
    def from_spec(cls, spec) -> "EpsilonSchedule":
        if isinstance(spec, (int, float)):
            return cls.fixed(float(spec))
        return cls(float(spec.get("c", 1.0)), float(spec.get("p", 1.0 / 3.0)),
                   float(spec.get("floor", 0.0)))

    @property
    def is_slow_enough(self) -> bool:
        return self.p < 0.5

    def __call__(self, T: float) -> float:
        return max(self.c * T ** (-self.p), self.floor)


# ============================
# ESTIMATES
# ============================

@dataclass(frozen=True)
class MCEstimate:
    p_hat: float
    log_p_hat: float
    std_err: float
    n: int
    hits: int
    T: float
    method: str
    target: str = ""
    eps: float = math.nan
    tilts: tuple = ()
    proxy: bool = False
    reference: ExtendedReal | None = None

    @property
    def log_rate(self) -> ExtendedReal:
        if self.hits == 0 or self.log_p_hat == -math.inf:
            return ExtendedReal.inf()
        return ExtendedReal.finite(-self.log_p_hat / self.T)

    @property
    def upper_bound(self) -> float | None:
        return RULE_OF_THREE / self.n if self.hits == 0 else None

    @property
    def method_label(self) -> str:
        if self.method == "crude":
            return "crude"
        mus = ";".join(f"{m:.6g}" for m in self.tilts)
        return f"tilted(mu={mus}){'-proxy' if self.proxy else ''}"

    @property
    def abs_gap(self) -> float:
        if self.reference is None:
            return math.nan
        return abs(float(self.log_rate) - float(self.reference))

    def to_row(self) -> dict:
        return {
            "T": self.T,
            "target": self.target,
            "eps": self.eps,
            "method": self.method_label,
            "n": self.n,
            "p_hat": self.p_hat,
            "std_err": self.std_err,
            "log_rate": float(self.log_rate),
            "reference_rate": math.nan if self.reference is None else float(self.reference),
            "abs_gap": self.abs_gap,
        }


# ============================
# TILTING
# ============================

@dataclass(frozen=True)
class TiltedLaw:
    """Step law reweighted by exp(mu x) / m(mu)."""

    base: StepLaw
    mu: float

    @property
    def log_normalizer(self) -> float:
        return float(self.base.log_mgf(self.mu)[0])

    @property
    def law(self) -> StepLaw:
        return self.base.tilt(self.mu)

    @property
    def mean(self) -> float:
        return self.law.mean

    def log_likelihood_ratio(self, x) -> np.ndarray:
        """ln dP/dQ for one step."""
        return -self.mu * np.asarray(x, dtype=float) + self.log_normalizer

    def problems(self, h: float = 1e-5) -> list[str]:
        out = []
        probs = getattr(self.law, "probs", None)
        if probs is not None and abs(math.fsum(probs) - 1.0) > 1e-12:
            out.append("tilted law does not normalise")
        dom = self.base.mgf_domain
        if bool(dom.contains(self.mu - h)) and bool(dom.contains(self.mu + h)):
            lm = self.base.log_mgf(np.array([self.mu - h, self.mu + h]))
            slope = (lm[1] - lm[0]) / (2.0 * h)
            if abs(slope - self.mean) > 1e-8 * max(1.0, abs(self.mean)):
                out.append(f"tilted mean {self.mean:.12g} differs from d ln m = {slope:.12g}")
        return out


def tilt_for_target(A: FundamentalFunction, beta: float) -> float:
    """mu with A'(mu) = beta, by bisection on the nondecreasing A'."""
    dom = A.domain
    if not dom.has_interior:
        raise TargetOutsideDomain(f"dom A of {A.label!r} has empty interior")

    def gap(m: float) -> float:
        return float(A.derivative_at(m)[0]) - beta

    if bool(dom.in_interior(0.0)) and abs(gap(0.0)) <= TILT_TOL:
        return 0.0
    a, b = dom.search_bounds()
    lo, hi = max(a, -1.0), min(b, 1.0)
    if lo >= hi:
        lo, hi = a, b
    for _ in range(400):
        g_lo, g_hi = gap(lo), gap(hi)
        if g_lo < 0.0 < g_hi:
            break
        if g_lo >= 0.0:
            if lo <= a or abs(lo) > 1e12:
                raise TargetOutsideDomain(f"beta={beta} is below the range of A'")
            hi, lo = lo, (0.5 * (lo + a) if math.isfinite(a) else lo - 2.0 * max(1.0, hi - lo))
        else:
            if hi >= b or abs(hi) > 1e12:
                raise TargetOutsideDomain(f"beta={beta} is above the range of A'")
            lo, hi = hi, (0.5 * (hi + b) if math.isfinite(b) else hi + 2.0 * max(1.0, hi - lo))
    else:
        raise TargetOutsideDomain(f"no bracket for beta={beta}")
    mu = bisect(gap, lo, hi, xtol=1e-15, maxiter=500)
    # A' is steep near a finite boundary, so the attainable accuracy scales with beta^2
    if abs(gap(mu)) > TILT_TOL * max(1.0, beta * beta):
        raise TargetOutsideDomain(f"A' cannot reach beta={beta} to {TILT_TOL}")
    return float(mu)


def _tilt_or_proxy(model: ProcessModel, beta: float, eps_T: float) -> tuple[float, bool]:
    """Tilt at beta, or at beta moved eps_T/2 inward when beta sits on the boundary of dom D."""
    A = model.analytic_A()
    try:
        mu, proxy = tilt_for_target(A, beta), False
    except TargetOutsideDomain:
        D = model.rate
        if not D.evaluate(beta).is_finite:
            raise
        inward = math.copysign(1.0, D.minimizer() - beta)
        mu, proxy = tilt_for_target(A, beta + inward * 0.5 * eps_T), True
        logger.debug("[tilt] boundary target %g tilted at proxy %g", beta, beta + inward * 0.5 * eps_T)
    for problem in TiltedLaw(model.step_law, mu).problems():
        logger.warning("[tilt] %s", problem)
    return mu, proxy


# ============================
# ESTIMATION CORE
# ============================

def _check_common(T: float, n: int, method: str) -> None:
    if T <= 0:
        raise InvalidParameters("T must be positive")
    if n < MIN_SAMPLES:
        raise InvalidParameters(f"n must be >= {MIN_SAMPLES}")
    if method not in METHODS:
        raise InvalidParameters(f"unknown method {method!r}")


def _estimate(model: ProcessModel, T: float, n: int, times: np.ndarray,
              tilts: np.ndarray | None, hit: Callable[[np.ndarray], np.ndarray], *,
              method: str, seed: int, cell: int, target: str, eps: float,
              reference: ExtendedReal | None, proxy: bool = False,
              allow_zero: bool = False, executor: Executor | None = None,
              centre: Callable[[np.ndarray], np.ndarray] | None = None) -> MCEstimate:
    steps = int(math.ceil(T * model.grid_cost))

    def draw(rng, size):
        batch = model.sample_at(rng, size, times, T, tilts, centre)
        hits = hit(batch.values)
        if batch.excursion is not None:
            hits = hits & (batch.excursion / T < eps)
        return LogAccumulator.from_terms(batch.log_weight, hits)

    acc = run_chunks(seed, cell, n, steps, draw, executor)
    if acc.hits == 0 and method == "crude" and not allow_zero:
        raise ZeroHits(f"no hits for {target} at T={T} with n={n}; use the tilted method")
    log_p = acc.log_mean if acc.hits else -math.inf
    est = MCEstimate(
        p_hat=math.exp(log_p) if acc.hits else 0.0,
        log_p_hat=log_p,
        std_err=acc.std_err,
        n=acc.n,
        hits=acc.hits,
        T=float(T),
        method=method,
        target=target,
        eps=eps,
        tilts=tuple(float(m) for m in np.unique(tilts)) if tilts is not None else (),
        proxy=proxy,
        reference=reference,
    )
    logger.info("[%s] T=%g hits=%d p_hat=%.6g log_rate=%s", target, T, acc.hits,
                est.p_hat, float(est.log_rate))
    return est


# ============================
# LOCAL, FDD, FUNCTIONAL
# ============================

def estimate_local(model: ProcessModel, beta: float, T: float, eps: EpsilonSchedule, n: int,
                   method: str = "tilted", conditioning: Mapping | None = None,
                   window: tuple[float, float] = (0.0, 1.0), seed: int = 0, cell: int = 0,
                   executor: Executor | None = None) -> MCEstimate:
    """P((Z(t2) - Z(t1)) / (t2 - t1) within eps_T of beta), t_i = s_i T."""
    _check_common(T, n, method)
    s1, s2 = window
    if not 0.0 <= s1 < s2 <= 1.0:
        raise InvalidParameters("window must satisfy 0 <= s1 < s2 <= 1")
    if conditioning:
        model = model.conditioned(float(conditioning["alpha"]), float(conditioning["eta"]))
    eps_T = eps(T)
    t1, t2 = s1 * T, s2 * T
    times = np.array([0.0, t2]) if t1 == 0 else np.array([0.0, t1, t2])

    tilts, proxy = None, False
    if method == "tilted":
        mu, proxy = _tilt_or_proxy(model, beta, eps_T)
        tilts = np.zeros(times.size - 1)
        tilts[-1] = mu

    def hit(values):
        slope = (values[:, -1] - values[:, -2]) / (t2 - t1)
        return np.abs(slope - beta) < eps_T

    reference = model.rate.evaluate(beta).scale(s2 - s1)
    return _estimate(model, T, n, times, tilts, hit, method=method, seed=seed, cell=cell,
                     target=f"beta={beta:g}", eps=eps_T, reference=reference, proxy=proxy,
                     executor=executor)


def estimate_fdd(model: ProcessModel, p: Partition, betas: Sequence[float], T: float,
                 eps: EpsilonSchedule, n: int, method: str = "tilted", seed: int = 0,
                 cell: int = 0, executor: Executor | None = None) -> MCEstimate:
    _check_common(T, n, method)
    betas = np.asarray(betas, dtype=float)
    if betas.size != p.K:
        raise InvalidParameters(f"need {p.K} betas, got {betas.size}")
    eps_T = eps(T)
    times = p.points * T
    times[-1] = T
    h = p.weights

    tilts, proxy = None, False
    if method == "tilted":
        pairs = [_tilt_or_proxy(model, b, eps_T) for b in betas]
        tilts = np.array([mu for mu, _ in pairs])
        proxy = any(px for _, px in pairs)

    def hit(values):
        slopes = np.diff(values, axis=1) / (h * T)[None, :]
        return np.all(np.abs(slopes - betas[None, :]) < eps_T, axis=1)

    D = model.rate
    reference = sum((D.evaluate(b).scale(w) for b, w in zip(betas, h)), ExtendedReal.finite(0.0))
    target = "betas=" + ";".join(f"{b:g}" for b in betas)
    return _estimate(model, T, n, times, tilts, hit, method=method, seed=seed, cell=cell,
                     target=target, eps=eps_T, reference=reference, proxy=proxy,
                     executor=executor)


def _functional_edges(f: CadlagPath, T: float) -> np.ndarray:
    unit = np.arange(0.0, math.floor(T) + 1.0)
    edges = np.union1d(unit[unit < T], f.s * T)
    return np.append(edges[edges < T], T)


def estimate_functional(model: ProcessModel, f: CadlagPath, T: float, eps: EpsilonSchedule,
                        n: int, method: str = "tilted", seed: int = 0, cell: int = 0,
                        executor: Executor | None = None) -> MCEstimate:
    """P(sup_s |z_T(s) - f(s)| < eps_T) for piecewise-linear f."""
    _check_common(T, n, method)
    if f.kind != "linear":
        raise InvalidPath("the functional estimate needs a piecewise-linear f")
    if model.family == NOISE_PERTURBED and not model.base.is_walk:
        raise InvalidParameters("noise-perturbed renewal paths expose no jump epochs for the tube")
    eps_T = eps(T)
    times = _functional_edges(f, T)
    s_edges = times / T
    D = model.rate

    node_s = np.append(f.s, 1.0) if f.s[-1] < 1.0 else f.s
    node_v = f.value(node_s)
    seg_slopes = np.diff(node_v) / np.diff(node_s) if node_s.size > 1 else np.zeros(1)

    tilts, proxy = None, False
    if method == "tilted":
        chosen = {}
        for slope in np.unique(seg_slopes):
            if not D.evaluate(slope).is_finite:
                raise SlopeOutsideDomain(f"segment slope {slope:g} is outside dom D")
            chosen[slope] = _tilt_or_proxy(model, float(slope), eps_T)
        mids = 0.5 * (s_edges[:-1] + s_edges[1:])
        seg = np.clip(np.searchsorted(node_s, mids) - 1, 0, seg_slopes.size - 1)
        tilts = np.array([chosen[seg_slopes[k]][0] for k in seg])
        proxy = any(px for _, px in chosen.values())

    def hit(values):
        return tube_distance(values / T, s_edges, f) < eps_T

    # renewal paths jump off the grid; walks only move at integer times, which are grid points
    centre = None
    if not (model.is_walk or model.family == NOISE_PERTURBED):
        centre = lambda t: T * f.value(t / T)
    reference = deviation_integral_J(f, D).value
    return _estimate(model, T, n, times, tilts, hit, method=method, seed=seed, cell=cell,
                     target="tube", eps=eps_T, reference=reference, proxy=proxy,
                     executor=executor, centre=centre)


def estimate_interval(model: ProcessModel, lo: float, hi: float, T: float, n: int,
                      method: str = "tilted", seed: int = 0, cell: int = 0,
                      executor: Executor | None = None) -> MCEstimate:
    """P(lo < (Z(T) - Z(0)) / T < hi), compared with inf of D over (lo, hi)."""
    _check_common(T, n, method)
    if not lo < hi:
        raise InvalidParameters("need lo < hi")
    D = model.rate
    times = np.array([0.0, float(T)])
    tilts, proxy = None, False
    if method == "tilted":
        m = D.minimizer()
        edge = None if lo < m < hi else (lo if m <= lo else hi)
        if edge is not None and math.isfinite(edge):
            mu, proxy = _tilt_or_proxy(model, edge, 0.5 * min(hi - lo, 1.0))
            tilts = np.array([mu])
        else:
            tilts = np.zeros(1)

    def hit(values):
        z = (values[:, -1] - values[:, 0]) / T
        return (z > lo) & (z < hi)

    return _estimate(model, T, n, times, tilts, hit, method=method, seed=seed, cell=cell,
                     target=f"({lo:g},{hi:g})", eps=math.nan,
                     reference=rate_of_set(D, lo, hi), proxy=proxy, executor=executor)


# ============================
# UNIFORMITY OVER INITIAL CONDITIONS
# ============================

@dataclass(frozen=True)
class UniformityReport:
    rows: pd.DataFrame

    @property
    def worst(self) -> pd.Series:
        return self.rows.loc[self.rows["abs_gap"].idxmax()]


def uniformity_scan(model: ProcessModel, beta: float, T: float, eps: EpsilonSchedule, n: int,
                    alpha: float, eta: float, points: int = 5, method: str = "tilted",
                    seed: int = 0) -> UniformityReport:
    """Local estimates from initial values spread over the band (alpha +- eta/2) T."""
    if points < 1 or eta <= 0:
        raise InvalidParameters("need points >= 1 and eta > 0")
    offsets = np.linspace(-0.45, 0.45, points) if points > 1 else np.zeros(1)
    rows = []
    for k, u in enumerate(offsets):
        z0 = (alpha + u * eta) * T
        est = estimate_local(model.with_initial(InitialLaw(z0)), beta, T, eps, n,
                             method=method, seed=seed, cell=k)
        rows.append({"z0": z0, **est.to_row()})
    report = UniformityReport(pd.DataFrame(rows))
    logger.info("[uniformity] beta=%g T=%g worst gap %.4g", beta, T, report.worst["abs_gap"])
    return report


# ============================
# VARADHAN FUNCTIONAL
# ============================

PHI_KINDS = ("linear", "quadratic-capped", "piecewise-linear")


@dataclass(frozen=True)
class PhiFunction:
    kind: str
    slope: float = 0.0
    coef: float = 0.0
    cap: float = math.inf
    knots: tuple = ()
    values: tuple = ()

    def __post_init__(self):
        if self.kind not in PHI_KINDS:
            raise InvalidParameters(f"phi must be one of {PHI_KINDS}, got {self.kind!r}")
        if self.kind == "quadratic-capped" and self.coef > 0 and not math.isfinite(self.cap):
            raise InvalidParameters("a growing quadratic phi needs a finite cap")
        if self.kind == "piecewise-linear":
            k = np.asarray(self.knots, dtype=float)
            if k.size == 0 or k.size != len(self.values) or np.any(np.diff(k) <= 0):
                raise InvalidParameters("piecewise-linear phi needs increasing knots with values")

    @classmethod
    def from_spec(cls, spec: Mapping) -> "PhiFunction":
        spec = dict(spec)
        kind = spec.pop("kind", "")
        for key in ("knots", "values"):
            if key in spec:
                spec[key] = tuple(float(x) for x in spec[key])
        try:
            return cls(kind, **spec)
        except TypeError as e:
            raise InvalidParameters(f"bad phi parameters: {e}") from e

    def __call__(self, alpha) -> np.ndarray:
        alpha = np.asarray(alpha, dtype=float)
        if self.kind == "linear":
            return self.slope * alpha
        if self.kind == "quadratic-capped":
            return np.minimum(self.coef * alpha * alpha, self.cap)
        return np.interp(alpha, self.knots, self.values)


def varadhan_reference(phi: PhiFunction, D: RateFunction) -> tuple[float, float]:
    """(sup_alpha (phi - D), maximiser) by grid search and a bounded refinement."""
    a, b = D.domain.search_bounds()
    lo, hi = max(a, -50.0), min(b, 50.0)
    if lo == hi:
        return float(phi(lo) - D.values(lo)[0]), lo
    grid = np.linspace(lo, hi, 20001)
    g = phi(grid) - D.values(grid)
    i = int(np.argmax(g))
    best, arg = float(g[i]), float(grid[i])
    left, right = grid[max(i - 1, 0)], grid[min(i + 1, grid.size - 1)]
    res = minimize_scalar(lambda x: -float(phi(x) - D.values(x)[0]), bounds=(left, right),
                          method="bounded", options={"xatol": 1e-12})
    if -res.fun > best:
        best, arg = float(-res.fun), float(res.x)
    return best, arg


def varadhan_estimate(model: ProcessModel, phi: PhiFunction, T: float, n: int,
                      method: str = "crude", seed: int = 0, cell: int = 0) -> LogMomentEstimate:
    """(1/T) ln mean exp(T phi(Z(T)/T))."""
    if method not in METHODS:
        raise InvalidParameters(f"unknown method {method!r}")
    tilt = None
    if method == "tilted":
        if phi.kind == "linear":
            tilt = phi.slope
        else:
            _, arg = varadhan_reference(phi, model.rate)
            tilt, _ = _tilt_or_proxy(model, arg, 1e-3)
        tilt = tilt or None
    return log_moment(model, T, n, seed, cell, lambda b: T * phi(b.values[:, -1] / T), tilt, method)


def varadhan_functional(model: ProcessModel, phi: PhiFunction, T: float, n: int,
                        method: str = "crude", seed: int = 0) -> float:
    return varadhan_estimate(model, phi, T, n, method, seed).value


# ============================
# EXPONENTIAL TIGHTNESS
# ============================

DEFAULT_V_GRID = tuple(np.round(np.arange(1, 401) * 0.05, 10))


def chernoff_rate(D: RateFunction, v: float) -> ExtendedReal:
    """inf of D over {|alpha| >= v}."""
    right = rate_of_set(D, v, math.inf, closed=True)
    left = rate_of_set(D, -math.inf, -v, closed=True)
    return right if right <= left else left


@dataclass(frozen=True)
class TightnessReport:
    rows: pd.DataFrame


def exponential_tightness_scan(model: ProcessModel, N_targets: Sequence[float],
                               T_grid: Sequence[float], n: int,
                               v_grid: Sequence[float] = DEFAULT_V_GRID,
                               seed: int = 0) -> TightnessReport:
    """Smallest scanned v whose Chernoff rate reaches each N, with MC estimates of P(|z(T)| > v)."""
    D = model.rate
    v_grid = np.asarray(v_grid, dtype=float)
    if np.any(v_grid <= 0):
        raise InvalidParameters("scanned v must be positive")
    bounds = [chernoff_rate(D, v) for v in v_grid]
    rows = []
    cell = 0
    for N in N_targets:
        k = next((i for i, r in enumerate(bounds) if r >= N), None)
        if k is None:
            raise ScanExhausted(f"no scanned v reaches rate {N}")
        v, bound = float(v_grid[k]), bounds[k]
        side = v if rate_of_set(D, v, math.inf, closed=True) <= bound else -v
        try:
            tilts, method = np.array([tilt_for_target(model.analytic_A(), side)]), "tilted"
        except TargetOutsideDomain:
            tilts, method = None, "crude"
        for T in T_grid:
            est = _estimate(model, T, n, np.array([0.0, float(T)]), tilts,
                            lambda vals, v=v, T=T: np.abs(vals[:, -1] - vals[:, 0]) / T > v,
                            method=method, seed=seed, cell=cell, target=f"|z|>{v:g}",
                            eps=math.nan, reference=bound, allow_zero=True)
            cell += 1
            rows.append({"N": N, "v": v, "bound_rate": float(bound), "T": T,
                         "method": est.method_label, "p_hat": est.p_hat,
                         "std_err": est.std_err, "log_rate": float(est.log_rate)})
    return TightnessReport(pd.DataFrame(rows))


# ============================
# RATE FIT
# ============================

@dataclass(frozen=True)
class RateFit:
    rate: float
    intercept: float
    n_points: int


def fit_rate(estimates: Sequence[MCEstimate]) -> RateFit:
    """Least-squares fit of ln p_hat(T) = -r T + b over estimates with hits."""
    used = [e for e in estimates if e.hits > 0]
    if len(used) < 2:
        raise InvalidParameters("a rate fit needs at least two estimates with hits")
    X = np.array([[e.T] for e in used])
    y = np.array([e.log_p_hat for e in used])
    reg = LinearRegression().fit(X, y)
    return RateFit(float(-reg.coef_[0]), float(reg.intercept_), len(used))
