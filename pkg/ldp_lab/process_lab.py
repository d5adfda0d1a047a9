"""Process models, trajectories and empirical checks of conditions [A] and [B]."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace
from functools import cached_property
from typing import Callable, Mapping, Sequence

import numpy as np
import pandas as pd
from numpy.lib.stride_tricks import sliding_window_view

from ldp_lab.convex_core import FundamentalFunction, RateFunction, legendre_transform
from ldp_lab.errors import GridTooCoarse, InvalidParameters, UnknownFamily
from ldp_lab.laws import DiscreteLaw, GaussianLaw, StepLaw, law_from_spec
from ldp_lab.montecarlo import LogAccumulator, run_chunks, stream
from ldp_lab.path_integral import CadlagPath

logger = logging.getLogger(__name__)

# ============================
# FAMILIES
# ============================

BOUNDED_STEP = "bounded-step"
GAUSSIAN = "gaussian"
COMPOUND_RENEWAL = "compound-renewal"
NOISE_PERTURBED = "noise-perturbed"
FAMILIES = (BOUNDED_STEP, GAUSSIAN, COMPOUND_RENEWAL, NOISE_PERTURBED)

INTERARRIVALS = ("exponential", "deterministic")
NOISE_KINDS = ("envelope", "gaussian")

_TIME_EPS = 1e-9

CONDITIONING_NOTE = (
    "conditioning is realised by an initial law supported inside the band "
    "(alpha - eta/2, alpha + eta/2) T; the check certifies condition [A] for "
    "this constructed initial law only"
)


def _floor(t) -> np.ndarray:
    return np.floor(np.asarray(t, dtype=float) + _TIME_EPS).astype(np.int64)


@dataclass(frozen=True)
class InitialLaw:
    """Z(0): a point mass at z0, or uniform on the conditioning band.

    The band has half-width eta T / 2 around alpha T, so it sits inside
    (alpha T - eta T, alpha T + eta T).
    """

    z0: float = 0.0
    alpha: float | None = None
    eta: float | None = None

    def __post_init__(self):
        if (self.alpha is None) != (self.eta is None):
            raise InvalidParameters("conditioning needs both alpha and eta")
        if self.eta is not None and self.eta <= 0:
            raise InvalidParameters("eta must be positive")

    @classmethod
    def band(cls, alpha: float, eta: float) -> "InitialLaw":
        return cls(0.0, float(alpha), float(eta))

    @property
    def conditioned(self) -> bool:
        return self.alpha is not None

    def sample(self, rng: np.random.Generator, n: int, T: float) -> np.ndarray:
        if not self.conditioned:
            return np.full(n, float(self.z0))
        half = 0.5 * self.eta * T
        return rng.uniform(self.alpha * T - half, self.alpha * T + half, n)


@dataclass(frozen=True)
class NoiseModel:
    """Independent noise Y(t): c log(2+t) U with U uniform on [-1, 1], or N(0, c^2 log(2+t))."""

    kind: str = "envelope"
    scale: float = 1.0

    def __post_init__(self):
        if self.kind not in NOISE_KINDS:
            raise UnknownFamily(f"unknown noise kind {self.kind!r}")
        if self.scale < 0:
            raise InvalidParameters("noise scale must be nonnegative")

    def sample(self, rng: np.random.Generator, n: int, times: np.ndarray) -> np.ndarray:
        env = np.log(2.0 + times)[None, :]
        if self.kind == "envelope":
            return self.scale * env * rng.uniform(-1.0, 1.0, (n, times.size))
        return self.scale * np.sqrt(env) * rng.standard_normal((n, times.size))

    def envelope(self, t: float) -> float:
        return self.scale * math.log(2.0 + t)


@dataclass(frozen=True)
class SampleBatch:
    """Z at the requested times for n paths, plus ln dP/dQ of each path.

    excursion, when requested, is the largest |Z - centre| seen on either side of
    every arrival epoch of a renewal path.
    """

    values: np.ndarray
    log_weight: np.ndarray
    excursion: np.ndarray | None = None


@dataclass(frozen=True, eq=False)
class ProcessModel:
    family: str
    step: StepLaw | None = None
    interarrival: str = "exponential"
    arrival_rate: float = 1.0
    base: "ProcessModel | None" = None
    noise: NoiseModel | None = None
    initial: InitialLaw = field(default_factory=InitialLaw)

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise UnknownFamily(f"unknown process family {self.family!r}")
        if self.family == BOUNDED_STEP and not isinstance(self.step, DiscreteLaw):
            raise InvalidParameters("bounded-step walks need a finite-support step law")
        if self.family == GAUSSIAN and not isinstance(self.step, GaussianLaw):
            raise InvalidParameters("gaussian walks need a gaussian step law")
        if self.family == COMPOUND_RENEWAL:
            if self.step is None:
                raise InvalidParameters("compound renewal needs a jump law")
            if self.interarrival not in INTERARRIVALS:
                raise UnknownFamily(f"unknown inter-arrival law {self.interarrival!r}")
            if self.arrival_rate <= 0:
                raise InvalidParameters("arrival_rate must be positive")
        if self.family == NOISE_PERTURBED:
            if self.base is None or self.noise is None:
                raise InvalidParameters("noise-perturbed models need a base model and a noise model")
            if self.base.family == NOISE_PERTURBED:
                raise InvalidParameters("noise can only be added once")

    # ----------------------------
    # analytic quantities
    # ----------------------------

    @property
    def is_walk(self) -> bool:
        return self.family in (BOUNDED_STEP, GAUSSIAN)

    @property
    def step_law(self) -> StepLaw:
        return self.base.step if self.family == NOISE_PERTURBED else self.step

    @property
    def label(self) -> str:
        if self.family == NOISE_PERTURBED:
            return f"{self.base.label}+{self.noise.kind}-noise"
        if self.family == COMPOUND_RENEWAL:
            return f"crp({self.interarrival}, r={self.arrival_rate}, {self.step.name})"
        return f"walk({self.step.name})"

    def analytic_A(self) -> FundamentalFunction:
        if self.family == NOISE_PERTURBED:
            return self.base.analytic_A()
        law = self.step
        if self.is_walk:
            return law.fundamental()
        r = self.arrival_rate
        if self.interarrival == "exponential":
            return FundamentalFunction(
                func=lambda m: r * np.expm1(law.log_mgf(m)),
                domain=law.mgf_domain,
                derivative=lambda m: r * np.exp(law.log_mgf(m)) * law.dlog_mgf(m),
                label=self.label,
            )
        return FundamentalFunction(
            func=lambda m: r * law.log_mgf(m),
            domain=law.mgf_domain,
            derivative=lambda m: r * law.dlog_mgf(m),
            label=self.label,
        )

    @cached_property
    def rate(self) -> RateFunction:
        if self.family == NOISE_PERTURBED:
            return self.base.rate
        if self.is_walk:
            return self.step.rate()
        return legendre_transform(self.analytic_A(), np.linspace(-10, 10, 2001))

    def with_initial(self, initial: InitialLaw) -> "ProcessModel":
        return replace(self, initial=initial)

    def conditioned(self, alpha: float, eta: float) -> "ProcessModel":
        return self.with_initial(InitialLaw.band(alpha, eta))

    def increment_log_mgf(self, mu: float, t0: float, t1: float) -> float:
        """ln E exp(mu (Z(t1) - Z(t0))) for the noise-free part."""
        if self.family == NOISE_PERTURBED:
            return self.base.increment_log_mgf(mu, t0, t1)
        lm = float(self.step.log_mgf(mu)[0])
        if self.is_walk:
            return float(_floor(t1) - _floor(t0)) * lm
        r = self.arrival_rate
        if self.interarrival == "exponential":
            return (t1 - t0) * r * math.expm1(lm)
        return float(_floor(t1 * r) - _floor(t0 * r)) * lm

    @property
    def grid_cost(self) -> float:
        """Random draws per unit time, used to size Monte Carlo chunks."""
        if self.family == NOISE_PERTURBED:
            return self.base.grid_cost + 1.0
        return 1.0 if self.is_walk else max(1.0, self.arrival_rate)

    # ----------------------------
    # sampling
    # ----------------------------

    def sample_at(self, rng: np.random.Generator, n: int, times: np.ndarray, T: float,
                  tilts: Sequence[float] | None = None,
                  centre: Callable[[np.ndarray], np.ndarray] | None = None) -> SampleBatch:
        """Sample Z at increasing `times` (times[0] = 0).

        tilts[c], when given, is the exponential tilt used on (times[c], times[c+1]];
        log_weight then holds the likelihood ratio back to the untilted law.
        With `centre`, renewal paths also report their excursion from centre(t)
        at the arrival epochs; walks only jump at integer times and report none.
        """
        times = np.asarray(times, dtype=float)
        if times[0] != 0.0 or np.any(np.diff(times) <= 0):
            raise InvalidParameters("sample times must start at 0 and increase")
        cells = times.size - 1
        mus = np.zeros(cells) if tilts is None else np.asarray(tilts, dtype=float)
        if mus.shape != (cells,):
            raise InvalidParameters("one tilt per cell is required")
        model = self.base if self.family == NOISE_PERTURBED else self
        track = centre is not None
        if track and self.family == NOISE_PERTURBED:
            raise InvalidParameters("noise-perturbed paths have no excursion between sample times")
        if model.is_walk:
            base, log_w = model._walk_increments(rng, n, times, mus)
            arrivals = None
        else:
            base, log_w, arrivals = model._renewal_increments(rng, n, times, mus, track)
        start = self.initial.sample(rng, n, T)
        values = start[:, None] + base
        if self.family == NOISE_PERTURBED:
            values = values + self.noise.sample(rng, n, times)
        excursion = None
        if arrivals is not None:
            owner, epoch, before, after = arrivals
            c = centre(epoch)
            gap = np.maximum(np.abs(start[owner] + before - c), np.abs(start[owner] + after - c))
            excursion = np.zeros(n)
            np.maximum.at(excursion, owner, gap)
        return SampleBatch(values, log_w, excursion)

    def _walk_increments(self, rng, n, times, mus):
        law = self.step
        N = int(_floor(times[-1]))
        xi = np.zeros((n, N))
        log_w = np.zeros(n)
        if N:
            j = np.arange(1, N + 1)
            step_mu = mus[np.searchsorted(times, j - _TIME_EPS, side="left") - 1]
            for mu in np.unique(step_mu):
                cols = np.flatnonzero(step_mu == mu)
                if mu == 0.0:
                    xi[:, cols] = law.sample(rng, (n, cols.size))
                    continue
                draws = law.tilt(mu).sample(rng, (n, cols.size))
                xi[:, cols] = draws
                log_w += -mu * draws.sum(axis=1) + cols.size * float(law.log_mgf(mu)[0])
        partial = np.concatenate([np.zeros((n, 1)), np.cumsum(xi, axis=1)], axis=1)
        return partial[:, _floor(times)], log_w

    def _renewal_increments(self, rng, n, times, mus, track=False):
        """Per-cell increments; with `track`, also (owner, epoch, before, after) per jump.

        before/after are Z - Z(0) just before and at each arrival epoch.
        """
        law, r = self.step, self.arrival_rate
        inc = np.zeros((n, times.size - 1))
        log_w = np.zeros(n)
        owner = np.arange(n)
        level = np.zeros(n)
        parts = []
        for c, (t0, t1) in enumerate(zip(times[:-1], times[1:])):
            mu = float(mus[c])
            lm = float(law.log_mgf(mu)[0]) if mu else 0.0
            jump_law = law.tilt(mu) if mu else law
            if self.interarrival == "exponential":
                counts = rng.poisson(r * math.exp(lm) * (t1 - t0), n)
                draws = jump_law.sample(rng, int(counts.sum()))
                who = np.repeat(owner, counts)
                inc[:, c] = np.bincount(who, weights=draws, minlength=n)
                if track and draws.size:
                    # given the counts, epochs are uniform order statistics per path
                    u = rng.uniform(t0, t1, draws.size)
                    epoch = u[np.lexsort((u, who))]
                    parts.append(_jump_levels(who, epoch, draws, level, counts))
                if mu:
                    log_w += -mu * inc[:, c] + (t1 - t0) * r * math.expm1(lm)
            else:
                k0 = int(_floor(t0 * r))
                k = int(_floor(t1 * r)) - k0
                if k:
                    draws = jump_law.sample(rng, (n, k))
                    inc[:, c] = draws.sum(axis=1)
                    if track:
                        epoch = np.tile((k0 + np.arange(1, k + 1)) / r, n)
                        parts.append(_jump_levels(np.repeat(owner, k), epoch, draws.ravel(),
                                                  level, np.full(n, k)))
                if mu:
                    log_w += -mu * inc[:, c] + k * lm
            level = level + inc[:, c]
        base = np.concatenate([np.zeros((n, 1)), np.cumsum(inc, axis=1)], axis=1)
        if not track:
            return base, log_w, None
        if not parts:
            empty = np.zeros(0)
            return base, log_w, (np.zeros(0, dtype=np.int64), empty, empty, empty)
        return base, log_w, tuple(np.concatenate(col) for col in zip(*parts))


def _jump_levels(who, epoch, draws, level, counts):
    """Levels on both sides of each jump; draws are grouped by path in owner order."""
    after = np.cumsum(draws)
    starts = np.concatenate([[0.0], after])[np.repeat(np.cumsum(counts) - counts, counts)]
    after = level[who] + after - starts
    return who, epoch, after - draws, after


def model_from_spec(spec: Mapping) -> ProcessModel:
    family = str(spec.get("family", "")).lower()
    initial = InitialLaw(float(spec.get("z0", 0.0)))
    if family == NOISE_PERTURBED:
        noise = spec.get("noise") or {}
        return ProcessModel(
            family,
            base=model_from_spec(spec.get("base") or {}),
            noise=NoiseModel(str(noise.get("kind", "envelope")), float(noise.get("scale", 1.0))),
            initial=initial,
        )
    if family == COMPOUND_RENEWAL:
        return ProcessModel(
            family,
            step=law_from_spec(spec.get("jump") or {}),
            interarrival=str(spec.get("interarrival", "exponential")),
            arrival_rate=float(spec.get("arrival_rate", 1.0)),
            initial=initial,
        )
    if family == GAUSSIAN and "step" not in spec:
        step = GaussianLaw(float(spec.get("mean", 0.0)), float(spec.get("sd", 1.0)))
        return ProcessModel(family, step=step, initial=initial)
    if family in (BOUNDED_STEP, GAUSSIAN):
        return ProcessModel(family, step=law_from_spec(spec.get("step") or {}), initial=initial)
    raise UnknownFamily(f"unknown process family {family!r}")


def rademacher_walk(p: float = 0.5, z0: float = 0.0) -> ProcessModel:
    return ProcessModel(BOUNDED_STEP, step=DiscreteLaw((-1.0, 1.0), (1.0 - p, p)),
                        initial=InitialLaw(z0))


# ============================
# TRAJECTORIES
# ============================

@dataclass(frozen=True, eq=False)
class Trajectory:
    times: np.ndarray
    values: np.ndarray
    T: float
    seed: int

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame({"t": self.times, "Z": self.values})

    @property
    def grid_step(self) -> float:
        return float(self.times[1] - self.times[0]) if self.times.size > 1 else float(self.T)


def simulate(model: ProcessModel, T: float, grid_step: float, seed: int) -> Trajectory:
    if T <= 0 or grid_step <= 0:
        raise InvalidParameters("T and grid_step must be positive")
    m = int(round(T / grid_step))
    if m < 1 or abs(m * grid_step - T) > 1e-9 * max(1.0, T):
        raise InvalidParameters(f"grid_step {grid_step} does not divide T={T}")
    times = np.arange(m + 1, dtype=float) * grid_step
    times[-1] = T
    batch = model.sample_at(stream(seed), 1, times, T)
    return Trajectory(times, batch.values[0], float(T), int(seed))


def rescale(traj: Trajectory) -> CadlagPath:
    return CadlagPath.sampled(traj.times / traj.T, traj.values / traj.T)


# ============================
# CONDITION [A]
# ============================

@dataclass(frozen=True)
class LogMomentEstimate:
    """(1/T) ln of a sample mean, with its delta-method standard error."""

    value: float
    std_err: float
    n: int
    method: str


def log_moment(model: ProcessModel, T: float, n: int, seed: int, cell: int,
                terms: Callable[[SampleBatch], np.ndarray], tilt: float | None,
                method: str) -> LogMomentEstimate:
    if n < 1:
        raise InvalidParameters("n_samples must be >= 1")
    if T <= 0:
        raise InvalidParameters("T must be positive")
    times = np.array([0.0, float(T)])
    tilts = None if tilt is None else [tilt]

    def draw(rng, size):
        batch = model.sample_at(rng, size, times, T, tilts)
        return LogAccumulator.from_terms(terms(batch) + batch.log_weight)

    acc = run_chunks(seed, cell, n, int(math.ceil(T * model.grid_cost)), draw)
    std_err = math.sqrt(acc.rel_var / acc.n) / T
    return LogMomentEstimate(acc.log_mean / T, std_err, acc.n, method)


def estimate_cgf(model: ProcessModel, mu: float, T: float, n_samples: int,
                 conditioning: Mapping | None = None, method: str = "crude",
                 seed: int = 0, cell: int = 0) -> LogMomentEstimate:
    """(1/T) ln mean exp(mu (Z(T) - alpha T)); "tilted" samples under the mu-tilted law."""
    if method not in ("crude", "tilted"):
        raise InvalidParameters(f"unknown method {method!r}")
    alpha = 0.0
    if conditioning:
        alpha = float(conditioning["alpha"])
        model = model.conditioned(alpha, float(conditioning["eta"]))
    tilt = float(mu) if method == "tilted" and mu != 0 else None
    est = log_moment(model, T, n_samples, seed, cell,
                      lambda b: mu * (b.values[:, -1] - alpha * T), tilt, method)
    logger.debug("[cgf] mu=%g T=%g %s -> %.6g (se %.2g)", mu, T, method, est.value, est.std_err)
    return est


def empirical_cgf(model: ProcessModel, mu: float, T: float, n_samples: int,
                  conditioning: Mapping | None = None, method: str = "crude",
                  seed: int = 0) -> float:
    return estimate_cgf(model, mu, T, n_samples, conditioning, method, seed).value


@dataclass(frozen=True)
class ConditionAReport:
    rows: pd.DataFrame
    note: str = ""

    @property
    def passed(self) -> bool:
        return bool(self.rows["within"].all())


def check_condition_A(model: ProcessModel, mu_grid: Sequence[float], T: float, n: int,
                      conditioning: Mapping | None = None, seed: int = 0,
                      method: str = "crude", slack: float = 0.05) -> ConditionAReport:
    A = model.analytic_A()
    eta = float(conditioning["eta"]) if conditioning else 0.0
    rows = []
    for k, mu in enumerate(mu_grid):
        est = estimate_cgf(model, mu, T, n, conditioning, method, seed, cell=k)
        analytic = float(A.values(mu)[0])
        gap = est.value - analytic
        allowed = slack + 3.0 * est.std_err + 0.5 * abs(mu) * eta
        rows.append({"mu": mu, "empirical": est.value, "std_err": est.std_err,
                     "analytic": analytic, "gap": gap, "within": bool(abs(gap) <= allowed)})
    report = ConditionAReport(pd.DataFrame(rows), CONDITIONING_NOTE if conditioning else "")
    logger.info("[condition-A] %s T=%g passed=%s", model.label, T, report.passed)
    return report


# ============================
# CONDITION [B]
# ============================

@dataclass(frozen=True)
class OscillationBudget:
    V: Callable[[float], float]
    W: Callable[[float], float]

    @classmethod
    def linear(cls, gamma0: float, gamma1: float) -> "OscillationBudget":
        if gamma0 < 0 or gamma1 < 0:
            raise InvalidParameters("budget constants must be nonnegative")
        return cls(V=lambda T: gamma0, W=lambda d: gamma1 * d)


@dataclass(frozen=True)
class ConditionBReport:
    rows: pd.DataFrame

    @property
    def passed(self) -> bool:
        return bool(self.rows["passed"].all())


def _uniform_step(traj: Trajectory) -> float:
    dt = np.diff(traj.times)
    if dt.size == 0:
        raise GridTooCoarse("trajectory has a single grid point")
    if np.any(np.abs(dt - dt[0]) > 1e-9 * max(1.0, dt[0])):
        raise InvalidParameters("trajectory grid must be uniform")
    return float(dt[0])


def check_condition_B(traj: Trajectory, budget: OscillationBudget,
                      delta_grid: Sequence[float]) -> ConditionBReport:
    """Grid sup of |Z(uT) - Z(vT)| over |u - v| <= delta against V(T) + W(delta) T."""
    dt = _uniform_step(traj)
    z = traj.values
    rows = []
    for delta in delta_grid:
        span = delta * traj.T / dt
        if span < 1.0 - _TIME_EPS:
            raise GridTooCoarse(f"delta={delta} spans less than one grid step")
        # piecewise-constant paths: a window of length delta T can meet ceil(span) + 1 grid values
        w = min(int(math.ceil(span - _TIME_EPS)), z.size - 1)
        windows = sliding_window_view(z, w + 1)
        osc = windows.max(axis=1) - windows.min(axis=1)
        i = int(np.argmax(osc))
        lo_at = i + int(np.argmin(windows[i]))
        hi_at = i + int(np.argmax(windows[i]))
        bound = float(budget.V(traj.T)) + float(budget.W(delta)) * traj.T
        if bound < 0:
            raise InvalidParameters("budget must be nonnegative")
        rows.append({
            "delta": float(delta),
            "sup_osc": float(osc[i]),
            "bound": bound,
            "passed": bool(osc[i] <= bound + 1e-12),
            "u": float(traj.times[min(lo_at, hi_at)]),
            "v": float(traj.times[max(lo_at, hi_at)]),
        })
    return ConditionBReport(pd.DataFrame(rows))


@dataclass(frozen=True)
class LipschitzReport:
    passed: bool
    worst_lag: int
    worst_excess: float


def check_almost_lipschitz(traj: Trajectory, gamma0: float, gamma1: float,
                           v0: float = 0.0) -> LipschitzReport:
    """sup_{0<=u<=v} |Z(t+u) - Z(t)| <= gamma0 + gamma1 v for all t and all v >= v0."""
    dt = _uniform_step(traj)
    z = traj.values
    N = z.size - 1
    if N == 0:
        return LipschitzReport(True, 0, -math.inf)
    # lag L+1 is reachable for every v > L dt
    reach = np.array([np.abs(z[lag:] - z[:-lag]).max() for lag in range(1, N + 1)])
    reach = np.maximum.accumulate(reach)
    v = np.arange(N) * dt
    excess = reach - (gamma0 + gamma1 * v)
    excess = np.where(v >= v0 - _TIME_EPS, excess, -np.inf)
    worst = int(np.argmax(excess))
    return LipschitzReport(bool(excess[worst] <= 1e-12), worst + 1, float(excess[worst]))
