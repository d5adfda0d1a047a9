"""One-step laws for walks and compound renewal jumps.

Each law knows its log-MGF, its exact exponential tilt and how to sample
itself, which is all the tilted estimators need.
"""

from __future__ import annotations

import abc
import math
from dataclasses import dataclass
from typing import Mapping

import numpy as np
from scipy import stats
from scipy.special import logsumexp

from ldp_lab.convex_core import (
    FundamentalFunction,
    Interval,
    RateFunction,
    exponential_rate,
    gaussian_rate,
    legendre_transform,
    poisson_rate,
    rademacher_rate,
)
from ldp_lab.errors import InvalidParameters, TargetOutsideDomain, UnknownFamily

NORMALIZATION_TOL = 1e-12


class StepLaw(abc.ABC):
    """Law of a single step xi."""

    name: str = ""

    @abc.abstractmethod
    def log_mgf(self, mu) -> np.ndarray:
        """ln E exp(mu xi); +inf outside the MGF domain."""

    @abc.abstractmethod
    def dlog_mgf(self, mu) -> np.ndarray:
        ...

    @property
    @abc.abstractmethod
    def mgf_domain(self) -> Interval:
        ...

    @abc.abstractmethod
    def tilt(self, mu: float) -> "StepLaw":
        """Law with density proportional to exp(mu x) times this one."""

    @abc.abstractmethod
    def sample(self, rng: np.random.Generator, size) -> np.ndarray:
        ...

    @abc.abstractmethod
    def log_density(self, x) -> np.ndarray:
        ...

    @property
    @abc.abstractmethod
    def mean(self) -> float:
        ...

    @property
    def bound(self) -> float:
        """sup |xi|, +inf for unbounded laws."""
        return math.inf

    def fundamental(self) -> FundamentalFunction:
        return FundamentalFunction(
            func=lambda m: self.log_mgf(m),
            domain=self.mgf_domain,
            derivative=lambda m: self.dlog_mgf(m),
            label=self.name,
        )

    def rate(self) -> RateFunction:
        return legendre_transform(self.fundamental(), np.linspace(-10, 10, 2001))

    def _check_tilt(self, mu: float) -> None:
        if not bool(self.mgf_domain.contains(mu)):
            raise TargetOutsideDomain(f"{self.name}: tilt mu={mu} outside the MGF domain")


# ============================
# DISCRETE
# ============================

@dataclass(frozen=True, eq=False)
class DiscreteLaw(StepLaw):
    support: tuple
    probs: tuple

    def __post_init__(self):
        x = np.asarray(self.support, dtype=float)
        p = np.asarray(self.probs, dtype=float)
        if x.ndim != 1 or x.shape != p.shape or x.size == 0:
            raise InvalidParameters("support and probs must be matching nonempty lists")
        if np.any(np.diff(x) <= 0):
            raise InvalidParameters("support must be strictly increasing")
        if np.any(p < 0) or abs(math.fsum(p) - 1.0) > NORMALIZATION_TOL:
            raise InvalidParameters("probabilities must be nonnegative and sum to 1")
        keep = p > 0
        object.__setattr__(self, "support", tuple(x[keep]))
        object.__setattr__(self, "probs", tuple(p[keep]))

    @property
    def name(self) -> str:
        return f"discrete({len(self.support)} atoms)"

    @property
    def _x(self) -> np.ndarray:
        return np.asarray(self.support)

    @property
    def _logp(self) -> np.ndarray:
        return np.log(np.asarray(self.probs))

    def log_mgf(self, mu):
        mu = np.atleast_1d(np.asarray(mu, dtype=float))
        return logsumexp(mu[:, None] * self._x[None, :] + self._logp[None, :], axis=1)

    def dlog_mgf(self, mu):
        mu = np.atleast_1d(np.asarray(mu, dtype=float))
        w = mu[:, None] * self._x[None, :] + self._logp[None, :]
        w = np.exp(w - logsumexp(w, axis=1, keepdims=True))
        return w @ self._x

    @property
    def mgf_domain(self) -> Interval:
        return Interval.real_line()

    def tilt(self, mu: float) -> "DiscreteLaw":
        w = mu * self._x + self._logp
        p = np.exp(w - logsumexp(w))
        return DiscreteLaw(self.support, tuple(p / math.fsum(p)))

    def sample(self, rng, size):
        cdf = np.cumsum(self.probs)
        cdf[-1] = 1.0
        idx = np.searchsorted(cdf, rng.random(size), side="right")
        return self._x[np.minimum(idx, cdf.size - 1)]

    def log_density(self, x):
        x = np.asarray(x, dtype=float)
        idx = np.clip(np.searchsorted(self._x, x), 0, self._x.size - 1)
        hit = self._x[idx] == x
        return np.where(hit, self._logp[idx], -np.inf)

    @property
    def mean(self) -> float:
        return float(np.dot(self.probs, self.support))

    @property
    def bound(self) -> float:
        return float(np.max(np.abs(self._x)))

    def rate(self) -> RateFunction:
        x = self._x
        if x.size == 1:
            return RateFunction(domain=Interval.point(float(x[0])),
                                func=lambda a: np.zeros_like(a), zero_point=float(x[0]),
                                label=f"D[{self.name}]")
        if x.size == 2 and x[0] == -1.0 and x[1] == 1.0:
            return rademacher_rate(self.probs[1])
        return legendre_transform(self.fundamental(), np.linspace(x[0], x[-1], 2001))


# ============================
# CONTINUOUS AND COUNTING
# ============================

@dataclass(frozen=True)
class GaussianLaw(StepLaw):
    mean_: float = 0.0
    sd: float = 1.0

    def __post_init__(self):
        if self.sd <= 0:
            raise InvalidParameters("gaussian sd must be positive")

    @property
    def name(self) -> str:
        return f"gaussian(mean={self.mean_}, sd={self.sd})"

    def log_mgf(self, mu):
        mu = np.atleast_1d(np.asarray(mu, dtype=float))
        return self.mean_ * mu + 0.5 * self.sd ** 2 * mu ** 2

    def dlog_mgf(self, mu):
        mu = np.atleast_1d(np.asarray(mu, dtype=float))
        return self.mean_ + self.sd ** 2 * mu

    @property
    def mgf_domain(self) -> Interval:
        return Interval.real_line()

    def tilt(self, mu):
        return GaussianLaw(self.mean_ + self.sd ** 2 * mu, self.sd)

    def sample(self, rng, size):
        return rng.normal(self.mean_, self.sd, size)

    def log_density(self, x):
        return stats.norm.logpdf(x, loc=self.mean_, scale=self.sd)

    @property
    def mean(self) -> float:
        return self.mean_

    def rate(self) -> RateFunction:
        return gaussian_rate(self.mean_, self.sd)


@dataclass(frozen=True)
class ExponentialLaw(StepLaw):
    rate_: float = 1.0

    def __post_init__(self):
        if self.rate_ <= 0:
            raise InvalidParameters("exponential rate must be positive")

    @property
    def name(self) -> str:
        return f"exponential(rate={self.rate_})"

    def log_mgf(self, mu):
        mu = np.atleast_1d(np.asarray(mu, dtype=float))
        out = np.full(mu.shape, np.inf)
        ok = mu < self.rate_
        out[ok] = -np.log1p(-mu[ok] / self.rate_)
        return out

    def dlog_mgf(self, mu):
        mu = np.atleast_1d(np.asarray(mu, dtype=float))
        return 1.0 / (self.rate_ - mu)

    @property
    def mgf_domain(self) -> Interval:
        return Interval(-math.inf, self.rate_)

    def tilt(self, mu):
        self._check_tilt(mu)
        return ExponentialLaw(self.rate_ - mu)

    def sample(self, rng, size):
        return rng.exponential(1.0 / self.rate_, size)

    def log_density(self, x):
        return stats.expon.logpdf(x, scale=1.0 / self.rate_)

    @property
    def mean(self) -> float:
        return 1.0 / self.rate_

    def rate(self) -> RateFunction:
        return exponential_rate(self.rate_)


@dataclass(frozen=True)
class PoissonLaw(StepLaw):
    rate_: float = 1.0

    def __post_init__(self):
        if self.rate_ <= 0:
            raise InvalidParameters("poisson rate must be positive")

    @property
    def name(self) -> str:
        return f"poisson(rate={self.rate_})"

    def log_mgf(self, mu):
        mu = np.atleast_1d(np.asarray(mu, dtype=float))
        return self.rate_ * np.expm1(mu)

    def dlog_mgf(self, mu):
        mu = np.atleast_1d(np.asarray(mu, dtype=float))
        return self.rate_ * np.exp(mu)

    @property
    def mgf_domain(self) -> Interval:
        return Interval.real_line()

    def tilt(self, mu):
        return PoissonLaw(self.rate_ * math.exp(mu))

    def sample(self, rng, size):
        return rng.poisson(self.rate_, size).astype(float)

    def log_density(self, x):
        return stats.poisson.logpmf(x, self.rate_)

    @property
    def mean(self) -> float:
        return self.rate_

    def rate(self) -> RateFunction:
        return poisson_rate(self.rate_)


# ============================
# CONFIG
# ============================

def law_from_spec(spec: Mapping) -> StepLaw:
    """{"law": "rademacher", "p": 0.5}, {"law": "discrete", "support": [...], "probs": [...]}, ..."""
    kind = str(spec.get("law", "")).lower()
    try:
        if kind == "rademacher":
            p = float(spec.get("p", 0.5))
            return DiscreteLaw((-1.0, 1.0), (1.0 - p, p))
        if kind == "discrete":
            return DiscreteLaw(tuple(spec["support"]), tuple(spec["probs"]))
        if kind == "constant":
            return DiscreteLaw((float(spec.get("value", 0.0)),), (1.0,))
        if kind == "gaussian":
            return GaussianLaw(float(spec.get("mean", 0.0)), float(spec.get("sd", 1.0)))
        if kind == "exponential":
            return ExponentialLaw(float(spec.get("rate", 1.0)))
        if kind == "poisson":
            return PoissonLaw(float(spec.get("rate", 1.0)))
    except KeyError as e:
        raise InvalidParameters(f"step law {kind!r} is missing {e}") from e
    raise UnknownFamily(f"unknown step law {kind!r}")
