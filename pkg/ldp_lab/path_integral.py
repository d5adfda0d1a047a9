"""Cadlag paths on [0, 1], partitions, and the deviation integral J(f)."""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator, Mapping, Sequence

import numpy as np
import pandas as pd

from ldp_lab.convex_core import RateFunction
from ldp_lab.errors import DegenerateInterval, InvalidPartition, InvalidPath, InvalidParameters
from ldp_lab.extended import ExtendedReal

logger = logging.getLogger(__name__)

# ============================
# CONSTANTS
# ============================

MIN_GAP = 1e-12
DIVERGENCE_CEILING = 1e6
MONOTONE_TOL = 1e-12

KINDS = ("linear", "step", "sampled")


# ============================
# PATHS
# ============================

@dataclass(frozen=True, eq=False)
class CadlagPath:
    """Right-continuous path on [0, 1].

    `linear` interpolates its nodes and is held constant after the last one;
    `step` and `sampled` are piecewise constant, jumping at their abscissae.
    """

    kind: str
    s: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        s = np.asarray(self.s, dtype=float)
        v = np.asarray(self.values, dtype=float)
        object.__setattr__(self, "s", s)
        object.__setattr__(self, "values", v)
        if self.kind not in KINDS:
            raise InvalidPath(f"unknown path kind {self.kind!r}")
        if s.ndim != 1 or s.shape != v.shape or s.size == 0:
            raise InvalidPath("abscissae and values must be matching nonempty 1-d arrays")
        if s[0] != 0.0:
            raise InvalidPath("first abscissa must be 0")
        if s[-1] > 1.0:
            raise InvalidPath("abscissae must lie in [0, 1]")
        if np.any(np.diff(s) <= 0):
            raise InvalidPath("abscissae must be strictly increasing")
        if not np.all(np.isfinite(v)):
            raise InvalidPath("path values must be finite")

    @classmethod
    def linear(cls, s, values) -> "CadlagPath":
        return cls("linear", s, values)

    @classmethod
    def step(cls, jump_times, levels) -> "CadlagPath":
        return cls("step", jump_times, levels)

    @classmethod
    def sampled(cls, s, values) -> "CadlagPath":
        return cls("sampled", s, values)

    @property
    def piecewise_constant(self) -> bool:
        return self.kind != "linear"

    def value(self, x):
        x = np.asarray(x, dtype=float)
        if self.kind == "linear":
            return np.interp(x, self.s, self.values)
        idx = np.searchsorted(self.s, x, side="right") - 1
        return self.values[np.clip(idx, 0, self.s.size - 1)]

    def left_limit(self, x):
        x = np.asarray(x, dtype=float)
        if self.kind == "linear":
            return np.interp(x, self.s, self.values)
        idx = np.searchsorted(self.s, x, side="left") - 1
        return self.values[np.clip(idx, 0, self.s.size - 1)]

    def jumps(self) -> np.ndarray:
        if self.kind == "linear":
            return np.empty(0)
        return self.s[1:][np.diff(self.values) != 0]

    @property
    def has_jump(self) -> bool:
        return self.jumps().size > 0

    def interior_abscissae(self) -> np.ndarray:
        return self.s[(self.s > 0) & (self.s < 1)]

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame({"s": self.s, "value": self.values})


# ============================
# PARTITIONS
# ============================

@dataclass(frozen=True, eq=False)
class Partition:
    """0 = s_0 < s_1 < ... < s_K = 1."""

    points: np.ndarray

    def __post_init__(self):
        p = np.asarray(self.points, dtype=float)
        object.__setattr__(self, "points", p)
        if p.ndim != 1 or p.size < 2:
            raise InvalidPartition("a partition needs K >= 1")
        if p[0] != 0.0 or p[-1] != 1.0:
            raise InvalidPartition("partition must start at 0 and end at 1")
        if np.any(np.diff(p) < MIN_GAP):
            raise InvalidPartition("partition points must be increasing and at least 1e-12 apart")

    @classmethod
    def uniform(cls, K: int) -> "Partition":
        if K < 1:
            raise InvalidPartition("K must be >= 1")
        p = np.arange(K + 1, dtype=float) / K
        p[-1] = 1.0
        return cls(p)

    @classmethod
    def from_weights(cls, weights: Sequence[float]) -> "Partition":
        h = np.asarray(weights, dtype=float)
        if h.size == 0 or np.any(h <= 0):
            raise InvalidPartition("weights must be positive")
        if abs(math.fsum(h) - 1.0) > 1e-9:
            raise InvalidPartition("weights must sum to 1")
        p = np.concatenate([[0.0], np.cumsum(h)])
        p[-1] = 1.0
        return cls(p)

    @property
    def K(self) -> int:
        return self.points.size - 1

    @property
    def weights(self) -> np.ndarray:
        return np.diff(self.points)

    def refined_with(self, extra) -> "Partition":
        """Add points from (0, 1); points within MIN_GAP of a kept point are dropped."""
        extra = np.unique(np.asarray(extra, dtype=float))
        extra = extra[(extra > 0) & (extra < 1)]
        if extra.size == 0:
            return self
        pts = self.points
        idx = np.searchsorted(pts, extra)
        near = np.minimum(np.abs(extra - pts[np.clip(idx - 1, 0, pts.size - 1)]),
                          np.abs(pts[np.clip(idx, 0, pts.size - 1)] - extra))
        extra = extra[near >= MIN_GAP]
        if extra.size > 1:
            extra = extra[np.concatenate([[True], np.diff(extra) >= MIN_GAP])]
        return Partition(np.union1d(pts, extra))

    def same_as(self, other: "Partition") -> bool:
        return self.points.size == other.points.size and bool(np.all(self.points == other.points))


# ============================
# DISTANCES AND INTERPOLATION
# ============================

def uniform_norm_distance(f: CadlagPath, g: CadlagPath) -> float:
    """sup_s |f(s) - g(s)|, exact for linear and piecewise-constant paths."""
    pts = np.union1d(np.union1d(f.s, g.s), [0.0, 1.0])
    right = np.abs(f.value(pts) - g.value(pts))
    inner = pts[pts > 0]
    left = np.abs(f.left_limit(inner) - g.left_limit(inner))
    return float(max(right.max(), left.max() if left.size else 0.0))


def tube_distance(values: np.ndarray, s_edges: np.ndarray, f: CadlagPath) -> np.ndarray:
    """Row-wise sup distance between step paths and a continuous linear f.

    Row i is constant at values[i, j] on [s_edges[j], s_edges[j+1]); s_edges
    must contain every node of f so that f is linear between edges.
    """
    if f.kind != "linear":
        raise InvalidPath("tube_distance needs a piecewise-linear centre path")
    values = np.atleast_2d(values)
    fv = f.value(s_edges)
    at_left = np.abs(values - fv[None, :])
    if s_edges.size > 1:
        at_right = np.abs(values[:, :-1] - fv[None, 1:])
        return np.maximum(at_left.max(axis=1), at_right.max(axis=1))
    return at_left.max(axis=1)


def interpolate(f: CadlagPath, p: Partition) -> CadlagPath:
    return CadlagPath.linear(p.points, f.value(p.points))


def interval_function(f: CadlagPath, D: RateFunction, s: float, t: float) -> ExtendedReal:
    """F(s, t) = (t - s) D((f(t) - f(s)) / (t - s))."""
    if t <= s:
        raise DegenerateInterval(f"need s < t, got s={s}, t={t}")
    if s < 0 or t > 1:
        raise InvalidParameters("interval must lie inside [0, 1]")
    h = t - s
    slope = (float(f.value(t)) - float(f.value(s))) / h
    return D.evaluate(slope).scale(h)


def integral_I(f: CadlagPath, D: RateFunction) -> ExtendedReal:
    """Sum over linear segments of h_k D(slope_k)."""
    if f.kind != "linear":
        raise InvalidPath("integral_I needs a piecewise-linear path")
    s, v = f.s, f.values
    if s[-1] < 1.0:
        s = np.append(s, 1.0)
        v = np.append(v, v[-1])
    if s.size == 1:
        s, v = np.array([0.0, 1.0]), np.array([v[0], v[0]])
    h = np.diff(s)
    d = D.values(np.diff(v) / h)
    if np.any(np.isinf(d)):
        return ExtendedReal.inf()
    return ExtendedReal.finite(math.fsum(h * d))


# ============================
# DEVIATION INTEGRAL
# ============================

@dataclass(frozen=True)
class RefinementSchedule:
    """Nested uniform partitions, each augmented with the path's own abscissae."""

    levels: tuple[int, ...] = tuple(2 ** j for j in range(23))
    tol: float = 1e-8
    ceiling: float = DIVERGENCE_CEILING
    absorb_nodes: bool = True

    def __post_init__(self):
        ks = tuple(int(k) for k in self.levels)
        object.__setattr__(self, "levels", ks)
        if not ks or ks[0] < 1:
            raise InvalidParameters("schedule levels must be positive")
        for a, b in zip(ks, ks[1:]):
            if b <= a or b % a:
                raise InvalidParameters("each level must be a proper multiple of the previous one")

    @classmethod
    def dyadic(cls, j_max: int = 22, **kw) -> "RefinementSchedule":
        return cls(levels=tuple(2 ** j for j in range(j_max + 1)), **kw)

    @classmethod
    def uniform(cls, ks: Sequence[int], **kw) -> "RefinementSchedule":
        return cls(levels=tuple(ks), **kw)

    def partitions(self, f: CadlagPath) -> Iterator[Partition]:
        extra = f.jumps()
        if self.absorb_nodes:
            extra = np.union1d(extra, f.interior_abscissae())
        previous = None
        for K in self.levels:
            p = Partition.uniform(K).refined_with(extra)
            if previous is not None and p.same_as(previous):
                continue
            previous = p
            yield p


@dataclass(frozen=True)
class DeviationIntegralResult:
    value: ExtendedReal
    partition_trace: list = field(default_factory=list)
    diverged: bool = False
    converged: bool = False
    monotone: bool = True

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame(
            [(k, float(v)) for k, v in self.partition_trace], columns=["K", "I_value"]
        )


def deviation_integral_J(f: CadlagPath, D: RateFunction,
                         schedule: RefinementSchedule | None = None) -> DeviationIntegralResult:
    """J(f) = sup over partitions of I(f^s), followed along a refinement schedule."""
    schedule = schedule or RefinementSchedule.dyadic()
    trace: list[tuple[int, ExtendedReal]] = []
    monotone = True
    increments: list[float] = []

    for p in schedule.partitions(f):
        value = integral_I(interpolate(f, p), D)
        if trace:
            prev = trace[-1][1]
            if prev.is_finite and value.is_finite:
                inc = value.value - prev.value
                if inc < -MONOTONE_TOL * max(1.0, abs(prev.value)):
                    monotone = False
                    logger.warning("[J] refinement decreased I by %.3g at K=%d", -inc, p.K)
                increments.append(inc)
        trace.append((p.K, value))

        if not value.is_finite:
            logger.debug("[J] slope left dom D at K=%d", p.K)
            return DeviationIntegralResult(ExtendedReal.inf(), trace, True, False, monotone)
        if len(trace) >= 2:
            if abs(increments[-1]) < schedule.tol:
                converged = not f.has_jump
                return DeviationIntegralResult(value, trace, False, converged, monotone)
            if (value.value > schedule.ceiling and len(increments) >= 2
                    and increments[-1] > increments[-2]):
                logger.debug("[J] trace passed %.3g with growing increments", schedule.ceiling)
                return DeviationIntegralResult(ExtendedReal.inf(), trace, True, False, monotone)

    # schedule exhausted without a verdict
    return DeviationIntegralResult(trace[-1][1], trace, False, False, monotone)


# ============================
# IO
# ============================

def path_from_spec(spec: Mapping) -> CadlagPath:
    """{"kind": "linear"|"step"|"sampled", "nodes": [[s, value], ...]}"""
    kind = spec.get("kind", "linear")
    nodes = np.asarray(spec.get("nodes", []), dtype=float)
    if nodes.ndim != 2 or nodes.shape[1] != 2:
        raise InvalidPath("nodes must be a list of [s, value] pairs")
    return CadlagPath(kind, nodes[:, 0], nodes[:, 1])


def load_path_json(path: str | Path) -> CadlagPath:
    with open(path) as fh:
        return path_from_spec(json.load(fh))


def load_path_csv(path: str | Path) -> CadlagPath:
    df = pd.read_csv(path)
    if list(df.columns[:2]) != ["s", "value"]:
        raise InvalidPath(f"{path}: expected header 's,value'")
    return CadlagPath.sampled(df["s"].to_numpy(), df["value"].to_numpy())


def load_path(path: str | Path) -> CadlagPath:
    return load_path_csv(path) if str(path).endswith(".csv") else load_path_json(path)


def write_trace_csv(result: DeviationIntegralResult, path: str | Path) -> None:
    result.to_frame().to_csv(path, index=False, float_format="%.17g")
