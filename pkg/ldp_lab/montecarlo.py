"""Seeded RNG streams and log-space accumulators for chunked Monte Carlo.

Samples are drawn in fixed-size chunks; chunk c of cell k uses the stream
SeedSequence([seed, k, c]). The chunk layout depends only on (n, steps), so
estimates do not depend on how many workers ran the chunks.
"""

from __future__ import annotations

import math
from concurrent.futures import Executor
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np
from scipy.special import logsumexp

from ldp_lab.errors import InvalidParameters, OverflowRisk

# ============================
# CONFIG
# ============================

# samples x steps drawn per chunk
CHUNK_CELLS = 2_000_000
RULE_OF_THREE = 3.0


def stream(seed: int, *keys: int) -> np.random.Generator:
    if seed < 0 or any(k < 0 for k in keys):
        raise InvalidParameters("seed and stream keys must be nonnegative")
    return np.random.default_rng(np.random.SeedSequence([int(seed), *map(int, keys)]))


def chunk_sizes(n: int, steps: int) -> list[int]:
    size = max(1, CHUNK_CELLS // max(int(steps), 1))
    full, rest = divmod(int(n), size)
    return [size] * full + ([rest] if rest else [])


def _lse(x: np.ndarray) -> float:
    return float(logsumexp(x)) if x.size else -math.inf


@dataclass(frozen=True)
class LogAccumulator:
    """Running n, hits, ln sum w and ln sum w^2 over weighted hits."""

    n: int = 0
    hits: int = 0
    log_sum: float = -math.inf
    log_sum_sq: float = -math.inf

    @classmethod
    def from_terms(cls, log_terms: np.ndarray, mask: np.ndarray | None = None) -> "LogAccumulator":
        log_terms = np.asarray(log_terms, dtype=float)
        n = log_terms.size
        if mask is not None:
            log_terms = log_terms[np.asarray(mask, dtype=bool)]
        if not np.all(np.isfinite(log_terms)):
            raise OverflowRisk("a log-weight left the representable range")
        return cls(n, log_terms.size, _lse(log_terms), _lse(2.0 * log_terms))

    def merge(self, other: "LogAccumulator") -> "LogAccumulator":
        return LogAccumulator(
            self.n + other.n,
            self.hits + other.hits,
            float(np.logaddexp(self.log_sum, other.log_sum)),
            float(np.logaddexp(self.log_sum_sq, other.log_sum_sq)),
        )

    @property
    def log_mean(self) -> float:
        """ln of the sample mean; -inf with no hits."""
        return self.log_sum - math.log(self.n)

    @property
    def rel_var(self) -> float:
        """Var(w) / E[w]^2 estimated from the sample, 0 for a single draw."""
        if self.hits == 0 or self.n < 2:
            return 0.0
        ratio = math.exp(self.log_sum_sq - math.log(self.n) - 2.0 * self.log_mean)
        return max(ratio - 1.0, 0.0) * self.n / (self.n - 1)

    @property
    def std_err(self) -> float:
        if self.hits == 0:
            return 0.0
        return math.exp(self.log_mean) * math.sqrt(self.rel_var / self.n)


def merge_all(parts: Sequence[LogAccumulator]) -> LogAccumulator:
    out = LogAccumulator()
    for part in parts:
        out = out.merge(part)
    return out


def run_chunks(seed: int, cell: int, n: int, steps: int,
               draw: Callable[[np.random.Generator, int], LogAccumulator],
               executor: Executor | None = None) -> LogAccumulator:
    """Evaluate draw(rng, size) over all chunks and merge in chunk order."""
    sizes = chunk_sizes(n, steps)
    jobs = [(stream(seed, cell, c), size) for c, size in enumerate(sizes)]
    if executor is None:
        parts = [draw(rng, size) for rng, size in jobs]
    else:
        parts = list(executor.map(lambda job: draw(*job), jobs))
    return merge_all(parts)
