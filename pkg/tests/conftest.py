import itertools
import math

import numpy as np
import pytest

from ldp_lab.convex_core import gaussian_rate, rademacher_rate
from ldp_lab.process_lab import rademacher_walk

# D(0.5) of the symmetric +-1 step
D_HALF = 0.75 * math.log(1.5) + 0.25 * math.log(0.5)
LN2 = math.log(2.0)


@pytest.fixture
def walk():
    return rademacher_walk()


@pytest.fixture
def rademacher_D():
    return rademacher_rate(0.5)


@pytest.fixture
def quadratic_D():
    return gaussian_rate(0.0, 1.0)


# ----
# exact oracles over all 2^T equally likely +-1 step sequences
# ----

def partial_sums(T):
    steps = np.array(list(itertools.product((-1.0, 1.0), repeat=T)))
    return np.concatenate([np.zeros((steps.shape[0], 1)), np.cumsum(steps, axis=1)], axis=1)


def exact_local(T, beta, eps):
    S = partial_sums(T)
    return float(np.mean(np.abs(S[:, -1] / T - beta) < eps))


def exact_fdd(T, points, betas, eps):
    S = partial_sums(T)
    idx = np.rint(np.asarray(points) * T).astype(int)
    slopes = np.diff(S[:, idx], axis=1) / np.diff(idx)
    return float(np.mean(np.all(np.abs(slopes - np.asarray(betas)) < eps, axis=1)))


def exact_tube(T, f, eps):
    S = partial_sums(T)
    z = S / T
    fv = f.value(np.arange(T + 1) / T)
    inner = np.maximum(np.abs(z[:, :-1] - fv[:-1]), np.abs(z[:, :-1] - fv[1:])).max(axis=1)
    dist = np.maximum(inner, np.abs(z[:, -1] - fv[-1]))
    return float(np.mean(dist < eps))
