import math
from concurrent.futures import ThreadPoolExecutor

import numpy as np
import pytest
from scipy import stats
from scipy.special import logsumexp

from ldp_lab.convex_core import exponential_fundamental, gaussian_fundamental, rademacher_fundamental
from ldp_lab.errors import (
    InvalidParameters,
    InvalidPath,
    ScanExhausted,
    SlopeOutsideDomain,
    TargetOutsideDomain,
    ZeroHits,
)
from ldp_lab.laws import DiscreteLaw, GaussianLaw
from ldp_lab.ldp_verify import (
    DEFAULT_T_GRID,
    EpsilonSchedule,
    MCEstimate,
    PhiFunction,
    TiltedLaw,
    estimate_fdd,
    estimate_functional,
    estimate_interval,
    estimate_local,
    exponential_tightness_scan,
    fit_rate,
    tilt_for_target,
    uniformity_scan,
    varadhan_estimate,
    varadhan_reference,
)
from ldp_lab.path_integral import CadlagPath, Partition
from ldp_lab.process_lab import BOUNDED_STEP, COMPOUND_RENEWAL, GAUSSIAN, ProcessModel, model_from_spec
from tests.conftest import D_HALF, LN2, exact_fdd, exact_local, exact_tube

SEEDS = (0, 1, 2)


def _binomial_window_logp(m, beta, eps):
    """ln P(|S_m / m - beta| < eps) for m symmetric +-1 steps."""
    k = np.arange(m + 1)
    inside = np.abs((2 * k - m) / m - beta) < eps
    return float(logsumexp(stats.binom.logpmf(k[inside], m, 0.5)))


def _exact_slope(log_p):
    return -float(np.polyfit(np.asarray(DEFAULT_T_GRID, dtype=float), log_p, 1)[0])


class TestEpsilonSchedule:
    def test_default(self):
        eps = EpsilonSchedule()
        assert eps(1000) == pytest.approx(0.1)
        assert eps(2000) < eps(1000)
        assert eps.is_slow_enough

    def test_floor_and_fixed(self):
        assert EpsilonSchedule(1.0, 1 / 3, floor=0.2)(1e6) == 0.2
        assert EpsilonSchedule.fixed(0.05)(123.0) == 0.05
        assert EpsilonSchedule.from_spec(0.05)(7.0) == 0.05
        assert EpsilonSchedule.from_spec({"c": 0.5})(8.0) == pytest.approx(0.25)

    def test_fast_decay_is_flagged(self):
        assert not EpsilonSchedule(1.0, 0.5).is_slow_enough

    def test_rejects_bad_constants(self):
        with pytest.raises(InvalidParameters):
            EpsilonSchedule(c=0.0)


class TestTilting:
    def test_gaussian(self):
        assert tilt_for_target(gaussian_fundamental(), 0.7) == pytest.approx(0.7, abs=1e-9)

    def test_rademacher(self):
        assert tilt_for_target(rademacher_fundamental(), 0.5) == pytest.approx(math.atanh(0.5), abs=1e-9)

    def test_mean_needs_no_tilt(self):
        assert tilt_for_target(rademacher_fundamental(), 0.0) == 0.0

    def test_exponential_near_boundary(self):
        mu = tilt_for_target(exponential_fundamental(1.0), 50.0)
        assert mu == pytest.approx(1.0 - 1.0 / 50.0, abs=1e-9)

    @pytest.mark.parametrize("A,beta", [
        (rademacher_fundamental(), 1.0),
        (rademacher_fundamental(), -1.5),
        (exponential_fundamental(1.0), -1.0),
    ])
    def test_unreachable_targets(self, A, beta):
        with pytest.raises(TargetOutsideDomain):
            tilt_for_target(A, beta)

    def test_tilted_law(self):
        base = DiscreteLaw((-1.0, 1.0), (0.5, 0.5))
        tilted = TiltedLaw(base, 0.3)
        assert math.fsum(tilted.law.probs) == pytest.approx(1.0, abs=1e-12)
        assert tilted.mean == pytest.approx(math.tanh(0.3), abs=1e-12)
        assert tilted.problems() == []
        x = np.array([-1.0, 1.0])
        np.testing.assert_allclose(base.log_density(x),
                                   tilted.law.log_density(x) + tilted.log_likelihood_ratio(x), atol=1e-12)

    def test_tilted_gaussian_law(self):
        tilted = TiltedLaw(GaussianLaw(0.0, 2.0), 0.5)
        assert tilted.mean == pytest.approx(2.0)
        assert tilted.problems() == []


class TestMCEstimate:
    def test_zero_hits(self):
        est = MCEstimate(0.0, -math.inf, 0.0, 1000, 0, 10.0, "tilted")
        assert est.log_rate.infinite
        assert est.upper_bound == pytest.approx(0.003)
        assert math.isinf(est.to_row()["log_rate"])

    def test_row(self):
        est = MCEstimate(0.01, math.log(0.01), 0.001, 1000, 12, 10.0, "tilted",
                         tilts=(0.5,), proxy=True)
        row = est.to_row()
        assert row["method"] == "tilted(mu=0.5)-proxy"
        assert row["log_rate"] == pytest.approx(-math.log(0.01) / 10)
        assert math.isnan(row["abs_gap"])


class TestExactOracles:
    """T = 10 walks against enumeration of all 2^10 paths."""

    @pytest.mark.parametrize("seed", SEEDS)
    def test_local_parity_zero(self, walk, seed):
        est = estimate_local(walk, 0.5, 10, EpsilonSchedule.fixed(0.05), 100_000, seed=seed)
        assert exact_local(10, 0.5, 0.05) == 0.0
        assert est.p_hat == 0.0 and est.hits == 0

    @pytest.mark.parametrize("seed", SEEDS)
    def test_local(self, walk, seed):
        exact = exact_local(10, 0.6, 0.05)
        assert exact == pytest.approx(45 / 1024)
        est = estimate_local(walk, 0.6, 10, EpsilonSchedule.fixed(0.05), 100_000, seed=seed)
        assert abs(est.p_hat - exact) <= 3 * est.std_err

    @pytest.mark.parametrize("seed", SEEDS)
    def test_fdd(self, walk, seed):
        exact = exact_fdd(10, [0.0, 0.5, 1.0], [1.0, -1.0], 0.05)
        assert exact == pytest.approx(1 / 1024)
        est = estimate_fdd(walk, Partition.uniform(2), [1.0, -1.0], 10, EpsilonSchedule.fixed(0.05),
                           100_000, seed=seed)
        assert est.proxy
        assert abs(est.p_hat - exact) <= 3 * est.std_err

    @pytest.mark.parametrize("seed", SEEDS)
    def test_tube(self, walk, seed):
        f = CadlagPath.linear([0.0, 1.0], [0.0, 0.5])
        exact = exact_tube(10, f, 0.2)
        assert exact > 0
        est = estimate_functional(walk, f, 10, EpsilonSchedule.fixed(0.2), 100_000, seed=seed)
        assert abs(est.p_hat - exact) <= 3 * est.std_err

    @pytest.mark.parametrize("T,beta,eps", [
        (12, 0.3, 0.1),
        (12, -0.4, 0.15),
        (11, 0.2, 0.05),
        (10, 0.0, 0.2),
        (12, 0.5, 0.12),
    ])
    def test_tilted_is_unbiased(self, walk, T, beta, eps):
        exact = exact_local(T, beta, eps)
        est = estimate_local(walk, beta, T, EpsilonSchedule.fixed(eps), 20_000, seed=T)
        assert abs(est.p_hat - exact) <= 4 * est.std_err


class TestLocal:
    def test_crude_zero_hits(self, walk):
        with pytest.raises(ZeroHits):
            estimate_local(walk, 0.9, 50, EpsilonSchedule.fixed(0.01), 1000, method="crude")

    def test_typical_event(self, walk):
        est = estimate_local(walk, 0.0, 100, EpsilonSchedule.fixed(0.5), 2000, method="crude")
        assert float(est.log_rate) < 0.01

    def test_crude_and_tilted_agree(self, walk):
        eps = EpsilonSchedule.fixed(0.1)
        crude = estimate_local(walk, 0.2, 20, eps, 20_000, method="crude", seed=4)
        tilted = estimate_local(walk, 0.2, 20, eps, 20_000, seed=4)
        assert abs(crude.p_hat - tilted.p_hat) <= 4 * (crude.std_err + tilted.std_err)

    def test_tilting_reduces_variance(self, walk):
        eps = EpsilonSchedule.fixed(0.1)
        crude = estimate_local(walk, 0.5, 50, eps, 20_000, method="crude", seed=1)
        tilted = estimate_local(walk, 0.5, 50, eps, 20_000, seed=1)
        assert tilted.std_err / tilted.p_hat < crude.std_err / crude.p_hat

    def test_reference_is_rate(self, walk):
        est = estimate_local(walk, 0.5, 20, EpsilonSchedule(), 1000)
        assert float(est.reference) == pytest.approx(D_HALF)

    def test_worker_count_does_not_change_results(self, walk):
        eps = EpsilonSchedule.fixed(0.1)
        serial = estimate_local(walk, 0.5, 50, eps, 100_000, seed=3)
        with ThreadPoolExecutor(max_workers=4) as pool:
            parallel = estimate_local(walk, 0.5, 50, eps, 100_000, seed=3, executor=pool)
        assert serial.p_hat == parallel.p_hat
        assert serial.std_err == parallel.std_err

    def test_window(self, walk):
        est = estimate_local(walk, 0.5, 40, EpsilonSchedule.fixed(0.1), 2000, window=(0.5, 1.0))
        assert float(est.reference) == pytest.approx(0.5 * D_HALF)
        assert est.hits > 0

    def test_conditioned_start(self, walk):
        est = estimate_local(walk, 0.5, 40, EpsilonSchedule.fixed(0.1), 2000,
                             conditioning={"alpha": 0.3, "eta": 0.1})
        assert est.hits > 0

    def test_bad_inputs(self, walk):
        with pytest.raises(InvalidParameters):
            estimate_local(walk, 0.5, 10, EpsilonSchedule(), 10)
        with pytest.raises(InvalidParameters):
            estimate_local(walk, 0.5, 10, EpsilonSchedule(), 1000, method="antithetic")
        with pytest.raises(InvalidParameters):
            estimate_local(walk, 0.5, 10, EpsilonSchedule(), 1000, window=(0.5, 0.5))

    def test_rate_trend(self, walk):
        # a narrow window: the finite-T bias at c = 0.1 is within 0.015 of D(1/2)
        eps = EpsilonSchedule(c=0.1)
        estimates = [estimate_local(walk, 0.5, T, eps, 20_000, seed=5, cell=k)
                     for k, T in enumerate(DEFAULT_T_GRID)]
        assert fit_rate(estimates).rate == pytest.approx(D_HALF, abs=0.015)

    def test_default_protocol_matches_binomial(self, walk):
        eps = EpsilonSchedule(c=0.5)
        estimates = [estimate_local(walk, 0.5, T, eps, 100_000, seed=5, cell=k)
                     for k, T in enumerate(DEFAULT_T_GRID)]
        exact = _exact_slope([_binomial_window_logp(T, 0.5, eps(T)) for T in DEFAULT_T_GRID])
        assert fit_rate(estimates).rate == pytest.approx(exact, abs=2e-3)
        # at c = 0.5 the window is wide enough to pull the slope well below D(1/2)
        assert exact == pytest.approx(0.1076, abs=2e-3)
        assert D_HALF - exact > 0.015


class TestFdd:
    def test_single_block_is_local(self, walk):
        eps = EpsilonSchedule.fixed(0.1)
        local = estimate_local(walk, 0.4, 30, eps, 5000, seed=8)
        fdd = estimate_fdd(walk, Partition.uniform(1), [0.4], 30, eps, 5000, seed=8)
        assert fdd.p_hat == local.p_hat
        assert float(fdd.reference) == pytest.approx(float(local.reference))

    def test_reference_sums_blocks(self, walk):
        est = estimate_fdd(walk, Partition.from_weights([0.25, 0.75]), [0.5, 0.0], 40,
                           EpsilonSchedule.fixed(0.2), 1000)
        assert float(est.reference) == pytest.approx(0.25 * D_HALF)

    def test_beta_count(self, walk):
        with pytest.raises(InvalidParameters):
            estimate_fdd(walk, Partition.uniform(2), [0.5], 10, EpsilonSchedule(), 1000)

    def test_rate_trend(self, walk):
        eps = EpsilonSchedule(c=0.1)
        estimates = [estimate_fdd(walk, Partition.uniform(2), [1.0, -1.0], T, eps, 20_000,
                                  seed=6, cell=k)
                     for k, T in enumerate(DEFAULT_T_GRID)]
        assert fit_rate(estimates).rate == pytest.approx(LN2, rel=0.12)

    def test_default_protocol_matches_binomial(self, walk):
        eps = EpsilonSchedule(c=0.5)
        estimates = [estimate_fdd(walk, Partition.uniform(2), [1.0, -1.0], T, eps, 100_000,
                                  seed=6, cell=k)
                     for k, T in enumerate(DEFAULT_T_GRID)]
        exact = _exact_slope([_binomial_window_logp(T // 2, 1.0, eps(T))
                              + _binomial_window_logp(T // 2, -1.0, eps(T))
                              for T in DEFAULT_T_GRID])
        assert fit_rate(estimates).rate == pytest.approx(exact, abs=5e-3)
        assert exact < 0.9 * LN2


class TestFunctional:
    def test_zero_path(self, walk):
        f = CadlagPath.linear([0.0], [0.0])
        est = estimate_functional(walk, f, 100, EpsilonSchedule.fixed(0.5), 2000, method="crude")
        assert float(est.log_rate) < 0.01
        assert float(est.reference) == pytest.approx(0.0, abs=1e-12)

    def test_reference_is_J(self, walk):
        f = CadlagPath.linear([0.0, 1.0], [0.0, 0.5])
        est = estimate_functional(walk, f, 20, EpsilonSchedule.fixed(0.1), 2000)
        assert float(est.reference) == pytest.approx(D_HALF)

    def test_slope_outside_domain(self, walk):
        with pytest.raises(SlopeOutsideDomain):
            estimate_functional(walk, CadlagPath.linear([0.0, 1.0], [0.0, 2.0]), 20,
                                EpsilonSchedule.fixed(0.1), 1000)

    def test_boundary_slope_uses_proxy(self, walk):
        f = CadlagPath.linear([0.0, 1.0], [0.0, 1.0])
        exact = exact_tube(10, f, 0.12)
        # only the all-up path stays in the tube
        assert exact == pytest.approx(1 / 1024)
        est = estimate_functional(walk, f, 10, EpsilonSchedule.fixed(0.12), 2000)
        assert est.proxy
        assert est.method_label.endswith("-proxy")
        assert est.hits > 0
        assert abs(est.p_hat - exact) <= 4 * est.std_err
        assert float(est.reference) == pytest.approx(LN2)

    def test_needs_linear_centre(self, walk):
        with pytest.raises(InvalidPath):
            estimate_functional(walk, CadlagPath.step([0.0], [0.0]), 20, EpsilonSchedule(), 1000)

    @staticmethod
    def _pm_jumps(**kw):
        return ProcessModel(COMPOUND_RENEWAL, step=DiscreteLaw((-1.0, 1.0), (0.5, 0.5)), **kw)

    def test_compound_poisson_tube_between_grid_times(self):
        # |Z| < 1.2 throughout [0, 2]: every second jump must come back to 0
        exact = sum(stats.poisson.pmf(k, 4.0) * 0.5 ** (k // 2) for k in range(80))
        est = estimate_functional(self._pm_jumps(arrival_rate=2.0), CadlagPath.linear([0.0], [0.0]),
                                  2.0, EpsilonSchedule.fixed(0.6), 40_000, method="crude", seed=3)
        assert abs(est.p_hat - exact) <= 3 * est.std_err

    def test_deterministic_arrivals_tube(self):
        # six jumps at k/3; jumps 2, 4 and 6 must return to 0
        model = self._pm_jumps(interarrival="deterministic", arrival_rate=3.0)
        est = estimate_functional(model, CadlagPath.linear([0.0], [0.0]), 2.0,
                                  EpsilonSchedule.fixed(0.6), 40_000, method="crude", seed=4)
        assert abs(est.p_hat - 0.125) <= 3 * est.std_err

    def test_noise_perturbed_renewal_is_rejected(self):
        model = model_from_spec({"family": "noise-perturbed", "noise": {"kind": "envelope"},
                                 "base": {"family": "compound-renewal", "jump": {"law": "rademacher"}}})
        with pytest.raises(InvalidParameters):
            estimate_functional(model, CadlagPath.linear([0.0], [0.0]), 10, EpsilonSchedule.fixed(0.5),
                                1000, method="crude")


class TestInterval:
    def test_against_binomial(self, walk):
        est = estimate_interval(walk, 0.3, 0.6, 50, 50_000, seed=2)
        exact = stats.binom.cdf(39, 50, 0.5) - stats.binom.cdf(32, 50, 0.5)
        assert abs(est.p_hat - exact) <= 4 * est.std_err
        assert float(est.reference) == pytest.approx(0.65 * math.log(1.3) + 0.35 * math.log(0.7))

    def test_interval_around_mean(self, walk):
        est = estimate_interval(walk, -0.2, 0.2, 50, 2000, method="crude")
        assert float(est.reference) == 0.0
        assert est.p_hat > 0.5

    def test_empty_interval(self, walk):
        with pytest.raises(InvalidParameters):
            estimate_interval(walk, 0.4, 0.4, 50, 1000)


class TestUniformity:
    def test_scan(self, walk):
        report = uniformity_scan(walk, 0.5, 40, EpsilonSchedule.fixed(0.1), 2000,
                                 alpha=0.0, eta=0.2, points=3)
        assert len(report.rows) == 3
        assert report.rows["z0"].tolist() == pytest.approx([-0.09 * 40, 0.0, 0.09 * 40])
        assert report.worst["abs_gap"] == report.rows["abs_gap"].max()

    def test_needs_positive_eta(self, walk):
        with pytest.raises(InvalidParameters):
            uniformity_scan(walk, 0.5, 40, EpsilonSchedule(), 1000, alpha=0.0, eta=0.0)


class TestVaradhan:
    def test_zero_phi(self, walk):
        est = varadhan_estimate(walk, PhiFunction("linear", slope=0.0), 20, 1000)
        assert est.value == pytest.approx(0.0, abs=1e-12)

    def test_reference_of_negative_quadratic(self, rademacher_D):
        value, arg = varadhan_reference(PhiFunction("quadratic-capped", coef=-1.0), rademacher_D)
        assert value == pytest.approx(0.0, abs=1e-9)
        assert arg == pytest.approx(0.0, abs=1e-6)

    def test_reference_of_linear(self, rademacher_D):
        value, _ = varadhan_reference(PhiFunction("linear", slope=0.5), rademacher_D)
        assert value == pytest.approx(math.log(math.cosh(0.5)), abs=1e-8)

    @pytest.mark.parametrize("mu", [0.5, 1.0])
    def test_tilted_large_T(self, walk, rademacher_D, mu):
        phi = PhiFunction("linear", slope=mu)
        est = varadhan_estimate(walk, phi, 400, 2000, method="tilted", seed=1)
        ref, _ = varadhan_reference(phi, rademacher_D)
        assert abs(est.value - ref) <= 3 * est.std_err + 1e-6

    def test_crude_small_T(self, walk):
        est = varadhan_estimate(walk, PhiFunction("linear", slope=0.5), 10, 100_000, seed=3)
        assert est.value == pytest.approx(math.log(math.cosh(0.5)), abs=4 * est.std_err + 1e-4)

    def test_capped_quadratic_tilted(self, walk):
        phi = PhiFunction("quadratic-capped", coef=1.0, cap=0.25)
        est = varadhan_estimate(walk, phi, 20, 2000, method="tilted", seed=2)
        assert math.isfinite(est.value)

    def test_phi_spec(self):
        phi = PhiFunction.from_spec({"kind": "piecewise-linear", "knots": [-1, 0, 1], "values": [0, 1, 0]})
        assert float(phi(0.5)) == 0.5
        with pytest.raises(InvalidParameters):
            PhiFunction.from_spec({"kind": "quadratic-capped", "coef": 1.0})
        with pytest.raises(InvalidParameters):
            PhiFunction.from_spec({"kind": "cubic"})


class TestTightness:
    def test_rademacher(self, walk):
        report = exponential_tightness_scan(walk, [0.1], [20, 40], 2000)
        assert (report.rows["v"] == 0.45).all()
        assert (report.rows["v"] < 1.0).all()

    def test_gaussian(self):
        model = ProcessModel(GAUSSIAN, step=GaussianLaw())
        report = exponential_tightness_scan(model, [2.0], [20], 2000)
        assert report.rows["v"].iloc[0] == 2.0

    def test_degenerate_step(self):
        model = ProcessModel(BOUNDED_STEP, step=DiscreteLaw((0.0,), (1.0,)))
        report = exponential_tightness_scan(model, [5.0], [20], 1000)
        row = report.rows.iloc[0]
        assert row["v"] == 0.05
        assert row["p_hat"] == 0.0

    def test_exhausted(self, walk):
        with pytest.raises(ScanExhausted):
            exponential_tightness_scan(walk, [1.0], [20], 1000, v_grid=(0.1, 0.2))


class TestFitRate:
    def test_linear_log_probability(self):
        estimates = [MCEstimate(math.exp(-0.2 * T + 1), -0.2 * T + 1, 0.0, 100, 10, T, "crude")
                     for T in (10.0, 20.0, 40.0)]
        fit = fit_rate(estimates)
        assert fit.rate == pytest.approx(0.2)
        assert fit.intercept == pytest.approx(1.0)
        assert fit.n_points == 3

    def test_needs_two_points(self):
        with pytest.raises(InvalidParameters):
            fit_rate([MCEstimate(0.5, math.log(0.5), 0.0, 100, 50, 10.0, "crude")])
