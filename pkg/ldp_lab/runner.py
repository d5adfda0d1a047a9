"""Dispatch an ExperimentConfig to the computational modules and write its artifacts."""

from __future__ import annotations

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path
from typing import Callable

import numpy as np
import pandas as pd

from ldp_lab import artifacts
from ldp_lab.artifacts import PLOT_COLUMNS, RESULTS_COLUMNS, RunWriter, json_float
from ldp_lab.config import ExperimentConfig
from ldp_lab.convex_core import (
    check_essential_smoothness,
    check_goodness,
    fundamental_from_spec,
    legendre_transform,
    rate_from_spec,
)
from ldp_lab.errors import InvalidParameters, NumericalError
from ldp_lab.ldp_verify import (
    DEFAULT_N,
    EpsilonSchedule,
    MCEstimate,
    PhiFunction,
    estimate_fdd,
    estimate_functional,
    estimate_interval,
    estimate_local,
    exponential_tightness_scan,
    fit_rate,
    uniformity_scan,
    varadhan_estimate,
    varadhan_reference,
)
from ldp_lab.path_integral import (
    Partition,
    RefinementSchedule,
    deviation_integral_J,
    load_path,
    path_from_spec,
)
from ldp_lab.process_lab import (
    OscillationBudget,
    check_condition_B,
    model_from_spec,
    simulate,
)

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_INVALID = 2
EXIT_NUMERICAL = 3

GOODNESS_LEVELS = (0.1, 0.5, 1.0)


class _Failed(Exception):
    """An experiment-defined failure verdict; artifacts are still written."""


# ============================
# INPUTS
# ============================

def _alpha_grid(cfg: ExperimentConfig) -> np.ndarray:
    if "alpha_grid" in cfg.params:
        return np.asarray(cfg.get("alpha_grid"), dtype=float)
    lo, hi = float(cfg.get("alpha.lo", -2.0)), float(cfg.get("alpha.hi", 2.0))
    points = int(cfg.get("alpha.points", 401))
    return np.round(np.linspace(lo, hi, points), 12)


def _fundamental_spec(cfg: ExperimentConfig) -> dict:
    spec = cfg.section("fundamental")
    params = spec.get("parameters") or {}
    if "path" in params:
        params["path"] = str(cfg.resolve(params["path"]))
    return spec


def _path(cfg: ExperimentConfig):
    if "path_file" in cfg.params:
        return load_path(cfg.resolve(cfg.get("path_file")))
    return path_from_spec(cfg.section("path"))


def _eps(cfg: ExperimentConfig) -> EpsilonSchedule:
    if "eps" in cfg.params:
        return EpsilonSchedule.from_spec(float(cfg.get("eps")))
    spec = cfg.section("eps")
    return EpsilonSchedule.from_spec(spec) if spec else EpsilonSchedule()


def _conditioning(cfg: ExperimentConfig) -> dict | None:
    spec = cfg.section("conditioning")
    return spec or None


# ============================
# KINDS
# ============================

def _run_conjugate(cfg: ExperimentConfig, out: RunWriter) -> dict:
    A = fundamental_from_spec(_fundamental_spec(cfg))
    alpha = _alpha_grid(cfg)
    D = legendre_transform(A, alpha)
    out.add_csv("conjugate.csv", pd.DataFrame({"alpha": alpha, "D": D.grid_values}))
    smooth = check_essential_smoothness(A)
    good = check_goodness(D, GOODNESS_LEVELS)
    return {"essentially_smooth": smooth.essentially_smooth, "evidence": smooth.evidence,
            "good": good.good}


def _run_deviation_integral(cfg: ExperimentConfig, out: RunWriter) -> dict:
    D = rate_from_spec(cfg.section("rate"))
    f = _path(cfg)
    schedule = RefinementSchedule.dyadic(
        int(cfg.get("j_max", 22)),
        tol=float(cfg.get("tol", 1e-8)),
        absorb_nodes=bool(cfg.get("absorb_nodes", True)),
    )
    result = deviation_integral_J(f, D, schedule)
    out.add_csv("trace.csv", result.to_frame())
    summary = {"J": json_float(float(result.value)), "diverged": result.diverged,
               "converged": result.converged, "monotone": result.monotone}
    if cfg.get("expect_finite", False) and result.diverged:
        raise _Failed(summary)
    return summary


def _run_simulate(cfg: ExperimentConfig, out: RunWriter) -> dict:
    model = model_from_spec(cfg.section("model"))
    traj = simulate(model, float(cfg.get("T")), float(cfg.get("grid_step")), cfg.seed)
    out.add_csv("trajectory.csv", traj.to_frame())
    summary = {"model": model.label}
    if "budget.gamma0" in cfg.params:
        budget = OscillationBudget.linear(float(cfg.get("budget.gamma0")),
                                          float(cfg.get("budget.gamma1", 0.0)))
        report = check_condition_B(traj, budget, cfg.get("delta_grid", [0.01, 0.1, 0.5]))
        out.add_csv("condition_B.csv", report.rows)
        summary["condition_B_passed"] = report.passed
    return summary


def _verify_cells(cfg: ExperimentConfig) -> tuple[list[Callable[[int], MCEstimate]], list[float]]:
    model = model_from_spec(cfg.section("model"))
    n = int(cfg.get("n", DEFAULT_N))
    method = str(cfg.get("method", "tilted"))
    eps = _eps(cfg)
    seed = cfg.seed
    grid = [float(t) for t in cfg.get("T_grid")]

    if cfg.kind == "verify-local":
        beta = float(cfg.get("beta"))
        window = tuple(cfg.get("window", [0.0, 1.0]))
        cond = _conditioning(cfg)
        fn = lambda T, k: estimate_local(model, beta, T, eps, n, method, cond, window, seed, k)
    elif cfg.kind == "verify-fdd":
        p = Partition.from_weights(cfg.get("weights"))
        betas = [float(b) for b in cfg.get("betas")]
        fn = lambda T, k: estimate_fdd(model, p, betas, T, eps, n, method, seed, k)
    elif cfg.kind == "verify-functional":
        f = _path(cfg)
        fn = lambda T, k: estimate_functional(model, f, T, eps, n, method, seed, k)
    else:
        lo, hi = float(cfg.get("lo")), float(cfg.get("hi"))
        fn = lambda T, k: estimate_interval(model, lo, hi, T, n, method, seed, k)
    return [lambda k, T=T: fn(T, k) for T in grid], grid


def _run_verify(cfg: ExperimentConfig, out: RunWriter) -> dict:
    cells, _ = _verify_cells(cfg)
    with ThreadPoolExecutor(max_workers=cfg.workers) as pool:
        estimates = list(pool.map(lambda job: job[1](job[0]), enumerate(cells)))
    results = pd.DataFrame([e.to_row() for e in estimates], columns=RESULTS_COLUMNS)
    out.add_csv("results.csv", results)
    plot = results[PLOT_COLUMNS]
    out.add_csv("plot_data.csv", plot)
    out.add_figure("plot.html", artifacts.plot_rates(plot, cfg.kind))
    summary = {"proxy": any(e.proxy for e in estimates)}
    if sum(e.hits > 0 for e in estimates) >= 2:
        fit = fit_rate(estimates)
        summary["fitted_rate"] = fit.rate
        summary["reference_rate"] = json_float(float(estimates[-1].reference))
    return summary


def _run_varadhan(cfg: ExperimentConfig, out: RunWriter) -> dict:
    model = model_from_spec(cfg.section("model"))
    phi = PhiFunction.from_spec(cfg.section("phi"))
    T, n = float(cfg.get("T")), int(cfg.get("n"))
    method = str(cfg.get("method", "crude"))
    est = varadhan_estimate(model, phi, T, n, method, cfg.seed)
    ref, arg = varadhan_reference(phi, model.rate)
    out.add_csv("varadhan.csv", pd.DataFrame([{
        "T": T, "n": n, "method": method, "estimate": est.value, "std_err": est.std_err,
        "reference": ref, "abs_gap": abs(est.value - ref),
    }]))
    return {"maximiser": arg}


def _run_tightness(cfg: ExperimentConfig, out: RunWriter) -> dict:
    model = model_from_spec(cfg.section("model"))
    report = exponential_tightness_scan(model, [float(x) for x in cfg.get("N_targets")],
                                        [float(t) for t in cfg.get("T_grid")],
                                        int(cfg.get("n")), seed=cfg.seed)
    out.add_csv("tightness.csv", report.rows)
    return {}


def _run_uniformity(cfg: ExperimentConfig, out: RunWriter) -> dict:
    model = model_from_spec(cfg.section("model"))
    report = uniformity_scan(model, float(cfg.get("beta")), float(cfg.get("T")), _eps(cfg),
                             int(cfg.get("n")), float(cfg.get("alpha")), float(cfg.get("eta")),
                             int(cfg.get("points", 5)), str(cfg.get("method", "tilted")), cfg.seed)
    out.add_csv("uniformity.csv", report.rows)
    return {"worst_abs_gap": json_float(float(report.worst["abs_gap"]))}


_DISPATCH = {
    "conjugate": _run_conjugate,
    "deviation-integral": _run_deviation_integral,
    "simulate": _run_simulate,
    "verify-local": _run_verify,
    "verify-fdd": _run_verify,
    "verify-functional": _run_verify,
    "verify-interval": _run_verify,
    "varadhan": _run_varadhan,
    "tightness": _run_tightness,
    "uniformity": _run_uniformity,
}


# ============================
# ENTRY
# ============================

def run(cfg: ExperimentConfig) -> int:
    """Run one experiment; returns the process exit status."""
    out = RunWriter(Path(cfg.output_dir))
    logger.info("[%s] seed=%d config=%s", cfg.kind, cfg.seed, cfg.config_hash[:12])
    try:
        summary = _DISPATCH[cfg.kind](cfg, out)
    except _Failed as verdict:
        out.finish(cfg, verdict.args[0])
        logger.error("[%s] failure verdict: %s", cfg.kind, verdict.args[0])
        return EXIT_NUMERICAL
    except InvalidParameters as e:
        logger.error("[%s] invalid input: %s", cfg.kind, e)
        return EXIT_INVALID
    except NumericalError as e:
        logger.error("[%s] %s: %s", cfg.kind, type(e).__name__, e)
        return EXIT_NUMERICAL
    out.finish(cfg, summary)
    return EXIT_OK
