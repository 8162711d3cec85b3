"""Benchmark-level acceptance checks.

Each test prints one ``criterion N: PASS|FAIL`` line (collected again in
the terminal summary) before asserting.  Runtimes are long: the PMMH chain
alone takes about half an hour on one core.
"""

import subprocess
import sys
import time
from dataclasses import replace
from pathlib import Path

import numpy as np
import pytest

from latent_hawkes.metrics import aae_rmse, mcse, predict_next_interval
from latent_hawkes.pmmh import pmmh_run
from latent_hawkes.scenarios import PRESETS, simulate_scenario
from latent_hawkes.smc import FilterOptions, run_apf, run_bf, run_kdpf

QUIET = FilterOptions(record_intensity=False)
SCENARIO_C = PRESETS["C"]
PARITY_PARTICLES = 10_000
PMMH_ITERATIONS, PMMH_BURN_IN, PMMH_PARTICLES = 10_000, 5_000, 50


@pytest.fixture(scope="module")
def parity_data():
    return simulate_scenario(SCENARIO_C, 0)


@pytest.fixture(scope="module")
def pmmh_chain(parity_data):
    return pmmh_run(parity_data.observations, SCENARIO_C.params(), parity_data.estimated_seeds, PMMH_ITERATIONS,
                    PMMH_BURN_IN, PMMH_PARTICLES, seed=0)


def test_error_parity_on_scenario_c(parity_data, pmmh_chain, acceptance_report):
    obs, seeds, truth = parity_data.observations, parity_data.estimated_seeds, parity_data.true_r
    params = SCENARIO_C.params()
    medians = {}
    for name, method in (("kdpf", run_kdpf), ("apf", run_apf), ("bf", run_bf)):
        out = method(obs, params, seeds, PARITY_PARTICLES, seed=0, options=QUIET)
        medians[name] = np.median(out.r, axis=1)
    medians["pmmh"] = np.median(pmmh_chain.r_paths[pmmh_chain.post_burn_in], axis=0)
    errors = {name: aae_rmse(m, truth) for name, m in medians.items()}
    aae = np.array([e[0] for e in errors.values()])
    passed = bool(np.all(aae <= 0.35) and aae.max() - aae.min() <= 0.1)
    detail = ", ".join(f"{name} AAE {a:.3f} RMSE {r:.3f}" for name, (a, r) in errors.items())
    acceptance_report(1, passed, f"{detail} (need AAE <= 0.35, spread <= 0.1; spread {aae.max() - aae.min():.3f})")
    assert passed


def test_mcse_convergence_on_scenario_a(acceptance_report):
    data = simulate_scenario(PRESETS["A"], 1)
    params = PRESETS["A"].params()
    values = {}
    for n in (20_000, 40_000):
        out = run_kdpf(data.observations, params, data.estimated_seeds, n, seed=0, options=QUIET)
        values[n] = mcse(out.r, out.latent_counts, n)
        del out
    r20, y20 = values[20_000]
    r40, y40 = values[40_000]
    passed = bool(1e-4 <= r40 < 1e-2 and r40 <= 2 * r20 and 0.1 <= y40 < 10)
    acceptance_report(2, passed, f"MCSE(R) {r20:.3g} -> {r40:.3g}, MCSE(Y) {y20:.3g} -> {y40:.3g} at N=20000 -> 40000 "
                                 "(need MCSE(R) of order 1e-3 and not above twice the N=20000 value, MCSE(Y) of order 1)")
    assert passed


def test_parameter_coverage(acceptance_report):
    covered = []
    for seed in range(200, 210):
        data = simulate_scenario(SCENARIO_C, seed)
        out = run_kdpf(data.observations, SCENARIO_C.params(), data.estimated_seeds, 3000, seed=seed,
                       options=QUIET)
        d_lo, d_hi = np.quantile(out.d[-1], [0.005, 0.995])
        v_lo, v_hi = np.quantile(out.v[-1], [0.005, 0.995])
        covered.append(d_lo <= SCENARIO_C.d <= d_hi and v_lo <= SCENARIO_C.v <= v_hi)
    hits = int(np.sum(covered))
    passed = hits >= 8
    acceptance_report(3, passed, f"99% intervals for d and v both cover the truth in {hits}/10 runs (need >= 8)")
    assert passed


def test_pmmh_acceptance_rate(pmmh_chain, acceptance_report):
    rate = pmmh_chain.acceptance_rate
    passed = 0.05 < rate < 0.5
    acceptance_report(4, passed, f"acceptance rate {rate:.4f} over {PMMH_ITERATIONS} iterations (need 0.05 < rate < 0.5)")
    assert passed


def test_property_suite(property_session, acceptance_report):
    session, reports = property_session
    if session["property_items"]:
        failed = [nodeid for nodeid, r in reports.items() if not r["passed"]]
        seconds = sum(r["seconds"] for r in reports.values())
        total = session["property_items"]
    else:
        # run on its own: execute the property suite in a subprocess
        tests = Path(__file__).parent
        start = time.perf_counter()
        done = subprocess.run([sys.executable, "-m", "pytest", "-q", "-p", "no:cacheprovider", str(tests),
                               "--ignore", __file__], capture_output=True, text=True)
        seconds = time.perf_counter() - start
        failed = [] if done.returncode == 0 else [done.stdout.strip().splitlines()[-1]]
        total = "all"
    passed = not failed and seconds <= 600
    acceptance_report(5, passed, f"{total} property tests, {len(failed)} failing, {seconds:.0f} s (need all green in <= 600 s)")
    assert passed, failed


def test_prediction_coverage(acceptance_report):
    hits = 0
    for seed in range(100, 120):
        data = simulate_scenario(SCENARIO_C, seed)
        out = run_kdpf(data.observations, SCENARIO_C.params(), data.estimated_seeds, 2000, seed=seed,
                       options=QUIET)
        hits += predict_next_interval(out, seed=seed).covers(data.target_count)
    passed = hits >= 12
    acceptance_report(6, passed, f"80% predictive interval covers the held-out count in {hits}/20 runs (need >= 12)")
    assert passed


def _linear_fit_residuals(x, y):
    slope, intercept = np.polyfit(x, y, 1)
    fitted = intercept + slope * np.asarray(x)
    return slope, (np.asarray(y) - fitted) / fitted


def test_linear_scaling(acceptance_report):
    data = simulate_scenario(SCENARIO_C, 0)
    params = SCENARIO_C.params()
    run_kdpf(data.observations, params, data.estimated_seeds, 200, options=QUIET)
    sizes = [1000, 2000, 4000, 8000]
    by_n = [run_kdpf(data.observations, params, data.estimated_seeds, n, options=QUIET).step_seconds[1:].mean()
            for n in sizes]
    # flat reproduction path: the event volume grows with the seed count
    events, by_events = [], []
    for n_seeds in (400, 800, 1600, 3200):
        flat = replace(SCENARIO_C, n_seeds=n_seeds, r1=1.0, d=1e6)
        sim = simulate_scenario(flat, 0)
        out = run_kdpf(sim.observations, params, sim.estimated_seeds, 1000, options=QUIET)
        events.append(out.retained_events[1:].mean())
        by_events.append(out.step_seconds[1:].mean())
    slope_n, res_n = _linear_fit_residuals(sizes, by_n)
    slope_e, res_e = _linear_fit_residuals(events, by_events)
    passed = bool(slope_n > 0 and slope_e > 0 and np.all(np.abs(res_n) <= 0.3) and np.all(np.abs(res_e) <= 0.3))
    acceptance_report(
        7, passed,
        "step seconds vs N " + "/".join(f"{t:.3f}" for t in by_n)
        + f" (max residual {np.abs(res_n).max():.0%}); vs retained events "
        + "/".join(f"{e:.0f}:{t:.3f}" for e, t in zip(events, by_events))
        + f" (max residual {np.abs(res_e).max():.0%}); need linear fits within 30%",
    )
    assert passed
