from math import exp, lgamma, log

import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy import integrate

from latent_hawkes.kernels import GI_KERNEL, REPORTING_KERNEL
from latent_hawkes.model import (
    DomainError,
    EventHistory,
    ModelParams,
    ObservationSeries,
    TimeGrid,
    expected_observed,
    latent_intensity,
    observed_intensity,
)

GRID = TimeGrid.regular(21.0, 8)


def history(seeds=(), events=()):
    return EventHistory(GRID, np.asarray(seeds, dtype=float), [np.asarray(e, dtype=float) for e in events])


def test_empty_history_has_zero_intensity():
    h = history()
    assert latent_intensity(h, [1.3] * 8, 30.0, GI_KERNEL) == 0.0
    assert observed_intensity(h, 30.0, 0.5, REPORTING_KERNEL) == 0.0
    assert expected_observed(h, 3, 0.5, REPORTING_KERNEL) == 0.0


def test_event_at_evaluation_time_contributes_nothing():
    h = history(events=[[25.0]])
    assert latent_intensity(h, [1.0] * 8, 25.0, GI_KERNEL) == 0.0


def test_latent_intensity_single_event():
    t = 30.0
    h = history(events=[[t - 6.7]])
    shape, rate = GI_KERNEL.shape, GI_KERNEL.rate
    oracle = exp(shape * log(rate) + (shape - 1) * log(6.7) - rate * 6.7 - lgamma(shape))
    assert latent_intensity(h, [1.0] * 8, t, GI_KERNEL) == pytest.approx(oracle, rel=1e-12)


def test_observed_intensity_single_event():
    h = history(seeds=[20.0])
    k = REPORTING_KERNEL
    oracle = 0.5 * exp(k.shape * log(k.rate) + (k.shape - 1) * log(8.8) - k.rate * 8.8 - lgamma(k.shape))
    assert observed_intensity(h, 28.8, 0.5, k) == pytest.approx(oracle, rel=1e-12)
    assert observed_intensity(h, 28.8, 1e-300, k) == pytest.approx(0.0, abs=1e-290)


def test_expected_observed_matches_quadrature():
    h = history(seeds=[15.5])
    n = 2
    lo, hi = GRID.lower(n), GRID.upper(n)
    val, _ = integrate.quad(lambda t: 0.5 * REPORTING_KERNEL.pdf(t - 15.5), lo, hi, epsabs=1e-13)
    closed = 0.5 * (REPORTING_KERNEL.cdf(hi - 15.5) - REPORTING_KERNEL.cdf(lo - 15.5))
    mu = expected_observed(h, n, 0.5, REPORTING_KERNEL)
    assert abs(mu - val) < 1e-8
    assert abs(mu - closed) < 1e-12


def test_expected_observed_sums_to_beta():
    grid = TimeGrid.regular(21.0, 60)
    h = EventHistory(grid, np.empty(0), [np.array([21.0])])
    total = sum(expected_observed(h, n, 0.5, REPORTING_KERNEL, eta_days=None) for n in range(1, 61))
    assert abs(total - 0.5) < 1e-6


@given(st.floats(0.0, 20.0), st.floats(0.01, 7.0), st.floats(0.01, 7.0))
def test_expected_observed_monotone_in_upper_edge(offset, width1, width2):
    seed = 20.9 - offset
    lo = 21.0
    g = REPORTING_KERNEL
    # mu over [T_{n-1}, T_n) grows with T_n, checked through the kernel mass
    m1 = 0.5 * g.interval_mass(seed, lo, lo + width1)
    m2 = 0.5 * g.interval_mass(seed, lo, lo + width1 + width2)
    assert m2 >= m1


@given(st.lists(st.floats(21.0, 49.9), min_size=0, max_size=8), st.lists(st.floats(21.0, 49.9), min_size=0, max_size=8))
def test_latent_intensity_is_additive(a, b):
    t = 50.0
    r = [1.4] * 8

    def hist(times):
        times = np.asarray(times, dtype=float)
        return history(events=[times[(times >= GRID.lower(i)) & (times < GRID.upper(i))] for i in range(1, 5)])

    both = latent_intensity(hist(a + b), r, t, GI_KERNEL)
    parts = latent_intensity(hist(a), r, t, GI_KERNEL) + latent_intensity(hist(b), r, t, GI_KERNEL)
    assert both == pytest.approx(parts, rel=1e-12, abs=1e-300)


def test_grid_validation():
    with pytest.raises(DomainError):
        TimeGrid(0.0, (7.0, 7.0))
    with pytest.raises(DomainError):
        TimeGrid(0.0, (6.0,))
    with pytest.raises(DomainError):
        GRID.interval_of(GRID.end)
    assert GRID.interval_of(21.0) == 1
    assert GRID.interval_of(28.0) == 2
    assert GRID.eta_intervals(21.0) == 3


def test_history_validation():
    with pytest.raises(DomainError):
        EventHistory(GRID, np.array([21.0]))
    with pytest.raises(DomainError):
        history(events=[[29.0]])


def test_params_validation():
    with pytest.raises(DomainError):
        ModelParams(beta=0.0)
    with pytest.raises(DomainError):
        ModelParams(delta=1.5)
    with pytest.raises(DomainError):
        ModelParams(liu_west="other")
    with pytest.raises(DomainError):
        ModelParams(d=25.0).check_fixed_parameters()
    with pytest.raises(DomainError):
        ObservationSeries(TimeGrid.regular(0.0, 2), np.array([1, -1]))
