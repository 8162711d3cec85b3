import math

import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy import stats

from latent_hawkes.kernels import REPORTING_KERNEL
from latent_hawkes.model import DomainError, EventHistory, TimeGrid, expected_observed
from latent_hawkes.observation import NBParams, interval_likelihood, nb_log_pmf, nb_sample


def test_zero_count_formula():
    mu, v = 3.7, 0.2
    assert nb_log_pmf(0, mu, v) == pytest.approx((1 / v) * math.log(1 / (1 + v * mu)), rel=1e-13)


def test_hand_value():
    assert nb_log_pmf(1, 2.0, 0.5) == pytest.approx(math.log(0.25), rel=1e-13)


def test_poisson_limit():
    y = np.arange(16)
    pmf = np.exp(nb_log_pmf(y, 3.0, 1e-8))
    assert np.max(np.abs(pmf - stats.poisson(3.0).pmf(y))) < 1e-5


def test_zero_mean():
    assert nb_log_pmf(0, 0.0, 0.1) == 0.0
    assert nb_log_pmf(2, 0.0, 0.1) == -math.inf
    assert np.all(nb_sample(np.zeros(100), 0.1, np.random.default_rng(0)) == 0)


def test_matches_scipy_nbinom():
    mu, v = 40.0, 0.3
    n, p = 1 / v, 1 / (1 + v * mu)
    y = np.arange(300)
    np.testing.assert_allclose(nb_log_pmf(y, mu, v), stats.nbinom(n, p).logpmf(y), rtol=1e-10)


@given(st.floats(0.0, 50.0), st.floats(1e-4, 0.5))
def test_pmf_normalizes(mu, v):
    total = np.exp(nb_log_pmf(np.arange(2001), mu, v)).sum()
    assert total >= 1 - 1e-6


@given(st.floats(0.5, 50.0), st.floats(1e-4, 0.5))
def test_mode_not_above_mean(mu, v):
    y = np.arange(400)
    assert y[np.argmax(nb_log_pmf(y, mu, v))] <= mu


@given(st.integers(0, 10**6), st.floats(1e-4, 1.0), st.floats(0.0, 1e6))
def test_log_pmf_is_finite_for_large_inputs(y, v, mu):
    val = nb_log_pmf(y, mu, v)
    assert not math.isnan(val)
    if mu > 0:
        assert math.isfinite(val)


def test_sample_moments(rng):
    draws = nb_sample(10.0, 0.1, rng, size=100_000)
    assert abs(draws.mean() - 10.0) < 3 * math.sqrt(20.0 / draws.size)
    assert draws.var() == pytest.approx(20.0, rel=0.05)


def test_params_validation():
    assert NBParams(10.0, 0.1).variance == pytest.approx(20.0)
    with pytest.raises(DomainError):
        NBParams(-1.0, 0.1)
    with pytest.raises(DomainError):
        nb_log_pmf(-1, 1.0, 0.1)


def test_interval_likelihood_composite():
    grid = TimeGrid.regular(21.0, 4)
    h = EventHistory(grid, np.array([18.0]), [np.array([24.0])])
    mu = 0.5 * (REPORTING_KERNEL.interval_mass(18.0, 28.0, 35.0) + REPORTING_KERNEL.interval_mass(24.0, 28.0, 35.0))
    assert expected_observed(h, 2, 0.5, REPORTING_KERNEL) == pytest.approx(mu, rel=1e-13)
    assert interval_likelihood(h, 2, 1, 0.5, REPORTING_KERNEL, 0.1) == pytest.approx(nb_log_pmf(1, mu, 0.1), rel=1e-13)


def test_empty_history_zero_count_has_probability_one():
    grid = TimeGrid.regular(21.0, 2)
    h = EventHistory(grid, np.empty(0))
    assert interval_likelihood(h, 1, 0, 0.5, REPORTING_KERNEL, 0.1) == 0.0


def test_likelihood_unimodal_around_mean():
    mu, v = 120.0, 0.05
    y = np.arange(0, 400)
    ll = nb_log_pmf(y, mu, v)
    peak = int(np.argmax(ll))
    assert np.all(np.diff(ll[: peak + 1]) > 0)
    assert np.all(np.diff(ll[peak:]) < 0)
