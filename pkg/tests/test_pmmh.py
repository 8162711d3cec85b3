import math

import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy import stats

from latent_hawkes.model import DomainError, ObservationSeries, TimeGrid
from latent_hawkes.observation import nb_sample
from latent_hawkes.pmmh import (
    MIN_SCALE,
    log_acceptance_ratio,
    log_prior,
    log_proposal_density,
    pmmh_run,
    proposal_scale,
    replay_chain,
    write_chain,
)
from latent_hawkes.scenarios import PRESETS
from latent_hawkes.smc import lognormal_prior, make_engine

PARAMS = PRESETS["C"].params()
SEEDS = np.sort(np.random.default_rng(1).uniform(0.0, 21.0, 60))


def single_interval(y):
    return ObservationSeries(TimeGrid.regular(21.0, 1), np.array([y]))


@pytest.fixture(scope="module")
def small_chain():
    return pmmh_run(single_interval(15), PARAMS, SEEDS, 300, 100, smc_particles=20, seed=3, thin=25)


def test_chain_shape_and_bookkeeping(small_chain):
    chain = small_chain
    assert chain.n_iterations == 300
    assert sorted(chain.events) == list(range(125, 301, 25))
    for row in range(1, 300):
        if not chain.accepted[row]:
            assert chain.log_d[row] == chain.log_d[row - 1]
            np.testing.assert_array_equal(chain.r_paths[row], chain.r_paths[row - 1])
        else:
            assert chain.log_d[row] == chain.proposed_log_d[row]
            assert chain.log_ml[row] == chain.proposed_log_ml[row]


def test_replay_is_bit_exact(small_chain):
    log_d, log_v, log_ml, accepted = replay_chain(small_chain)
    np.testing.assert_array_equal(log_d, small_chain.log_d)
    np.testing.assert_array_equal(log_v, small_chain.log_v)
    np.testing.assert_array_equal(log_ml, small_chain.log_ml)
    np.testing.assert_array_equal(accepted, small_chain.accepted)


def test_same_seed_same_chain(small_chain):
    again = pmmh_run(single_interval(15), PARAMS, SEEDS, 300, 100, smc_particles=20, seed=3, thin=25)
    np.testing.assert_array_equal(again.log_d, small_chain.log_d)
    np.testing.assert_array_equal(again.r_paths, small_chain.r_paths)


def test_chain_dump(tmp_path, small_chain):
    path = tmp_path / "chain.csv"
    write_chain(small_chain, path)
    lines = path.read_text().splitlines()
    assert lines[0] == "iteration,d,v,log_marginal_likelihood,accepted"
    assert len(lines) == 301
    assert lines[1].startswith("1,")


def test_proposal_scale_floor():
    assert proposal_scale(math.log(10.0), math.log(10.0)) == (MIN_SCALE, True)
    scale, hit = proposal_scale(math.log(20.0), math.log(10.0))
    assert scale == pytest.approx(math.log(2.0) / 4) and not hit


def test_proposal_density_is_asymmetric():
    lo = math.log(10.0)
    a, b = math.log(12.0), math.log(18.0)
    forward = log_proposal_density(b, a, lo)
    backward = log_proposal_density(a, b, lo)
    assert forward == pytest.approx(stats.norm(a, abs(a - lo) / 4).logpdf(b))
    assert backward == pytest.approx(stats.norm(b, abs(b - lo) / 4).logpdf(a))
    assert forward != pytest.approx(backward)


@given(st.floats(2.0, 3.2), st.floats(-8.0, -1.0), st.floats(2.0, 3.2), st.floats(-8.0, -1.0),
       st.floats(-50, 0), st.floats(-50, 0))
def test_acceptance_ratio_is_antisymmetric(d1, v1, d2, v2, ml1, ml2):
    forward = log_acceptance_ratio((d1, v1), (d2, v2), ml1, ml2, PARAMS)
    backward = log_acceptance_ratio((d2, v2), (d1, v1), ml2, ml1, PARAMS)
    assert forward == pytest.approx(-backward, abs=1e-9)


def test_degenerate_proposal_is_rejected():
    assert log_acceptance_ratio((2.5, -4.0), (2.6, -4.0), -10.0, -math.inf, PARAMS) == -math.inf


def test_prior_matches_initialization_density():
    mean_d, sd_d = lognormal_prior(PARAMS.d_bounds)
    mean_v, sd_v = lognormal_prior(PARAMS.v_bounds)
    assert mean_d == pytest.approx(0.5 * (math.log(20) + math.log(10)))
    assert sd_d == pytest.approx(math.log(2) / 8)
    expected = stats.norm(mean_d, sd_d).logpdf(2.7) + stats.norm(mean_v, sd_v).logpdf(-5.0)
    assert log_prior(2.7, -5.0, PARAMS) == pytest.approx(expected)


def test_invalid_arguments():
    with pytest.raises(DomainError):
        pmmh_run(single_interval(5), PARAMS, SEEDS, 10, 10)
    with pytest.raises(DomainError):
        pmmh_run(single_interval(5), PARAMS, SEEDS, 10, 2, smc_particles=1)


def test_uninformative_data_recovers_prior():
    """Chains run on data drawn from the prior predictive return the prior when pooled."""
    n_chains, iterations, burn_in = 4, 5500, 500
    mean_d, sd_d = lognormal_prior(PARAMS.d_bounds)
    mean_v, sd_v = lognormal_prior(PARAMS.v_bounds)
    grid = TimeGrid.regular(21.0, 1)
    engine = make_engine(PARAMS, SEEDS, grid)
    pooled_d, pooled_v = [], []
    for c in range(n_chains):
        rng = np.random.default_rng([77, c])
        v = math.exp(rng.normal(mean_v, sd_v))
        r = rng.uniform(*PARAMS.r1_bounds, 1)
        block = engine.sample([], [], 1, r, key=1000 + c)
        y = int(nb_sample(engine.expected([], [], block, 1), v, rng)[0])
        chain = pmmh_run(single_interval(y), PARAMS, SEEDS, iterations, burn_in, smc_particles=50, seed=c)
        pooled_d.append(chain.log_d[burn_in:])
        pooled_v.append(chain.log_v[burn_in:])
    ks_d = stats.kstest(np.concatenate(pooled_d), stats.norm(mean_d, sd_d).cdf).statistic
    ks_v = stats.kstest(np.concatenate(pooled_v), stats.norm(mean_v, sd_v).cdf).statistic
    assert ks_d < 0.05 and ks_v < 0.05
