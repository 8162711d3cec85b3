"""Particle marginal Metropolis-Hastings over ``(log d, log v)``.

Each iteration proposes a Gaussian step on the log scale whose standard
deviation is a quarter of the distance to the lower bound, runs an
auxiliary particle filter at the proposal and accepts with the usual
ratio of marginal-likelihood estimates, priors and proposal densities.
The priors are the log-normal densities used to initialize the kernel
density filter, without truncation.
"""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
from scipy.stats import norm

from .engine import Block, Window
from .model import DomainError, ModelParams, ObservationSeries
from .smc import (
    FilterDegeneracyError,
    FilterOptions,
    _auxiliary,
    lognormal_prior,
    make_engine,
    resample_multinomial,
    stream,
    stream_key,
)

log = logging.getLogger(__name__)

MIN_SCALE = 1e-4
PHASE_START = 0
PHASE_PROPOSE = 1
PHASE_ACCEPT = 2
PHASE_FILTER = 3
PHASE_PICK = 4


@dataclass
class Trajectory:
    """One sampled hidden path: ``R`` per interval, latent counts and expected reports."""

    r: np.ndarray
    counts: np.ndarray
    mu: np.ndarray
    events: list


@dataclass
class PmmhChain:
    """Dense per-iteration bookkeeping plus thinned trajectories.

    ``log_d``/``log_v``/``log_ml`` hold the chain state after each
    iteration; ``proposed_*`` and ``uniforms`` are what the accept step
    saw, so the decisions can be replayed.  ``r_paths`` and ``latent_counts``
    are stored every iteration, full event trajectories only every
    ``thin``-th iteration after burn-in (keys of ``events``).
    """

    params: ModelParams
    seed: int
    burn_in: int
    thin: int
    initial_log_d: float
    initial_log_v: float
    initial_log_ml: float
    log_d: np.ndarray
    log_v: np.ndarray
    log_ml: np.ndarray
    accepted: np.ndarray
    proposed_log_d: np.ndarray
    proposed_log_v: np.ndarray
    proposed_log_ml: np.ndarray
    uniforms: np.ndarray
    r_paths: np.ndarray
    latent_counts: np.ndarray
    mu_paths: np.ndarray
    events: dict = field(default_factory=dict)
    scale_floor_hits: int = 0

    @property
    def n_iterations(self) -> int:
        return self.log_d.size

    @property
    def d(self) -> np.ndarray:
        return np.exp(self.log_d)

    @property
    def v(self) -> np.ndarray:
        return np.exp(self.log_v)

    @property
    def acceptance_rate(self) -> float:
        return float(self.accepted.mean())

    @property
    def post_burn_in(self) -> slice:
        return slice(self.burn_in, None)


def proposal_scale(log_value: float, log_min: float) -> tuple:
    """``|log_value - log_min| / 4`` floored at ``MIN_SCALE``; also reports whether the floor was hit."""
    scale = abs(log_value - log_min) / 4.0
    if scale < MIN_SCALE:
        return MIN_SCALE, True
    return scale, False


def log_proposal_density(to: float, frm: float, log_min: float) -> float:
    """Log density of moving from ``frm`` to ``to`` under the state-dependent walk."""
    return float(norm.logpdf(to, loc=frm, scale=proposal_scale(frm, log_min)[0]))


def log_prior(log_d: float, log_v: float, params: ModelParams) -> float:
    mean_d, sd_d = lognormal_prior(params.d_bounds)
    mean_v, sd_v = lognormal_prior(params.v_bounds)
    return float(norm.logpdf(log_d, mean_d, sd_d) + norm.logpdf(log_v, mean_v, sd_v))


def log_acceptance_ratio(cur, prop, cur_ml: float, prop_ml: float, params: ModelParams) -> float:
    """Log of the acceptance ratio for a move ``cur -> prop`` of ``(log d, log v)`` pairs."""
    if prop_ml == -math.inf:
        return -math.inf
    log_min_d = math.log(params.d_bounds[0])
    log_min_v = math.log(params.v_bounds[0])
    return (
        prop_ml - cur_ml
        + log_prior(prop[0], prop[1], params) - log_prior(cur[0], cur[1], params)
        + log_proposal_density(cur[0], prop[0], log_min_d) - log_proposal_density(prop[0], cur[0], log_min_d)
        + log_proposal_density(cur[1], prop[1], log_min_v) - log_proposal_density(prop[1], cur[1], log_min_v)
    )


def _trajectory(out, rng: np.random.Generator) -> Trajectory:
    final = out.final
    j = int(resample_multinomial(np.exp(final.log_weights), rng, size=1)[0])
    events = [final.window.particle_events(j, back) for back in range(out.k - 1, -1, -1)]
    return Trajectory(final.r_history[j].copy(), final.count_history[j].copy(), final.mu_history[j].copy(), events)


class _Target:
    """Runs the inner auxiliary filter at a given ``(log d, log v)``."""

    def __init__(self, obs, params, seeds, n_particles, workers):
        self.obs = obs
        self.params = params
        self.seeds = seeds
        self.n_particles = n_particles
        self.engine = make_engine(params, seeds, obs.grid, workers)
        self.options = FilterOptions(workers=workers, record_intensity=False, keep_history=True)

    def __call__(self, log_d, log_v, seed, pick_rng):
        p = replace(self.params, d=math.exp(log_d), v=math.exp(log_v))
        try:
            out = _auxiliary("apf", self.obs, p, self.seeds, self.n_particles, seed, self.options,
                             learn=False, gated=False, engine=self.engine, check=False)
        except FilterDegeneracyError as err:
            log.info("inner filter degenerate at d=%g v=%g: %s", p.d, p.v, err)
            return -math.inf, None
        return out.log_marginal_likelihood, _trajectory(out, pick_rng)


def pmmh_run(obs: ObservationSeries, params: ModelParams, seeds, n_iterations: int, burn_in: int,
             smc_particles: int = 50, seed: int = 0, thin: int = 10, workers: int = 1,
             max_start_attempts: int = 100) -> PmmhChain:
    """Run the PMMH chain; deterministic in ``seed``."""
    if not n_iterations > burn_in >= 0:
        raise DomainError("need n_iterations > burn_in >= 0")
    if smc_particles < 2:
        raise DomainError("the inner filter needs at least two particles")
    if thin < 1:
        raise DomainError("thin must be >= 1")
    target = _Target(obs, params, seeds, smc_particles, workers)
    k = obs.k
    log_min_d = math.log(params.d_bounds[0])
    log_min_v = math.log(params.v_bounds[0])
    mean_d, sd_d = lognormal_prior(params.d_bounds)
    mean_v, sd_v = lognormal_prior(params.v_bounds)

    for attempt in range(max_start_attempts):
        rng = stream(seed, attempt, PHASE_START)
        cur = (float(rng.normal(mean_d, sd_d)), float(rng.normal(mean_v, sd_v)))
        cur_ml, cur_traj = target(cur[0], cur[1], stream_key(seed, attempt, PHASE_START), rng)
        if cur_traj is not None:
            break
    else:
        raise FilterDegeneracyError(0, f"no usable starting point in {max_start_attempts} prior draws")

    chain = PmmhChain(
        params=params, seed=int(seed), burn_in=burn_in, thin=thin,
        initial_log_d=cur[0], initial_log_v=cur[1], initial_log_ml=cur_ml,
        log_d=np.zeros(n_iterations), log_v=np.zeros(n_iterations), log_ml=np.zeros(n_iterations),
        accepted=np.zeros(n_iterations, dtype=bool),
        proposed_log_d=np.zeros(n_iterations), proposed_log_v=np.zeros(n_iterations),
        proposed_log_ml=np.zeros(n_iterations), uniforms=np.zeros(n_iterations),
        r_paths=np.zeros((n_iterations, k)), latent_counts=np.zeros((n_iterations, k), dtype=np.int64),
        mu_paths=np.zeros((n_iterations, k)),
    )
    for i in range(1, n_iterations + 1):
        rng = stream(seed, i, PHASE_PROPOSE)
        sd_step_d, hit_d = proposal_scale(cur[0], log_min_d)
        sd_step_v, hit_v = proposal_scale(cur[1], log_min_v)
        if hit_d or hit_v:
            chain.scale_floor_hits += 1
            log.warning("iteration %d: proposal scale floored at %g", i, MIN_SCALE)
        prop = (cur[0] + sd_step_d * float(rng.standard_normal()), cur[1] + sd_step_v * float(rng.standard_normal()))
        prop_ml, prop_traj = target(prop[0], prop[1], stream_key(seed, i, PHASE_FILTER), stream(seed, i, PHASE_PICK))
        u = float(stream(seed, i, PHASE_ACCEPT).random())
        ratio = log_acceptance_ratio(cur, prop, cur_ml, prop_ml, params)
        row = i - 1
        if math.log(u) < ratio:
            cur, cur_ml, cur_traj = prop, prop_ml, prop_traj
            chain.accepted[row] = True
        chain.log_d[row], chain.log_v[row] = cur
        chain.log_ml[row] = cur_ml
        chain.proposed_log_d[row], chain.proposed_log_v[row] = prop
        chain.proposed_log_ml[row] = prop_ml
        chain.uniforms[row] = u
        chain.r_paths[row] = cur_traj.r
        chain.latent_counts[row] = cur_traj.counts
        chain.mu_paths[row] = cur_traj.mu
        if i > burn_in and (i - burn_in) % thin == 0:
            chain.events[i] = cur_traj.events
    return chain


def replay_chain(chain: PmmhChain) -> tuple:
    """Recompute the chain from the logged proposals, likelihoods and uniforms.

    Returns ``(log_d, log_v, log_ml, accepted)``; for an untouched chain
    these equal the stored arrays bit for bit.
    """
    n = chain.n_iterations
    log_d = np.zeros(n)
    log_v = np.zeros(n)
    log_ml = np.zeros(n)
    accepted = np.zeros(n, dtype=bool)
    cur = (chain.initial_log_d, chain.initial_log_v)
    cur_ml = chain.initial_log_ml
    for row in range(n):
        prop = (float(chain.proposed_log_d[row]), float(chain.proposed_log_v[row]))
        prop_ml = float(chain.proposed_log_ml[row])
        if math.log(chain.uniforms[row]) < log_acceptance_ratio(cur, prop, cur_ml, prop_ml, chain.params):
            cur, cur_ml = prop, prop_ml
            accepted[row] = True
        log_d[row], log_v[row] = cur
        log_ml[row] = cur_ml
    return log_d, log_v, log_ml, accepted


def chain_intensity(chain: PmmhChain, seeds, grid, xs, workers: int = 1) -> np.ndarray:
    """Latent intensity at ``xs`` for every stored event trajectory, shape ``(stored, len(xs))``."""
    keys = sorted(chain.events)
    xs = np.asarray(xs, dtype=float)
    if not keys:
        return np.empty((0, xs.size))
    engine = make_engine(chain.params, seeds, grid, workers)
    window = Window(len(keys), grid.k)
    for n in range(grid.k):
        window.push(Block.from_lists(grid.lower(n + 1), [chain.events[i][n] for i in keys]))
    r = chain.r_paths[np.array(keys) - 1]
    owner = np.searchsorted(grid.edges, xs, side="right")
    out = np.zeros((len(keys), xs.size))
    particles = np.arange(len(keys))
    eta = grid.eta_intervals(chain.params.eta_days)
    for m in np.unique(owner):
        cols = np.flatnonzero(owner == m)
        lo = max(0, m - 1 - eta)
        out[:, cols] = engine.intensities(window.blocks[lo:m], window.rows[lo:m], particles, r[:, m - 1],
                                          xs[cols], "h")
    return out


def write_chain(chain: PmmhChain, path) -> None:
    """One row per iteration: iteration, d, v, log marginal likelihood, accepted flag."""
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["iteration", "d", "v", "log_marginal_likelihood", "accepted"])
        for i in range(chain.n_iterations):
            w.writerow([i + 1, f"{chain.d[i]:.6g}", f"{chain.v[i]:.6g}", f"{chain.log_ml[i]:.6g}",
                        int(chain.accepted[i])])
