"""Particle filters for the latent Hawkes model.

Three filters share one driver: the kernel density particle filter (auxiliary
look-ahead plus Liu-West regeneration of ``d`` and ``v``), the auxiliary
particle filter with fixed ``d``/``v``, and the bootstrap filter.

Weights are kept on the log scale.  A particle's full importance weight is
``g * w``: ``w`` is the main weight and ``g`` the auxiliary weight carried
between resampling events (reset to uniform whenever the population is
resampled).

Randomness is split by ``(seed, interval, phase)``: population-level draws
use a numpy Generator built from that key and the particle engine derives
one counter-based stream per particle from it, so output is bit-identical
for a fixed seed whatever the number of worker threads.
"""

from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Optional

import numpy as np
from scipy.special import logsumexp

from .engine import Engine, Window
from .kernels import KernelTable
from .model import DomainError, ModelParams, ObservationSeries
from .observation import nb_log_pmf

log = logging.getLogger(__name__)

(
    PHASE_INIT_PARAMS,
    PHASE_INIT_R,
    PHASE_INIT_EVENTS,
    PHASE_LOOK_R,
    PHASE_LOOK_EVENTS,
    PHASE_RESAMPLE,
    PHASE_REGENERATE,
    PHASE_PROPAGATE_R,
    PHASE_PROPAGATE_EVENTS,
    PHASE_DRAW,
    PHASE_INTENSITY,
    PHASE_PREDICT_R,
    PHASE_PREDICT_EVENTS,
    PHASE_PREDICT_COUNTS,
) = range(14)


class FilterDegeneracyError(RuntimeError):
    """Every particle received zero weight at some interval."""

    def __init__(self, interval: int, stage: str):
        super().__init__(f"all particle weights are zero at interval {interval} ({stage})")
        self.interval = interval
        self.stage = stage


def stream(seed: int, step: int, phase: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([int(seed), int(step), int(phase)]))


def stream_key(seed: int, step: int, phase: int) -> int:
    return int(np.random.SeedSequence([int(seed), int(step), int(phase)]).generate_state(1, np.uint64)[0])


# --- building blocks ---------------------------------------------------------


def rw_prior_sample(r_prev, d, rng: np.random.Generator):
    """``r_prev * eps`` with ``eps ~ gamma(shape d, rate d)`` (mean ``r_prev``, sd ``r_prev / sqrt(d)``)."""
    r_prev = np.asarray(r_prev, dtype=float)
    d = np.asarray(d, dtype=float)
    if np.any(r_prev <= 0) or np.any(d <= 0):
        raise DomainError("random walk needs r_prev > 0 and d > 0")
    eps = rng.gamma(d, 1.0 / d, size=np.broadcast(r_prev, d).shape)
    out = r_prev * eps
    # gamma draws with very large shape can underflow to exactly 0 only in
    # pathological cases; keep R strictly positive
    out = np.maximum(out, np.finfo(float).tiny)
    return out if out.ndim else float(out)


def ess(weights) -> float:
    """Effective sample size ``1 / sum(w^2)`` of normalized weights."""
    w = np.asarray(weights, dtype=float)
    return float(1.0 / np.sum(w * w))


def resample_multinomial(weights, rng: np.random.Generator, size: Optional[int] = None) -> np.ndarray:
    """Draw ancestor indices i.i.d. from the categorical distribution ``weights``."""
    w = np.asarray(weights, dtype=float)
    n = w.size if size is None else size
    cum = np.cumsum(w)
    idx = np.searchsorted(cum, rng.random(n) * cum[-1], side="right")
    return np.minimum(idx, w.size - 1).astype(np.int64)


def normalize_log(log_weights) -> tuple:
    """Return ``(normalized log weights, log of the sum)``."""
    total = logsumexp(log_weights)
    return log_weights - total, float(total)


def liu_west_coefficients(delta: float, convention: str = "standard") -> tuple:
    """Shrinkage ``a`` and bandwidth ``h2`` for discount ``delta``.

    ``standard`` uses ``a = (3 delta - 1) / (2 delta)``; ``verbatim`` uses
    ``h2 = 1 - ((3 delta - 1) / (2 / delta))^2``.  Both return ``a^2 + h2 = 1``.
    """
    if not 0 < delta <= 1:
        raise DomainError(f"delta must lie in (0, 1], got {delta}")
    if convention == "standard":
        a = (3.0 * delta - 1.0) / (2.0 * delta)
        return a, 1.0 - a * a
    if convention == "verbatim":
        c = (3.0 * delta - 1.0) / (2.0 / delta)
        h2 = 1.0 - c * c
        return math.sqrt(1.0 - h2), h2
    raise DomainError(f"unknown Liu-West convention {convention!r}")


def weighted_variance(x, weights) -> float:
    """Unbiased weighted variance ``V1 / (V1^2 - V2) * sum w (x - mean)^2``."""
    x = np.asarray(x, dtype=float)
    w = np.asarray(weights, dtype=float)
    v1 = w.sum()
    v2 = np.sum(w * w)
    mean = np.sum(w * x) / v1
    denom = v1 * v1 - v2
    if denom <= 0 or np.all(x == x[0]):
        return 0.0
    spread = float(np.sum(w * (x - mean) ** 2))
    if spread == 0.0:
        return 0.0
    return v1 / denom * spread


@dataclass(frozen=True)
class LiuWestStats:
    a: float
    h2: float
    shrunk_log_d: np.ndarray
    shrunk_log_v: np.ndarray
    shrunk_d: np.ndarray
    shrunk_v: np.ndarray
    var_log_d: float
    var_log_v: float


def liu_west_stats(log_d, log_v, weights, delta: float, convention: str = "standard") -> LiuWestStats:
    """Kernel-mixture statistics for regenerating ``(log d, log v)``.

    Log-scale shrunk means feed the regeneration kernel, natural-scale ones
    the look-ahead step.
    """
    w = np.asarray(weights, dtype=float)
    w = w / w.sum()
    a, h2 = liu_west_coefficients(delta, convention)
    log_d = np.asarray(log_d, dtype=float)
    log_v = np.asarray(log_v, dtype=float)
    d = np.exp(log_d)
    v = np.exp(log_v)
    var_d = weighted_variance(log_d, w)
    var_v = weighted_variance(log_v, w)
    if var_d == 0.0 or var_v == 0.0:
        log.warning("Liu-West weighted variance is zero; parameter particles have collapsed")
    return LiuWestStats(
        a=a,
        h2=h2,
        shrunk_log_d=a * log_d + (1.0 - a) * np.sum(w * log_d),
        shrunk_log_v=a * log_v + (1.0 - a) * np.sum(w * log_v),
        shrunk_d=a * d + (1.0 - a) * np.sum(w * d),
        shrunk_v=a * v + (1.0 - a) * np.sum(w * v),
        var_log_d=var_d,
        var_log_v=var_v,
    )


def lognormal_prior(bounds) -> tuple:
    """Mean and sd on the log scale of the initial density over ``[lo, hi]``."""
    lo, hi = bounds
    return 0.5 * (math.log(hi) + math.log(lo)), (math.log(hi) - math.log(lo)) / 8.0


def trace_ancestors(ancestors: np.ndarray, step: int, lag: int, idx=None) -> np.ndarray:
    """Indices at step ``step - lag`` of the ancestors of particles ``idx`` at ``step``.

    ``ancestors[n - 1][j]`` is the parent (at step ``n - 1``) of particle ``j``
    at step ``n``; steps are 1-based.
    """
    if lag < 0 or step - lag < 1:
        raise DomainError(f"cannot trace {lag} steps back from step {step}")
    cur = np.arange(ancestors.shape[1]) if idx is None else np.asarray(idx, dtype=np.int64)
    for n in range(step, step - lag, -1):
        cur = ancestors[n - 1][cur]
    return cur


# --- outputs -----------------------------------------------------------------


@dataclass
class Particle:
    """A single particle's view of the final population."""

    r_path: np.ndarray
    latent_window: list
    log_d: float
    log_v: float
    log_w: float
    log_g: float
    ancestor: int


@dataclass
class FinalPopulation:
    r: np.ndarray
    log_d: np.ndarray
    log_v: np.ndarray
    log_w: np.ndarray
    log_g: np.ndarray
    window: Window
    r_history: np.ndarray
    count_history: np.ndarray
    mu_history: np.ndarray
    ancestors: np.ndarray

    @property
    def log_weights(self) -> np.ndarray:
        """Normalized log of the full weight ``g * w``."""
        return normalize_log(self.log_g + self.log_w)[0]

    def particle(self, j: int) -> Particle:
        events = [self.window.particle_events(j, back) for back in range(len(self.window.blocks) - 1, -1, -1)]
        return Particle(
            r_path=self.r_history[j].copy(),
            latent_window=events,
            log_d=float(self.log_d[j]),
            log_v=float(self.log_v[j]),
            log_w=float(self.log_w[j]),
            log_g=float(self.log_g[j]),
            ancestor=int(self.ancestors[j]),
        )


@dataclass
class FilterOutput:
    """Posterior draws and diagnostics of one filter run.

    Per-interval arrays have shape ``(k, N)``.  ``r``, ``latent_counts`` and
    ``mu`` come from fixed-lag draws: interval ``m`` is read from the draws
    made after interval ``m + lag`` (or after the last interval).  ``d`` and
    ``v`` are the filtering draws made after each interval.
    """

    method: str
    seed: int
    n_particles: int
    lag: int
    grid: object
    r: np.ndarray
    latent_counts: np.ndarray
    mu: np.ndarray
    d: np.ndarray
    v: np.ndarray
    log_marginal_increments: np.ndarray
    ess: np.ndarray
    resampled: np.ndarray
    resample_log: list
    ancestors: np.ndarray
    draws: np.ndarray
    filter_r: np.ndarray
    log_weights: np.ndarray
    step_seconds: np.ndarray
    retained_events: np.ndarray
    final: FinalPopulation
    params: Optional[ModelParams] = None
    seeds: Optional[np.ndarray] = None
    observations: Optional[np.ndarray] = None
    intensity_times: np.ndarray = field(default_factory=lambda: np.empty(0))
    latent_intensity: np.ndarray = field(default_factory=lambda: np.empty((0, 0)))
    observed_intensity: np.ndarray = field(default_factory=lambda: np.empty((0, 0)))
    test_points: np.ndarray = field(default_factory=lambda: np.empty(0))
    test_intensity: np.ndarray = field(default_factory=lambda: np.empty((0, 0)))

    @property
    def k(self) -> int:
        return self.r.shape[0]

    @property
    def log_marginal_likelihood(self) -> float:
        return float(self.log_marginal_increments.sum())

    def snapshot(self) -> "Snapshot":
        return Snapshot(self.grid, self.params, self.seeds, self.final)


@dataclass
class Snapshot:
    """What prediction needs from a finished run: grid, model, seeds and the final population."""

    grid: object
    params: ModelParams
    seeds: np.ndarray
    final: FinalPopulation

    @property
    def k(self) -> int:
        return self.grid.k


@dataclass(frozen=True)
class FilterOptions:
    """Run-time knobs that do not change the model.

    ``intensity_draws`` caps how many of the fixed-lag draws per interval
    are used for the intensity bands; ``test_points`` are extra times at
    which the latent intensity is recorded (for error metrics);
    ``keep_history`` retains every interval's events (needed to extract
    whole trajectories).
    """

    workers: int = 1
    record_intensity: bool = True
    intensity_step: float = 0.25
    intensity_draws: int = 1000
    test_points: Optional[np.ndarray] = None
    keep_history: bool = False


def fixed_lag_draw(output: FilterOutput, step: int, lag: int):
    """Ancestors at step ``step - lag`` of the draws made after ``step``, with their ``R``.

    Returns ``(indices, r_values)`` where ``r_values[i]`` is ``R`` of the
    ancestor at interval ``step - lag``.
    """
    idx = trace_ancestors(output.ancestors, step, lag, output.draws[step - 1])
    return idx, output.filter_r[step - lag - 1][idx]


# --- shared driver -----------------------------------------------------------


@lru_cache(maxsize=8)
def _table(kernel) -> KernelTable:
    return KernelTable.build(kernel)


def make_engine(params: ModelParams, seeds, grid, workers: int = 1) -> Engine:
    """Particle engine for ``params``' kernels over ``grid`` (kernel tables are cached)."""
    return Engine(_table(params.kernel_h), _table(params.kernel_g), seeds, grid, params.beta, params.eta_days,
                  workers=workers)


class _Run:
    """State shared by every filter: engine, window, histories and records."""

    def __init__(self, method, obs: ObservationSeries, params: ModelParams, seeds, n_particles: int,
                 seed: int, options: FilterOptions, engine: Optional[Engine] = None):
        if n_particles < 2:
            raise DomainError("need at least two particles")
        self.method = method
        self.obs = obs
        self.params = params
        self.n = n_particles
        self.seed = int(seed)
        self.options = options
        grid = obs.grid
        self.grid = grid
        self.k = grid.k
        self.y = obs.counts
        self.engine = engine if engine is not None else make_engine(params, seeds, grid, options.workers)
        self.eta = grid.eta_intervals(params.eta_days)
        self.lag = params.lag
        if options.keep_history:
            capacity = self.k
        elif options.record_intensity:
            capacity = self.eta + self.lag + 1
        else:
            capacity = self.eta
        self.window = Window(n_particles, capacity)
        k, n = self.k, n_particles
        self.hist_r = np.zeros((n, k))
        self.hist_count = np.zeros((n, k), dtype=np.int64)
        self.hist_mu = np.zeros((n, k))
        self.out_r = np.zeros((k, n))
        self.out_count = np.zeros((k, n), dtype=np.int64)
        self.out_mu = np.zeros((k, n))
        self.out_d = np.zeros((k, n))
        self.out_v = np.zeros((k, n))
        self.log_ml = np.zeros(k)
        self.ess = np.zeros(k)
        self.resampled = np.zeros(k, dtype=bool)
        self.resample_log = []
        self.ancestors = np.zeros((k, n), dtype=np.int64)
        self.draws = np.zeros((k, n), dtype=np.int64)
        self.filter_r = np.zeros((k, n))
        self.log_weights = np.zeros((k, n))
        self.step_seconds = np.zeros(k)
        self.retained_events = np.zeros(k)
        self._setup_intensity()

    # randomness
    def rng(self, step, phase):
        return stream(self.seed, step, phase)

    def key(self, step, phase):
        return stream_key(self.seed, step, phase)

    # engine helpers
    def sample(self, n, r, phase):
        blocks, rows = self.window.latest(self.eta)
        return self.engine.sample(blocks, rows, n, r, self.key(n, phase))

    def expected(self, n, block):
        blocks, rows = self.window.latest(self.eta)
        return self.engine.expected(blocks, rows, block, n)

    def parent_events(self, n) -> float:
        """Mean number of candidate parents per particle for interval ``n`` (window events plus live seeds)."""
        blocks, rows = self.window.latest(self.eta)
        total = sum(float(b.counts[r].sum()) for b, r in zip(blocks, rows))
        return total / self.n + np.count_nonzero(self.engine.seed_mass(n) > 0)

    def reindex(self, idx):
        self.window.reindex(idx)
        self.hist_r = self.hist_r[idx]
        self.hist_count = self.hist_count[idx]
        self.hist_mu = self.hist_mu[idx]

    def commit(self, n, r, block, mu):
        self.window.push(block)
        self.hist_r[:, n - 1] = r
        self.hist_count[:, n - 1] = block.counts
        self.hist_mu[:, n - 1] = mu

    # per-step records
    def record(self, n, ancestors, log_g, log_w, log_d, log_v, seconds, retained):
        full = normalize_log(log_g + log_w)[0]
        draw = resample_multinomial(np.exp(full), self.rng(n, PHASE_DRAW))
        self.ancestors[n - 1] = ancestors
        self.draws[n - 1] = draw
        self.filter_r[n - 1] = self.hist_r[:, n - 1]
        self.log_weights[n - 1] = full
        self.out_d[n - 1] = np.exp(log_d[draw])
        self.out_v[n - 1] = np.exp(log_v[draw])
        self.step_seconds[n - 1] = seconds
        self.retained_events[n - 1] = retained
        if n > self.lag:
            self._lag_record(n, n - self.lag, draw)
        if n == self.k:
            for m in range(max(1, n - self.lag + 1), n + 1):
                self._lag_record(n, m, draw)

    def _lag_record(self, n, m, draw):
        self.out_r[m - 1] = self.hist_r[draw, m - 1]
        self.out_count[m - 1] = self.hist_count[draw, m - 1]
        self.out_mu[m - 1] = self.hist_mu[draw, m - 1]
        if self.options.record_intensity:
            self._intensity(n, m, draw)

    # intensities at lag-draw time
    def _setup_intensity(self):
        opt = self.options
        self.grid_points = np.empty(0)
        self.test_points = np.asarray(opt.test_points if opt.test_points is not None else [], dtype=float)
        if not opt.record_intensity:
            self.points = np.empty(0)
            return
        self.grid_points = np.arange(self.grid.t0, self.grid.end, opt.intensity_step)
        self.points = np.concatenate([self.grid_points, self.test_points])
        edges = self.grid.edges
        owner = np.searchsorted(edges, self.points, side="right")
        if np.any((owner < 1) | (owner > self.k)):
            raise DomainError("intensity test points must lie inside the horizon")
        self.point_owner = owner
        self.n_draws = min(opt.intensity_draws, self.n)
        self.lat = np.zeros((self.n_draws, self.points.size))
        self.obsv = np.zeros((self.n_draws, self.points.size))

    def _intensity(self, n, m, draw):
        cols = np.flatnonzero(self.point_owner == m)
        if cols.size == 0:
            return
        if self.n_draws < self.n:
            pick = self.rng(m, PHASE_INTENSITY).choice(self.n, self.n_draws, replace=False)
            draw = draw[np.sort(pick)]
        uniq, inverse = np.unique(draw, return_inverse=True)
        back = n - m
        total = len(self.window.blocks)
        hi = total - back
        lo = max(0, hi - self.eta - 1)
        blocks = self.window.blocks[lo:hi]
        rows = self.window.rows[lo:hi]
        xs = self.points[cols]
        lam = self.engine.intensities(blocks, rows, uniq, self.hist_r[uniq, m - 1], xs, "h")
        obs = self.engine.intensities(blocks, rows, uniq, np.full(uniq.size, self.params.beta), xs, "g")
        self.lat[:, cols] = lam[inverse]
        self.obsv[:, cols] = obs[inverse]

    def output(self, final: FinalPopulation) -> FilterOutput:
        out = FilterOutput(
            method=self.method,
            seed=self.seed,
            n_particles=self.n,
            lag=self.lag,
            grid=self.grid,
            r=self.out_r,
            latent_counts=self.out_count,
            mu=self.out_mu,
            d=self.out_d,
            v=self.out_v,
            log_marginal_increments=self.log_ml,
            ess=self.ess,
            resampled=self.resampled,
            resample_log=self.resample_log,
            ancestors=self.ancestors,
            draws=self.draws,
            filter_r=self.filter_r,
            log_weights=self.log_weights,
            step_seconds=self.step_seconds,
            retained_events=self.retained_events,
            final=final,
            params=self.params,
            seeds=self.engine.seeds,
            observations=self.y,
        )
        if self.options.record_intensity:
            g = self.grid_points.size
            out.intensity_times = self.grid_points
            out.latent_intensity = self.lat[:, :g]
            out.observed_intensity = self.obsv[:, :g]
            out.test_points = self.test_points
            out.test_intensity = self.lat[:, g:]
        return out


def _first_step(run: _Run, log_d, log_v):
    p = run.params
    t = time.perf_counter()
    r = run.rng(1, PHASE_INIT_R).uniform(p.r1_bounds[0], p.r1_bounds[1], run.n)
    retained = run.parent_events(1)
    block = run.sample(1, r, PHASE_INIT_EVENTS)
    mu = run.expected(1, block)
    ll = nb_log_pmf(run.y[0], mu, np.exp(log_v))
    if not np.any(np.isfinite(ll)):
        raise FilterDegeneracyError(1, "initial weights")
    log_w, total = normalize_log(ll)
    run.log_ml[0] = total - math.log(run.n)
    run.ess[0] = ess(np.exp(log_w))
    run.commit(1, r, block, mu)
    log_g = np.full(run.n, -math.log(run.n))
    run.record(1, np.arange(run.n), log_g, log_w, log_d, log_v, time.perf_counter() - t, retained)
    return r, log_w, log_g


def _auxiliary(method, obs, params: ModelParams, seeds, n_particles, seed, options, learn: bool, gated: bool,
               engine: Optional[Engine] = None, check: bool = True):
    run = _Run(method, obs, params, seeds, n_particles, seed, options, engine)
    n_part = run.n
    if learn:
        rng = run.rng(1, PHASE_INIT_PARAMS)
        mean_d, sd_d = lognormal_prior(params.d_bounds)
        mean_v, sd_v = lognormal_prior(params.v_bounds)
        log_d = rng.normal(mean_d, sd_d, n_part)
        log_v = rng.normal(mean_v, sd_v, n_part)
    else:
        if check:
            params.check_fixed_parameters()
        log_d = np.full(n_part, math.log(params.d))
        log_v = np.full(n_part, math.log(params.v))
    r, log_w, log_g = _first_step(run, log_d, log_v)
    threshold = params.ess_threshold * n_part

    for n in range(2, run.k + 1):
        t = time.perf_counter()
        y = run.y[n - 1]
        full = normalize_log(log_g + log_w)[0]
        if learn:
            stats = liu_west_stats(log_d, log_v, np.exp(full), params.delta, params.liu_west)
            look_d, look_v = stats.shrunk_d, stats.shrunk_v
        else:
            look_d, look_v = np.exp(log_d), np.exp(log_v)

        # look-ahead
        r_look = rw_prior_sample(r, look_d, run.rng(n, PHASE_LOOK_R))
        look = run.sample(n, r_look, PHASE_LOOK_EVENTS)
        ll_look = nb_log_pmf(y, run.expected(n, look), look_v)
        del look
        log_gt = full + ll_look
        if not np.any(np.isfinite(log_gt)):
            raise FilterDegeneracyError(n, "auxiliary weights")
        log_g_new, first_factor = normalize_log(log_gt)
        run.ess[n - 1] = ess(np.exp(log_g_new))
        if not gated or run.ess[n - 1] < threshold:
            idx = resample_multinomial(np.exp(log_g_new), run.rng(n, PHASE_RESAMPLE))
            log_g = np.full(n_part, -math.log(n_part))
            run.resampled[n - 1] = True
            run.resample_log.append((n, run.ess[n - 1]))
        else:
            idx = np.arange(n_part)
            log_g = log_g_new

        # regenerate the time-constant parameters around the ancestors' shrunk means
        if learn:
            rng = run.rng(n, PHASE_REGENERATE)
            sd_d = math.sqrt(stats.h2 * stats.var_log_d)
            sd_v = math.sqrt(stats.h2 * stats.var_log_v)
            log_d = stats.shrunk_log_d[idx] + sd_d * rng.standard_normal(n_part)
            log_v = stats.shrunk_log_v[idx] + sd_v * rng.standard_normal(n_part)
            _check_band(n, "log d", log_d, stats.shrunk_log_d, stats.var_log_d)
            _check_band(n, "log v", log_v, stats.shrunk_log_v, stats.var_log_v)
        r = r[idx]
        ll_anc = ll_look[idx]
        run.reindex(idx)

        # propagate
        retained = run.parent_events(n)
        r = rw_prior_sample(r, np.exp(log_d), run.rng(n, PHASE_PROPAGATE_R))
        block = run.sample(n, r, PHASE_PROPAGATE_EVENTS)
        mu = run.expected(n, block)
        log_wt = nb_log_pmf(y, mu, np.exp(log_v)) - ll_anc
        if not np.any(np.isfinite(log_wt)):
            raise FilterDegeneracyError(n, "propagation weights")
        log_w = normalize_log(log_wt)[0]
        run.log_ml[n - 1] = first_factor + float(logsumexp(log_g + log_wt))
        run.commit(n, r, block, mu)
        run.record(n, idx, log_g, log_w, log_d, log_v, time.perf_counter() - t, retained)

    final = FinalPopulation(r, log_d, log_v, log_w, log_g, run.window, run.hist_r,
                            run.hist_count, run.hist_mu, run.ancestors[-1])
    return run.output(final)


def _check_band(n, name, values, centers, var):
    if var <= 0:
        return
    sd = math.sqrt(var)
    lo, hi = centers.min() - 6 * sd, centers.max() + 6 * sd
    bad = int(np.count_nonzero((values < lo) | (values > hi)))
    if bad:
        log.warning("interval %d: %d regenerated %s values outside the +-6 sd band", n, bad, name)


def run_kdpf(obs: ObservationSeries, params: ModelParams, seeds, n_particles: int, seed: int = 0,
             options: FilterOptions = FilterOptions()) -> FilterOutput:
    """Kernel density particle filter: learns ``d`` and ``v`` alongside the hidden states.

    Resamples only when the ESS of the auxiliary weights drops below
    ``params.ess_threshold * n_particles``.
    """
    return _auxiliary("kdpf", obs, params, seeds, n_particles, seed, options, learn=True, gated=True)


def run_apf(obs: ObservationSeries, params: ModelParams, seeds, n_particles: int, seed: int = 0,
            options: FilterOptions = FilterOptions()) -> FilterOutput:
    """Auxiliary particle filter with ``d`` and ``v`` fixed at ``params.d``/``params.v``.

    Resamples on the auxiliary weights at every interval; the log marginal
    likelihood is accumulated in ``log_marginal_increments``.
    """
    return _auxiliary("apf", obs, params, seeds, n_particles, seed, options, learn=False, gated=False)


def run_bf(obs: ObservationSeries, params: ModelParams, seeds, n_particles: int, seed: int = 0,
           options: FilterOptions = FilterOptions()) -> FilterOutput:
    """Bootstrap filter: prior proposals, NB weights, multinomial resampling every interval."""
    params.check_fixed_parameters()
    run = _Run("bf", obs, params, seeds, n_particles, seed, options)
    n_part = run.n
    log_d = np.full(n_part, math.log(params.d))
    log_v = np.full(n_part, math.log(params.v))
    r, log_w, log_g = _first_step(run, log_d, log_v)
    for n in range(2, run.k + 1):
        t = time.perf_counter()
        run.ess[n - 1] = ess(np.exp(log_w))
        idx = resample_multinomial(np.exp(log_w), run.rng(n, PHASE_RESAMPLE))
        run.resampled[n - 1] = True
        run.resample_log.append((n, run.ess[n - 1]))
        r = r[idx]
        run.reindex(idx)
        retained = run.parent_events(n)
        r = rw_prior_sample(r, params.d, run.rng(n, PHASE_PROPAGATE_R))
        block = run.sample(n, r, PHASE_PROPAGATE_EVENTS)
        mu = run.expected(n, block)
        ll = nb_log_pmf(run.y[n - 1], mu, params.v)
        if not np.any(np.isfinite(ll)):
            raise FilterDegeneracyError(n, "propagation weights")
        log_w, total = normalize_log(ll)
        run.log_ml[n - 1] = total - math.log(n_part)
        run.commit(n, r, block, mu)
        run.record(n, idx, log_g, log_w, log_d, log_v, time.perf_counter() - t, retained)
    final = FinalPopulation(r, log_d, log_v, log_w, log_g, run.window, run.hist_r,
                            run.hist_count, run.hist_mu, run.ancestors[-1])
    return run.output(final)


FILTERS = {"kdpf": run_kdpf, "apf": run_apf, "bf": run_bf}
