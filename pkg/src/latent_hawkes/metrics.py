"""Next-interval prediction and the error and Monte Carlo summaries."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .model import DomainError, TimeGrid
from .observation import nb_sample
from .smc import (
    PHASE_PREDICT_COUNTS,
    PHASE_PREDICT_EVENTS,
    PHASE_PREDICT_R,
    PHASE_RESAMPLE,
    make_engine,
    resample_multinomial,
    rw_prior_sample,
    stream,
    stream_key,
)

PREDICTIVE_LEVELS = (0.10, 0.90)


@dataclass(frozen=True)
class Forecast:
    samples: np.ndarray
    mean: float
    median: float
    lower: float
    upper: float
    d_hat: float
    v_hat: float

    def covers(self, value) -> bool:
        return self.lower <= value <= self.upper


def extend_grid(grid: TimeGrid, extra: int = 1) -> TimeGrid:
    return TimeGrid(grid.t0, grid.boundaries + tuple(grid.end + grid.width * np.arange(1, extra + 1)), grid.cadence)


def predict_next_interval(output, seed: int = 0, d_hat: Optional[float] = None,
                          v_hat: Optional[float] = None, workers: int = 1) -> Forecast:
    """Predictive distribution of the count in the interval after the last filtered one.

    ``output`` is a :class:`FilterOutput` or a :class:`Snapshot` of one.

    The final population is resampled by its weights; ``d`` and ``v`` are
    replaced by their particle means unless given.  Each particle then
    draws ``R``, latent events and an NB count for the new interval.
    """
    final = output.final
    params = output.params
    k = output.k
    n_part = final.r.size
    idx = resample_multinomial(np.exp(final.log_weights), stream(seed, k + 1, PHASE_RESAMPLE))
    d_hat = float(np.mean(np.exp(final.log_d[idx]))) if d_hat is None else float(d_hat)
    v_hat = float(np.mean(np.exp(final.log_v[idx]))) if v_hat is None else float(v_hat)
    window = final.window.copy()
    window.reindex(idx)
    grid = extend_grid(output.grid)
    engine = make_engine(params, output.seeds, grid, workers)
    eta = grid.eta_intervals(params.eta_days)
    r = rw_prior_sample(final.r[idx], np.full(n_part, d_hat), stream(seed, k + 1, PHASE_PREDICT_R))
    blocks, rows = window.latest(eta)
    block = engine.sample(blocks, rows, k + 1, r, stream_key(seed, k + 1, PHASE_PREDICT_EVENTS))
    mu = engine.expected(blocks, rows, block, k + 1)
    counts = nb_sample(mu, v_hat, stream(seed, k + 1, PHASE_PREDICT_COUNTS))
    lo, hi = np.quantile(counts, PREDICTIVE_LEVELS)
    return Forecast(counts, float(counts.mean()), float(np.median(counts)), float(lo), float(hi), d_hat, v_hat)


def mcse(r_samples, y_samples, n_particles: Optional[int] = None) -> tuple:
    """Interval-averaged Monte Carlo standard errors of the posterior means of ``R`` and of latent counts.

    Inputs have shape ``(intervals, samples)``; the per-interval error is
    ``sqrt(var / n_particles)`` with the unbiased sample variance.
    """
    return _mcse(r_samples, n_particles), _mcse(y_samples, n_particles)


def _mcse(samples, n_particles) -> float:
    x = np.atleast_2d(np.asarray(samples, dtype=float))
    if x.shape[1] < 2:
        raise DomainError("need at least two samples per interval")
    n = x.shape[1] if n_particles is None else n_particles
    return float(np.mean(np.sqrt(x.var(axis=1, ddof=1) / n)))


def aae_rmse(estimates, truth) -> tuple:
    """Average absolute error and root mean square error."""
    e = np.asarray(estimates, dtype=float)
    t = np.asarray(truth, dtype=float)
    if e.shape != t.shape or e.size == 0:
        raise DomainError("estimates and truth need the same nonzero length")
    err = e - t
    aae = float(np.mean(np.abs(err)))
    # scale by the largest error so tiny errors do not underflow when squared
    top = float(np.max(np.abs(err)))
    rmse = top * math.sqrt(np.mean((err / top) ** 2)) if top > 0 else 0.0
    if aae * (1.0 - 1e-12) <= rmse < aae:
        # equal errors: the square root can land an ulp below the mean
        rmse = aae
    return aae, rmse


@dataclass(frozen=True)
class Summary:
    median: np.ndarray
    mean: np.ndarray
    q005: np.ndarray
    q025: np.ndarray
    q975: np.ndarray
    q995: np.ndarray


def posterior_summary(samples, axis: int = -1) -> Summary:
    """Median, mean and the central 95% and 99% bands (linear-interpolation quantiles)."""
    x = np.asarray(samples, dtype=float)
    if x.size == 0 or x.shape[axis] == 0:
        raise DomainError("cannot summarize an empty sample")
    q = np.quantile(x, [0.5, 0.005, 0.025, 0.975, 0.995], axis=axis)
    return Summary(median=q[0], mean=x.mean(axis=axis), q005=q[1], q025=q[2], q975=q[3], q995=q[4])


def draw_test_points(grid: TimeGrid, n_points: int = 200, seed: int = 0, skip: int = 3) -> np.ndarray:
    """``n_points`` sorted uniform times on ``[T_skip, T_k)`` (``skip`` is capped at ``k - 1``)."""
    lo = grid.edges[min(skip, grid.k - 1)]
    rng = np.random.default_rng([int(seed), 0x7E57])
    return np.sort(np.minimum(rng.uniform(lo, grid.end, n_points), np.nextafter(grid.end, -np.inf)))
