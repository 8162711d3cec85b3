"""Cluster (branching) simulation of the latent Hawkes process.

Within an interval the process is a superposition of inhomogeneous Poisson
processes: every earlier event ``t_i`` independently spawns
``Poisson(R_n * mass_i)`` children in the interval, placed by the kernel
truncated to the interval, and children spawn in turn.  ``sample_interval``
runs this as a FIFO queue, one generation of the queue at a time.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy import special

from .kernels import GammaKernel
from .model import DEFAULT_ETA_DAYS, DomainError, EventHistory, ObservationSeries, TimeGrid, expected_observed
from .observation import nb_sample


@dataclass(frozen=True)
class OffspringRecord:
    child_time: float
    parent_time: float
    interval: int
    parent_is_seed: bool = False


class EpidemicTooLarge(RuntimeError):
    """A simulated epidemic exceeded the configured event budget."""


def _queue_seed(history: EventHistory, n: int, eta_intervals: int) -> np.ndarray:
    first = max(1, n - eta_intervals)
    chunks = [history.seeds] + history.events_by_interval[first - 1 : n - 1]
    return np.concatenate(chunks)


def _truncated_draws(kernel: GammaKernel, origins: np.ndarray, lo: float, hi: float, rng) -> np.ndarray:
    a = np.maximum(lo, origins) - origins
    b = hi - origins
    u = rng.random(origins.size)
    s, r = kernel.shape, kernel.rate
    upper = a * r >= s
    x = np.empty(origins.size)
    if np.any(~upper):
        ca = special.gammainc(s, r * a[~upper])
        cb = special.gammainc(s, r * b[~upper])
        x[~upper] = special.gammaincinv(s, ca + u[~upper] * (cb - ca)) / r
    if np.any(upper):
        sa = special.gammaincc(s, r * a[upper])
        sb = special.gammaincc(s, r * b[upper])
        x[upper] = special.gammainccinv(s, sa - u[upper] * (sa - sb)) / r
    x = np.clip(x, a, np.nextafter(b, -np.inf))
    return origins + x


def sample_interval(
    history: EventHistory,
    n: int,
    r_n: float,
    kernel_h: GammaKernel,
    eta_intervals: int,
    rng: np.random.Generator,
    record_parents: bool = False,
):
    """Sample the latent events of interval ``n`` given everything before it.

    The queue starts with the seeds and the events of the previous
    ``eta_intervals`` intervals.  Returns the sorted event times, plus a list
    of :class:`OffspringRecord` when ``record_parents`` is set.
    """
    if r_n < 0:
        raise DomainError("r_n must be nonnegative")
    if history.n_filled < n - 1:
        raise DomainError(f"history only covers {history.n_filled} intervals, need {n - 1}")
    grid = history.grid
    lo, hi = grid.lower(n), grid.upper(n)
    initial = _queue_seed(history, n, eta_intervals)
    n_seeds = history.seeds.size
    queue = deque([initial])
    generated = []
    records = []
    first_generation = True
    while queue:
        parents = queue.popleft()
        if parents.size == 0 or r_n == 0:
            first_generation = False
            continue
        lam = r_n * kernel_h.interval_mass(parents, lo, hi)
        n_children = rng.poisson(lam)
        origins = np.repeat(parents, n_children)
        if origins.size:
            children = _truncated_draws(kernel_h, origins, lo, hi, rng)
            generated.append(children)
            queue.append(children)
            if record_parents:
                is_seed = np.zeros(parents.size, dtype=bool)
                if first_generation:
                    is_seed[:n_seeds] = True
                seed_flags = np.repeat(is_seed, n_children)
                records.extend(
                    OffspringRecord(float(c), float(p), n, bool(f))
                    for c, p, f in zip(children, origins, seed_flags)
                )
        first_generation = False
    times = np.concatenate(generated) if generated else np.empty(0)
    order = np.argsort(times, kind="stable")
    times = times[order]
    if record_parents:
        records = [records[i] for i in order]
        return times, records
    return times


def simulate_horizon(
    seeds,
    grid: TimeGrid,
    r_path,
    kernel_h: GammaKernel,
    kernel_g: GammaKernel,
    beta: float,
    v: float,
    rng: np.random.Generator,
    eta_days: float = DEFAULT_ETA_DAYS,
    max_events: Optional[int] = None,
):
    """Generate latent events for every interval and NB-distributed counts.

    ``max_events`` bounds the total number of latent events; exceeding it
    raises :class:`EpidemicTooLarge`.
    """
    r_path = np.asarray(r_path, dtype=float)
    if r_path.shape != (grid.k,) or np.any(r_path <= 0):
        raise DomainError("r_path needs one positive weight per interval")
    history = EventHistory(grid, seeds)
    eta = grid.eta_intervals(eta_days)
    total = 0
    for n in range(1, grid.k + 1):
        events = sample_interval(history, n, r_path[n - 1], kernel_h, eta, rng)
        total += events.size
        if max_events is not None and total > max_events:
            raise EpidemicTooLarge(f"more than {max_events} latent events by interval {n}")
        history.append(events)
    mu = np.array([expected_observed(history, n, beta, kernel_g, eta_days) for n in range(1, grid.k + 1)])
    counts = nb_sample(mu, v, rng)
    return history, ObservationSeries(grid, counts)


def parent_probabilities(history: EventHistory, t_j: float, kernel_h: GammaKernel, eta_intervals: int):
    """Who-infected-whom probabilities for the event at ``t_j``.

    Candidates are earlier events from the ``eta_intervals`` intervals before
    the one containing ``t_j`` (seeds count when that window reaches back
    before ``T_0``).  Returns ``(candidate_times, probabilities)``.
    """
    grid = history.grid
    j = grid.interval_of(t_j)
    window_start = grid.t0 + (j - 1 - eta_intervals) * grid.width
    times = history.all_times()
    cand = times[(times < t_j) & (times >= window_start)]
    weights = kernel_h.pdf(t_j - cand) if cand.size else np.empty(0)
    total = weights.sum()
    if not total > 0:
        raise DomainError(f"event at {t_j} has no candidate parent with positive kernel weight")
    return cand, weights / total
