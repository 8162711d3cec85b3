"""Domain types for the latent Hawkes epidemic model and its intensities.

Times are real-valued days.  The analysis horizon ``[T_0, T_k)`` is cut into
right-open intervals ``[T_{n-1}, T_n)``, indexed ``n = 1..k``; ``R(t)`` is a
step function taking the value ``R_n`` on interval ``n``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .kernels import GammaKernel

DEFAULT_ETA_DAYS = 21.0
CADENCE_DAYS = {"daily": 1.0, "weekly": 7.0}


class DomainError(ValueError):
    """Raised when an argument lies outside an operation's domain."""


@dataclass(frozen=True)
class TimeGrid:
    t0: float
    boundaries: tuple
    cadence: str = "weekly"

    def __post_init__(self):
        b = tuple(float(x) for x in self.boundaries)
        object.__setattr__(self, "boundaries", b)
        if self.cadence not in CADENCE_DAYS:
            raise DomainError(f"unknown cadence {self.cadence!r}")
        if not b:
            raise DomainError("a time grid needs at least one interval")
        edges = np.array((self.t0,) + b)
        widths = np.diff(edges)
        if np.any(widths <= 0):
            raise DomainError("interval boundaries must be strictly increasing from t0")
        if not np.allclose(widths, CADENCE_DAYS[self.cadence], atol=1e-9):
            raise DomainError(f"{self.cadence} intervals must be {CADENCE_DAYS[self.cadence]:g} days wide")

    @classmethod
    def regular(cls, t0: float, k: int, cadence: str = "weekly") -> "TimeGrid":
        width = CADENCE_DAYS[cadence]
        return cls(t0, tuple(t0 + width * np.arange(1, k + 1)), cadence)

    @property
    def k(self) -> int:
        return len(self.boundaries)

    @property
    def width(self) -> float:
        return CADENCE_DAYS[self.cadence]

    @property
    def edges(self) -> np.ndarray:
        return np.array((self.t0,) + self.boundaries)

    @property
    def end(self) -> float:
        return self.boundaries[-1]

    def lower(self, n: int) -> float:
        self._check_index(n)
        return self.t0 if n == 1 else self.boundaries[n - 2]

    def upper(self, n: int) -> float:
        self._check_index(n)
        return self.boundaries[n - 1]

    def interval_of(self, t: float) -> int:
        """1-based index of the interval containing ``t``."""
        if not (self.t0 <= t < self.end):
            raise DomainError(f"time {t} outside horizon [{self.t0}, {self.end})")
        return int(np.searchsorted(self.boundaries, t, side="right")) + 1

    def eta_intervals(self, eta_days: float) -> int:
        return int(math.ceil(eta_days / self.width - 1e-12))

    def _check_index(self, n: int):
        if not 1 <= n <= self.k:
            raise DomainError(f"interval index {n} outside 1..{self.k}")


@dataclass
class EventHistory:
    """Latent infection times: the pre-horizon seed set and per-interval events."""

    grid: TimeGrid
    seeds: np.ndarray
    events_by_interval: list = field(default_factory=list)

    def __post_init__(self):
        self.seeds = np.sort(np.asarray(self.seeds, dtype=float))
        if self.seeds.size and self.seeds[-1] >= self.grid.t0:
            raise DomainError("seed times must precede T_0")
        events = [np.sort(np.asarray(e, dtype=float)) for e in self.events_by_interval]
        if len(events) > self.grid.k:
            raise DomainError("more event intervals than grid intervals")
        for n, e in enumerate(events, start=1):
            if e.size and (e[0] < self.grid.lower(n) or e[-1] >= self.grid.upper(n)):
                raise DomainError(f"events of interval {n} fall outside its bounds")
        self.events_by_interval = events

    @property
    def n_filled(self) -> int:
        return len(self.events_by_interval)

    def append(self, events) -> None:
        n = self.n_filled + 1
        e = np.sort(np.asarray(events, dtype=float))
        if e.size and (e[0] < self.grid.lower(n) or e[-1] >= self.grid.upper(n)):
            raise DomainError(f"events of interval {n} fall outside its bounds")
        self.events_by_interval.append(e)

    def all_times(self, upto: Optional[int] = None) -> np.ndarray:
        chunks = [self.seeds] + self.events_by_interval[: upto if upto is not None else None]
        return np.concatenate(chunks) if chunks else np.empty(0)

    def counts(self) -> np.ndarray:
        return np.array([e.size for e in self.events_by_interval], dtype=np.int64)


@dataclass(frozen=True)
class HiddenState:
    r_weight: float
    latent_events: np.ndarray

    def __post_init__(self):
        if not self.r_weight > 0:
            raise DomainError("reproduction weight must be positive")


@dataclass(frozen=True)
class ModelParams:
    """Static configuration of the model and the filters."""

    beta: float = 0.5
    d: float = 15.0
    v: float = 0.01
    r1_bounds: tuple = (0.5, 2.0)
    d_bounds: tuple = (10.0, 20.0)
    v_bounds: tuple = (1e-4, 0.5)
    eta_days: float = DEFAULT_ETA_DAYS
    delta: float = 0.99
    lag: int = 4
    kernel_h: GammaKernel = GammaKernel(6.7, 1.8)
    kernel_g: GammaKernel = GammaKernel(8.8, 4.1)
    ess_threshold: float = 0.8
    liu_west: str = "standard"

    def __post_init__(self):
        if not 0 < self.beta <= 1:
            raise DomainError(f"beta must lie in (0, 1], got {self.beta}")
        if not (self.d > 0 and self.v > 0):
            raise DomainError("d and v must be positive")
        lo, hi = self.r1_bounds
        if not 0 < lo < hi:
            raise DomainError(f"R_1 bounds must satisfy 0 < alpha < b, got {self.r1_bounds}")
        for name, (lo, hi) in (("d", self.d_bounds), ("v", self.v_bounds)):
            if not 0 < lo < hi:
                raise DomainError(f"{name} bounds must satisfy 0 < min < max")
        if not 0 < self.delta <= 1:
            raise DomainError(f"delta must lie in (0, 1], got {self.delta}")
        if self.lag < 0 or self.eta_days <= 0:
            raise DomainError("lag must be >= 0 and eta_days > 0")
        if not 0 < self.ess_threshold <= 1:
            raise DomainError("ess_threshold must lie in (0, 1]")
        if self.liu_west not in ("standard", "verbatim"):
            raise DomainError("liu_west must be 'standard' or 'verbatim'")

    def check_fixed_parameters(self):
        """Fixed ``d``/``v`` used by APF/BF must sit inside their bounds."""
        if not self.d_bounds[0] <= self.d <= self.d_bounds[1]:
            raise DomainError(f"d={self.d} outside bounds {self.d_bounds}")
        if not self.v_bounds[0] <= self.v <= self.v_bounds[1]:
            raise DomainError(f"v={self.v} outside bounds {self.v_bounds}")


@dataclass(frozen=True)
class ObservationSeries:
    grid: TimeGrid
    counts: np.ndarray

    def __post_init__(self):
        c = np.asarray(self.counts)
        if c.shape != (self.grid.k,):
            raise DomainError(f"expected {self.grid.k} counts, got shape {c.shape}")
        if np.any(c < 0) or not np.all(np.equal(np.mod(c, 1), 0)):
            raise DomainError("counts must be nonnegative integers")
        object.__setattr__(self, "counts", c.astype(np.int64))

    @property
    def k(self) -> int:
        return self.grid.k


def _window(times: np.ndarray, t: float, eta_days: Optional[float]) -> np.ndarray:
    elapsed = t - times[times < t]
    if eta_days is not None:
        elapsed = elapsed[elapsed <= eta_days]
    return elapsed


def latent_intensity(
    history: EventHistory,
    r: Sequence[float],
    t: float,
    kernel_h: GammaKernel,
    eta_days: Optional[float] = DEFAULT_ETA_DAYS,
) -> float:
    """Infection intensity ``R(t) * sum h(t - t_i)`` over events in the window.

    Only events at most ``eta_days`` before ``t`` contribute; pass
    ``eta_days=None`` for the untruncated sum.
    """
    n = history.grid.interval_of(t)
    if n > len(r):
        raise DomainError(f"no reproduction weight for interval {n}")
    elapsed = _window(history.all_times(), t, eta_days)
    return float(r[n - 1] * np.sum(kernel_h.pdf(elapsed))) if elapsed.size else 0.0


def observed_intensity(
    history: EventHistory,
    tau: float,
    beta: float,
    kernel_g: GammaKernel,
    eta_days: Optional[float] = DEFAULT_ETA_DAYS,
) -> float:
    """Reporting intensity ``sum beta * g(tau - t_i)``."""
    history.grid.interval_of(tau)
    elapsed = _window(history.all_times(), tau, eta_days)
    return float(beta * np.sum(kernel_g.pdf(elapsed))) if elapsed.size else 0.0


def expected_observed(
    history: EventHistory,
    n: int,
    beta: float,
    kernel_g: GammaKernel,
    eta_days: Optional[float] = DEFAULT_ETA_DAYS,
) -> float:
    """Expected reported cases ``mu_n`` in interval ``n``.

    Events with ``T_{n-1} - t_w > eta_days`` are dropped; with the default
    21 days this keeps exactly the seeds and the events of the current and
    previous ``eta`` intervals, the same set the particle engine uses.
    """
    lo, hi = history.grid.lower(n), history.grid.upper(n)
    times = history.all_times(upto=n)
    times = times[times < hi]
    if eta_days is not None:
        times = times[lo - times <= eta_days]
    if times.size == 0:
        return 0.0
    return float(beta * np.sum(kernel_g.interval_mass(times, lo, hi)))
