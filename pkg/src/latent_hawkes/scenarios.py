"""Synthetic epidemic presets and their simulation.

Every preset starts from seeds spread uniformly over ``[0, 21)`` and
simulates twenty weekly intervals on ``[21, 161)``.  Inference uses weeks
4-19 with a seed set estimated from observed weeks 2-4, and week 20 is
held out as the prediction target.

The reproduction path is drawn forward from the geometric random walk.
Paths that blow up or die out would make the benchmark meaningless (and
intractable), so a draw is rejected, and the next attempt tried, whenever
a week's latent count exceeds ``growth_cap`` times the seed count or the
final week falls below ``floor`` times it.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .branching import EpidemicTooLarge, simulate_horizon
from .io import seed_history_weekly
from .model import EventHistory, ModelParams, ObservationSeries, TimeGrid
from .smc import rw_prior_sample

SEED_SPAN = 21.0
WEEKS = 20
FIRST_INFERRED = 4
LAST_INFERRED = 19


@dataclass(frozen=True)
class Scenario:
    name: str
    n_seeds: int
    d: float
    v: float
    r1: float
    beta: float = 0.5
    r1_bounds: tuple = (1.0, 2.0)
    d_bounds: tuple = (10.0, 20.0)
    v_bounds: tuple = (1e-4, 0.5)
    delta: float = 0.99
    growth_cap: float = 2.0
    floor: float = 0.1

    def params(self, **overrides) -> ModelParams:
        base = ModelParams(
            beta=self.beta, d=self.d, v=self.v, r1_bounds=self.r1_bounds,
            d_bounds=self.d_bounds, v_bounds=self.v_bounds, delta=self.delta,
        )
        return replace(base, **overrides) if overrides else base


PRESETS = {
    "A": Scenario("A", 1745, d=14.44, v=0.014, r1=1.79),
    "B": Scenario("B", 1176, d=15.28, v=0.001, r1=1.51, v_bounds=(0.001, 0.5)),
    "C": Scenario("C", 661, d=15.11, v=0.01, r1=1.57, r1_bounds=(0.5, 2.0)),
}


@dataclass
class ScenarioData:
    """One simulated realization and the pieces inference needs."""

    scenario: Scenario
    seed: int
    attempts: int
    true_seeds: np.ndarray
    r_path: np.ndarray
    history: EventHistory
    counts: np.ndarray
    estimated_seeds: np.ndarray

    @property
    def observations(self) -> ObservationSeries:
        grid = TimeGrid.regular(SEED_SPAN + 7.0 * (FIRST_INFERRED - 1), LAST_INFERRED - FIRST_INFERRED + 1)
        return ObservationSeries(grid, self.counts[FIRST_INFERRED - 1 : LAST_INFERRED])

    @property
    def true_r(self) -> np.ndarray:
        return self.r_path[FIRST_INFERRED - 1 : LAST_INFERRED]

    @property
    def true_latent_counts(self) -> np.ndarray:
        return self.history.counts()[FIRST_INFERRED - 1 : LAST_INFERRED]

    @property
    def target_count(self) -> int:
        return int(self.counts[LAST_INFERRED])

    @property
    def true_history(self) -> EventHistory:
        """The realized latent events relative to the inference grid (weeks 1-3 as seeds)."""
        h = self.history
        seeds = np.concatenate([h.seeds] + h.events_by_interval[: FIRST_INFERRED - 1])
        events = h.events_by_interval[FIRST_INFERRED - 1 : LAST_INFERRED]
        return EventHistory(self.observations.grid, seeds, list(events))


def simulate_r_path(r1: float, d: float, k: int, rng: np.random.Generator) -> np.ndarray:
    r = np.empty(k)
    r[0] = r1
    for n in range(1, k):
        r[n] = rw_prior_sample(r[n - 1], d, rng)
    return r


def simulate_scenario(scenario: Scenario, seed: int, max_attempts: int = 500) -> ScenarioData:
    """Draw a realization of ``scenario``; deterministic in ``seed``."""
    grid = TimeGrid.regular(SEED_SPAN, WEEKS)
    params = scenario.params()
    cap = int(scenario.growth_cap * scenario.n_seeds)
    for attempt in range(1, max_attempts + 1):
        rng = np.random.default_rng([int(seed), attempt])
        seeds = np.sort(rng.uniform(0.0, SEED_SPAN, scenario.n_seeds))
        r_path = simulate_r_path(scenario.r1, scenario.d, WEEKS, rng)
        try:
            history, obs = simulate_horizon(
                seeds, grid, r_path, params.kernel_h, params.kernel_g, scenario.beta, scenario.v, rng,
                params.eta_days, max_events=cap * WEEKS,
            )
        except EpidemicTooLarge:
            continue
        latent = history.counts()
        if latent.max() > cap or latent[-1] < scenario.floor * scenario.n_seeds:
            continue
        estimated = seed_history_weekly(obs.counts[1:4], scenario.beta, SEED_SPAN, rng)
        return ScenarioData(scenario, int(seed), attempt, seeds, r_path, history, obs.counts, estimated)
    raise RuntimeError(f"no tractable realization of scenario {scenario.name} in {max_attempts} attempts")
