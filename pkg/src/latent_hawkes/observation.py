"""Negative-binomial observation model in the (mean, dispersion) parameterization.

``Y ~ NB(mu, v)`` has mean ``mu`` and variance ``mu * (1 + v * mu)``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import special

from .kernels import GammaKernel
from .model import DEFAULT_ETA_DAYS, DomainError, EventHistory, expected_observed


@dataclass(frozen=True)
class NBParams:
    mu: float
    v: float

    def __post_init__(self):
        if self.mu < 0 or not self.v > 0:
            raise DomainError(f"NB needs mu >= 0 and v > 0, got mu={self.mu}, v={self.v}")

    @property
    def variance(self) -> float:
        return self.mu * (1.0 + self.v * self.mu)


def nb_log_pmf(y, mu, v):
    """Log-probability of ``y`` under ``NB(mu, v)``; broadcasts over arrays.

    ``mu = 0`` puts all mass on zero: log-probability 0 for ``y = 0`` and
    ``-inf`` otherwise.
    """
    y = np.asarray(y, dtype=float)
    mu = np.asarray(mu, dtype=float)
    v = np.asarray(v, dtype=float)
    if np.any(y < 0):
        raise DomainError("counts must be nonnegative")
    r = 1.0 / v
    vmu = v * mu
    with np.errstate(divide="ignore", invalid="ignore"):
        out = (
            special.gammaln(y + r)
            - special.gammaln(y + 1.0)
            - special.gammaln(r)
            - r * np.log1p(vmu)
            + special.xlogy(y, vmu / (1.0 + vmu))
        )
    out = np.where(mu == 0, np.where(y == 0, 0.0, -np.inf), out)
    return out if out.ndim else float(out)


def nb_sample(mu, v, rng: np.random.Generator, size=None):
    """Gamma-Poisson mixture draw: ``Y | L ~ Poisson(L)``, ``L ~ Gamma(1/v, scale=v*mu)``."""
    mu = np.asarray(mu, dtype=float)
    v = np.asarray(v, dtype=float)
    lam = rng.gamma(1.0 / v, v * mu, size=size)
    return rng.poisson(lam)


def interval_likelihood(
    history: EventHistory,
    n: int,
    y: int,
    beta: float,
    kernel_g: GammaKernel,
    v: float,
    eta_days: float = DEFAULT_ETA_DAYS,
) -> float:
    """Log-likelihood of the interval-``n`` count given the latent history."""
    mu = expected_observed(history, n, beta, kernel_g, eta_days)
    return nb_log_pmf(y, mu, v)
