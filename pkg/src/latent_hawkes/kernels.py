"""Gamma transmission kernels parameterized by mean and standard deviation.

Two evaluation paths live here:

* :class:`GammaKernel` evaluates the density, CDF, interval masses and
  truncated draws exactly through :mod:`scipy.special`.
* :class:`KernelTable` tabulates the same CDF/survival function on a fine
  grid with cubic Hermite interpolation.  The particle engine uses it inside
  numba kernels, where scipy is unavailable.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import special


@dataclass(frozen=True)
class GammaKernel:
    """Gamma density specified by its mean and standard deviation (days)."""

    mean: float
    sd: float
    shape: float = field(init=False)
    rate: float = field(init=False)

    def __post_init__(self):
        if not (self.mean > 0 and self.sd > 0):
            raise ValueError(f"kernel mean and sd must be positive, got {self.mean}, {self.sd}")
        object.__setattr__(self, "shape", (self.mean / self.sd) ** 2)
        object.__setattr__(self, "rate", self.mean / self.sd**2)

    def pdf(self, x):
        x = np.asarray(x, dtype=float)
        out = np.zeros_like(x)
        pos = x > 0
        xp = x[pos]
        a, b = self.shape, self.rate
        out[pos] = np.exp(a * math.log(b) + (a - 1.0) * np.log(xp) - b * xp - special.gammaln(a))
        if a == 1.0:
            out[x == 0] = b
        return out if out.ndim else float(out)

    def cdf(self, x):
        x = np.asarray(x, dtype=float)
        out = special.gammainc(self.shape, self.rate * np.maximum(x, 0.0))
        return out if out.ndim else float(out)

    def sf(self, x):
        x = np.asarray(x, dtype=float)
        out = special.gammaincc(self.shape, self.rate * np.maximum(x, 0.0))
        return out if out.ndim else float(out)

    def median(self) -> float:
        return float(special.gammaincinv(self.shape, 0.5) / self.rate)

    def mode(self) -> float:
        """Location of the density peak; zero when ``shape <= 1``."""
        if self.shape <= 1.0:
            return 0.0
        return (self.shape - 1.0) / self.rate

    def _mass_elapsed(self, a, b):
        # Mass on elapsed-time window [a, b], a <= b.  Upper-tail windows are
        # differenced on the survival function to keep relative precision.
        a = np.maximum(np.asarray(a, dtype=float), 0.0)
        b = np.maximum(np.asarray(b, dtype=float), 0.0)
        upper = a * self.rate >= self.shape
        lower_mass = special.gammainc(self.shape, self.rate * b) - special.gammainc(self.shape, self.rate * a)
        upper_mass = special.gammaincc(self.shape, self.rate * a) - special.gammaincc(self.shape, self.rate * b)
        return np.clip(np.where(upper, upper_mass, lower_mass), 0.0, 1.0)

    def interval_mass(self, origin, lo, hi):
        """Kernel mass that an event at ``origin`` places on ``[lo, hi)``.

        Equals ``cdf(hi - origin) - cdf(max(lo, origin) - origin)``; zero when
        the window lies entirely before the event.
        """
        origin, lo, hi = np.broadcast_arrays(*(np.asarray(v, dtype=float) for v in (origin, lo, hi)))
        if np.any(lo > hi):
            raise ValueError("interval_mass requires lo <= hi")
        a = np.maximum(lo, origin) - origin
        b = hi - origin
        out = np.where(b > a, self._mass_elapsed(a, np.maximum(b, a)), 0.0)
        return out if out.ndim else float(out)

    def sample_truncated(self, origin, lo, hi, rng: np.random.Generator, size=None):
        """Draw event times from the kernel restricted to ``[max(lo, origin), hi)``.

        Inverse-CDF sampling: a uniform is placed between the window's CDF
        values (or survival values, for windows in the upper tail) and mapped
        back through the inverse regularized incomplete gamma function.
        """
        if self.interval_mass(origin, lo, hi) <= 0.0:
            raise ValueError(f"zero kernel mass on window [{lo}, {hi}) for origin {origin}")
        a = max(lo, origin) - origin
        b = hi - origin
        u = rng.random(size)
        if a * self.rate >= self.shape:
            sa = special.gammaincc(self.shape, self.rate * a)
            sb = special.gammaincc(self.shape, self.rate * b)
            x = special.gammainccinv(self.shape, sa - u * (sa - sb)) / self.rate
        else:
            ca = special.gammainc(self.shape, self.rate * a)
            cb = special.gammainc(self.shape, self.rate * b)
            x = special.gammaincinv(self.shape, ca + u * (cb - ca)) / self.rate
        x = np.clip(x, a, np.nextafter(b, -np.inf))
        return origin + x

    def sample_truncated_rejection(self, origin, lo, hi, rng: np.random.Generator, size: int):
        """Rejection sampler for the same truncated law; used as a cross-check."""
        a = max(lo, origin) - origin
        b = hi - origin
        out = np.empty(0)
        while out.size < size:
            x = rng.gamma(self.shape, 1.0 / self.rate, size=4 * size)
            out = np.concatenate([out, x[(x >= a) & (x < b)]])
        return origin + out[:size]


GI_KERNEL = GammaKernel(6.7, 1.8)
REPORTING_KERNEL = GammaKernel(8.8, 4.1)


@dataclass(frozen=True)
class KernelTable:
    """Tabulated CDF, survival function and density for a :class:`GammaKernel`.

    Nodes are uniform on ``[0, x_max]`` where the survival function has fallen
    below ``tail``; beyond ``x_max`` the CDF is taken as exactly one.  Values
    between nodes use cubic Hermite interpolation with the exact density as
    the derivative, so the interpolation error is far below 1e-12 for the
    kernel shapes used here (shape >= 1 is required for a finite density).
    """

    kernel: GammaKernel
    x_max: float
    step: float
    split: float
    cdf_values: np.ndarray
    sf_values: np.ndarray
    pdf_values: np.ndarray
    log_norm: float
    packed: np.ndarray = field(repr=False, default=None)

    def __post_init__(self):
        # Guide columns map a probability level q/(n-1) to the last node whose
        # level does not exceed it, so inversion starts next to its answer.
        # The last column is the density's slope, for interpolating the density.
        n = self.cdf_values.size
        levels = np.arange(n) / (n - 1)
        guide_cdf = np.searchsorted(self.cdf_values, levels, side="right") - 1
        guide_sf = np.searchsorted(1.0 - self.sf_values, levels, side="right") - 1
        x = np.arange(n) * self.step
        k = self.kernel
        with np.errstate(divide="ignore", invalid="ignore"):
            slope = np.where(x > 0, self.pdf_values * ((k.shape - 1.0) / x - k.rate), 0.0)
        packed = np.vstack(
            [self.cdf_values, self.sf_values, self.pdf_values, np.clip(guide_cdf, 0, n - 1), np.clip(guide_sf, 0, n - 1),
             slope]
        ).astype(float)
        object.__setattr__(self, "packed", np.ascontiguousarray(packed.T))

    @classmethod
    def build(cls, kernel: GammaKernel, n_nodes: int = 8192, tail: float = 1e-17) -> "KernelTable":
        if kernel.shape < 1.0:
            raise ValueError("KernelTable requires shape >= 1 (finite density at the origin)")
        x_max = float(special.gammainccinv(kernel.shape, tail) / kernel.rate)
        x = np.linspace(0.0, x_max, n_nodes)
        log_norm = kernel.shape * math.log(kernel.rate) - special.gammaln(kernel.shape)
        return cls(
            kernel=kernel,
            x_max=x_max,
            step=x[1] - x[0],
            split=kernel.shape / kernel.rate,
            cdf_values=kernel.cdf(x),
            sf_values=kernel.sf(x),
            pdf_values=kernel.pdf(x),
            log_norm=float(log_norm),
        )

    def as_tuple(self):
        """Arguments consumed by the numba routines in :mod:`latent_hawkes.engine`."""
        k = self.kernel
        return (
            self.packed,
            self.step,
            self.x_max,
            self.split,
            k.shape,
            k.rate,
            self.log_norm,
        )
