"""Latent Hawkes epidemic model with sequential Monte Carlo inference."""

from .kernels import GI_KERNEL, REPORTING_KERNEL, GammaKernel
from .model import DomainError, EventHistory, ModelParams, ObservationSeries, TimeGrid
from .smc import FilterDegeneracyError, FilterOptions, run_apf, run_bf, run_kdpf

__version__ = "0.1.0"

__all__ = [
    "GI_KERNEL",
    "REPORTING_KERNEL",
    "DomainError",
    "EventHistory",
    "FilterDegeneracyError",
    "FilterOptions",
    "GammaKernel",
    "ModelParams",
    "ObservationSeries",
    "TimeGrid",
    "run_apf",
    "run_bf",
    "run_kdpf",
]
