"""Parallel sequential Monte Carlo over an in-process SPMD communicator.

Modules: :mod:`~smcbench.comm` (communicator and collectives),
:mod:`~smcbench.kernels` (sorting networks), :mod:`~smcbench.resample`
(MVR and the redistribute variants), :mod:`~smcbench.samplers` (particle
filter, SMC sampler, Metropolis-Hastings), :mod:`~smcbench.models` and
:mod:`~smcbench.bench` (experiment harness).
"""

from .comm import Communicator, spawn_group
from .resample import ResampleConfig, WeightShard

__all__ = ["Communicator", "ResampleConfig", "WeightShard", "spawn_group"]
__version__ = "0.1.0"
