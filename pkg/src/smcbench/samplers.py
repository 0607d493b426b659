"""SIR particle filter, SMC sampler with recycling, and random-walk Metropolis-Hastings.

The two SMC methods are collective SPMD procedures: call them from inside
:func:`smcbench.comm.spawn_group` (or use :func:`run_parallel`). Weights are
kept as logs throughout; normalisation shifts by the global maximum.

Random streams: rank ``r`` draws from ``SeedSequence(seed, spawn_key=(r,))``;
the resampling offset comes from a separate stream owned by rank 0. Results
are reproducible for a given ``(seed, P)``.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field
from typing import Any, Callable

import numpy as np

from .comm import Communicator, spawn_group
from .kernels import KeyedShard
from .resample import (
    ResampleConfig,
    WeightShard,
    ess,
    mvr_ncopies,
    normalise_log,
    redistribute,
)

_RESAMPLE_STREAM = 0xFFFF_FFFF


def rank_rng(seed: int, rank: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(rank,)))


def resample_rng(seed: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(_RESAMPLE_STREAM,)))


@dataclass
class Timings:
    """Wall-clock split of one rank's run (seconds)."""

    importance: float = 0.0
    resampling: float = 0.0
    other: float = 0.0


@dataclass
class PFResult:
    estimates: np.ndarray  # (T, M)
    ess: np.ndarray  # (T,)
    resampled: np.ndarray  # (T,) bool
    timings: Timings = field(default_factory=Timings)

    @property
    def resamples(self) -> int:
        return int(self.resampled.sum())


@dataclass
class EstimateSeries:
    """Per-iteration estimates ``f``, normalisation constants ``c``, recycled ``f_hat``."""

    f: np.ndarray  # (T, M)
    c: np.ndarray  # (T,)
    f_hat: np.ndarray  # (M,)
    ess: np.ndarray
    resampled: np.ndarray
    timings: Timings = field(default_factory=Timings)

    @property
    def resamples(self) -> int:
        return int(self.resampled.sum())


def weighted_mean(comm: Communicator, x: np.ndarray, w: WeightShard) -> np.ndarray:
    return comm.allreduce_sum(w.values @ x)


def canonical_order(comm: Communicator, x: np.ndarray) -> np.ndarray:
    """Sort the group-wide particle rows lexicographically and reshard (test aid)."""
    full = comm.gather(x)
    if comm.rank == 0:
        full = full[np.lexsort(full.T[::-1])]
    return comm.scatter(full)


def _resample_step(comm, x, w, cfg, u_rng, canonical):
    ncopies = mvr_ncopies(comm, w, cfg.N, u_rng)
    x = redistribute(comm, KeyedShard(ncopies, x), cfg)
    if canonical:
        x = canonical_order(comm, x)
    return x


def run_sir_pf(
    comm: Communicator,
    model: Any,
    cfg: ResampleConfig,
    T: int,
    seed: int,
    measurements: np.ndarray | None = None,
    canonical: bool = False,
    resample_enabled: bool = True,
) -> PFResult:
    """Sequential importance resampling filter over ``T`` measurements.

    ``measurements`` defaults to a trajectory simulated from ``model`` with a
    stream derived from ``seed`` (identical on every rank).
    """
    if cfg.N % comm.size:
        raise ValueError(f"N={cfg.N} not divisible by P={comm.size}")
    n = cfg.N // comm.size
    if measurements is None:
        _, measurements = model.simulate(T, np.random.default_rng([seed, 7]))
    measurements = np.asarray(measurements)
    if len(measurements) < T:
        raise ValueError(f"need {T} measurements, got {len(measurements)}")
    rng = rank_rng(seed, comm.rank)
    u_rng = resample_rng(seed) if comm.rank == 0 else None
    timings = Timings()
    estimates = np.empty((T, model.M))
    ess_trace = np.empty(T)
    resampled = np.zeros(T, dtype=bool)

    x = model.sample_prior(n, rng)
    logw = np.full(n, -math.log(cfg.N))
    for t in range(T):
        y = measurements[t]
        t0 = time.perf_counter()
        x_new = model.propose(x, y, rng)
        logw = logw + model.log_weight(x_new, x, y)
        if not np.all(np.isfinite(logw) | (logw == -np.inf)):
            raise FloatingPointError(f"non-finite log weight at step {t}")
        x = x_new
        t1 = time.perf_counter()
        w, _ = normalise_log(comm, logw)
        ess_trace[t] = ess(comm, w)
        if resample_enabled and ess_trace[t] < cfg.threshold:
            t2 = time.perf_counter()
            x = _resample_step(comm, x, w, cfg, u_rng, canonical)
            timings.resampling += time.perf_counter() - t2
            logw = np.full(n, -math.log(cfg.N))
            w = WeightShard(np.full(n, 1.0 / cfg.N), normalised=True)
            resampled[t] = True
        estimates[t] = weighted_mean(comm, x, w)
        timings.importance += t1 - t0
        timings.other += time.perf_counter() - t1
    timings.other -= timings.resampling
    return PFResult(estimates, ess_trace, resampled, timings)


def smcs_log_weight_update(model: Any, logw: np.ndarray, x_new: np.ndarray, x_old: np.ndarray) -> np.ndarray:
    """Incremental SMC sampler weight with forward kernel ``q`` and backward kernel ``L``."""
    return (
        logw
        + model.log_target(x_new)
        - model.log_target(x_old)
        + model.log_backward(x_old, x_new)
        - model.log_forward(x_new, x_old)
    )


def recycle(f: np.ndarray, c: np.ndarray) -> np.ndarray:
    """Average of per-iteration estimates weighted by normalisation constants."""
    f = np.asarray(f, dtype=np.float64)
    c = np.asarray(c, dtype=np.float64)
    if len(f) != len(c) or len(c) == 0:
        raise ValueError(f"need equal, non-empty series (got {len(f)} and {len(c)})")
    if np.any(~(c > 0)):
        raise ValueError("normalisation constants must be positive")
    return np.tensordot(c, f, axes=1) / c.sum()


def recycle_log(f: np.ndarray, log_c: np.ndarray) -> np.ndarray:
    log_c = np.asarray(log_c, dtype=np.float64)
    if np.any(np.isnan(log_c)) or np.any(log_c == np.inf):
        raise FloatingPointError("normalisation constant overflow")
    return recycle(f, np.exp(log_c - log_c.max()))


def run_smc_sampler(
    comm: Communicator,
    model: Any,
    cfg: ResampleConfig,
    T: int,
    seed: int,
    canonical: bool = False,
) -> EstimateSeries:
    """SMC sampler with recycling for a static target.

    ``c_t`` is the ratio of the unnormalised weight sums after and before
    the update of iteration ``t``; after a resample the previous sum is that
    of the reset weights (``N * 1/N = 1``).
    """
    if cfg.N % comm.size:
        raise ValueError(f"N={cfg.N} not divisible by P={comm.size}")
    n = cfg.N // comm.size
    rng = rank_rng(seed, comm.rank)
    u_rng = resample_rng(seed) if comm.rank == 0 else None
    timings = Timings()
    f = np.empty((T, model.M))
    log_c = np.empty(T)
    ess_trace = np.empty(T)
    resampled = np.zeros(T, dtype=bool)

    x = model.sample_initial(n, rng)
    logw = model.log_target(x) - model.log_initial(x)
    _, log_sum_prev = normalise_log(comm, logw)
    for t in range(T):
        t0 = time.perf_counter()
        x_new = model.propose(x, rng)
        logw = smcs_log_weight_update(model, logw, x_new, x)
        x = x_new
        t1 = time.perf_counter()
        w, log_sum = normalise_log(comm, logw)
        log_c[t] = log_sum - log_sum_prev
        log_sum_prev = log_sum
        f[t] = weighted_mean(comm, x, w)
        ess_trace[t] = ess(comm, w)
        if ess_trace[t] < cfg.threshold:
            t2 = time.perf_counter()
            x = _resample_step(comm, x, w, cfg, u_rng, canonical)
            timings.resampling += time.perf_counter() - t2
            logw = np.full(n, -math.log(cfg.N))
            log_sum_prev = 0.0
            resampled[t] = True
        timings.importance += t1 - t0
        timings.other += time.perf_counter() - t1
    timings.other -= timings.resampling
    if T == 0:
        f_hat = np.full(model.M, np.nan)
    else:
        if not np.all(np.isfinite(log_c)):
            raise FloatingPointError("non-positive normalisation constant")
        f_hat = recycle_log(f, log_c)
    return EstimateSeries(f, np.exp(log_c), f_hat, ess_trace, resampled, timings)


# ------------------------------------------------------------ Metropolis-Hastings


@dataclass
class MHConfig:
    T: int
    tau: int | None = None
    eps: float = 0.5
    cov: np.ndarray | None = None

    def __post_init__(self):
        if self.tau is None:
            self.tau = self.T // 10
        if not 0 <= self.tau < max(self.T, 1):
            raise ValueError(f"burn-in {self.tau} must lie in [0, {self.T})")
        if not self.eps > 0:
            raise ValueError("eps must be positive")


@dataclass
class MHResult:
    samples: np.ndarray  # (T, M), x_1..x_T
    mean: np.ndarray
    acceptance: float


def run_mh(
    log_target: Callable[[np.ndarray], float],
    x0: np.ndarray,
    cfg: MHConfig,
    seed: int,
    log_proposal: Callable[[np.ndarray, np.ndarray], float] | None = None,
) -> MHResult:
    """Single-chain Metropolis-Hastings with a Gaussian random walk ``N(x, eps^2 cov)``.

    ``log_proposal(a, b)`` is ``log q(a | b)``; leave it ``None`` for the
    symmetric random walk, where the proposal terms cancel. The estimate
    averages samples after the first ``tau``. One-dimensional chains with a
    symmetric proposal hand ``log_target`` a plain float.
    """
    rng = np.random.default_rng(seed)
    x = np.array(x0, dtype=np.float64).reshape(-1)
    M = len(x)
    scalar = M == 1 and cfg.cov is None and log_proposal is None
    lp = log_target(float(x[0]) if scalar else x)
    if not np.isfinite(lp):
        raise ValueError("target is not finite at the initial point")
    chol = np.eye(M) if cfg.cov is None else np.linalg.cholesky(cfg.cov)
    steps = cfg.eps * rng.standard_normal((cfg.T, M)) @ chol.T
    log_r = np.log(rng.random(cfg.T))
    accepted = 0
    if scalar:
        # 1-D symmetric chain on plain floats
        cur = float(x[0])
        chain = []
        append = chain.append
        for step, lr in zip(steps[:, 0].tolist(), log_r.tolist()):
            prop = cur + step
            lp_prop = log_target(prop)
            if lr < lp_prop - lp:
                cur, lp = prop, lp_prop
                accepted += 1
            append(cur)
        samples = np.array(chain, dtype=np.float64).reshape(cfg.T, 1)
    else:
        samples = np.empty((cfg.T, M))
        for t in range(cfg.T):
            prop = x + steps[t]
            lp_prop = log_target(prop)
            log_a = lp_prop - lp
            if log_proposal is not None:
                log_a += log_proposal(x, prop) - log_proposal(prop, x)
            # accept when r < a
            if log_r[t] < log_a:
                x, lp = prop, lp_prop
                accepted += 1
            samples[t] = x
    mean = samples[cfg.tau:].mean(axis=0) if cfg.T else np.full(M, np.nan)
    return MHResult(samples, mean, accepted / cfg.T if cfg.T else 0.0)


def tune_eps(
    log_target: Callable[[np.ndarray], float],
    x0: np.ndarray,
    seed: int,
    target: float = 0.44,
    band: tuple[float, float] = (0.2, 0.5),
    pilot: int = 2000,
    eps: float = 1.0,
    rounds: int = 30,
) -> float:
    """Scale ``eps`` by pilot runs until the acceptance rate lands in ``band``."""
    for i in range(rounds):
        res = run_mh(log_target, x0, MHConfig(pilot, tau=0, eps=eps), seed + i)
        if band[0] <= res.acceptance <= band[1]:
            return eps
        eps = eps * 1.5 if res.acceptance > target else eps / 1.5
    return eps


# ----------------------------------------------------------------- launchers


def run_parallel(P: int, fn: Callable[..., Any], *args: Any, **kwargs: Any) -> Any:
    """Run a collective sampler on ``P`` ranks and return rank 0's result."""
    return spawn_group(P, fn, *args, **kwargs)[0]
