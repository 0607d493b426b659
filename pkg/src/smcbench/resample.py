"""Weight normalisation, ESS, minimum variance resampling and redistribute.

Redistribute turns duplication counts (``ncopies``, summing to ``N``) into a
new population where particle ``j`` appears ``ncopies[j]`` times. Four
realisations are provided:

``SR``  sequential, single rank
``CR``  centralised: gather to rank 0, SR there, scatter back
``BR``  bitonic sort, then recursive pivot/rotation splitting
``NR``  parallel nearly sort, then the same recursive splitting
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Literal

import numpy as np

from . import _loops
from .comm import Communicator, is_power_of_two, rotational_shift
from .kernels import KeyedShard, LocalSort, bitonic_sort, parallel_nearly_sort

RedistributeAlgo = Literal["SR", "CR", "BR", "NR"]
REDISTRIBUTE_ALGOS = ("SR", "CR", "BR", "NR")


class DegenerateWeights(ValueError):
    """All weights are zero or some weight is not finite."""


class InvariantError(AssertionError):
    """An internal mass-conservation invariant failed."""


class CapacityError(MemoryError):
    """A rank was asked to hold more particle data than its configured capacity."""


@dataclass
class WeightShard:
    """Rank-local weights; ``normalised`` marks a shard produced by :func:`normalise`."""

    values: np.ndarray
    normalised: bool = False

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)


@dataclass
class ResampleConfig:
    N: int
    threshold: float | None = None
    redistribute_algo: RedistributeAlgo = "NR"
    local_sort: LocalSort = "mergesort"
    capacity: int | None = None  # max particle scalars one rank may buffer (CR only)

    def __post_init__(self):
        if not is_power_of_two(self.N):
            raise ValueError(f"N must be a power of two, got {self.N}")
        if self.threshold is None:
            self.threshold = self.N / 2
        if not 1 <= self.threshold <= self.N:
            raise ValueError(f"threshold {self.threshold} outside [1, {self.N}]")
        if self.redistribute_algo not in REDISTRIBUTE_ALGOS:
            raise ValueError(f"unknown redistribute {self.redistribute_algo!r}")


# ---------------------------------------------------------------- weights


def normalise(comm: Communicator, w: WeightShard | np.ndarray) -> WeightShard:
    """Divide by the global sum (allreduce)."""
    values = w.values if isinstance(w, WeightShard) else np.asarray(w, dtype=np.float64)
    if not np.all(np.isfinite(values)) or np.any(values < 0):
        bad = np.array(1.0)
    else:
        bad = np.array(0.0)
    total, bad = comm.allreduce_sum(np.array([values.sum(), bad]))
    if bad or not total > 0 or not np.isfinite(total):
        raise DegenerateWeights(f"cannot normalise weights with global sum {total}")
    return WeightShard(values / total, normalised=True)


def normalise_log(comm: Communicator, logw: np.ndarray) -> tuple[WeightShard, float]:
    """Normalise log-weights with a global max shift.

    Returns the normalised shard and ``log(sum(exp(logw)))`` over all ranks.
    """
    logw = np.asarray(logw, dtype=np.float64)
    if np.any(np.isnan(logw)) or np.any(logw == np.inf):
        local_max = np.nan
    else:
        local_max = logw.max() if len(logw) else -np.inf
    gmax = comm.allreduce_max(np.float64(local_max))
    if not np.isfinite(gmax):
        raise DegenerateWeights(f"log-weights have maximum {gmax}")
    scaled = np.exp(logw - gmax)
    total = comm.allreduce_sum(scaled.sum())
    return WeightShard(scaled / total, normalised=True), float(gmax + np.log(total))


def ess(comm: Communicator, w: WeightShard) -> float:
    """Effective sample size ``1 / sum(w_i^2)`` of a normalised shard."""
    if not isinstance(w, WeightShard) or not w.normalised:
        raise TypeError("ess needs a normalised WeightShard")
    sums = comm.allreduce_sum(np.array([w.values.sum(), np.dot(w.values, w.values)]))
    N = comm.allreduce_sum(len(w.values))
    if abs(sums[0] - 1.0) > 1e-12 * max(N, 1) + 1e-15:
        raise ValueError(f"weights sum to {sums[0]!r}, not 1")
    return float(1.0 / sums[1])


def reset_weights(w: WeightShard | np.ndarray, N: int) -> WeightShard:
    values = w.values if isinstance(w, WeightShard) else np.asarray(w)
    return WeightShard(np.full(len(values), 1.0 / N), normalised=False)


def mvr_ncopies(comm: Communicator, w: WeightShard, N: int, rng: np.random.Generator | None = None, u: float | None = None) -> np.ndarray:
    """Minimum variance (single offset) resampling counts.

    One uniform offset ``u`` is drawn on rank 0 and broadcast. With the global
    CDF ``c``, ``ncopies_i = floor(N c_i - u) - floor(N c_{i-1} - u)``; the sum
    is exactly ``N`` and each count is the floor or ceiling of ``N w_i``.
    """
    if not w.normalised:
        raise TypeError("mvr_ncopies needs a normalised WeightShard")
    if comm.rank == 0 and u is None:
        u = float(rng.random())
    u = comm.bcast(u, root=0)
    csum = np.cumsum(w.values)
    local_total = csum[-1] if len(csum) else 0.0
    prev = comm.scan_sum(np.float64(local_total), exclusive=True)
    csum = csum + prev if comm.size > 1 else csum
    # the last rank's final partial sum is the global total, bit for bit
    total = comm.bcast(csum[-1] if comm.rank == comm.size - 1 else None, root=comm.size - 1)
    out = np.empty(len(csum), dtype=np.int64)
    _loops.mvr_counts(csum, np.float64(prev), np.float64(total), np.float64(N), np.float64(u), out)
    return out


# ----------------------------------------------------------- redistribute


def redistribute_sequential(ncopies: np.ndarray, x: np.ndarray) -> np.ndarray:
    """Copy ``x[j]`` ``ncopies[j]`` times, for ``j`` ascending."""
    ncopies = np.ascontiguousarray(ncopies, dtype=np.int64)
    rows = np.ascontiguousarray(x, dtype=np.float64)
    squeeze = rows.ndim == 1
    if squeeze:
        rows = rows[:, None]
    if np.any(ncopies < 0) or int(ncopies.sum()) != len(rows):
        raise InvariantError(f"ncopies sum {int(ncopies.sum())} != {len(rows)}")
    out = np.empty_like(rows)
    _loops.sequential_redistribute(ncopies, rows, out)
    return out[:, 0] if squeeze else out


def redistribute_centralised(comm: Communicator, shard: KeyedShard, capacity: int | None = None) -> np.ndarray:
    """Gather everything to rank 0, redistribute there, scatter back."""
    N = len(shard) * comm.size
    if comm.rank == 0:
        need = N * shard.M
        if capacity is not None and need > capacity:
            err = CapacityError(f"rank 0 needs {need} scalars, capacity {capacity}")
        else:
            err = None
    else:
        err = None
    # every rank learns about the failure so none is left waiting
    failed = comm.bcast(err is not None, root=0)
    if failed:
        raise err if err is not None else CapacityError("rank 0 out of capacity")
    keys = comm.gather(shard.keys)
    rows = comm.gather(shard.rows)
    new = None
    if comm.rank == 0:
        comm.note_buffer(rows.size)
        new = redistribute_sequential(keys, rows)
    return comm.scatter(new)


MassAudit = Callable[[int, int, int], None]


def distribute(
    comm: Communicator,
    shard: KeyedShard,
    audit: MassAudit | None = None,
    _depth: int = 0,
) -> np.ndarray:
    """Recursively balance copy mass across the group, then redistribute locally.

    Keys must be partitioned (zeros on one side of the positives). At each
    node the pivot is the first index whose cumulative sum reaches half the
    node's particles; a left rotation by ``pivot - (half - 1)`` parks it at
    the end of the left half. If the pivot overshoots, its surplus copies are
    moved to the first empty slot of the right half so both halves carry
    exactly ``half`` copies. ``audit(depth, ranks, mass)`` is called once per
    node (on its first rank).
    """
    n = len(shard)
    N_node = n * comm.size
    keys, rows = shard.keys, shard.rows
    if comm.size == 1:
        if audit is not None:
            audit(_depth, 1, int(keys.sum()))
        if int(keys.sum()) != n:
            raise InvariantError(f"leaf holds mass {int(keys.sum())}, expected {n}")
        out = np.empty_like(rows)
        comm.note_buffer(out.size)
        _loops.sequential_redistribute(keys, rows, out)
        return out
    half = N_node // 2
    pos = keys > 0
    local = np.array([keys.sum(), pos.sum()], dtype=np.int64)
    before = comm.scan_sum(local, exclusive=True)
    csum = np.cumsum(keys) + before[0]
    hit = np.flatnonzero(csum >= half)
    info = np.zeros(5, dtype=np.int64)
    if len(hit) and before[0] < half:
        i = hit[0]
        # global pivot index, csum at pivot, positives up to and including the pivot
        info[:3] = (comm.rank * n + i, csum[i], before[1] + pos[: i + 1].sum())
    info[3:] = local
    pivot, c_pivot, pos_left, mass, total_pos = comm.allreduce_sum(info)
    if audit is not None and comm.rank == 0:
        audit(_depth, comm.size, int(mass))
    if mass != N_node:
        raise InvariantError(f"node of {comm.size} ranks holds mass {mass}, expected {N_node}")
    r = int(pivot - (half - 1)) % N_node
    if r:
        keys, rows = rotational_shift(comm, (keys, rows), r)
    surplus = int(c_pivot - half)
    if surplus:
        keys = keys.copy()
        src = comm.size // 2 - 1  # last rank of the left half holds the pivot at its last slot
        target = half + int(total_pos - pos_left)  # first zero of the right half
        dst, slot = divmod(target, n)
        if dst >= comm.size or dst == src:
            raise InvariantError("no free slot for the straddling particle")
        if comm.rank == src:
            keys[-1] -= surplus
            comm.send(dst, rows[-1], kind="straddle")
        if comm.rank == dst:
            if keys[slot] != 0:
                raise InvariantError("straddle target slot is not empty")
            rows = rows.copy()
            rows[slot] = comm.recv(src, kind="straddle")
            keys[slot] = surplus
    left = comm.rank < comm.size // 2
    child = comm.sub(0 if left else comm.size // 2, comm.size // 2)
    return distribute(child, KeyedShard(keys, rows), audit, _depth + 1)


def redistribute_bitonic(
    comm: Communicator, shard: KeyedShard, local: LocalSort = "mergesort", audit: MassAudit | None = None
) -> np.ndarray:
    if comm.size > 1:
        shard = bitonic_sort(comm, shard, "ascending", local)
    return distribute(comm, shard, audit)


def redistribute_nearly(comm: Communicator, shard: KeyedShard, audit: MassAudit | None = None) -> np.ndarray:
    if comm.size > 1:
        shard = parallel_nearly_sort(comm, shard)
    return distribute(comm, shard, audit)


def redistribute(comm: Communicator, shard: KeyedShard, cfg: ResampleConfig | None = None, algo: RedistributeAlgo | None = None) -> np.ndarray:
    """Dispatch to the configured redistribute variant."""
    algo = algo or (cfg.redistribute_algo if cfg else "NR")
    if algo == "SR":
        if comm.size != 1:
            raise ValueError("sequential redistribute runs on a single rank")
        return redistribute_sequential(shard.keys, shard.rows)
    if algo == "CR":
        return redistribute_centralised(comm, shard, cfg.capacity if cfg else None)
    if algo == "BR":
        return redistribute_bitonic(comm, shard, cfg.local_sort if cfg else "mergesort")
    if algo == "NR":
        return redistribute_nearly(comm, shard)
    raise ValueError(f"unknown redistribute {algo!r}")


def resample(
    comm: Communicator,
    x: np.ndarray,
    w: WeightShard,
    cfg: ResampleConfig,
    rng: np.random.Generator | None,
) -> tuple[np.ndarray, WeightShard]:
    """MVR counts, redistribute, reset weights to ``1/N``."""
    ncopies = mvr_ncopies(comm, w, cfg.N, rng)
    x_new = redistribute(comm, KeyedShard(ncopies, x), cfg)
    return x_new, reset_weights(w, cfg.N)
