"""Sorting-network kernels on (ncopies, particle) key-payload pairs.

Local kernels are pure single-rank transforms. The parallel kernels
(:func:`bitonic_sort`, :func:`parallel_nearly_sort`) are collective over a
:class:`~smcbench.comm.Communicator` and follow the block bitonic network:
``log2 P`` merge stages, stage ``k`` made of ``k`` pairwise exchanges with
partner ``rank ^ 2**j``. Merge blocks alternate direction and the last stage
is ascending.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Literal

import numpy as np

from . import _loops
from .comm import Communicator, is_power_of_two

Direction = Literal["ascending", "descending"]
LocalSort = Literal["mergesort", "bitonic"]


@dataclass
class KeyedShard:
    """Rank-local block of duplication counts and the particles they refer to."""

    keys: np.ndarray  # (n,) int64
    rows: np.ndarray  # (n, M) float64

    def __post_init__(self):
        self.keys = np.ascontiguousarray(self.keys, dtype=np.int64)
        rows = np.asarray(self.rows, dtype=np.float64)
        if rows.ndim == 1:
            rows = rows[:, None]
        self.rows = np.ascontiguousarray(rows)
        if self.keys.ndim != 1 or len(self.keys) != len(self.rows):
            raise ValueError(f"keys {self.keys.shape} do not align with rows {self.rows.shape}")

    def __len__(self) -> int:
        return len(self.keys)

    @property
    def M(self) -> int:
        return self.rows.shape[1]

    def take(self, perm: np.ndarray) -> "KeyedShard":
        return KeyedShard(self.keys[perm], self.rows[perm])

    def pack(self) -> tuple[np.ndarray, np.ndarray]:
        return self.keys, self.rows


def is_nearly_sorted(keys: np.ndarray, direction: Direction = "ascending") -> bool:
    """True when all zeros sit on one side of all positive keys."""
    keys = np.asarray(keys)
    zero = keys == 0
    if direction == "descending":
        zero = zero[::-1]
    # ascending: once a positive appears no zero may follow
    return not np.any(zero[1:] & ~zero[:-1]) if len(keys) else True


def local_sort(shard: KeyedShard, direction: Direction = "ascending", kind: LocalSort = "mergesort") -> KeyedShard:
    """Sort a shard by key; payload rows travel with their keys.

    ``kind="mergesort"`` is a stable bottom-up mergesort whose work depends
    only on ``n``; ``kind="bitonic"`` runs the serial bitonic network and
    needs ``n`` to be a power of two.
    """
    keys = shard.keys if direction == "ascending" else -shard.keys
    if kind == "mergesort":
        perm = _loops.mergesort_perm(keys)
    elif kind == "bitonic":
        if not is_power_of_two(len(keys)):
            raise ValueError("bitonic local sort needs a power-of-two shard")
        perm = _loops.bitonic_perm(keys)
    else:
        raise ValueError(f"unknown local sort {kind!r}")
    return shard.take(perm)


def sequential_nearly_sort(shard: KeyedShard, return_writes: bool = False):
    """Two-cursor single-pass partition: zeros left, positives right.

    Positives end up in reverse input order. Exactly ``n`` writes are made
    whatever the key values; pass ``return_writes=True`` to get the count.
    """
    n = len(shard)
    keys_out = np.empty(n, dtype=np.int64)
    rows_out = np.empty_like(shard.rows)
    writes = _loops.sequential_nearly_sort(shard.keys, shard.rows, keys_out, rows_out)
    out = KeyedShard(keys_out, rows_out)
    return (out, writes) if return_writes else out


def _exchange(comm: Communicator, partner: int, shard: KeyedShard) -> KeyedShard:
    keys, rows = comm.sendrecv(partner, shard.pack(), kind="network")
    comm.note_buffer(2 * shard.rows.size)
    return KeyedShard(keys, rows)


def nearly_merge(
    comm: Communicator,
    shard: KeyedShard,
    partner: int,
    this_rank_takes: Literal["zeros_first", "positives_first"],
    ascending_output: bool = False,
    return_writes: bool = False,
):
    """Exchange with ``partner`` and keep a complementary half of the pair.

    Both ranks scan the combined ``2n`` pairs (lower rank's block first).
    The zeros-first rank takes ``min(n, Z)`` zeros then positives and lays
    them out zeros-then-positives; the partner keeps the rest, positives
    first, unless ``ascending_output`` asks for zeros first.
    """
    if this_rank_takes not in ("zeros_first", "positives_first"):
        raise ValueError(f"bad side {this_rank_takes!r}")
    other = _exchange(comm, partner, shard)
    lo, hi = (shard, other) if comm.rank < partner else (other, shard)
    keys = np.concatenate([lo.keys, hi.keys])
    rows = np.concatenate([lo.rows, hi.rows])
    n = len(shard)
    keys_out = np.empty(n, dtype=np.int64)
    rows_out = np.empty_like(shard.rows)
    writes = _loops.nearly_merge_take(
        keys, rows, n, this_rank_takes == "zeros_first", ascending_output, keys_out, rows_out
    )
    out = KeyedShard(keys_out, rows_out)
    return (out, writes) if return_writes else out


def _merge_split(comm: Communicator, shard: KeyedShard, partner: int, take_low: bool) -> KeyedShard:
    other = _exchange(comm, partner, shard)
    lo, hi = (shard, other) if comm.rank < partner else (other, shard)
    keys_out = np.empty_like(shard.keys)
    rows_out = np.empty_like(shard.rows)
    _loops.merge_split(lo.keys, lo.rows, hi.keys, hi.rows, take_low, keys_out, rows_out)
    return KeyedShard(keys_out, rows_out)


def network_schedule(P: int):
    """Yield ``(stage, step, partner_of, ascending_of)`` for the block bitonic network.

    For each exchange the callables give, per rank, its partner and whether
    the enclosing merge block is ascending.
    """
    stages = P.bit_length() - 1
    for k in range(1, stages + 1):
        for j in range(k - 1, -1, -1):
            yield k, j, (lambda r, j=j: r ^ (1 << j)), (lambda r, k=k: ((r >> k) & 1) == 0)


def _takes_low(rank: int, partner: int, ascending: bool) -> bool:
    return (rank < partner) == ascending


def bitonic_sort(
    comm: Communicator,
    shard: KeyedShard,
    direction: Direction = "ascending",
    local: LocalSort = "mergesort",
) -> KeyedShard:
    """Globally sort keys across the group (rank 0 holds the smallest block when ascending).

    Each rank first sorts its block locally (``local`` selects mergesort,
    the BS+MS variant, or a serial bitonic network, plain BS), then the
    comparators of the block network are realised as merge-splits.
    """
    if not is_power_of_two(comm.size):
        raise ValueError("group size must be a power of two")
    if direction == "descending":
        flipped = KeyedShard(-shard.keys, shard.rows)
        out = bitonic_sort(comm, flipped, "ascending", local)
        return KeyedShard(-out.keys, out.rows)
    cur = local_sort(shard, "ascending", local)
    for _, _, partner_of, ascending_of in network_schedule(comm.size):
        partner = partner_of(comm.rank)
        cur = _merge_split(comm, cur, partner, _takes_low(comm.rank, partner, ascending_of(comm.rank)))
    return cur


def parallel_nearly_sort(comm: Communicator, shard: KeyedShard) -> KeyedShard:
    """Make the group-wide key sequence ascending nearly-sorted.

    Sequential nearly sort locally, then the bitonic network with
    :func:`nearly_merge` in place of compare-exchange.
    """
    if not is_power_of_two(comm.size):
        raise ValueError("group size must be a power of two")
    cur = sequential_nearly_sort(shard)
    for _, _, partner_of, ascending_of in network_schedule(comm.size):
        partner = partner_of(comm.rank)
        asc = ascending_of(comm.rank)
        side = "zeros_first" if _takes_low(comm.rank, partner, asc) else "positives_first"
        # blocks follow the direction of their merge so the last stage is ascending everywhere
        cur = nearly_merge(comm, cur, partner, side, ascending_output=asc)
    return cur
