"""Rank-addressed SPMD communicator over in-process worker threads.

Every rank runs the same entry procedure on its own thread and owns its data
exclusively. Ranks interact only through the methods of :class:`Communicator`;
payloads are copied on send so no array is ever aliased across ranks.

The collective semantics mirror the MPI calls the resampling algorithms need
(``Sendrecv``, ``Scan``, ``Gather``, ``Scatter``, ``Allreduce``, ``Bcast``), so
a multi-process backend could sit behind the same surface.
"""

from __future__ import annotations

import os
import queue
import threading
import time
from typing import Any, Callable, Sequence

import numpy as np

DEFAULT_TIMEOUT = float(os.environ.get("SMCBENCH_COMM_TIMEOUT", "60"))
_POLL = 0.05


class CommError(RuntimeError):
    """Base class for communicator failures."""


class CollectiveError(CommError):
    """Ranks issued mismatched operations or inconsistent buffer sizes."""


class CommTimeout(CommError):
    """A receive was not matched within the timeout."""


class GroupAborted(CommError):
    """Raised inside surviving ranks once another rank has failed."""


class GroupError(CommError):
    """A worker of an SPMD group raised; carries the failing rank."""

    def __init__(self, rank: int, error: BaseException):
        super().__init__(f"rank {rank} failed: {error!r}")
        self.rank = rank
        self.error = error


def is_power_of_two(n: int) -> bool:
    return n >= 1 and (n & (n - 1)) == 0


def _copy(payload: Any) -> Any:
    if isinstance(payload, np.ndarray):
        return payload.copy()
    if isinstance(payload, tuple):
        return tuple(_copy(p) for p in payload)
    if isinstance(payload, list):
        return [_copy(p) for p in payload]
    return payload


class _Group:
    """Shared channel table for one SPMD launch (never touched by user code)."""

    def __init__(self, size: int, timeout: float):
        self.size = size
        self.timeout = timeout
        self.abort = threading.Event()
        self.boxes = [[queue.SimpleQueue() for _ in range(size)] for _ in range(size)]
        self.peak_scalars = [0] * size


class Communicator:
    """Handle of one rank inside a (sub-)group.

    Parameters
    ----------
    group : _Group
        Channel table shared by every rank of the launch.
    members : tuple of int
        Global ranks belonging to this (sub-)group, in local rank order.
    rank : int
        Local rank of the owner of this handle.
    """

    def __init__(self, group: _Group, members: tuple[int, ...], rank: int):
        self._group = group
        self._members = members
        self.rank = rank
        self.size = len(members)

    def __repr__(self) -> str:
        return f"Communicator(rank={self.rank}, size={self.size})"

    @property
    def global_rank(self) -> int:
        return self._members[self.rank]

    def sub(self, start: int, size: int) -> "Communicator":
        """Return the handle for the contiguous sub-group ``[start, start+size)``."""
        if not (start <= self.rank < start + size) or start + size > self.size:
            raise CollectiveError(f"rank {self.rank} not in sub-group [{start}, {start + size})")
        return Communicator(self._group, self._members[start:start + size], self.rank - start)

    # ------------------------------------------------------------------ p2p

    def _check_peer(self, peer: int) -> None:
        if not 0 <= peer < self.size:
            raise CollectiveError(f"peer {peer} outside group of size {self.size}")
        if peer == self.rank:
            raise CollectiveError("cannot exchange with self")

    def send(self, dest: int, payload: Any, kind: str = "p2p") -> None:
        self._check_peer(dest)
        box = self._group.boxes[self.global_rank][self._members[dest]]
        box.put((kind, _copy(payload)))

    def recv(self, source: int, kind: str = "p2p") -> Any:
        self._check_peer(source)
        box = self._group.boxes[self._members[source]][self.global_rank]
        deadline = time.monotonic() + self._group.timeout
        while True:
            try:
                got_kind, payload = box.get(timeout=_POLL)
                break
            except queue.Empty:
                if self._group.abort.is_set():
                    raise GroupAborted("another rank failed") from None
                if time.monotonic() > deadline:
                    raise CommTimeout(
                        f"rank {self.rank} waited {self._group.timeout}s for {kind!r} from {source}"
                    ) from None
        if got_kind != kind:
            raise CollectiveError(
                f"rank {self.rank} expected {kind!r} from {source}, got {got_kind!r}"
            )
        return payload

    def sendrecv(self, peer: int, out: Any, source: int | None = None, kind: str = "sendrecv") -> Any:
        """Send ``out`` to ``peer`` and return what ``source`` (default ``peer``) sent us.

        Sends never block, so matched pairs cannot deadlock.
        """
        self.send(peer, out, kind)
        return self.recv(peer if source is None else source, kind)

    # ----------------------------------------------------------- collectives

    def bcast(self, value: Any, root: int = 0) -> Any:
        """Binomial-tree broadcast from ``root``."""
        p = self.size
        if p == 1:
            return value
        rel = (self.rank - root) % p
        # receive from parent, then forward to children
        mask = 1
        while mask < p:
            if rel & mask:
                value = self.recv((rel - mask + root) % p, "bcast")
                break
            mask <<= 1
        mask >>= 1
        while mask > 0:
            if rel + mask < p:
                self.send((rel + mask + root) % p, value, "bcast")
            mask >>= 1
        return value

    def reduce(self, value: Any, op: Callable[[Any, Any], Any] = np.add) -> Any:
        """Binary-tree reduction to rank 0 with a fixed combination order.

        The combination is always ``op(lower_subtree, upper_subtree)`` so the
        result is bit-identical run to run for a given group size.
        """
        p = self.size
        acc = value
        step = 1
        while step < p:
            if self.rank % (2 * step) == step:
                self.send(self.rank - step, acc, "reduce")
                return None
            if self.rank % (2 * step) == 0 and self.rank + step < p:
                acc = op(acc, self.recv(self.rank + step, "reduce"))
            step <<= 1
        return acc

    def allreduce(self, value: Any, op: Callable[[Any, Any], Any] = np.add) -> Any:
        return self.bcast(self.reduce(value, op), root=0)

    def allreduce_sum(self, value: Any) -> Any:
        """Sum over ranks; identical (bitwise) on every rank."""
        return self.allreduce(value, np.add)

    def allreduce_max(self, value: Any) -> Any:
        return self.allreduce(value, np.maximum)

    def gather(self, local: np.ndarray) -> np.ndarray | None:
        """Concatenate equal-length shards at rank 0 in rank order."""
        local = np.asarray(local)
        if self.rank != 0:
            self.send(0, local, "gather")
            return None
        parts = [local]
        for src in range(1, self.size):
            part = self.recv(src, "gather")
            if part.shape != local.shape:
                raise CollectiveError(f"gather length mismatch: {part.shape} vs {local.shape}")
            parts.append(part)
        return np.concatenate(parts) if self.size > 1 else local.copy()

    def scatter(self, full: np.ndarray | None) -> np.ndarray:
        """Split rank 0's ``full`` into equal slices; rank ``r`` gets slice ``r``."""
        if self.rank == 0:
            full = np.asarray(full)
            if len(full) % self.size:
                raise CollectiveError(f"scatter length {len(full)} not divisible by {self.size}")
            n = len(full) // self.size
            for dst in range(1, self.size):
                self.send(dst, full[dst * n:(dst + 1) * n], "scatter")
            return full[:n].copy()
        return self.recv(0, "scatter")

    def scan_sum(self, local: Any, exclusive: bool = False) -> Any:
        """Prefix sum across ranks (inclusive by default).

        Partial sums are accumulated sequentially in rank order at rank 0, so
        ``exclusive[r] + local[r]`` reproduces ``inclusive[r]`` bit for bit.
        Works elementwise on numpy arrays.
        """
        if self.size == 1:
            return np.zeros_like(local) if exclusive else local
        local = np.asarray(local)
        totals = self.gather(local[None, ...])
        if self.rank == 0:
            incl = np.cumsum(totals, axis=0)
            excl = np.concatenate([np.zeros_like(incl[:1]), incl[:-1]])
            res = excl if exclusive else incl
            for dst in range(1, self.size):
                self.send(dst, res[dst], "scan")
            out = res[0]
        else:
            out = self.recv(0, "scan")
        return out if out.ndim else out[()]

    # ------------------------------------------------------ space accounting

    def note_buffer(self, scalars: int) -> None:
        """Record a transient particle buffer of ``scalars`` numbers on this rank."""
        peaks = self._group.peak_scalars
        g = self.global_rank
        if scalars > peaks[g]:
            peaks[g] = scalars

    @property
    def peak_buffer(self) -> int:
        return self._group.peak_scalars[self.global_rank]

    def reset_peak(self) -> None:
        self._group.peak_scalars[self.global_rank] = 0


def max_workers() -> int | None:
    cap = os.environ.get("SMCBENCH_MAX_WORKERS")
    return int(cap) if cap else None


def spawn_group(
    P: int,
    entry: Callable[..., Any],
    *args: Any,
    timeout: float | None = None,
    **kwargs: Any,
) -> list[Any]:
    """Run ``entry(comm, *args, **kwargs)`` on ``P`` ranks and collect results.

    Returns the per-rank return values in rank order. If any rank raises, the
    remaining ranks are aborted and :class:`GroupError` names the first rank
    that failed on its own (not as a consequence of the abort).
    """
    if not is_power_of_two(P):
        raise ValueError(f"P not power of two: {P}")
    cap = max_workers()
    if cap is not None and P > cap:
        raise ValueError(f"P={P} exceeds SMCBENCH_MAX_WORKERS={cap}")
    group = _Group(P, DEFAULT_TIMEOUT if timeout is None else timeout)
    members = tuple(range(P))
    results: list[Any] = [None] * P
    errors: dict[int, BaseException] = {}

    def run(rank: int) -> None:
        try:
            results[rank] = entry(Communicator(group, members, rank), *args, **kwargs)
        except BaseException as exc:  # noqa: BLE001 - reported through GroupError
            errors[rank] = exc
            group.abort.set()

    if P == 1:
        run(0)
    else:
        threads = [threading.Thread(target=run, args=(r,), daemon=True) for r in range(P)]
        for t in threads:
            t.start()
        for t in threads:
            t.join()
    if errors:
        primary = [r for r, e in sorted(errors.items()) if not isinstance(e, GroupAborted)]
        rank = primary[0] if primary else min(errors)
        raise GroupError(rank, errors[rank]) from errors[rank]
    return results


def rotational_shift(comm: Communicator, shard: Any, r: int) -> Any:
    """Circularly shift the group-wide array left by ``r`` positions.

    ``shard`` is this rank's block of ``n`` rows (an array, or a tuple of
    arrays sharing the leading axis). Whole-block movement takes one exchange
    per set bit of ``r // n``; the ``r % n`` remainder takes one more.
    """
    parts = shard if isinstance(shard, tuple) else (shard,)
    n = len(parts[0])
    total = n * comm.size
    if not 0 <= r < total:
        raise ValueError(f"shift {r} outside [0, {total})")
    p, rank = comm.size, comm.rank
    q, s = divmod(r, n)
    comm.note_buffer(max(a.size for a in parts))
    bit = 1
    while bit <= q:
        if q & bit:
            parts = comm.sendrecv((rank - bit) % p, parts, source=(rank + bit) % p, kind="shift")
        bit <<= 1
    if s:
        if p > 1:
            head = tuple(a[:s] for a in parts)
            nxt = comm.sendrecv((rank - 1) % p, head, source=(rank + 1) % p, kind="shift")
        else:
            nxt = tuple(a[:s] for a in parts)
        parts = tuple(np.concatenate([a[s:], b]) for a, b in zip(parts, nxt))
    return parts if isinstance(shard, tuple) else parts[0]


def run_collective(P: int, fn: Callable[..., Any], shards: Sequence[Any], *args: Any, **kwargs: Any) -> list[Any]:
    """Convenience wrapper: rank ``r`` calls ``fn(comm, shards[r], *args)``."""
    return spawn_group(P, lambda comm: fn(comm, shards[comm.rank], *args, **kwargs))
