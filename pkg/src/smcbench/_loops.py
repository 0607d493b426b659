"""Compiled inner loops for the sorting and redistribute kernels.

All functions are ``nogil`` so rank threads can run them concurrently.
Keys are int64, particle rows float64 with shape (n, M).
"""

import numba as nb
import numpy as np

_jit = nb.njit(cache=True, nogil=True)


@_jit
def sequential_redistribute(ncopies, x, out):
    # double loop over particles and their copies; returns rows written
    i = 0
    m = x.shape[1]
    for j in range(ncopies.shape[0]):
        for _ in range(ncopies[j]):
            for d in range(m):
                out[i, d] = x[j, d]
            i += 1
    return i


@_jit
def sequential_nearly_sort(keys, x, keys_out, x_out):
    # zeros from the left cursor, positives from the right cursor
    n = keys.shape[0]
    m = x.shape[1]
    lo = 0
    hi = n - 1
    writes = 0
    for i in range(n):
        if keys[i] > 0:
            keys_out[hi] = keys[i]
            for d in range(m):
                x_out[hi, d] = x[i, d]
            hi -= 1
        else:
            keys_out[lo] = keys[i]
            for d in range(m):
                x_out[lo, d] = x[i, d]
            lo += 1
        writes += 1
    return writes


@_jit
def nearly_merge_take(keys, x, n, zeros_first, ascending_out, keys_out, x_out):
    """Consume ``n`` of the ``2n`` pairs in ``keys`` (encounter order).

    The zeros-first side takes the first ``min(n, Z)`` zeros then the first
    positives; the other side takes exactly the complement.
    """
    two_n = keys.shape[0]
    m = x.shape[1]
    z_total = 0
    for i in range(two_n):
        if keys[i] == 0:
            z_total += 1
    z_take = min(n, z_total)
    p_take = n - z_take
    if zeros_first:
        z_lo, z_hi = 0, z_take
        p_lo, p_hi = 0, p_take
    else:
        z_lo, z_hi = z_take, z_total
        p_lo, p_hi = p_take, two_n - z_total
    nz = z_hi - z_lo
    # output layout: zeros block then positives block, or mirrored
    zeros_at_front = zeros_first or ascending_out
    if zeros_at_front:
        zpos = 0
        ppos = nz
    else:
        ppos = 0
        zpos = n - nz
    zc = 0
    pc = 0
    writes = 0
    for i in range(two_n):
        k = keys[i]
        if k == 0:
            if zc >= z_lo and zc < z_hi:
                keys_out[zpos] = k
                for d in range(m):
                    x_out[zpos, d] = x[i, d]
                zpos += 1
                writes += 1
            zc += 1
        else:
            if pc >= p_lo and pc < p_hi:
                keys_out[ppos] = k
                for d in range(m):
                    x_out[ppos, d] = x[i, d]
                ppos += 1
                writes += 1
            pc += 1
    return writes


@_jit
def merge_split(keys_lo, x_lo, keys_hi, x_hi, take_low, keys_out, x_out):
    """Merge two ascending blocks (ties favour ``keys_lo``) and keep one half."""
    n = keys_lo.shape[0]
    m = x_lo.shape[1]
    if take_low:
        i = 0
        j = 0
        for k in range(n):
            if j >= n or (i < n and keys_lo[i] <= keys_hi[j]):
                keys_out[k] = keys_lo[i]
                for d in range(m):
                    x_out[k, d] = x_lo[i, d]
                i += 1
            else:
                keys_out[k] = keys_hi[j]
                for d in range(m):
                    x_out[k, d] = x_hi[j, d]
                j += 1
    else:
        i = n - 1
        j = n - 1
        for k in range(n - 1, -1, -1):
            if i < 0 or (j >= 0 and keys_hi[j] >= keys_lo[i]):
                keys_out[k] = keys_hi[j]
                for d in range(m):
                    x_out[k, d] = x_hi[j, d]
                j -= 1
            else:
                keys_out[k] = keys_lo[i]
                for d in range(m):
                    x_out[k, d] = x_lo[i, d]
                i -= 1


@_jit
def mergesort_perm(keys):
    """Stable bottom-up mergesort; returns the sorting permutation."""
    n = keys.shape[0]
    perm = np.arange(n)
    buf = np.empty(n, dtype=np.int64)
    width = 1
    while width < n:
        for lo in range(0, n, 2 * width):
            mid = min(lo + width, n)
            hi = min(lo + 2 * width, n)
            i = lo
            j = mid
            for k in range(lo, hi):
                if i < mid and (j >= hi or keys[perm[i]] <= keys[perm[j]]):
                    buf[k] = perm[i]
                    i += 1
                else:
                    buf[k] = perm[j]
                    j += 1
        perm, buf = buf, perm
        width *= 2
    return perm


@_jit
def bitonic_perm(keys):
    """Serial bitonic sorting network (n a power of two); ascending permutation."""
    n = keys.shape[0]
    perm = np.arange(n)
    k = 2
    while k <= n:
        j = k // 2
        while j > 0:
            for i in range(n):
                partner = i ^ j
                if partner > i:
                    a = keys[perm[i]]
                    b = keys[perm[partner]]
                    up = (i & k) == 0
                    if (up and a > b) or (not up and a < b):
                        t = perm[i]
                        perm[i] = perm[partner]
                        perm[partner] = t
            j //= 2
        k *= 2
    return perm


@_jit
def mvr_counts(csum, prev, total, N, u, out):
    # ncopies_i = floor(N c_i - u) - floor(N c_{i-1} - u), c = csum / total
    last = np.floor(N * (prev / total) - u)
    for i in range(csum.shape[0]):
        cur = np.floor(N * (csum[i] / total) - u)
        c = cur - last
        out[i] = np.int64(c) if c > 0 else 0
        last = cur
