"""Compiled inner loops for bootstrap replicates.

One replicate = multinomial resample counts ``w`` over records (drawn from
a SplitMix64 counter stream keyed by the replicate seed), followed by a
single pass over records in ascending score order that accumulates, for
every group of every labeling, the weighted confusion counts and twice the
Mann-Whitney numerator.

Accumulator columns: 0 tp, 1 fp, 2 tn, 3 fn, 4 auc_num2.
"""
import numba as nb
import numpy as np

GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)
_S30 = np.uint64(30)
_S27 = np.uint64(27)
_S31 = np.uint64(31)
_S11 = np.uint64(11)
_INV53 = 1.0 / 9007199254740992.0


@nb.njit(nogil=True, cache=True, inline="always")
def _mix(z):
    z = (z ^ (z >> _S30)) * _M1
    z = (z ^ (z >> _S27)) * _M2
    return z ^ (z >> _S31)


@nb.njit(nogil=True, cache=True)
def draw_counts(seed, members, offsets, sizes, identity, w):
    """Add resample counts into ``w`` (caller zeroes it).

    Stratum ``s`` contributes ``sizes[s]`` draws, uniform with replacement over
    ``members[offsets[s]:offsets[s] + sizes[s]]``. Draw ``k`` (counted across
    strata) uses SplitMix64 output ``mix(seed + (k + 1) * GOLDEN)``.
    ``identity`` says ``members`` is ``arange(n)`` in one stratum, which
    skips the indirection (same draws, fewer cache misses).
    """
    ctr = seed
    if identity:
        size = sizes[0]
        for _ in range(size):
            ctr = ctr + GOLDEN
            u = np.float64(_mix(ctr) >> _S11) * _INV53
            j = np.int64(u * size)
            if j >= size:
                j = size - 1
            w[j] += 1
        return
    for s in range(sizes.shape[0]):
        size = sizes[s]
        off = offsets[s]
        for _ in range(size):
            ctr = ctr + GOLDEN
            u = np.float64(_mix(ctr) >> _S11) * _INV53
            j = np.int64(u * size)
            if j >= size:
                j = size - 1
            w[members[off + j]] += 1


@nb.njit(nogil=True, cache=True)
def _snapshot(st, acc):
    for g in range(acc.shape[0]):
        acc[g, 2] = st[g, 1]
        acc[g, 3] = st[g, 2]


@nb.njit(nogil=True, cache=True)
def accumulate(w, y, cell, gid, block_end, in_tie, use_auc, thr_pos, acc, st, idx):
    """Weighted per-group counts for one replicate.

    Row 0 of ``acc`` is the whole resample; ``gid`` maps records to the
    remaining rows (one column per labeling, possibly none).

    With scores (``use_auc``) records are in ascending score order and
    predictions are monotone, so positions ``>= thr_pos`` are predicted
    positive: tn/fn are the running negative/positive weights at
    ``thr_pos``, and tp/fp follow from the totals. ``st`` holds per group
    [auc_num2, running neg, running pos, tie-block pos, tie-block neg].
    ``block_end[i]`` is the exclusive end of the tie block holding ``i``;
    ``in_tie[i]`` marks blocks of more than one record.
    """
    n = w.shape[0]
    n_lab = gid.shape[1]
    if not use_auc:
        for i in range(n):
            wi = np.int64(w[i])
            c = cell[i]
            acc[0, c] += wi
            for l in range(n_lab):
                acc[gid[i, l], c] += wi
        return
    st[:] = 0
    m = 0
    for i in range(n):
        idx[m] = i
        m += w[i] != 0
    # whole-resample state lives in registers; it is touched by every record
    num0 = np.int64(0)
    neg0 = np.int64(0)
    pos0 = np.int64(0)
    snapped = False
    k = 0
    while k < m:
        i = idx[k]
        if not snapped and i >= thr_pos:
            st[0, 1] = neg0
            st[0, 2] = pos0
            _snapshot(st, acc)
            snapped = True
        if in_tie[i]:
            e = block_end[i]
            k2 = k
            bp0 = np.int64(0)
            bn0 = np.int64(0)
            while k2 < m and idx[k2] < e:
                j = idx[k2]
                wj = np.int64(w[j])
                wp = wj * np.int64(y[j])
                bp0 += wp
                bn0 += wj - wp
                for l in range(n_lab):
                    g = gid[j, l]
                    st[g, 3] += wp
                    st[g, 4] += wj - wp
                k2 += 1
            num0 += bp0 * (2 * neg0 + bn0)
            neg0 += bn0
            pos0 += bp0
            for k3 in range(k, k2):
                j = idx[k3]
                for l in range(n_lab):
                    _flush(st, gid[j, l])
            k = k2
            continue
        wi = np.int64(w[i])
        # a record is one class, so it touches either the pos or the neg state
        if y[i]:
            num0 += 2 * wi * neg0
            pos0 += wi
            for l in range(n_lab):
                g = gid[i, l]
                st[g, 0] += 2 * wi * st[g, 1]
                st[g, 2] += wi
        else:
            neg0 += wi
            for l in range(n_lab):
                st[gid[i, l], 1] += wi
        k += 1
    st[0, 0] = num0
    st[0, 1] = neg0
    st[0, 2] = pos0
    if not snapped:
        _snapshot(st, acc)
    for g in range(acc.shape[0]):
        acc[g, 0] = st[g, 2] - acc[g, 3]
        acc[g, 1] = st[g, 1] - acc[g, 2]
        acc[g, 4] = st[g, 0]


@nb.njit(nogil=True, cache=True, inline="always")
def _flush(st, g):
    bp = st[g, 3]
    bn = st[g, 4]
    if bp != 0 or bn != 0:
        st[g, 0] += bp * (2 * st[g, 1] + bn)
        st[g, 1] += bn
        st[g, 2] += bp
        st[g, 3] = 0
        st[g, 4] = 0


@nb.njit(nogil=True, cache=True)
def run_chunk(seeds, start, stop, members, offsets, sizes, identity, y, cell, gid, block_end, in_tie, use_auc,
              thr_pos, out):
    n = y.shape[0]
    w = np.zeros(n, dtype=np.int32)
    idx = np.zeros(n, dtype=np.int64)
    st = np.zeros((out.shape[1], 5), dtype=np.int64)
    for r in range(start, stop):
        w[:] = 0
        draw_counts(seeds[r], members, offsets, sizes, identity, w)
        accumulate(w, y, cell, gid, block_end, in_tie, use_auc, thr_pos, out[r], st, idx)
