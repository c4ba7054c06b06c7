# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled hot kernels: segment reductions over edge messages and
scatter-add for gather gradients.

Semantics match ``bcgnn.kernels.pykernels`` bitwise (see that module for
the contract). Sum and mean reductions accumulate with Shewchuk partials
and round once at the end, so for finite inputs the result is the
correctly rounded exact sum of each segment -- independent of the order
in which the rows arrive.
"""

import numpy as np

cimport numpy as cnp
from libc.math cimport fabs, isfinite

cnp.import_array()

# Non-overlapping double partials of an exact sum never exceed ~40 entries
# (the exponent range divided by the mantissa width); 64 leaves slack.
DEF MAX_PARTIALS = 64


cdef inline int _partials_add(double* p, int n, double x) nogil:
    """One Shewchuk grow-expansion step; returns the new partial count."""
    cdef int i = 0, j
    cdef double y, hi, lo
    for j in range(n):
        y = p[j]
        if fabs(x) < fabs(y):
            hi = x
            x = y
            y = hi
        hi = x + y
        lo = y - (hi - x)
        if lo != 0.0:
            p[i] = lo
            i += 1
        x = hi
    p[i] = x
    return i + 1


cdef inline double _partials_round(double* p, int n) nogil:
    """Correctly rounded value of the exact sum held in partials p[0..n)."""
    cdef double hi = 0.0, lo = 0.0, y, x, yr
    cdef int k = n
    if k == 0:
        return 0.0
    k -= 1
    hi = p[k]
    while k > 0:
        x = hi
        k -= 1
        y = p[k]
        hi = x + y
        yr = hi - x
        lo = y - yr
        if lo != 0.0:
            break
    # Round-half-even correction when the discarded tail all pulls one way.
    if k > 0 and ((lo < 0.0 and p[k - 1] < 0.0) or (lo > 0.0 and p[k - 1] > 0.0)):
        y = lo * 2.0
        x = hi + y
        yr = x - hi
        if y == yr:
            hi = x
    return hi


def scatter_add_rows(double[:, ::1] dst, const long long[::1] idx, double[:, ::1] vals):
    """dst[idx[k], :] += vals[k, :], applied in ascending k order, in place."""
    cdef Py_ssize_t e = idx.shape[0], d = vals.shape[1]
    cdef Py_ssize_t k, j, r
    with nogil:
        for k in range(e):
            r = idx[k]
            for j in range(d):
                dst[r, j] += vals[k, j]


def scatter_add_flat(double[::1] dst, const long long[::1] idx, const double[::1] vals):
    """dst[idx[k]] += vals[k], applied in ascending k order, in place."""
    cdef Py_ssize_t n = idx.shape[0], k
    with nogil:
        for k in range(n):
            dst[idx[k]] += vals[k]


def segment_sum(double[:, ::1] vals, const long long[::1] seg, Py_ssize_t n_seg):
    """Exact per-segment column sums; empty segments yield zero rows."""
    out, _ = _segment_sum_counts(vals, seg, n_seg)
    return out


def segment_mean(double[:, ::1] vals, const long long[::1] seg, Py_ssize_t n_seg):
    """Exact per-segment column means; empty segments yield zero rows.

    Returns (means, counts).
    """
    out, counts = _segment_sum_counts(vals, seg, n_seg)
    cdef double[:, ::1] o = out
    cdef long long[::1] c = counts
    cdef Py_ssize_t s, j, d = out.shape[1]
    with nogil:
        for s in range(n_seg):
            if c[s] > 0:
                for j in range(d):
                    o[s, j] = o[s, j] / c[s]
    return out, counts


def _segment_sum_counts(double[:, ::1] vals, const long long[::1] seg, Py_ssize_t n_seg):
    cdef Py_ssize_t e = vals.shape[0], d = vals.shape[1]
    cdef Py_ssize_t i, k, j, s, cur
    cdef cnp.ndarray out_arr = np.zeros((n_seg, d), dtype=np.float64)
    cdef cnp.ndarray counts_arr = np.zeros(n_seg, dtype=np.int64)
    cdef double[:, ::1] out = out_arr
    cdef long long[::1] counts = counts_arr
    if e == 0 or d == 0:
        for k in range(e):
            counts[seg[k]] += 1
        return out_arr, counts_arr

    # Rows grouped by segment (stable: ascending row order within a segment)
    # so one d-column scratch serves every segment in turn.
    cdef cnp.ndarray order_arr = np.argsort(np.asarray(seg), kind="stable")
    cdef long long[::1] order = order_arr.astype(np.int64, copy=False)

    cdef cnp.ndarray partials_arr = np.empty(d * MAX_PARTIALS, dtype=np.float64)
    cdef cnp.ndarray nparts_arr = np.zeros(d, dtype=np.int32)
    cdef cnp.ndarray plain_arr = np.zeros(d, dtype=np.float64)
    cdef cnp.ndarray bad_arr = np.zeros(d, dtype=np.uint8)
    cdef double[::1] partials = partials_arr
    cdef int[::1] nparts = nparts_arr
    cdef double[::1] plain = plain_arr
    cdef unsigned char[::1] bad = bad_arr

    cdef double v
    cdef int overflow = 0
    with nogil:
        cur = seg[order[0]]
        for i in range(e):
            k = order[i]
            s = seg[k]
            if s != cur:
                for j in range(d):
                    if bad[j]:
                        out[cur, j] = plain[j]
                    else:
                        out[cur, j] = _partials_round(&partials[j * MAX_PARTIALS], nparts[j])
                    nparts[j] = 0
                    plain[j] = 0.0
                    bad[j] = 0
                cur = s
            counts[s] += 1
            for j in range(d):
                v = vals[k, j]
                plain[j] += v
                if bad[j]:
                    continue
                if isfinite(v):
                    if nparts[j] >= MAX_PARTIALS:
                        overflow = 1
                        break
                    nparts[j] = _partials_add(&partials[j * MAX_PARTIALS], nparts[j], v)
                    # exact accumulation left the double range: degrade this
                    # cell to the plain sequential sum (matches the fallback)
                    if nparts[j] > 0 and not isfinite(partials[j * MAX_PARTIALS + nparts[j] - 1]):
                        bad[j] = 1
                else:
                    bad[j] = 1
            if overflow:
                break
        if not overflow:
            for j in range(d):
                if bad[j]:
                    out[cur, j] = plain[j]
                else:
                    out[cur, j] = _partials_round(&partials[j * MAX_PARTIALS], nparts[j])
    if overflow:
        raise OverflowError("segment sum: partial-term buffer overflow")
    return out_arr, counts_arr


def segment_max(double[:, ::1] vals, const long long[::1] seg, Py_ssize_t n_seg):
    """Per-segment column maxima; empty segments yield zero rows.

    Returns (maxima, argmax) where argmax holds the contributing row index
    per cell (first occurrence on ties) or -1 for empty segments.
    """
    cdef Py_ssize_t e = vals.shape[0], d = vals.shape[1]
    cdef cnp.ndarray out_arr = np.zeros((n_seg, d), dtype=np.float64)
    cdef cnp.ndarray arg_arr = np.full((n_seg, d), -1, dtype=np.int64)
    cdef double[:, ::1] out = out_arr
    cdef long long[:, ::1] arg = arg_arr
    cdef Py_ssize_t k, j, s
    cdef double v
    with nogil:
        for k in range(e):
            s = seg[k]
            for j in range(d):
                v = vals[k, j]
                if arg[s, j] < 0 or v > out[s, j]:
                    out[s, j] = v
                    arg[s, j] = k
    return out_arr, arg_arr
