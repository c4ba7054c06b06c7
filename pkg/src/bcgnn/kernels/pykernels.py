"""Pure-numpy fallback for the compiled kernels.

Contract shared by both backends (and asserted by the parity tests):

* ``scatter_add_rows(dst, idx, vals)`` / ``scatter_add_flat`` apply the
  additions sequentially in ascending ``k`` order, in place.
* ``segment_sum`` / ``segment_mean`` accumulate each (segment, column)
  cell exactly and round once, so for finite inputs the result is the
  correctly rounded exact sum -- independent of row order. This is what
  makes the model's aggregation a true multiset operation: permuting the
  rows of the input table permutes the output bitwise. Cells that receive
  a non-finite value, or whose exact accumulation overflows the double
  range, fall back to plain sequential summation (the result is
  non-finite either way).
* ``segment_max`` keeps the first occurrence on ties; empty segments
  yield zero rows and argmax -1.

Indices are int64; values are 2-D C-contiguous float64.
"""

import math

import numpy as np


def scatter_add_rows(dst, idx, vals):
    # np.add.at is unbuffered: repeated indices accumulate sequentially.
    np.add.at(dst, idx, vals)


def scatter_add_flat(dst, idx, vals):
    np.add.at(dst, idx, vals)


def _segment_blocks(seg, n_seg):
    """Yield (segment id, row indices in ascending original order)."""
    if seg.size == 0:
        return
    order = np.argsort(seg, kind="stable")
    sorted_seg = seg[order]
    starts = np.flatnonzero(np.r_[True, sorted_seg[1:] != sorted_seg[:-1]])
    bounds = np.r_[starts, sorted_seg.size]
    for a, b in zip(bounds[:-1], bounds[1:]):
        yield int(sorted_seg[a]), order[a:b]


def _segment_sum_counts(vals, seg, n_seg):
    e, d = vals.shape
    out = np.zeros((n_seg, d), dtype=np.float64)
    counts = np.bincount(seg, minlength=n_seg).astype(np.int64)
    for s, rows in _segment_blocks(seg, n_seg):
        block = vals[rows]
        finite_cols = np.isfinite(block).all(axis=0)
        cols = block.T.tolist()
        for j in range(d):
            if finite_cols[j]:
                try:
                    out[s, j] = math.fsum(cols[j])
                    continue
                except OverflowError:
                    pass  # exact sum left the double range: degrade
            acc = 0.0
            for v in cols[j]:
                acc += v
            out[s, j] = acc
    return out, counts


def segment_sum(vals, seg, n_seg):
    out, _ = _segment_sum_counts(vals, seg, n_seg)
    return out


def segment_mean(vals, seg, n_seg):
    out, counts = _segment_sum_counts(vals, seg, n_seg)
    nonzero = counts > 0
    out[nonzero] /= counts[nonzero, None]
    return out, counts


def segment_max(vals, seg, n_seg):
    e, d = vals.shape
    out = np.zeros((n_seg, d), dtype=np.float64)
    arg = np.full((n_seg, d), -1, dtype=np.int64)
    for k in range(e):
        s = seg[k]
        row = vals[k]
        take = (arg[s] < 0) | (row > out[s])
        if take.any():
            out[s, take] = row[take]
            arg[s, take] = k
    return out, arg
