"""Pure-numpy versions of the compiled kernels.

Same signatures as ``_ckernels``. Sums use ``np.add.at`` or explicit column
loops so accumulation order matches the compiled loops.
"""

import numpy as np


def _arc_rows(offsets):
    return np.repeat(np.arange(len(offsets) - 1), np.diff(offsets))


def spmm(offsets, cols, vals, h):
    out = np.zeros((len(offsets) - 1, h.shape[1]))
    np.add.at(out, _arc_rows(offsets), vals[:, None] * h[cols])
    return out


def spmm_t(offsets, cols, vals, g, n_out):
    out = np.zeros((n_out, g.shape[1]))
    np.add.at(out, cols, vals[:, None] * g[_arc_rows(offsets)])
    return out


def edge_dot(offsets, cols, a, b):
    rows = _arc_rows(offsets)
    out = np.zeros(len(cols))
    for j in range(a.shape[1]):
        out += a[rows, j] * b[cols, j]
    return out


def segment_softmax(offsets, x):
    out = np.empty_like(x)
    if x.shape[0] == 0:
        return out
    rows = _arc_rows(offsets)
    starts = offsets[:-1][np.diff(offsets) > 0]
    seg_max = np.full((len(offsets) - 1, x.shape[1]), -np.inf)
    seg_max[np.diff(offsets) > 0] = np.maximum.reduceat(x, starts, axis=0)
    out = np.exp(x - seg_max[rows])
    sums = np.zeros_like(seg_max)
    np.add.at(sums, rows, out)
    return out / sums[rows]


def segment_softmax_backward(offsets, y, gy):
    rows = _arc_rows(offsets)
    s = np.zeros((len(offsets) - 1, y.shape[1]))
    np.add.at(s, rows, y * gy)
    return y * (gy - s[rows])


def partial_shuffle(perm, draws):
    """Swap perm[i] with perm[draws[i]] for i ascending, in place."""
    for i, j in enumerate(draws.tolist()):
        perm[i], perm[j] = perm[j], perm[i]
