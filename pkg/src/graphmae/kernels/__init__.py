"""Hot CSR kernels with a compiled backend and a numpy fallback.

The compiled extension is used when it imports; set ``GRAPHMAE_BACKEND=python``
to force the fallback. ``BACKEND`` names the active implementation and
``backends()`` returns every importable one (used by tests and the benchmark).
"""

import os

import numpy as np

from . import _pykernels

try:
    from . import _ckernels
except ImportError:  # extension not built
    _ckernels = None

_FORCED = os.environ.get("GRAPHMAE_BACKEND", "").strip().lower()
if _FORCED not in ("", "python", "cython"):
    raise ImportError(f"GRAPHMAE_BACKEND must be 'python' or 'cython', got {_FORCED!r}")
if _FORCED == "cython" and _ckernels is None:
    raise ImportError("GRAPHMAE_BACKEND=cython but the compiled extension is not built")

if _ckernels is not None and _FORCED != "python":
    _impl = _ckernels
    BACKEND = "cython"
else:
    _impl = _pykernels
    BACKEND = "python"


def backends():
    out = {"python": _pykernels}
    if _ckernels is not None:
        out["cython"] = _ckernels
    return out


def _i64(a):
    return np.ascontiguousarray(a, dtype=np.int64)


def _f64(a):
    return np.ascontiguousarray(a, dtype=np.float64)


def spmm(offsets, cols, vals, h):
    """out[i] = sum over arcs (i, c) of vals * h[c]."""
    return _impl.spmm(_i64(offsets), _i64(cols), _f64(vals), _f64(h))


def spmm_t(offsets, cols, vals, g, n_out):
    """Transposed product: out[c] += vals * g[i] for every arc (i, c)."""
    return _impl.spmm_t(_i64(offsets), _i64(cols), _f64(vals), _f64(g), int(n_out))


def edge_dot(offsets, cols, a, b):
    """Per-arc inner product a[i] . b[c]."""
    return _impl.edge_dot(_i64(offsets), _i64(cols), _f64(a), _f64(b))


def segment_softmax(offsets, x):
    return _impl.segment_softmax(_i64(offsets), _f64(x))


def segment_softmax_backward(offsets, y, gy):
    return _impl.segment_softmax_backward(_i64(offsets), _f64(y), _f64(gy))


def partial_shuffle(perm, draws):
    """In-place partial Fisher-Yates given pre-drawn swap targets."""
    if perm.dtype != np.int64 or not perm.flags.c_contiguous:
        raise TypeError("perm must be a contiguous int64 array")
    _impl.partial_shuffle(perm, _i64(draws))
