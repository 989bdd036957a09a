"""Dense 2-D tensors with tape-based reverse-mode differentiation.

Ops executed while a :class:`Tape` is active (``with Tape() as tape:``) are
recorded if any input requires a gradient; ``backward(tape, loss)`` then walks
the records once in reverse. Outside a tape the same ops run as plain numpy
and nothing is recorded, which is how frozen-encoder inference works.

All data is float64 and every op output is checked for NaN/Inf.
Broadcasting is limited to a 1 x k row vector (or a 1 x 1 scalar) against an
m x k matrix; anything else is a shape error.
"""

from __future__ import annotations

import threading
from typing import Callable, Optional, Sequence

import numpy as np

from . import kernels
from .errors import NonFiniteError, NumericDomainError, ValidationError

_state = threading.local()
_faults: dict[str, float] = {}


def _tape_stack() -> list:
    stack = getattr(_state, "stack", None)
    if stack is None:
        stack = _state.stack = []
    return stack


def active_tape() -> Optional["Tape"]:
    stack = _tape_stack()
    return stack[-1] if stack else None


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "name", "_from_op", "__weakref__")

    def __init__(self, data, requires_grad=False, name=None):
        arr = np.array(data, dtype=np.float64)
        if arr.ndim == 0:
            arr = arr.reshape(1, 1)
        elif arr.ndim == 1:
            arr = arr.reshape(1, -1)
        if arr.ndim != 2:
            raise ValidationError(f"tensors are 2-D, got shape {arr.shape}")
        self.data = arr
        self.requires_grad = requires_grad
        self.grad = None
        self.name = name
        self._from_op = False

    @property
    def shape(self):
        return self.data.shape

    @property
    def T(self):
        return transpose(self)

    def item(self) -> float:
        if self.data.shape != (1, 1):
            raise ValidationError(f"item() needs a 1x1 tensor, got {self.shape}")
        return float(self.data[0, 0])

    def numpy(self) -> np.ndarray:
        return self.data.copy()

    def __repr__(self):
        label = f" {self.name!r}" if self.name else ""
        return f"Tensor{label}(shape={self.shape}, requires_grad={self.requires_grad})"

    def __matmul__(self, other):
        return matmul(self, other)

    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return add(scale(self, -1.0), other)

    def __neg__(self):
        return scale(self, -1.0)

    def __mul__(self, other):
        if isinstance(other, (int, float)):
            return scale(self, other)
        return mul(self, other)

    def __rmul__(self, other):
        return self.__mul__(other)


class Parameter(Tensor):
    """Trainable leaf. ``grad`` accumulates across backward calls until zeroed."""

    __slots__ = ()

    def __init__(self, data, name):
        super().__init__(data, requires_grad=True, name=name)
        self.grad = np.zeros_like(self.data)

    @property
    def id(self) -> str:
        return self.name

    def zero_grad(self):
        self.grad = np.zeros_like(self.data)


class Tape:
    """Ordered record of (output, inputs, backward closure) triples."""

    def __init__(self):
        self.records: list[tuple[Tensor, tuple, Callable]] = []

    def __enter__(self):
        _tape_stack().append(self)
        return self

    def __exit__(self, *exc):
        stack = _tape_stack()
        if stack and stack[-1] is self:
            stack.pop()
        return False

    def __len__(self):
        return len(self.records)

    def op_names(self) -> list[str]:
        return [out.name for out, _, _ in self.records]


class no_grad:
    """Suspend recording: ops inside run untaped even if a tape is active."""

    def __enter__(self):
        _tape_stack().append(None)
        return self

    def __exit__(self, *exc):
        _tape_stack().pop()
        return False


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _emit(op: str, data: np.ndarray, inputs: Sequence[Tensor], backward: Callable) -> Tensor:
    if not np.all(np.isfinite(data)):
        raise NonFiniteError(f"{op} produced a non-finite value")
    out = Tensor.__new__(Tensor)
    out.data = data
    out.grad = None
    out.name = op
    out._from_op = True
    out.requires_grad = False
    tape = active_tape()
    if tape is not None and any(t.requires_grad for t in inputs):
        out.requires_grad = True
        if _faults and op in _faults:
            backward = _faulty(backward, _faults[op])
        tape.records.append((out, tuple(inputs), backward))
    return out


def _faulty(fn, factor):
    return lambda g: tuple(None if gi is None else gi * factor for gi in fn(g))


class inject_backward_fault:
    """Scale the backward of every ``op`` recorded inside the block (negative controls)."""

    def __init__(self, op: str, factor: float = 1.5):
        self.op = op
        self.factor = factor

    def __enter__(self):
        _faults[self.op] = self.factor
        return self

    def __exit__(self, *exc):
        _faults.pop(self.op, None)
        return False


def backward(tape: Tape, loss: Tensor):
    """Accumulate d(loss)/d(leaf) into ``.grad`` of every leaf requiring grad."""
    if loss.shape != (1, 1):
        raise ValidationError(f"loss must be a 1x1 scalar, got shape {loss.shape}")
    if not loss.requires_grad:
        return
    if not any(out is loss for out, _, _ in tape.records):
        raise ValidationError("loss was not produced on this tape")
    grads = {id(loss): np.ones((1, 1))}
    for out, inputs, fn in reversed(tape.records):
        g = grads.pop(id(out), None)
        if g is None:
            continue
        for inp, gi in zip(inputs, fn(g)):
            if gi is None or not inp.requires_grad:
                continue
            if inp._from_op:
                prev = grads.get(id(inp))
                grads[id(inp)] = gi if prev is None else prev + gi
            elif inp.grad is None:
                inp.grad = np.array(gi, dtype=np.float64)
            else:
                inp.grad = inp.grad + gi


# ------------------------------------------------------------------ helpers


def _broadcast_kind(a: np.ndarray, b: np.ndarray) -> str:
    if a.shape == b.shape:
        return "same"
    if b.shape == (1, 1):
        return "b_scalar"
    if a.shape == (1, 1):
        return "a_scalar"
    if b.shape[0] == 1 and b.shape[1] == a.shape[1]:
        return "b_row"
    if a.shape[0] == 1 and a.shape[1] == b.shape[1]:
        return "a_row"
    raise ValidationError(f"shape mismatch: {a.shape} vs {b.shape}")


def _reduce_to(g: np.ndarray, shape) -> np.ndarray:
    if g.shape == shape:
        return g
    if shape == (1, 1):
        return np.array([[g.sum()]])
    return g.sum(axis=0, keepdims=True)


# --------------------------------------------------------------------- ops


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.shape[1] != b.shape[0]:
        raise ValidationError(f"matmul shape mismatch: {a.shape} @ {b.shape}")
    ad, bd = a.data, b.data
    return _emit("matmul", ad @ bd, (a, b), lambda g: (g @ bd.T, ad.T @ g))


def transpose(a: Tensor) -> Tensor:
    return _emit("transpose", np.ascontiguousarray(a.data.T), (a,), lambda g: (g.T,))


def add(a, b) -> Tensor:
    if not isinstance(b, Tensor):
        a = _as_tensor(a)
        return _emit("add", a.data + float(b), (a,), lambda g: (g,))
    if not isinstance(a, Tensor):
        return add(b, a)
    _broadcast_kind(a.data, b.data)
    sa, sb = a.shape, b.shape
    return _emit("add", a.data + b.data, (a, b), lambda g: (_reduce_to(g, sa), _reduce_to(g, sb)))


def sub(a, b) -> Tensor:
    if not isinstance(b, Tensor):
        return add(a, -float(b))
    return add(a, scale(b, -1.0))


def mul(a: Tensor, b: Tensor) -> Tensor:
    _broadcast_kind(a.data, b.data)
    ad, bd = a.data, b.data
    return _emit(
        "mul",
        ad * bd,
        (a, b),
        lambda g: (_reduce_to(g * bd, ad.shape), _reduce_to(g * ad, bd.shape)),
    )


def scale(a: Tensor, c: float) -> Tensor:
    c = float(c)
    return _emit("scale", a.data * c, (a,), lambda g: (g * c,))


def concat_cols(parts: Sequence[Tensor]) -> Tensor:
    rows = {p.shape[0] for p in parts}
    if len(rows) != 1:
        raise ValidationError(f"concat_cols needs equal row counts, got {sorted(rows)}")
    widths = np.cumsum([p.shape[1] for p in parts])[:-1]
    return _emit(
        "concat_cols",
        np.concatenate([p.data for p in parts], axis=1),
        tuple(parts),
        lambda g: tuple(np.split(g, widths, axis=1)),
    )


def _check_index(idx, n, op) -> np.ndarray:
    idx = np.asarray(idx, dtype=np.int64).ravel()
    if len(idx) and (idx.min() < 0 or idx.max() >= n):
        raise ValidationError(f"{op}: row index out of range [0, {n})")
    return idx


def gather_rows(x: Tensor, idx) -> Tensor:
    idx = _check_index(idx, x.shape[0], "gather_rows")
    shape = x.shape

    def bwd(g):
        gx = np.zeros(shape)
        np.add.at(gx, idx, g)
        return (gx,)

    return _emit("gather_rows", x.data[idx], (x,), bwd)


def scatter_rows(base: Tensor, idx, src: Tensor) -> Tensor:
    """Copy of ``base`` with rows ``idx`` overwritten by the rows of ``src``."""
    idx = _check_index(idx, base.shape[0], "scatter_rows")
    if len(np.unique(idx)) != len(idx):
        raise ValidationError("scatter_rows: duplicate target rows")
    if src.shape != (len(idx), base.shape[1]):
        raise ValidationError(f"scatter_rows: src shape {src.shape} != {(len(idx), base.shape[1])}")
    out = base.data.copy()
    out[idx] = src.data

    def bwd(g):
        gb = g.copy()
        gb[idx] = 0.0
        return gb, g[idx]

    return _emit("scatter_rows", out, (base, src), bwd)


def sum(x: Tensor, axis=None) -> Tensor:  # noqa: A001 - mirrors numpy
    shape = x.shape
    if axis is None:
        return _emit("sum", np.array([[x.data.sum()]]), (x,), lambda g: (np.full(shape, g[0, 0]),))
    if axis not in (0, 1):
        raise ValidationError(f"axis must be None, 0 or 1, got {axis}")
    data = x.data.sum(axis=axis, keepdims=True)
    return _emit("sum", data, (x,), lambda g: (np.broadcast_to(g, shape).copy(),))


def mean(x: Tensor, axis=None) -> Tensor:
    """Sum divided by the count (not multiplied by its reciprocal), like numpy."""
    count = x.data.size if axis is None else x.shape[axis]
    if count == 0:
        raise ValidationError("mean over an empty axis")
    if axis is not None and axis not in (0, 1):
        raise ValidationError(f"axis must be None, 0 or 1, got {axis}")
    shape = x.shape
    if axis is None:
        data = np.array([[x.data.sum() / count]])
    else:
        data = x.data.sum(axis=axis, keepdims=True) / count
    return _emit("mean", data, (x,), lambda g: (np.broadcast_to(g / count, shape).copy(),))


def power(x: Tensor, p: float) -> Tensor:
    p = float(p)
    xd = x.data
    if not p.is_integer() and np.any(xd < 0):
        raise NumericDomainError(f"power: negative base with non-integer exponent {p}")
    if p < 0 and np.any(xd == 0):
        raise NumericDomainError(f"power: zero base with negative exponent {p}")
    return _emit("power", np.power(xd, p), (x,), lambda g: (g * p * np.power(xd, p - 1.0),))


def leaky_relu(x: Tensor, slope: float) -> Tensor:
    slope = float(slope)
    pos = x.data > 0
    return _emit(
        "leaky_relu",
        np.where(pos, x.data, slope * x.data),
        (x,),
        lambda g: (np.where(pos, g, slope * g),),
    )


def prelu(x: Tensor, slope: Tensor) -> Tensor:
    """Parametric ReLU with one learned slope per column (or one shared 1x1 slope)."""
    if slope.shape not in ((1, 1), (1, x.shape[1])):
        raise ValidationError(f"prelu slope shape {slope.shape} does not fit input {x.shape}")
    xd, sd = x.data, slope.data
    pos = xd > 0
    neg_part = np.where(pos, 0.0, xd)
    return _emit(
        "prelu",
        np.where(pos, xd, sd * xd),
        (x, slope),
        lambda g: (np.where(pos, g, sd * g), _reduce_to(g * neg_part, sd.shape)),
    )


def exp(x: Tensor) -> Tensor:
    y = np.exp(x.data)
    return _emit("exp", y, (x,), lambda g: (g * y,))


def log(x: Tensor) -> Tensor:
    xd = x.data
    if np.any(xd <= 0):
        raise NumericDomainError("log of a non-positive value")
    return _emit("log", np.log(xd), (x,), lambda g: (g / xd,))


def l2_norm_rows(x: Tensor, eps: float = 1e-12) -> Tensor:
    """Row norms as an n x 1 column, floored at ``eps`` (zero gradient on the floor)."""
    xd = x.data
    raw = np.sqrt((xd * xd).sum(axis=1, keepdims=True))
    floored = raw <= eps
    norms = np.where(floored, eps, raw)
    return _emit("l2_norm_rows", norms, (x,), lambda g: (np.where(floored, 0.0, g / norms) * xd,))


def cosine_rows(x, z: Tensor, eps: float = 1e-12) -> Tensor:
    """Row-wise cos(x_i, z_i) as an n x 1 column; ``x`` is constant data.

    Evaluated as dot / sqrt(|x|^2 |z|^2) so that z_i = x_i gives exactly 1.
    Squared norms are floored at eps^2; a floored norm is treated as constant.
    """
    xd = x.data if isinstance(x, Tensor) else np.asarray(x, dtype=np.float64)
    zd = z.data
    if xd.shape != zd.shape:
        raise ValidationError(f"cosine_rows: shapes {xd.shape} and {zd.shape} differ")
    floor = eps * eps
    sx = np.maximum((xd * xd).sum(axis=1, keepdims=True), floor)
    sz_raw = (zd * zd).sum(axis=1, keepdims=True)
    z_floored = sz_raw <= floor
    sz = np.where(z_floored, floor, sz_raw)
    denom = np.sqrt(sx * sz)
    cos = (xd * zd).sum(axis=1, keepdims=True) / denom

    def bwd(g):
        gz = xd / denom - np.where(z_floored, 0.0, cos / sz) * zd
        return (g * gz,)

    return _emit("cosine_rows", cos, (z,), bwd)


def spmm(adj, h: Tensor, values: Optional[Tensor] = None) -> Tensor:
    """Sparse aggregation out[i] = sum_j w_ij h[j] over the arcs of ``adj``.

    Arc weights come from ``adj.edge_values`` unless ``values`` (an
    num_arcs x 1 tensor) is given, in which case they are differentiable.
    """
    if h.shape[0] != adj.n:
        raise ValidationError(f"spmm: adjacency has {adj.n} rows, h has {h.shape[0]}")
    offsets, cols = adj.row_offsets, adj.col_indices
    if values is None:
        vals = adj.edge_values
        inputs = (h,)
    else:
        if values.shape != (adj.num_arcs, 1):
            raise ValidationError(f"spmm: values shape {values.shape} != ({adj.num_arcs}, 1)")
        vals = values.data[:, 0]
        inputs = (h, values)
    hd = h.data
    n = adj.n

    def bwd(g):
        gh = kernels.spmm_t(offsets, cols, vals, g, n) if h.requires_grad else None
        if values is None:
            return (gh,)
        gv = kernels.edge_dot(offsets, cols, g, hd)[:, None] if values.requires_grad else None
        return gh, gv

    return _emit("spmm", kernels.spmm(offsets, cols, vals, hd), inputs, bwd)


def segment_softmax(logits: Tensor, row_offsets) -> Tensor:
    """Softmax of each column within every CSR row segment of the arc axis."""
    offsets = np.asarray(row_offsets, dtype=np.int64)
    if offsets[-1] != logits.shape[0]:
        raise ValidationError(f"segment_softmax: offsets cover {offsets[-1]} arcs, logits have {logits.shape[0]}")
    y = kernels.segment_softmax(offsets, logits.data)
    return _emit(
        "segment_softmax",
        y,
        (logits,),
        lambda g: (kernels.segment_softmax_backward(offsets, y, g),),
    )
