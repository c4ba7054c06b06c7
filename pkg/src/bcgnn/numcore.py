"""Reverse-mode autodiff over dense float64 matrices, plus Adam.

Everything numeric in this package runs on 2-D C-contiguous float64 numpy
arrays ("matrices"). A :class:`Tape` records each operation in creation
order; :meth:`Tape.backward` zeroes all gradients, seeds the scalar loss
with 1, and walks the records in reverse. Leaves created with
:meth:`Tape.watch` wrap their array without copying, so trainable
parameters can live outside the tape and be updated in place between
epochs.

Randomness package-wide flows through ``numpy.random.Generator`` backed by
the PCG64 bit generator; a fixed seed reproduces every draw bitwise.
Matrix products use the BLAS bound to numpy, which is deterministic for
fixed shapes within a session; segment reductions use the kernels in
:mod:`bcgnn.kernels`, whose sum/mean variants are exactly rounded and
therefore independent of row order.
"""

from __future__ import annotations

import numpy as np

from . import kernels
from .errors import ShapeError

__all__ = [
    "Tape",
    "Tensor",
    "AdamState",
    "adam_step",
    "as_matrix",
    "glorot_uniform",
    "softmax",
    "matmul",
    "linear",
    "add",
    "sub",
    "mul",
    "scale",
    "activation",
    "relu",
    "leaky_relu",
    "softmax_rows",
    "concat_cols",
    "concat_rows",
    "gather_rows",
    "segment_reduce",
    "sum_all",
    "softmax_xent_sum",
]


def as_matrix(x) -> np.ndarray:
    """Coerce to a 2-D C-contiguous float64 array, validating dimensionality."""
    arr = np.ascontiguousarray(x, dtype=np.float64)
    if arr.ndim == 1:
        arr = arr.reshape(1, -1)
    if arr.ndim != 2:
        raise ShapeError(f"expected a matrix, got array of shape {np.shape(x)}")
    return arr


class Tensor:
    """A matrix value recorded on a tape, with a lazily allocated gradient.

    ``grad`` is ``None`` until backward touches the node. Gradients are
    accumulated by rebinding (never by mutating a buffer the tensor does
    not own), so a backward rule may hand the same array to several
    parents without copies. Callers must treat ``grad`` as read-only; it
    may alias another node's gradient or be a broadcast view.
    """

    __slots__ = ("value", "grad", "tape", "_parents", "_bwd", "_grad_owned")

    def __init__(self, tape: "Tape", value: np.ndarray, parents=(), bwd=None):
        self.value = value
        self.grad = None
        self._grad_owned = False
        self.tape = tape
        self._parents = parents
        self._bwd = bwd
        tape._nodes.append(self)

    def accum_grad(self, g: np.ndarray) -> None:
        """Add ``g`` to this node's gradient; ``g`` must not be mutated later."""
        if self.grad is None:
            self.grad = g
            self._grad_owned = False
        elif self._grad_owned:
            self.grad += g
        else:
            self.grad = self.grad + g
            self._grad_owned = True

    def grad_buffer(self) -> np.ndarray:
        """The gradient as a writable C-contiguous buffer this node owns."""
        if self.grad is None:
            self.grad = np.zeros_like(self.value)
        elif not self._grad_owned:
            self.grad = self.grad.copy()
        self._grad_owned = True
        return self.grad

    @property
    def rows(self) -> int:
        return self.value.shape[0]

    @property
    def cols(self) -> int:
        return self.value.shape[1]

    @property
    def shape(self):
        return self.value.shape

    def __repr__(self):
        return f"Tensor(shape={self.value.shape})"

    def __add__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __mul__(self, other):
        return mul(self, other)

    def __matmul__(self, other):
        return matmul(self, other)


class Tape:
    """Records tensors in creation order; replays their backward rules in reverse."""

    __slots__ = ("_nodes",)

    def __init__(self):
        self._nodes: list[Tensor] = []

    def watch(self, value) -> Tensor:
        """Create a leaf wrapping ``value`` (no copy for conforming arrays)."""
        return Tensor(self, as_matrix(value))

    def constant(self, value) -> Tensor:
        """A leaf whose gradient nobody reads; alias of :meth:`watch`."""
        return Tensor(self, as_matrix(value))

    def backward(self, loss: Tensor) -> None:
        """Accumulate d(loss)/d(node) into every node's ``grad``.

        All gradients on the tape are cleared first, so repeated calls do
        not accumulate across invocations. Nodes the loss does not depend
        on keep ``grad is None``.
        """
        if loss.tape is not self:
            raise ValueError("loss tensor does not belong to this tape")
        if loss.value.shape != (1, 1):
            raise ShapeError(f"backward needs a (1, 1) scalar loss, got shape {loss.value.shape}")
        for node in self._nodes:
            node.grad = None
            node._grad_owned = False
        loss.grad = np.ones((1, 1))
        loss._grad_owned = True
        for node in reversed(self._nodes):
            if node._bwd is not None and node.grad is not None:
                node._bwd(node.grad)

    def __len__(self):
        return len(self._nodes)


def _lift(tape: Tape, x) -> Tensor:
    if isinstance(x, Tensor):
        if x.tape is not tape:
            raise ValueError("operands recorded on different tapes")
        return x
    return tape.constant(x)


def _tape_of(*operands) -> Tape:
    for op in operands:
        if isinstance(op, Tensor):
            return op.tape
    raise TypeError("at least one operand must be a Tensor")


def _unbroadcast(grad: np.ndarray, shape) -> np.ndarray:
    """Sum a broadcast gradient back down to ``shape`` (2-D only)."""
    out = grad
    if shape[0] == 1 and out.shape[0] != 1:
        out = out.sum(axis=0, keepdims=True)
    if shape[1] == 1 and out.shape[1] != 1:
        out = out.sum(axis=1, keepdims=True)
    return out


def matmul(a, b) -> Tensor:
    tape = _tape_of(a, b)
    a = _lift(tape, a)
    b = _lift(tape, b)
    if a.cols != b.rows:
        raise ShapeError(f"matmul: inner dimensions differ, {a.shape} @ {b.shape}")
    out = Tensor(tape, a.value @ b.value, (a, b))

    def bwd(g):
        a.accum_grad(g @ b.value.T)
        b.accum_grad(a.value.T @ g)

    out._bwd = bwd
    return out


def linear(x, w, bias) -> Tensor:
    """x @ w.T + bias, with w of shape (k_out, k_in) and bias (1, k_out)."""
    tape = _tape_of(x, w, bias)
    x = _lift(tape, x)
    w = _lift(tape, w)
    bias = _lift(tape, bias)
    if x.cols != w.cols:
        raise ShapeError(f"linear: input width {x.shape} does not match weight {w.shape}")
    if bias.shape != (1, w.rows):
        raise ShapeError(f"linear: bias shape {bias.shape} does not match weight {w.shape}")
    out = Tensor(tape, x.value @ w.value.T + bias.value, (x, w, bias))

    def bwd(g):
        x.accum_grad(g @ w.value)
        w.accum_grad(g.T @ x.value)
        bias.accum_grad(g.sum(axis=0, keepdims=True))

    out._bwd = bwd
    return out


def _broadcast_shapes_2d(sa, sb):
    rows = max(sa[0], sb[0])
    cols = max(sa[1], sb[1])
    for s in (sa, sb):
        if s[0] not in (1, rows) or s[1] not in (1, cols):
            raise ShapeError(f"operands do not broadcast: {sa} vs {sb}")
    return rows, cols


def add(a, b) -> Tensor:
    tape = _tape_of(a, b)
    a = _lift(tape, a)
    b = _lift(tape, b)
    _broadcast_shapes_2d(a.shape, b.shape)
    out = Tensor(tape, a.value + b.value, (a, b))

    def bwd(g):
        a.accum_grad(_unbroadcast(g, a.shape))
        b.accum_grad(_unbroadcast(g, b.shape))

    out._bwd = bwd
    return out


def sub(a, b) -> Tensor:
    tape = _tape_of(a, b)
    a = _lift(tape, a)
    b = _lift(tape, b)
    _broadcast_shapes_2d(a.shape, b.shape)
    out = Tensor(tape, a.value - b.value, (a, b))

    def bwd(g):
        a.accum_grad(_unbroadcast(g, a.shape))
        b.accum_grad(-_unbroadcast(g, b.shape))

    out._bwd = bwd
    return out


def mul(a, b) -> Tensor:
    tape = _tape_of(a, b)
    a = _lift(tape, a)
    b = _lift(tape, b)
    _broadcast_shapes_2d(a.shape, b.shape)
    out = Tensor(tape, a.value * b.value, (a, b))

    def bwd(g):
        a.accum_grad(_unbroadcast(g * b.value, a.shape))
        b.accum_grad(_unbroadcast(g * a.value, b.shape))

    out._bwd = bwd
    return out


def scale(x, c: float) -> Tensor:
    x = _lift(_tape_of(x), x)
    c = float(c)
    out = Tensor(x.tape, x.value * c, (x,))

    def bwd(g):
        x.accum_grad(g * c)

    out._bwd = bwd
    return out


def relu(x) -> Tensor:
    x = _lift(_tape_of(x), x)
    out = Tensor(x.tape, np.maximum(x.value, 0.0), (x,))

    def bwd(g):
        x.accum_grad(g * (x.value > 0.0))

    out._bwd = bwd
    return out


def leaky_relu(x, slope: float = 0.01) -> Tensor:
    x = _lift(_tape_of(x), x)
    out = Tensor(x.tape, np.where(x.value > 0.0, x.value, slope * x.value), (x,))

    def bwd(g):
        x.accum_grad(g * np.where(x.value > 0.0, 1.0, slope))

    out._bwd = bwd
    return out


def activation(x, kind: str, slope: float = 0.01) -> Tensor:
    """Apply a named activation: 'relu', 'leakyrelu', or 'identity'."""
    if kind == "relu":
        return relu(x)
    if kind == "leakyrelu":
        return leaky_relu(x, slope)
    if kind == "identity":
        x = _lift(_tape_of(x), x)
        out = Tensor(x.tape, x.value.copy(), (x,))

        def bwd(g):
            x.accum_grad(g)

        out._bwd = bwd
        return out
    raise ValueError(f"unknown activation kind: {kind!r}")


def _softmax_np(x: np.ndarray) -> np.ndarray:
    shifted = x - x.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=1, keepdims=True)


def softmax(x) -> np.ndarray:
    """Plain-numpy softmax over a vector or over each row of a matrix."""
    arr = np.asarray(x, dtype=np.float64)
    if arr.ndim == 1:
        return _softmax_np(arr.reshape(1, -1))[0]
    return _softmax_np(as_matrix(arr))


def softmax_rows(x) -> Tensor:
    """Tape-recorded softmax along each row; rows sum to 1."""
    x = _lift(_tape_of(x), x)
    y = _softmax_np(x.value)
    out = Tensor(x.tape, y, (x,))

    def bwd(g):
        x.accum_grad((g - (g * y).sum(axis=1, keepdims=True)) * y)

    out._bwd = bwd
    return out


def concat_cols(parts) -> Tensor:
    tape = _tape_of(*parts)
    parts = [_lift(tape, p) for p in parts]
    rows = parts[0].rows
    for p in parts:
        if p.rows != rows:
            raise ShapeError(f"concat_cols: row counts differ, {[p.shape for p in parts]}")
    out = Tensor(tape, np.concatenate([p.value for p in parts], axis=1), tuple(parts))
    widths = [p.cols for p in parts]

    def bwd(g):
        offset = 0
        for p, w in zip(parts, widths):
            p.accum_grad(g[:, offset : offset + w])
            offset += w

    out._bwd = bwd
    return out


def concat_rows(parts) -> Tensor:
    tape = _tape_of(*parts)
    parts = [_lift(tape, p) for p in parts]
    cols = parts[0].cols
    for p in parts:
        if p.cols != cols:
            raise ShapeError(f"concat_rows: column counts differ, {[p.shape for p in parts]}")
    out = Tensor(tape, np.concatenate([p.value for p in parts], axis=0), tuple(parts))
    heights = [p.rows for p in parts]

    def bwd(g):
        offset = 0
        for p, h in zip(parts, heights):
            p.accum_grad(g[offset : offset + h, :])
            offset += h

    out._bwd = bwd
    return out


def gather_rows(x, idx) -> Tensor:
    """Select rows by int index; repeated indices accumulate on backward."""
    x = _lift(_tape_of(x), x)
    idx = np.ascontiguousarray(idx, dtype=np.int64)
    if idx.ndim != 1:
        raise ShapeError(f"gather_rows: index must be 1-D, got shape {idx.shape}")
    if idx.size and (idx.min() < 0 or idx.max() >= x.rows):
        raise ShapeError(f"gather_rows: index out of range for {x.shape}")
    out = Tensor(x.tape, np.ascontiguousarray(x.value[idx]), (x,))

    def bwd(g):
        kernels.scatter_add_rows(x.grad_buffer(), idx, np.ascontiguousarray(g))

    out._bwd = bwd
    return out


def segment_reduce(x, seg, n_segments: int, kind: str) -> Tensor:
    """Reduce rows of x grouped by segment id: 'mean', 'sum', or 'max'.

    Empty segments produce zero rows. Sum and mean are exactly rounded,
    hence independent of the order rows appear in.
    """
    x = _lift(_tape_of(x), x)
    seg = np.ascontiguousarray(seg, dtype=np.int64)
    if seg.shape != (x.rows,):
        raise ShapeError(f"segment_reduce: ids shape {seg.shape} does not match rows of {x.shape}")
    if seg.size and (seg.min() < 0 or seg.max() >= n_segments):
        raise ShapeError(f"segment_reduce: segment id out of range [0, {n_segments})")
    xv = np.ascontiguousarray(x.value)

    if kind == "sum":
        out = Tensor(x.tape, kernels.segment_sum(xv, seg, n_segments), (x,))

        def bwd(g):
            x.accum_grad(g[seg])

    elif kind == "mean":
        values, counts = kernels.segment_mean(xv, seg, n_segments)
        out = Tensor(x.tape, values, (x,))
        inv = 1.0 / np.maximum(counts, 1)

        def bwd(g):
            x.accum_grad(g[seg] * inv[seg, None])

    elif kind == "max":
        values, arg = kernels.segment_max(xv, seg, n_segments)
        out = Tensor(x.tape, values, (x,))
        d = xv.shape[1]
        valid = arg >= 0
        cols = np.broadcast_to(np.arange(d, dtype=np.int64), arg.shape)
        flat_idx = np.ascontiguousarray(arg[valid] * d + cols[valid])

        def bwd(g):
            kernels.scatter_add_flat(x.grad_buffer().ravel(), flat_idx, np.ascontiguousarray(g[valid]))

    else:
        raise ValueError(f"unknown aggregation kind: {kind!r}")

    out._bwd = bwd
    return out


def sum_all(x) -> Tensor:
    """Sum every entry into a (1, 1) scalar."""
    x = _lift(_tape_of(x), x)
    out = Tensor(x.tape, np.array([[x.value.sum()]]), (x,))

    def bwd(g):
        x.accum_grad(np.broadcast_to(g[0, 0], x.value.shape))

    out._bwd = bwd
    return out


def softmax_xent_sum(logits, targets) -> Tensor:
    """Sum over rows of cross-entropy between row softmax and an int target.

    ``targets`` is a 1-D int array of class indices, one per row.
    """
    logits = _lift(_tape_of(logits), logits)
    targets = np.ascontiguousarray(targets, dtype=np.int64)
    n, c = logits.shape
    if targets.shape != (n,):
        raise ShapeError(f"cross entropy: {targets.shape} targets for logits {logits.shape}")
    if targets.size and (targets.min() < 0 or targets.max() >= c):
        raise ShapeError(f"cross entropy: target class out of range [0, {c})")
    z = logits.value
    zmax = z.max(axis=1, keepdims=True)
    shifted = z - zmax
    lse = np.log(np.exp(shifted).sum(axis=1, keepdims=True)) + zmax
    picked = z[np.arange(n), targets].reshape(-1, 1)
    out = Tensor(logits.tape, np.array([[float((lse - picked).sum())]]), (logits,))
    probs = _softmax_np(z)

    def bwd(g):
        delta = probs.copy()
        delta[np.arange(n), targets] -= 1.0
        logits.accum_grad(g[0, 0] * delta)

    out._bwd = bwd
    return out


def glorot_uniform(rng: np.random.Generator, rows: int, cols: int) -> np.ndarray:
    """Uniform(-a, a) weight matrix with a = sqrt(6 / (rows + cols))."""
    a = np.sqrt(6.0 / (rows + cols))
    return rng.uniform(-a, a, size=(rows, cols))


_ZERO_GRAD = 0.0


class AdamState:
    """First/second-moment buffers and step counter for Adam."""

    __slots__ = ("lr", "beta1", "beta2", "eps", "t", "m", "v")

    def __init__(self, params, lr=0.001, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr = float(lr)
        self.beta1 = float(beta1)
        self.beta2 = float(beta2)
        self.eps = float(eps)
        self.t = 0
        self.m = [np.zeros_like(p) for p in params]
        self.v = [np.zeros_like(p) for p in params]


def adam_step(params, grads, state: AdamState) -> None:
    """One Adam update, in place on ``params``.

    A gradient of ``None`` means the parameter did not participate this
    step; its moments still decay, exactly as with an all-zero gradient.
    """
    if not (len(params) == len(grads) == len(state.m)):
        raise ShapeError(
            f"adam_step: {len(params)} params, {len(grads)} grads, state for {len(state.m)}"
        )
    state.t += 1
    bias1 = 1.0 - state.beta1**state.t
    bias2 = 1.0 - state.beta2**state.t
    for p, g, m, v in zip(params, grads, state.m, state.v):
        if g is None:
            g = _ZERO_GRAD
        elif p.shape != g.shape:
            raise ShapeError(f"adam_step: param {p.shape} vs grad {g.shape}")
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * (g * g)
        m_hat = m / bias1
        v_hat = v / bias2
        p -= state.lr * m_hat / (np.sqrt(v_hat) + state.eps)
