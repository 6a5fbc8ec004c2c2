"""Reverse-mode automatic differentiation over numpy arrays.

The primitive set is closed: higher layers (encoder, decoder, models) compose
only the operations defined here, so the backward-rule surface stays bounded.
Each primitive documents its shape rule; anything outside those rules is a
ShapeError. All data is 64-bit by default (finite-difference checks need it);
32-bit is available by passing an explicit dtype at leaf creation.
"""

from __future__ import annotations

import numpy as np
from scipy.special import expit

DEFAULT_DTYPE = np.float64


class AutodiffError(Exception):
    pass


class ShapeError(AutodiffError):
    pass


class NumericalError(AutodiffError):
    pass


class Tensor:
    """Dense n-d array that can participate in gradient taping.

    ``grad`` is allocated (zeros, same shape as ``data``) exactly when
    ``requires_grad`` is True, and gradients accumulate additively into it.
    """

    __slots__ = ("data", "requires_grad", "grad")

    def __init__(self, data, requires_grad=False, dtype=None):
        self.data = np.array(data, dtype=dtype or DEFAULT_DTYPE)
        self.requires_grad = bool(requires_grad)
        self.grad = np.zeros_like(self.data) if self.requires_grad else None

    @classmethod
    def _wrap(cls, array):
        t = cls.__new__(cls)
        t.data = array
        t.requires_grad = False
        t.grad = None
        return t

    def _promote(self):
        if not self.requires_grad:
            self.requires_grad = True
            self.grad = np.zeros_like(self.data)

    @property
    def shape(self):
        return self.data.shape

    @property
    def size(self):
        return self.data.size

    @property
    def dtype(self):
        return self.data.dtype

    def item(self):
        if self.data.size != 1:
            raise ShapeError(f"item: tensor has {self.data.size} elements, expected 1")
        return float(self.data.reshape(()))

    def zero_grad(self):
        if self.grad is not None:
            self.grad[...] = 0.0

    def __repr__(self):
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"


class Node:
    """One recorded primitive application."""

    __slots__ = ("op", "inputs", "output", "backward_fn")

    def __init__(self, op, inputs, output, backward_fn):
        self.op = op
        self.inputs = inputs
        self.output = output
        self.backward_fn = backward_fn


class Tape:
    """Ordered record of primitive applications for one forward pass.

    Recording order is execution order, so every node's inputs appear earlier
    (or are leaves); one reverse sweep therefore visits each node exactly once.
    """

    def __init__(self):
        self.nodes = []
        self._member_ids = set()

    def __enter__(self):
        _TAPE_STACK.append(self)
        return self

    def __exit__(self, exc_type, exc, tb):
        popped = _TAPE_STACK.pop()
        assert popped is self
        return False

    def _record(self, node):
        self.nodes.append(node)
        self._member_ids.add(id(node.output))

    def owns(self, tensor):
        return id(tensor) in self._member_ids


_TAPE_STACK: list[Tape] = []


def active_tape():
    return _TAPE_STACK[-1] if _TAPE_STACK else None


def _finish(op, inputs, out_array, backward_fn):
    """Wrap a primitive's result, check finiteness, record on the active tape."""
    if not np.all(np.isfinite(out_array)):
        raise NumericalError(f"{op}: non-finite values in output")
    out = Tensor._wrap(out_array)
    tape = active_tape()
    if tape is not None and any(t.requires_grad for t in inputs):
        out._promote()
        tape._record(Node(op, inputs, out, backward_fn))
    return out


# ---------------------------------------------------------------------------
# Primitives
# ---------------------------------------------------------------------------


def matmul(a: Tensor, b: Tensor, transpose_a=False, transpose_b=False) -> Tensor:
    """Gemm-style product.

    Shape rule: operands are 1-d or 2-d; the transpose flags apply to 2-d
    operands only. After optional transposition the inner dimensions must
    agree: (m,k)@(k,n)->(m,n), (k,)@(k,n)->(n,), (m,k)@(k,)->(m,),
    (k,)@(k,)->() .
    """
    A, B = a.data, b.data
    if A.ndim not in (1, 2) or B.ndim not in (1, 2):
        raise ShapeError(f"matmul: operands must be 1-d or 2-d, got {A.shape} and {B.shape}")
    if transpose_a:
        if A.ndim != 2:
            raise ShapeError(f"matmul: transpose_a requires a 2-d left operand, got {A.shape}")
        A = A.T
    if transpose_b:
        if B.ndim != 2:
            raise ShapeError(f"matmul: transpose_b requires a 2-d right operand, got {B.shape}")
        B = B.T
    a_vec, b_vec = A.ndim == 1, B.ndim == 1
    A2 = A[None, :] if a_vec else A
    B2 = B[:, None] if b_vec else B
    if A2.shape[1] != B2.shape[0]:
        raise ShapeError(f"matmul: inner dimensions differ, {a.data.shape} vs {b.data.shape}")
    out = A2 @ B2
    if b_vec:
        out = out[:, 0]
    if a_vec:
        out = out[0]

    def backward(g):
        g2 = g
        if a_vec:
            g2 = g2[None, ...]
        if b_vec:
            g2 = g2[..., None]
        if a.requires_grad:
            ga = g2 @ B2.T
            if a_vec:
                ga = ga[0]
            elif transpose_a:
                ga = ga.T
            a.grad += ga
        if b.requires_grad:
            gb = A2.T @ g2
            if b_vec:
                gb = gb[:, 0]
            elif transpose_b:
                gb = gb.T
            b.grad += gb

    return _finish("matmul", (a, b), out, backward)


def add(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise sum.

    Shape rule: identical shapes, or (m,n)+(n,) which broadcasts ``b`` over
    rows (the bias case).
    """
    broadcast = a.data.ndim == 2 and b.data.ndim == 1 and a.data.shape[1] == b.data.shape[0]
    if not broadcast and a.data.shape != b.data.shape:
        raise ShapeError(f"add: incompatible shapes {a.data.shape} and {b.data.shape}")
    out = a.data + b.data

    def backward(g):
        if a.requires_grad:
            a.grad += g
        if b.requires_grad:
            b.grad += g.sum(axis=0) if broadcast else g

    return _finish("add", (a, b), out, backward)


def concat(tensors, axis: int) -> Tensor:
    """Concatenate along an existing axis.

    Shape rule: all operands share ndim and every dimension except ``axis``.
    """
    tensors = list(tensors)
    if not tensors:
        raise ShapeError("concat: needs at least one tensor")
    ndim = tensors[0].data.ndim
    for t in tensors[1:]:
        if t.data.ndim != ndim:
            raise ShapeError(
                f"concat: rank mismatch {tensors[0].data.shape} vs {t.data.shape}")
    try:
        out = np.concatenate([t.data for t in tensors], axis=axis)
    except ValueError as exc:
        raise ShapeError(f"concat: {exc}") from None
    sizes = [t.data.shape[axis] for t in tensors]
    offsets = np.cumsum([0] + sizes)

    def backward(g):
        for t, lo, hi in zip(tensors, offsets[:-1], offsets[1:]):
            if t.requires_grad:
                idx = [slice(None)] * g.ndim
                idx[axis] = slice(lo, hi)
                t.grad += g[tuple(idx)]

    return _finish("concat", tuple(tensors), out, backward)


def mul(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise product. Shape rule: identical shapes."""
    if a.data.shape != b.data.shape:
        raise ShapeError(f"elementwise-mul: incompatible shapes {a.data.shape} and {b.data.shape}")
    out = a.data * b.data

    def backward(g):
        if a.requires_grad:
            a.grad += g * b.data
        if b.requires_grad:
            b.grad += g * a.data

    return _finish("elementwise-mul", (a, b), out, backward)


def sigmoid(x: Tensor) -> Tensor:
    """Elementwise logistic function, any shape."""
    y = expit(x.data)

    def backward(g):
        if x.requires_grad:
            x.grad += g * y * (1.0 - y)

    return _finish("sigmoid", (x,), y, backward)


def tanh(x: Tensor) -> Tensor:
    """Elementwise hyperbolic tangent, any shape."""
    y = np.tanh(x.data)

    def backward(g):
        if x.requires_grad:
            x.grad += g * (1.0 - y * y)

    return _finish("tanh", (x,), y, backward)


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    """Shift-stable softmax along ``axis``."""
    shifted = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    y = e / e.sum(axis=axis, keepdims=True)

    def backward(g):
        if x.requires_grad:
            inner = (g * y).sum(axis=axis, keepdims=True)
            x.grad += y * (g - inner)

    return _finish("softmax", (x,), y, backward)


def max_over_axis(x: Tensor, axis: int, keepdims: bool = False) -> Tensor:
    """Maximum along ``axis``; gradient routes to the first argmax on ties."""
    if x.data.ndim == 0:
        raise ShapeError(f"max-over-axis: needs at least 1-d input, got {x.data.shape}")
    out = x.data.max(axis=axis, keepdims=keepdims)
    idx = np.expand_dims(x.data.argmax(axis=axis), axis=axis)

    def backward(g):
        if x.requires_grad:
            g_exp = g if keepdims else np.expand_dims(g, axis=axis)
            scatter = np.zeros_like(x.data)
            np.put_along_axis(scatter, idx, g_exp, axis=axis)
            x.grad += scatter

    return _finish("max-over-axis", (x,), out, backward)


def embedding_lookup(table: Tensor, ids) -> Tensor:
    """Select rows of a (V, d) table by integer id; output is (len(ids), d).

    Duplicate ids accumulate gradient additively into the same row.
    """
    ids = np.asarray(ids, dtype=np.intp)
    if table.data.ndim != 2:
        raise ShapeError(f"embedding-lookup: table must be 2-d, got {table.data.shape}")
    if ids.ndim != 1:
        raise ShapeError(f"embedding-lookup: ids must be 1-d, got shape {ids.shape}")
    if ids.size and (ids.min() < 0 or ids.max() >= table.data.shape[0]):
        raise ShapeError(
            f"embedding-lookup: id out of range for table with {table.data.shape[0]} rows")
    out = table.data[ids].copy()

    def backward(g):
        if table.requires_grad:
            np.add.at(table.grad, ids, g)

    return _finish("embedding-lookup", (table,), out, backward)


def conv1d(x: Tensor, kernel: Tensor) -> Tensor:
    """Valid-padding 1-d convolution.

    Shape rule: x is (L, C_in), kernel is (w, C_in, C_out), L >= w; output is
    (L - w + 1, C_out). Boundary padding is the caller's responsibility.
    """
    X, K = x.data, kernel.data
    if X.ndim != 2 or K.ndim != 3:
        raise ShapeError(f"conv1d: expected (L,Cin) and (w,Cin,Cout), got {X.shape} and {K.shape}")
    L, cin = X.shape
    w, kcin, cout = K.shape
    if cin != kcin:
        raise ShapeError(f"conv1d: channel mismatch, input {X.shape} vs kernel {K.shape}")
    if L < w:
        raise ShapeError(f"conv1d: input length {L} shorter than kernel width {w}")
    lout = L - w + 1
    out = np.zeros((lout, cout), dtype=X.dtype)
    for i in range(w):
        out += X[i:i + lout] @ K[i]

    def backward(g):
        for i in range(w):
            if x.requires_grad:
                x.grad[i:i + lout] += g @ K[i].T
            if kernel.requires_grad:
                kernel.grad[i] += X[i:i + lout].T @ g

    return _finish("conv1d", (x, kernel), out, backward)


def cross_entropy_from_logits(logits: Tensor, targets) -> Tensor:
    """Per-row negative log likelihood of integer targets under softmax(logits).

    Shape rule: logits (B, V), targets length B; output is (B,).
    """
    Z = logits.data
    targets = np.asarray(targets, dtype=np.intp)
    if Z.ndim != 2:
        raise ShapeError(f"cross-entropy-from-logits: logits must be 2-d, got {Z.shape}")
    if targets.shape != (Z.shape[0],):
        raise ShapeError(
            f"cross-entropy-from-logits: targets shape {targets.shape} does not match "
            f"logits {Z.shape}")
    if targets.size and (targets.min() < 0 or targets.max() >= Z.shape[1]):
        raise ShapeError(
            f"cross-entropy-from-logits: target id out of range for {Z.shape[1]} classes")
    m = Z.max(axis=1, keepdims=True)
    e = np.exp(Z - m)
    denom = e.sum(axis=1)
    rows = np.arange(Z.shape[0])
    out = m[:, 0] + np.log(denom) - Z[rows, targets]

    def backward(g):
        if logits.requires_grad:
            soft = e / denom[:, None]
            soft[rows, targets] -= 1.0
            logits.grad += soft * g[:, None]

    return _finish("cross-entropy-from-logits", (logits,), out, backward)


def scale(x: Tensor, c: float) -> Tensor:
    """Multiply by a python scalar constant."""
    c = float(c)
    out = x.data * c

    def backward(g):
        if x.requires_grad:
            x.grad += g * c

    return _finish("scale", (x,), out, backward)


def slice_axis(x: Tensor, axis: int, start: int, stop: int) -> Tensor:
    """Contiguous slice [start:stop) along one axis."""
    if not (0 <= axis < x.data.ndim):
        raise ShapeError(f"slice: axis {axis} invalid for shape {x.data.shape}")
    if not (0 <= start < stop <= x.data.shape[axis]):
        raise ShapeError(
            f"slice: range [{start}:{stop}) invalid for axis {axis} of shape {x.data.shape}")
    idx = [slice(None)] * x.data.ndim
    idx[axis] = slice(start, stop)
    idx = tuple(idx)
    out = x.data[idx].copy()

    def backward(g):
        if x.requires_grad:
            x.grad[idx] += g

    return _finish("slice", (x,), out, backward)


PRIMITIVES = {
    "matmul": matmul,
    "add": add,
    "concat": concat,
    "elementwise-mul": mul,
    "sigmoid": sigmoid,
    "tanh": tanh,
    "softmax": softmax,
    "max-over-axis": max_over_axis,
    "embedding-lookup": embedding_lookup,
    "conv1d": conv1d,
    "cross-entropy-from-logits": cross_entropy_from_logits,
    "scale": scale,
    "slice": slice_axis,
}


def forward_primitive(op: str, *args, **kwargs) -> Tensor:
    """Apply a primitive by id. The set of ids is closed (see PRIMITIVES)."""
    try:
        fn = PRIMITIVES[op]
    except KeyError:
        raise AutodiffError(f"unknown primitive {op!r}") from None
    return fn(*args, **kwargs)


# ---------------------------------------------------------------------------
# Composites (built from primitives only, no new backward rules)
# ---------------------------------------------------------------------------


def one_minus(x: Tensor) -> Tensor:
    """1 - x, elementwise."""
    ones = Tensor._wrap(np.ones_like(x.data))
    return add(scale(x, -1.0), ones)


def sum_all(x: Tensor) -> Tensor:
    """Sum of all elements of a tensor of rank <= 2, as a scalar tensor."""
    if x.data.ndim == 0:
        return scale(x, 1.0)
    if x.data.ndim == 1:
        return matmul(x, Tensor._wrap(np.ones_like(x.data)))
    if x.data.ndim == 2:
        rowsum = matmul(x, Tensor._wrap(np.ones(x.data.shape[1], dtype=x.data.dtype)))
        return matmul(rowsum, Tensor._wrap(np.ones_like(rowsum.data)))
    raise ShapeError(f"sum_all: rank {x.data.ndim} not supported")


# ---------------------------------------------------------------------------
# Backward and gradient checking
# ---------------------------------------------------------------------------


def backward(tape: Tape, loss: Tensor) -> None:
    """Populate gradients of every requires_grad tensor reachable from loss.

    Loss must be a size-1 tensor produced on this tape. Gradients accumulate
    additively, both across multiple uses of a leaf and across calls.
    """
    if loss.data.size != 1:
        raise ShapeError(f"backward: loss must be scalar, got shape {loss.data.shape}")
    if not tape.owns(loss):
        raise AutodiffError("backward: loss was not produced on this tape")
    loss.grad += np.ones_like(loss.data)
    for node in reversed(tape.nodes):
        node.backward_fn(node.output.grad)


def grad_check(f, point, h: float = 1e-5, coord_limit: int | None = None, seed: int = 0):
    """Compare analytic gradients of ``f(*point)`` against central differences.

    Returns max over checked coordinates of |analytic - numeric| / max(1, |analytic|).
    ``point`` is a sequence of requires_grad tensors; other values closed over
    by ``f`` are held fixed. With ``coord_limit`` set, at most that many
    coordinates per tensor are checked (seeded uniform sample), which keeps
    full-model checks tractable; omit it for exhaustive per-primitive checks.
    """
    if h <= 0:
        raise ValueError("grad_check: step h must be positive")
    point = list(point)
    for p in point:
        if not p.requires_grad:
            raise ValueError("grad_check: every point tensor must require grad")
        p.zero_grad()
    with Tape() as tape:
        loss = f(*point)
        backward(tape, loss)
    analytic = [p.grad.copy() for p in point]

    rng = np.random.default_rng(seed)
    worst = 0.0
    for p, a in zip(point, analytic):
        flat = p.data.reshape(-1)
        n = flat.size
        if coord_limit is not None and n > coord_limit:
            coords = rng.choice(n, size=coord_limit, replace=False)
        else:
            coords = range(n)
        a_flat = a.reshape(-1)
        for i in coords:
            saved = flat[i]
            flat[i] = saved + h
            up = f(*point).item()
            flat[i] = saved - h
            down = f(*point).item()
            flat[i] = saved
            numeric = (up - down) / (2.0 * h)
            err = abs(a_flat[i] - numeric) / max(1.0, abs(a_flat[i]))
            if err > worst:
                worst = err
    return worst


# ---------------------------------------------------------------------------
# Adam
# ---------------------------------------------------------------------------


class AdamState:
    """Per-parameter first/second moments plus the shared step counter."""

    def __init__(self, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m: dict[str, np.ndarray] = {}
        self.v: dict[str, np.ndarray] = {}


def adam_step(params: dict[str, Tensor], state: AdamState) -> None:
    """One bias-corrected Adam update, in place, from each param's .grad."""
    state.t += 1
    b1, b2 = state.beta1, state.beta2
    bc1 = 1.0 - b1 ** state.t
    bc2 = 1.0 - b2 ** state.t
    for name, p in params.items():
        g = p.grad
        if g is None:
            raise AutodiffError(f"adam_step: parameter {name!r} has no gradient")
        m = state.m.setdefault(name, np.zeros_like(p.data))
        v = state.v.setdefault(name, np.zeros_like(p.data))
        if m.shape != p.data.shape:
            raise ShapeError(
                f"adam_step: state shape {m.shape} does not match parameter "
                f"{name!r} shape {p.data.shape}")
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * (g * g)
        p.data -= state.lr * (m / bc1) / (np.sqrt(v / bc2) + state.eps)


def global_grad_norm(params: dict[str, Tensor]) -> float:
    total = 0.0
    for p in params.values():
        if p.grad is not None:
            total += float((p.grad * p.grad).sum())
    return float(np.sqrt(total))


def clip_global_norm(params: dict[str, Tensor], max_norm: float) -> float:
    """Scale all gradients so their global L2 norm is at most max_norm.

    Returns the pre-clip norm.
    """
    norm = global_grad_norm(params)
    if norm > max_norm > 0:
        factor = max_norm / norm
        for p in params.values():
            if p.grad is not None:
                p.grad *= factor
    return norm


def zero_grads(params: dict[str, Tensor]) -> None:
    for p in params.values():
        p.zero_grad()
