"""Tape-based reverse-mode automatic differentiation over float64 arrays.

Operations record themselves on the innermost active :class:`Tape` when
at least one input requires a gradient::

    w = Tensor(np.ones((3, 2)), requires_grad=True)
    with Tape() as tape:
        loss = sum_(dense(x, w, b, "tanh"))
    backward(tape, loss)
    w.grad  # dloss/dw

Records are appended in execution order, so walking them backwards is a
valid topological order.
"""

import threading
from dataclasses import dataclass

import numpy as np

from . import kernels
from .errors import ContractError, NumericError, ShapeError

_state = threading.local()


def _tape_stack():
    stack = getattr(_state, "stack", None)
    if stack is None:
        stack = _state.stack = []
    return stack


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "name")

    def __init__(self, data, requires_grad=False, name=None):
        self.data = np.require(data, dtype=np.float64, requirements="C")
        self.grad = None
        self.requires_grad = requires_grad
        self.name = name

    @property
    def shape(self):
        return self.data.shape

    def numpy(self):
        return self.data

    def zero_grad(self):
        self.grad = None

    def __repr__(self):
        tag = f" {self.name!r}" if self.name else ""
        return f"Tensor{tag}(shape={self.shape}, requires_grad={self.requires_grad})"

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, cols):
        return take_cols(self, cols)


@dataclass
class _Record:
    op: str
    out: Tensor
    inputs: tuple
    vjp: object  # callable(grad_out) -> tuple of grads (None for non-differentiable inputs)


class Tape:
    """Ordered log of primitive operations; single-owner, not thread-shared."""

    def __init__(self):
        self.records = []

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

    def reset(self):
        self.records.clear()


def as_tensor(x):
    return x if isinstance(x, Tensor) else Tensor(x)


def apply_op(name, out_data, inputs, vjp):
    """Wrap ``out_data`` as the result of primitive ``name``.

    ``vjp(g)`` must return one gradient (or None) per input. This is the
    single entry point for new primitives, including test-only ones.
    """
    out = Tensor(out_data)
    stack = _tape_stack()
    if stack and any(t.requires_grad for t in inputs):
        out.requires_grad = True
        stack[-1].records.append(_Record(name, out, tuple(inputs), vjp))
    return out


def backward(tape, loss, wrt=None):
    """Propagate d(loss)/d(.) to every leaf that requires a gradient.

    Leaf gradients are accumulated into ``.grad``; with ``wrt`` only the
    listed tensors are written (shared model weights stay untouched).
    The tape is reset afterwards.
    """
    if loss.data.size != 1:
        raise ContractError(f"backward needs a scalar loss, got shape {loss.shape}")
    grads = {id(loss): np.ones_like(loss.data)}
    leaves = {id(loss): loss} if loss.requires_grad else {}
    for rec in reversed(tape.records):
        g = grads.pop(id(rec.out), None)
        if g is None:
            continue
        for inp, gi in zip(rec.inputs, rec.vjp(g)):
            if gi is None or not inp.requires_grad:
                continue
            key = id(inp)
            grads[key] = grads[key] + gi if key in grads else gi
            leaves.setdefault(key, inp)
    keep = None if wrt is None else {id(t) for t in wrt}
    for key, g in grads.items():
        if keep is not None and key not in keep:
            continue
        leaf = leaves.get(key)
        if leaf is not None:
            leaf.grad = np.array(g, copy=True) if leaf.grad is None else leaf.grad + g
    tape.reset()


def grad(fn, *inputs):
    """Gradients of scalar ``fn(*inputs)`` w.r.t. each input, as arrays."""
    leaves = [Tensor(np.array(x, dtype=np.float64), requires_grad=True) for x in inputs]
    with Tape() as tape:
        out = fn(*leaves)
    backward(tape, out)
    return [lf.grad if lf.grad is not None else np.zeros_like(lf.data) for lf in leaves]


# ---------------------------------------------------------------- helpers

def _unbroadcast(g, shape):
    if g.shape == shape:
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


def _lift(*xs):
    return [as_tensor(x) for x in xs]


# ---------------------------------------------------------------- elementwise

def add(a, b):
    a, b = _lift(a, b)
    return apply_op("add", a.data + b.data, (a, b),
                    lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)))


def sub(a, b):
    a, b = _lift(a, b)
    return apply_op("sub", a.data - b.data, (a, b),
                    lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)))


def mul(a, b):
    a, b = _lift(a, b)
    return apply_op("mul", a.data * b.data, (a, b),
                    lambda g: (_unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)))


def div(a, b):
    a, b = _lift(a, b)
    out = a.data / b.data
    return apply_op("div", out, (a, b),
                    lambda g: (_unbroadcast(g / b.data, a.shape),
                               _unbroadcast(-g * out / b.data, b.shape)))


def add_n(tensors):
    tensors = _lift(*tensors)
    out = tensors[0].data.copy()
    for t in tensors[1:]:
        out = out + t.data
    return apply_op("add_n", out, tuple(tensors),
                    lambda g: tuple(_unbroadcast(g, t.shape) for t in tensors))


def neg(a):
    return apply_op("neg", -a.data, (a,), lambda g: (-g,))


def scale(a, c):
    c = float(c)
    return apply_op("scale", a.data * c, (a,), lambda g: (g * c,))


def exp(a):
    out = np.exp(a.data)
    return apply_op("exp", out, (a,), lambda g: (g * out,))


def log(a):
    return apply_op("log", np.log(a.data), (a,), lambda g: (g / a.data,))


def square(a):
    return apply_op("square", a.data * a.data, (a,), lambda g: (2.0 * g * a.data,))


def abs_(a):
    return apply_op("abs", np.abs(a.data), (a,), lambda g: (g * np.sign(a.data),))


def tanh(a):
    out = np.tanh(a.data)
    return apply_op("tanh", out, (a,), lambda g: (g * (1.0 - out * out),))


def relu(a):
    out = np.maximum(a.data, 0.0)
    return apply_op("relu", out, (a,), lambda g: (np.where(a.data > 0, g, 0.0),))


def _sigmoid_np(x):
    e = np.exp(-np.abs(x))
    return np.where(x >= 0, 1.0 / (1.0 + e), e / (1.0 + e))


def sigmoid(a):
    out = _sigmoid_np(a.data)
    return apply_op("sigmoid", out, (a,), lambda g: (g * out * (1.0 - out),))


def softplus(a):
    x = a.data
    out = _softplus_np(x)
    return apply_op("softplus", out, (a,), lambda g: (g * _sigmoid_np(x),))


def _softplus_np(x):
    if x.ndim == 2:
        return kernels.softplus(np.ascontiguousarray(x))
    return np.maximum(x, 0.0) + np.log1p(np.exp(-np.abs(x)))


def clip(a, lo, hi):
    inside = (a.data >= lo) & (a.data <= hi)
    return apply_op("clip", np.clip(a.data, lo, hi), (a,), lambda g: (np.where(inside, g, 0.0),))


# ---------------------------------------------------------------- reductions / structure

def sum_(a, axis=None):
    out = a.data.sum(axis=axis)

    def vjp(g):
        if axis is None:
            return (np.broadcast_to(g, a.shape).copy(),)
        return (np.broadcast_to(np.expand_dims(g, axis), a.shape).copy(),)

    return apply_op("sum", out, (a,), vjp)


def mean(a, axis=None):
    n = a.data.size if axis is None else a.shape[axis]
    return scale(sum_(a, axis), 1.0 / n)


def matmul(a, b):
    a, b = _lift(a, b)
    if a.shape[-1] != b.shape[0]:
        raise ShapeError(f"matmul: {a.shape} @ {b.shape}")
    return apply_op("matmul", a.data @ b.data, (a, b), lambda g: (g @ b.data.T, a.data.T @ g))


def take_cols(a, cols):
    """Column selection on a 2-D tensor (slice or integer index array)."""
    if isinstance(cols, slice):
        out = a.data[:, cols]
    else:
        cols = np.asarray(cols, dtype=np.intp)
        out = a.data[:, cols]

    def vjp(g):
        full = np.zeros_like(a.data)
        if isinstance(cols, slice):
            full[:, cols] = g
        else:
            np.add.at(full, (slice(None), cols), g)
        return (full,)

    return apply_op("take_cols", np.ascontiguousarray(out), (a,), vjp)


def concat(tensors, axis=1):
    tensors = _lift(*tensors)
    sizes = [t.shape[axis] for t in tensors]
    cuts = np.cumsum(sizes)[:-1]
    return apply_op("concat", np.concatenate([t.data for t in tensors], axis=axis), tuple(tensors),
                    lambda g: tuple(np.split(g, cuts, axis=axis)))


# ---------------------------------------------------------------- fused kernels

def dense(x, w, b, activation="identity"):
    """``activation(x @ w + b)`` through the compiled kernel when available."""
    x = as_tensor(x)
    if x.data.ndim != 2:
        raise ShapeError(f"dense expects a 2-D input, got shape {x.shape}")
    if x.shape[1] != w.shape[0]:
        raise ShapeError(f"dense: input width {x.shape[1]} != weight rows {w.shape[0]}")
    act = kernels.ACTIVATIONS[activation]
    out = kernels.dense_forward(x.data, w.data, b.data, act)

    def vjp(g):
        gx, gw, gb = kernels.dense_backward(x.data, w.data, out, np.ascontiguousarray(g), act)
        return gx, gw, gb

    return apply_op(f"dense[{activation}]", out, (x, w, b), vjp)


def segment_log_softmax(a, bounds):
    """Log-softmax over each column block ``[bounds[i], bounds[i+1])`` of a 2-D tensor."""
    bounds = np.asarray(bounds, dtype=np.int64)
    if bounds[0] != 0 or bounds[-1] != a.shape[1]:
        raise ShapeError("segment bounds must cover all columns")
    out = kernels.segment_log_softmax(a.data, bounds)
    return apply_op("segment_log_softmax", out, (a,),
                    lambda g: (kernels.segment_log_softmax_backward(out, np.ascontiguousarray(g), bounds),))


def log_softmax(a):
    return segment_log_softmax(a, [0, a.shape[1]])


def softmax(a):
    return exp(log_softmax(a))


# ---------------------------------------------------------------- gradient checking

@dataclass
class GradCheckReport:
    passed: bool
    max_rel_error: float
    worst_input: int
    worst_index: tuple
    n_points: int
    tolerance: float

    def __str__(self):
        verdict = "pass" if self.passed else "FAIL"
        return (f"grad_check {verdict}: max rel err {self.max_rel_error:.3e} "
                f"(input {self.worst_input}, index {self.worst_index}) over {self.n_points} points")


def _forward_checked(builder, leaves):
    with Tape() as tape:
        out = builder(*leaves)
    if not np.all(np.isfinite(out.data)):
        bad = next((r.op for r in tape.records if not np.all(np.isfinite(r.out.data))), "output")
        raise NumericError(f"non-finite value produced by op {bad!r}")
    return tape, out


def grad_check(builder, sampler, tolerance=1e-4, n_points=100, seed=0, h=1e-6, floor=1e-3):
    """Compare reverse-mode gradients with central finite differences.

    ``builder(*tensors)`` returns a tensor of any shape; it is reduced to
    a scalar with a random projection drawn per point. ``sampler(rng)``
    returns the list of input arrays. The error of a coordinate is
    ``|ad - fd| / max(|fd|, floor)``.
    """
    if tolerance <= 0:
        raise ContractError("tolerance must be positive")
    rng = np.random.default_rng(seed)
    worst = (0.0, 0, ())
    for _ in range(n_points):
        arrays = [np.array(a, dtype=np.float64) for a in sampler(rng)]
        leaves = [Tensor(a.copy(), requires_grad=True) for a in arrays]
        tape, out = _forward_checked(builder, leaves)
        proj = rng.uniform(-1.0, 1.0, size=out.shape)
        with tape:
            loss = sum_(mul(out, proj))
        backward(tape, loss)

        def f(vals):
            with Tape():
                o = builder(*[Tensor(v) for v in vals])
            return float(np.sum(o.data * proj))

        for i, a in enumerate(arrays):
            ad = leaves[i].grad if leaves[i].grad is not None else np.zeros_like(a)
            for idx in np.ndindex(a.shape):
                plus = [v.copy() for v in arrays]
                minus = [v.copy() for v in arrays]
                plus[i][idx] += h
                minus[i][idx] -= h
                fd = (f(plus) - f(minus)) / (2.0 * h)
                err = abs(ad[idx] - fd) / max(abs(fd), floor)
                if err > worst[0]:
                    worst = (err, i, idx)
    return GradCheckReport(worst[0] < tolerance, worst[0], worst[1], worst[2], n_points, tolerance)
