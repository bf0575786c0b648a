"""Dense tensors with reverse-mode automatic differentiation.

Every differentiable operation is a :class:`Function`. Calling ``apply`` runs the
forward computation on numpy arrays and, when gradients are enabled and some
input requires them, links the result to the op that produced it. The links
form the tape: a DAG that :func:`grad` and :func:`backward` walk in reverse
topological order.

Backward rules are written in terms of tensor ops themselves, so running them
with ``create_graph=True`` records a second tape that can be differentiated
again. Ops whose backward drops to raw numpy set ``higher_order = False`` and
refuse to participate in a create_graph pass.
"""

from __future__ import annotations

import contextlib
import threading
import weakref
from typing import Iterable, Sequence

import numpy as np

from .errors import ContractError, DimensionError, NumericError, SecondOrderError

_FLOATS = (np.float32, np.float64)


class _Mode(threading.local):
    def __init__(self):
        self.grad_enabled = True
        self.check_finite = True


_mode = _Mode()


def is_grad_enabled() -> bool:
    return _mode.grad_enabled


@contextlib.contextmanager
def set_grad_enabled(flag: bool):
    prev = _mode.grad_enabled
    _mode.grad_enabled = flag
    try:
        yield
    finally:
        _mode.grad_enabled = prev


def no_grad():
    return set_grad_enabled(False)


@contextlib.contextmanager
def finite_checks(flag: bool):
    """Toggle the per-op NaN/Inf check (on by default)."""
    prev = _mode.check_finite
    _mode.check_finite = flag
    try:
        yield
    finally:
        _mode.check_finite = prev


def _as_array(data, dtype=None) -> np.ndarray:
    arr = np.asarray(data, dtype=dtype)
    if arr.dtype not in _FLOATS:
        arr = arr.astype(np.float64)
    return arr


class Tensor:
    """An n-dimensional float32/float64 array that can sit on the tape."""

    __slots__ = ("data", "requires_grad", "grad", "_node", "__weakref__")
    __array_priority__ = 1000

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        self.data = _as_array(data, dtype)
        self.requires_grad = requires_grad
        self.grad: Tensor | None = None
        self._node: Function | None = None

    # -- introspection -------------------------------------------------
    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def is_leaf(self) -> bool:
        return self._node is None

    def __len__(self):
        return self.data.shape[0]

    def __repr__(self):
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}{flag})"

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.size == 1 else _raise_item(self)

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def zero_grad(self):
        self.grad = None

    def backward(self, create_graph: bool = False):
        backward(self, create_graph=create_graph)

    # -- arithmetic ----------------------------------------------------
    def _wrap(self, other) -> "Tensor":
        if isinstance(other, Tensor):
            return other
        return Tensor(np.asarray(other, dtype=self.dtype))

    def __add__(self, other):
        if np.isscalar(other):
            return AddScalar.apply(self, c=float(other))
        return Add.apply(self, self._wrap(other))

    __radd__ = __add__

    def __sub__(self, other):
        if np.isscalar(other):
            return AddScalar.apply(self, c=-float(other))
        return Add.apply(self, Neg.apply(self._wrap(other)))

    def __rsub__(self, other):
        if np.isscalar(other):
            return AddScalar.apply(Neg.apply(self), c=float(other))
        return Add.apply(self._wrap(other), Neg.apply(self))

    def __neg__(self):
        return Neg.apply(self)

    def __mul__(self, other):
        if np.isscalar(other):
            return Scale.apply(self, c=float(other))
        return Mul.apply(self, self._wrap(other))

    __rmul__ = __mul__

    def __truediv__(self, other):
        if np.isscalar(other):
            return Scale.apply(self, c=1.0 / float(other))
        return Div.apply(self, self._wrap(other))

    def __rtruediv__(self, other):
        return Div.apply(self._wrap(other), self)

    def __pow__(self, p):
        if not np.isscalar(p):
            raise ContractError("only scalar exponents are supported")
        return Pow.apply(self, p=float(p))

    def __matmul__(self, other):
        return matmul(self, self._wrap(other))

    def __getitem__(self, key):
        return GetItem.apply(self, key=key)

    # -- reductions and shape ------------------------------------------
    def sum(self, axis=None, keepdims: bool = False):
        return Sum.apply(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims: bool = False):
        n = self.size if axis is None else int(np.prod([self.shape[a] for a in _axes(axis, self.ndim)]))
        return Scale.apply(self.sum(axis, keepdims), c=1.0 / n)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return Reshape.apply(self, shape=shape)

    def transpose(self, *axes):
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        if not axes:
            axes = tuple(reversed(range(self.ndim)))
        return Transpose.apply(self, axes=axes)

    @property
    def T(self):
        return self.transpose()

    def swapaxes(self, a: int, b: int):
        axes = list(range(self.ndim))
        axes[a], axes[b] = axes[b], axes[a]
        return self.transpose(tuple(axes))

    def broadcast_to(self, shape):
        return broadcast_to(self, shape)

    # -- elementwise ---------------------------------------------------
    def exp(self):
        return Exp.apply(self)

    def log(self):
        return Log.apply(self)

    def tanh(self):
        return Tanh.apply(self)

    def sigmoid(self):
        return Sigmoid.apply(self)

    def relu(self):
        return ReLU.apply(self)

    def sqrt(self):
        return Sqrt.apply(self)


def _raise_item(t):
    raise ContractError(f"item() needs a single-element tensor, got shape {t.shape}")


def _axes(axis, ndim) -> tuple[int, ...]:
    if axis is None:
        return tuple(range(ndim))
    if isinstance(axis, int):
        axis = (axis,)
    return tuple(a % ndim for a in axis)


def as_tensor(x, dtype=None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(x, dtype=dtype)


class Function:
    """One recorded operation: forward on arrays, backward on tensors."""

    higher_order = True

    def __init__(self):
        self.inputs: tuple[Tensor, ...] = ()
        self.needs: tuple[bool, ...] = ()
        self._out = None

    @property
    def output(self) -> Tensor:
        return self._out()

    def forward(self, *arrays, **kwargs) -> np.ndarray:
        raise NotImplementedError

    def backward(self, g: Tensor) -> Sequence[Tensor | None]:
        raise NotImplementedError

    @classmethod
    def apply(cls, *inputs: Tensor, **kwargs) -> Tensor:
        fn = cls()
        # overflow is reported below by name, not as a numpy warning
        with np.errstate(over="ignore", invalid="ignore", divide="ignore"):
            data = fn.forward(*(t.data for t in inputs), **kwargs)
        if _mode.check_finite and not np.isfinite(data).all():
            raise NumericError(f"non-finite output produced by {cls.__name__}")
        out = Tensor(data)
        if _mode.grad_enabled and any(t.requires_grad for t in inputs):
            out.requires_grad = True
            out._node = fn
            fn.inputs = inputs
            fn._out = weakref.ref(out)
        return out


# ---------------------------------------------------------------------------
# differentiation engine


def _toposort(roots: Iterable[Tensor]) -> list[Tensor]:
    order: list[Tensor] = []
    seen: set[int] = set()
    stack = [(r, False) for r in roots]
    while stack:
        t, done = stack.pop()
        if done:
            order.append(t)
            continue
        if id(t) in seen:
            continue
        seen.add(id(t))
        stack.append((t, True))
        if t._node is not None:
            for inp in t._node.inputs:
                if inp.requires_grad and id(inp) not in seen:
                    stack.append((inp, False))
    return order


def _run(roots, root_grads, targets, create_graph):
    order = _toposort(roots)
    target_ids = None if targets is None else {id(t) for t in targets}
    needed: dict[int, bool] = {}
    for t in order:
        if t._node is None:
            needed[id(t)] = t.requires_grad if target_ids is None else id(t) in target_ids
        else:
            hit = target_ids is not None and id(t) in target_ids
            needed[id(t)] = hit or any(needed.get(id(i), False) for i in t._node.inputs)

    grads: dict[int, Tensor] = {}
    for r, g in zip(roots, root_grads):
        grads[id(r)] = g if id(r) not in grads else grads[id(r)] + g
    results: dict[int, Tensor] = {}

    for t in reversed(order):
        g = grads.pop(id(t), None)
        if g is None:
            continue
        if target_ids is not None:
            if id(t) in target_ids:
                results[id(t)] = g
        elif t._node is None:
            if create_graph:
                t.grad = g if t.grad is None else t.grad + g
            else:
                t.grad = Tensor(g.data.copy()) if t.grad is None else Tensor(t.grad.data + g.data)
        node = t._node
        if node is None:
            continue
        needs = tuple(i.requires_grad and needed.get(id(i), False) for i in node.inputs)
        if not any(needs):
            continue
        if create_graph and not node.higher_order:
            raise SecondOrderError(f"{type(node).__name__} does not support create_graph")
        node.needs = needs
        with set_grad_enabled(create_graph):
            in_grads = node.backward(g)
            for inp, need, ig in zip(node.inputs, needs, in_grads):
                if not need or ig is None:
                    continue
                if not np.isfinite(ig.data).all():
                    raise NumericError(f"non-finite gradient produced by {type(node).__name__}.backward")
                prev = grads.get(id(inp))
                grads[id(inp)] = ig if prev is None else prev + ig
    return results


def backward(loss: Tensor, create_graph: bool = False):
    """Accumulate d(loss)/d(leaf) into ``leaf.grad`` for every leaf that requires grad."""
    if loss.size != 1 or loss.ndim != 0:
        raise ContractError(f"backward() needs a scalar loss, got shape {loss.shape}")
    if not loss.requires_grad:
        return
    _run([loss], [Tensor(np.ones_like(loss.data))], None, create_graph)


def grad(outputs, inputs, grad_outputs=None, create_graph: bool = False) -> list[Tensor | None]:
    """Return d(outputs)/d(inputs) without touching ``.grad`` fields."""
    outputs = [outputs] if isinstance(outputs, Tensor) else list(outputs)
    single = isinstance(inputs, Tensor)
    inputs = [inputs] if single else list(inputs)
    if grad_outputs is None:
        for o in outputs:
            if o.size != 1:
                raise ContractError(f"grad() needs scalar outputs or grad_outputs, got shape {o.shape}")
        grad_outputs = [Tensor(np.ones_like(o.data)) for o in outputs]
    live = [(o, g) for o, g in zip(outputs, grad_outputs) if o.requires_grad]
    res = _run([o for o, _ in live], [g for _, g in live], inputs, create_graph) if live else {}
    out = [res.get(id(t)) for t in inputs]
    return out[0] if single else out


# ---------------------------------------------------------------------------
# elementwise and broadcasting


def _sum_to_shape(arr: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if arr.shape == shape:
        return arr
    lead = arr.ndim - len(shape)
    axes = tuple(range(lead)) + tuple(
        i + lead for i, s in enumerate(shape) if s == 1 and arr.shape[i + lead] != 1
    )
    return arr.sum(axis=axes, keepdims=True).reshape(shape)


def _broadcast_shape(a, b):
    try:
        return np.broadcast_shapes(a, b)
    except ValueError:
        raise DimensionError(f"cannot broadcast shapes {a} and {b}") from None


class SumTo(Function):
    def forward(self, a, shape):
        self.in_shape = a.shape
        return _sum_to_shape(a, tuple(shape))

    def backward(self, g):
        return (broadcast_to(g, self.in_shape),)


class BroadcastTo(Function):
    def forward(self, a, shape):
        self.in_shape = a.shape
        _broadcast_shape(a.shape, tuple(shape))
        return np.ascontiguousarray(np.broadcast_to(a, shape))

    def backward(self, g):
        return (sum_to(g, self.in_shape),)


def sum_to(t: Tensor, shape) -> Tensor:
    shape = tuple(shape)
    return t if t.shape == shape else SumTo.apply(t, shape=shape)


def broadcast_to(t: Tensor, shape) -> Tensor:
    shape = tuple(shape)
    return t if t.shape == shape else BroadcastTo.apply(t, shape=shape)


class Add(Function):
    def forward(self, a, b):
        _broadcast_shape(a.shape, b.shape)
        return a + b

    def backward(self, g):
        a, b = self.inputs
        return (
            sum_to(g, a.shape) if self.needs[0] else None,
            sum_to(g, b.shape) if self.needs[1] else None,
        )


class AddScalar(Function):
    def forward(self, a, c):
        return a + a.dtype.type(c)

    def backward(self, g):
        return (g,)


class Neg(Function):
    def forward(self, a):
        return -a

    def backward(self, g):
        return (-g,)


class Scale(Function):
    def forward(self, a, c):
        self.c = c
        return a * a.dtype.type(c)

    def backward(self, g):
        return (g * self.c,)


class Mul(Function):
    def forward(self, a, b):
        _broadcast_shape(a.shape, b.shape)
        return a * b

    def backward(self, g):
        a, b = self.inputs
        return (
            sum_to(g * b, a.shape) if self.needs[0] else None,
            sum_to(g * a, b.shape) if self.needs[1] else None,
        )


class Div(Function):
    def forward(self, a, b):
        _broadcast_shape(a.shape, b.shape)
        return a / b

    def backward(self, g):
        a, b = self.inputs
        ga = sum_to(g / b, a.shape) if self.needs[0] else None
        gb = sum_to(-(g * a) / (b * b), b.shape) if self.needs[1] else None
        return ga, gb


class Pow(Function):
    def forward(self, a, p):
        self.p = p
        return a**p

    def backward(self, g):
        (a,) = self.inputs
        if self.p == 2.0:
            return (g * a * 2.0,)
        return (g * (a ** (self.p - 1.0)) * self.p,)


class Exp(Function):
    def forward(self, a):
        return np.exp(a)

    def backward(self, g):
        return (g * self.output,)


class Log(Function):
    def forward(self, a):
        if (a <= 0).any():
            raise NumericError("Log: input has a non-positive value")
        return np.log(a)

    def backward(self, g):
        return (g / self.inputs[0],)


class Sqrt(Function):
    def forward(self, a):
        return np.sqrt(a)

    def backward(self, g):
        return (g / (self.output * 2.0),)


class Tanh(Function):
    def forward(self, a):
        return np.tanh(a)

    def backward(self, g):
        y = self.output
        return (g * (1.0 - y * y),)


class Sigmoid(Function):
    def forward(self, a):
        # split by sign so exp never overflows
        out = np.empty_like(a)
        pos = a >= 0
        out[pos] = 1.0 / (1.0 + np.exp(-a[pos]))
        e = np.exp(a[~pos])
        out[~pos] = e / (1.0 + e)
        return out

    def backward(self, g):
        y = self.output
        return (g * y * (1.0 - y),)


class ReLU(Function):
    def forward(self, a):
        self.mask = (a > 0).astype(a.dtype)
        return a * self.mask

    def backward(self, g):
        return (g * Tensor(self.mask),)


class LeakyReLU(Function):
    def forward(self, a, slope):
        self.mask = np.where(a > 0, 1.0, slope).astype(a.dtype)
        return a * self.mask

    def backward(self, g):
        # the slope mask is piecewise constant, so this rule is itself differentiable
        return (g * Tensor(self.mask),)


# ---------------------------------------------------------------------------
# reductions, shape manipulation


class Sum(Function):
    def forward(self, a, axis, keepdims):
        self.in_shape = a.shape
        self.axis = axis
        self.keepdims = keepdims
        return np.asarray(a.sum(axis=axis, keepdims=keepdims))

    def backward(self, g):
        if not self.keepdims and self.axis is not None:
            kshape = list(self.in_shape)
            for ax in _axes(self.axis, len(self.in_shape)):
                kshape[ax] = 1
            g = g.reshape(tuple(kshape))
        elif self.axis is None:
            g = g.reshape((1,) * len(self.in_shape))
        return (broadcast_to(g, self.in_shape),)


class Reshape(Function):
    def forward(self, a, shape):
        self.in_shape = a.shape
        try:
            return a.reshape(shape)
        except ValueError:
            raise DimensionError(f"cannot reshape {a.shape} into {shape}") from None

    def backward(self, g):
        return (g.reshape(self.in_shape),)


class Transpose(Function):
    def forward(self, a, axes):
        self.axes = tuple(axes)
        return np.ascontiguousarray(a.transpose(self.axes))

    def backward(self, g):
        return (g.transpose(tuple(np.argsort(self.axes))),)


class GetItem(Function):
    def forward(self, a, key):
        self.key = key
        self.in_shape = a.shape
        return np.array(a[key])

    def backward(self, g):
        return (SetInto.apply(g, key=self.key, shape=self.in_shape),)


class SetInto(Function):
    """Scatter ``g`` into zeros of ``shape`` at ``key``: the adjoint of GetItem."""

    def forward(self, g, key, shape):
        self.key = key
        out = np.zeros(shape, dtype=g.dtype)
        out[key] = g
        return out

    def backward(self, u):
        return (u[self.key],)


class Concat(Function):
    def forward(self, *arrays, axis):
        ref = arrays[0].shape
        for a in arrays[1:]:
            if a.ndim != len(ref) or any(
                x != y for i, (x, y) in enumerate(zip(a.shape, ref)) if i != axis % len(ref)
            ):
                raise DimensionError(f"concat shape mismatch: {ref} vs {a.shape} on axis {axis}")
        self.axis = axis % arrays[0].ndim
        self.sizes = [a.shape[self.axis] for a in arrays]
        return np.concatenate(arrays, axis=self.axis)

    def backward(self, g):
        out, start = [], 0
        for size, need in zip(self.sizes, self.needs):
            if need:
                key = (slice(None),) * self.axis + (slice(start, start + size),)
                out.append(g[key])
            else:
                out.append(None)
            start += size
        return out


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    return Concat.apply(*tensors, axis=axis)


def stack(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    expanded = []
    for t in tensors:
        ax = axis % (t.ndim + 1)
        expanded.append(t.reshape(t.shape[:ax] + (1,) + t.shape[ax:]))
    return concat(expanded, axis=axis)


class MatMul(Function):
    def forward(self, a, b):
        if a.ndim < 2 or b.ndim < 2:
            raise DimensionError(f"matmul needs >=2-d operands, got {a.shape} and {b.shape}")
        if a.shape[-1] != b.shape[-2]:
            raise DimensionError(f"matmul inner dimensions differ: {a.shape} @ {b.shape}")
        return np.matmul(a, b)

    def backward(self, g):
        a, b = self.inputs
        ga = sum_to(matmul(g, b.swapaxes(-1, -2)), a.shape) if self.needs[0] else None
        gb = sum_to(matmul(a.swapaxes(-1, -2), g), b.shape) if self.needs[1] else None
        return ga, gb


def matmul(a: Tensor, b: Tensor) -> Tensor:
    return MatMul.apply(a, b)


# ---------------------------------------------------------------------------
# softmax family


class Softmax(Function):
    def forward(self, x, axis, mask):
        self.axis = axis
        if mask is None:
            z = x - x.max(axis=axis, keepdims=True)
            e = np.exp(z)
        else:
            mask = np.broadcast_to(mask, x.shape)
            if not mask.any(axis=axis).all():
                raise ContractError("softmax: every position along the axis is masked")
            z = np.where(mask, x, -np.inf)
            z = x - z.max(axis=axis, keepdims=True)
            e = np.where(mask, np.exp(np.where(mask, z, 0.0)), 0.0).astype(x.dtype)
        return e / e.sum(axis=axis, keepdims=True)

    def backward(self, g):
        y = self.output
        return (y * (g - (g * y).sum(axis=self.axis, keepdims=True)),)


class LogSoftmax(Function):
    def forward(self, x, axis):
        self.axis = axis
        z = x - x.max(axis=axis, keepdims=True)
        return z - np.log(np.exp(z).sum(axis=axis, keepdims=True))

    def backward(self, g):
        p = self.output.exp()
        return (g - p * g.sum(axis=self.axis, keepdims=True),)


def softmax(x: Tensor, axis: int = -1, mask: np.ndarray | None = None) -> Tensor:
    return Softmax.apply(x, axis=axis, mask=mask)


def log_softmax(x: Tensor, axis: int = -1) -> Tensor:
    return LogSoftmax.apply(x, axis=axis)


# ---------------------------------------------------------------------------
# convenience wrappers


def relu(x: Tensor) -> Tensor:
    return ReLU.apply(x)


def leaky_relu(x: Tensor, slope: float = 0.2) -> Tensor:
    return LeakyReLU.apply(x, slope=slope)


def tanh(x: Tensor) -> Tensor:
    return Tanh.apply(x)


def sigmoid(x: Tensor) -> Tensor:
    return Sigmoid.apply(x)


def exp(x: Tensor) -> Tensor:
    return Exp.apply(x)


def log(x: Tensor) -> Tensor:
    return Log.apply(x)


class SafeReciprocal(Function):
    """1/x with 1/0 := 0; used so norm derivatives vanish at the origin."""

    def forward(self, a):
        nz = a != 0
        out = np.zeros_like(a)
        np.divide(1.0, a, out=out, where=nz)
        return out

    def backward(self, g):
        r = self.output
        return (-(g * r * r),)


class Norm(Function):
    def forward(self, x, axis):
        self.axis = axis
        return np.sqrt((x * x).sum(axis=axis))

    def backward(self, g):
        (x,) = self.inputs
        kshape = list(x.shape)
        for ax in _axes(self.axis, x.ndim):
            kshape[ax] = 1
        scale = (g * SafeReciprocal.apply(self.output)).reshape(tuple(kshape))
        return (x * scale,)


def norm(x: Tensor, axis=None) -> Tensor:
    """Euclidean norm along ``axis``; its gradient at the origin is taken as 0."""
    return Norm.apply(x, axis=axis)


def zeros(shape, dtype=np.float32, requires_grad=False) -> Tensor:
    return Tensor(np.zeros(shape, dtype=dtype), requires_grad=requires_grad)


def ones(shape, dtype=np.float32, requires_grad=False) -> Tensor:
    return Tensor(np.ones(shape, dtype=dtype), requires_grad=requires_grad)
