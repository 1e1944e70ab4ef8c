"""Dense tensors with reverse-mode automatic differentiation.

Each :class:`Function` computes its forward pass on raw numpy arrays but writes
its backward pass with other tracked :class:`Tensor` operations.  When a
backward pass runs with graph recording enabled (``create_graph=True``) the
resulting gradients are themselves differentiable, which is how the R1 penalty
obtains second-order terms without a separate double-backward code path.

Broadcasting is restricted to leading-axis expansion: an operand may be
promoted only when its shape is a suffix of the other operand's shape.  Any
other broadcast has to be spelled out with :meth:`Tensor.expand`.
"""

from __future__ import annotations

import contextlib
import math
import os
import weakref
from typing import Iterable, Sequence

import numpy as np

from .errors import ContractError, DomainError, ShapeError

_default_dtype = np.float64 if os.environ.get("OMNIMIXER_FLOAT64") == "1" else np.float32
_grad_enabled = True
_mac_counter: list[int] = []


def get_default_dtype() -> type:
    return _default_dtype


def set_default_dtype(dtype) -> None:
    global _default_dtype
    dtype = np.dtype(dtype).type
    if dtype not in (np.float32, np.float64):
        raise ValueError(f"unsupported dtype {dtype!r}; use float32 or float64")
    _default_dtype = dtype


@contextlib.contextmanager
def precision(dtype):
    """Temporarily switch the dtype used for newly created tensors."""
    previous = _default_dtype
    set_default_dtype(dtype)
    try:
        yield
    finally:
        set_default_dtype(previous)


def float64():
    """Shorthand for ``precision(np.float64)``; used by gradient checks."""
    return precision(np.float64)


@contextlib.contextmanager
def _grad_mode(enabled: bool):
    global _grad_enabled
    previous = _grad_enabled
    _grad_enabled = enabled
    try:
        yield
    finally:
        _grad_enabled = previous


def no_grad():
    return _grad_mode(False)


def enable_grad():
    return _grad_mode(True)


def is_grad_enabled() -> bool:
    return _grad_enabled


@contextlib.contextmanager
def count_macs():
    """Count multiply-accumulates executed by matmul and convolution kernels.

    Yields a one-element list whose entry holds the running total.
    """
    _mac_counter.append(0)
    box = [0]
    try:
        yield box
    finally:
        box[0] = _mac_counter.pop()


def _add_macs(n: int) -> None:
    if _mac_counter:
        _mac_counter[-1] += int(n)


class Tensor:
    """N-dimensional array with optional gradient tracking.

    ``data`` is a numpy array (row-major).  ``grad`` is filled by
    :func:`backward` for tensors created with ``requires_grad=True`` and has the
    same shape as ``data``.
    """

    __slots__ = ("data", "requires_grad", "grad", "_ctx", "__weakref__")
    __array_priority__ = 1000

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        if isinstance(data, Tensor):
            data = data.data
        self.data = np.array(data, dtype=dtype or _default_dtype)
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None
        self._ctx: Function | None = None

    @classmethod
    def _wrap(cls, arr, requires_grad: bool = False) -> "Tensor":
        obj = cls.__new__(cls)
        obj.data = arr if isinstance(arr, np.ndarray) else np.asarray(arr)
        obj.requires_grad = requires_grad
        obj.grad = None
        obj._ctx = None
        return obj

    # --- introspection -------------------------------------------------
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
        return self._ctx is None

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return self.data.item()

    def detach(self) -> "Tensor":
        return Tensor._wrap(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}{flag})"

    def __len__(self) -> int:
        return self.shape[0]

    # --- arithmetic ----------------------------------------------------
    def __add__(self, other):
        if _is_number(other):
            return AddConst.apply(self, c=float(other))
        return Add.apply(*_broadcast_pair(self, other))

    def __radd__(self, other):
        return self.__add__(other)

    def __sub__(self, other):
        if _is_number(other):
            return AddConst.apply(self, c=-float(other))
        return Sub.apply(*_broadcast_pair(self, other))

    def __rsub__(self, other):
        if _is_number(other):
            return AddConst.apply(Neg.apply(self), c=float(other))
        return Sub.apply(*_broadcast_pair(_as_tensor(other, self), self))

    def __mul__(self, other):
        if _is_number(other):
            return Scale.apply(self, c=float(other))
        return Mul.apply(*_broadcast_pair(self, other))

    def __rmul__(self, other):
        return self.__mul__(other)

    def __truediv__(self, other):
        if _is_number(other):
            return Scale.apply(self, c=1.0 / float(other))
        return Div.apply(*_broadcast_pair(self, other))

    def __rtruediv__(self, other):
        return Div.apply(*_broadcast_pair(_as_tensor(other, self), self))

    def __neg__(self):
        return Neg.apply(self)

    def __pow__(self, p):
        if not _is_number(p):
            raise TypeError("only scalar exponents are supported")
        return Pow.apply(self, p=float(p))

    def __matmul__(self, other):
        return matmul(self, other)

    # --- shape ---------------------------------------------------------
    def reshape(self, *shape) -> "Tensor":
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return Reshape.apply(self, shape=tuple(shape))

    def transpose(self, *axes) -> "Tensor":
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        if not axes:
            axes = tuple(reversed(range(self.ndim)))
        return Transpose.apply(self, axes=tuple(axes))

    @property
    def T(self) -> "Tensor":
        return self.transpose()

    def expand(self, *shape) -> "Tensor":
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        shape = tuple(shape)
        if shape == self.shape:
            return self
        return Expand.apply(self, shape=shape)

    def sum(self, axis=None, keepdims: bool = False) -> "Tensor":
        return Sum.apply(self, axis=_norm_axis(axis, self.ndim), keepdims=keepdims)

    def mean(self, axis=None, keepdims: bool = False) -> "Tensor":
        axes = _norm_axis(axis, self.ndim)
        n = math.prod(self.shape[a] for a in axes)
        return self.sum(axes, keepdims) * (1.0 / n)

    def backward(self, retain_graph: bool = False, inputs: Sequence["Tensor"] | None = None):
        backward(self, retain_graph=retain_graph, inputs=inputs)


def _is_number(x) -> bool:
    return isinstance(x, (int, float, np.integer, np.floating)) and not isinstance(x, bool)


def _as_tensor(x, like: Tensor | None = None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    dtype = like.dtype if like is not None else _default_dtype
    return Tensor._wrap(np.asarray(x, dtype=dtype))


def as_tensor(x, requires_grad: bool = False) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(x, requires_grad=requires_grad)


def zeros(shape, requires_grad: bool = False) -> Tensor:
    return Tensor(np.zeros(shape), requires_grad=requires_grad)


def ones(shape, requires_grad: bool = False) -> Tensor:
    return Tensor(np.ones(shape), requires_grad=requires_grad)


def _norm_axis(axis, ndim: int) -> tuple[int, ...]:
    if axis is None:
        return tuple(range(ndim))
    if isinstance(axis, int):
        axis = (axis,)
    return tuple(sorted(a % ndim for a in axis))


def _broadcast_pair(a, b) -> tuple[Tensor, Tensor]:
    if not isinstance(a, Tensor):
        a = _as_tensor(a, b)
    if not isinstance(b, Tensor):
        b = _as_tensor(b, a)
    if a.shape == b.shape:
        return a, b
    if b.ndim <= a.ndim and a.shape[a.ndim - b.ndim:] == b.shape:
        return a, b.expand(a.shape)
    if a.ndim <= b.ndim and b.shape[b.ndim - a.ndim:] == a.shape:
        return a.expand(b.shape), b
    raise ShapeError(
        f"cannot broadcast shapes {a.shape} and {b.shape}: only leading-axis "
        "expansion is implicit, use expand() for anything else"
    )


# ----------------------------------------------------------------------
# autograd engine
# ----------------------------------------------------------------------


class Function:
    """One node of the gradient graph.

    Subclasses implement ``forward(*arrays) -> array`` and
    ``backward(grad: Tensor) -> tuple[Tensor | None, ...]``.  Keyword arguments
    given to :meth:`apply` become attributes before ``forward`` runs.
    """

    inputs: tuple[Tensor, ...] = ()
    released = False

    @classmethod
    def apply(cls, *inputs: Tensor, **params) -> Tensor:
        fn = cls()
        for k, v in params.items():
            setattr(fn, k, v)
        out = Tensor._wrap(fn.forward(*(t.data for t in inputs)))
        if _grad_enabled and any(t.requires_grad for t in inputs):
            out.requires_grad = True
            out._ctx = fn
            fn.inputs = inputs
            fn._out = weakref.ref(out)
        return out

    @property
    def output(self) -> Tensor:
        return self._out()

    def forward(self, *arrays):  # pragma: no cover - abstract
        raise NotImplementedError

    def backward(self, g: Tensor):  # pragma: no cover - abstract
        raise NotImplementedError

    def release(self) -> None:
        self.inputs = ()
        self.released = True


def _topo_order(root: Tensor) -> list[Tensor]:
    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
    while stack:
        node, done = stack.pop()
        if done:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        ctx = node._ctx
        if ctx is None:
            continue
        if ctx.released:
            raise ContractError(
                "gradient graph was already consumed by a previous backward(); "
                "re-run the forward pass"
            )
        for parent in ctx.inputs:
            if parent.requires_grad and id(parent) not in seen:
                stack.append((parent, False))
    return order


def _propagate(root: Tensor, seed: Tensor, keep: set[int], create_graph: bool,
               retain_graph: bool) -> dict[int, Tensor]:
    order = _topo_order(root)
    grads: dict[int, Tensor] = {id(root): seed}
    with _grad_mode(create_graph):
        for node in reversed(order):
            ctx = node._ctx
            g = grads.get(id(node))
            if ctx is None or g is None:
                continue
            in_grads = ctx.backward(g)
            for inp, ig in zip(ctx.inputs, in_grads):
                if ig is None or not inp.requires_grad:
                    continue
                if ig.shape != inp.shape:
                    raise ShapeError(
                        f"{type(ctx).__name__}.backward produced gradient of shape "
                        f"{ig.shape} for input of shape {inp.shape}"
                    )
                prev = grads.get(id(inp))
                grads[id(inp)] = ig if prev is None else prev + ig
            if not retain_graph:
                ctx.release()
            if id(node) not in keep:
                del grads[id(node)]
    return grads


def _check_scalar(t: Tensor, what: str) -> None:
    if t.size != 1:
        raise ContractError(f"{what} needs a scalar tensor, got shape {t.shape}")


def backward(loss: Tensor, retain_graph: bool = False,
             inputs: Sequence[Tensor] | None = None) -> None:
    """Accumulate d(loss)/d(leaf) into ``leaf.grad`` for every tracked leaf.

    Tensors listed in ``inputs`` always receive a gradient, an all-zero one when
    ``loss`` does not depend on them.  The graph is released afterwards unless
    ``retain_graph`` is set.
    """
    _check_scalar(loss, "backward()")
    if not loss.requires_grad:
        raise ContractError("backward() called on a tensor that does not require grad")
    order = _topo_order(loss)
    leaves = [n for n in order if n._ctx is None]
    keep = {id(n) for n in leaves}
    seed = Tensor._wrap(np.ones(loss.shape, dtype=loss.dtype))
    grads = _propagate(loss, seed, keep, create_graph=False, retain_graph=retain_graph)
    targets = list(leaves)
    if inputs is not None:
        targets += [t for t in inputs if id(t) not in keep]
    for leaf in targets:
        g = grads.get(id(leaf))
        arr = np.zeros(leaf.shape, dtype=leaf.dtype) if g is None else g.data
        leaf.grad = arr.copy() if leaf.grad is None else leaf.grad + arr


def grad(output: Tensor, inputs: Tensor | Sequence[Tensor], create_graph: bool = True,
         retain_graph: bool | None = None):
    """Return d(output)/d(inputs) as tensors without touching ``.grad``.

    With ``create_graph`` the returned tensors participate in the graph and can
    be differentiated again.  An input that ``output`` does not reach gets an
    all-zero tensor.
    """
    _check_scalar(output, "grad()")
    single = isinstance(inputs, Tensor)
    xs = [inputs] if single else list(inputs)
    if retain_graph is None:
        retain_graph = create_graph
    result = []
    if output.requires_grad:
        seed = Tensor._wrap(np.ones(output.shape, dtype=output.dtype))
        grads = _propagate(output, seed, {id(x) for x in xs}, create_graph, retain_graph)
    else:
        grads = {}
    for x in xs:
        g = grads.get(id(x))
        result.append(g if g is not None else Tensor._wrap(np.zeros(x.shape, dtype=x.dtype)))
    return result[0] if single else result


def grad_of_output_wrt_input(d_out: Tensor, x: Tensor) -> Tensor:
    """Differentiable gradient of a scalar with respect to ``x``."""
    return grad(d_out, x, create_graph=True)


# ----------------------------------------------------------------------
# elementwise primitives
# ----------------------------------------------------------------------


class Add(Function):
    def forward(self, a, b):
        return a + b

    def backward(self, g):
        return g, g


class Sub(Function):
    def forward(self, a, b):
        return a - b

    def backward(self, g):
        return g, -g


class Mul(Function):
    def forward(self, a, b):
        return a * b

    def backward(self, g):
        a, b = self.inputs
        return g * b, g * a


class Div(Function):
    def forward(self, a, b):
        return a / b

    def backward(self, g):
        a, b = self.inputs
        gb = None
        if b.requires_grad:
            gb = -(g * a) / (b * b)
        return g / b, gb


class Neg(Function):
    def forward(self, a):
        return -a

    def backward(self, g):
        return (-g,)


class Scale(Function):
    c: float

    def forward(self, a):
        return a * self.c

    def backward(self, g):
        return (g * self.c,)


class AddConst(Function):
    c: float

    def forward(self, a):
        return a + self.c

    def backward(self, g):
        return (g,)


class Pow(Function):
    p: float

    def forward(self, a):
        return a ** self.p

    def backward(self, g):
        (x,) = self.inputs
        return (g * (x ** (self.p - 1.0) * self.p),)


class Exp(Function):
    def forward(self, a):
        return np.exp(a)

    def backward(self, g):
        return (g * self.output,)


class Log(Function):
    def forward(self, a):
        if np.any(a <= 0):
            raise DomainError(
                "log of a non-positive value; use the softplus forms in omnimixer.losses"
            )
        return np.log(a)

    def backward(self, g):
        return (g / self.inputs[0],)


def _sigmoid(a):
    # branch-free and overflow-free logistic
    e = np.exp(-np.abs(a))
    return np.where(a >= 0, 1.0 / (1.0 + e), e / (1.0 + e)).astype(a.dtype, copy=False)


class Sigmoid(Function):
    def forward(self, a):
        return _sigmoid(a)

    def backward(self, g):
        y = self.output
        return (g * (y * (1.0 - y)),)


class Tanh(Function):
    def forward(self, a):
        return np.tanh(a)

    def backward(self, g):
        y = self.output
        return (g * (1.0 - y * y),)


class Softplus(Function):
    """log(1 + exp(x)), evaluated without overflow."""

    def forward(self, a):
        return np.logaddexp(0.0, a).astype(a.dtype, copy=False)

    def backward(self, g):
        return (g * Sigmoid.apply(self.inputs[0]),)


class Abs(Function):
    def forward(self, a):
        self.sign = np.sign(a)
        return np.abs(a)

    def backward(self, g):
        return (g * Tensor._wrap(self.sign),)


_GELU_C = math.sqrt(2.0 / math.pi)
_GELU_K = 0.044715


def _gelu_parts(x):
    x2 = x * x
    u = _GELU_C * x * (1.0 + _GELU_K * x2)
    t = np.tanh(u)
    du = _GELU_C * (1.0 + 3.0 * _GELU_K * x2)
    return t, du


class Gelu(Function):
    """GELU, tanh approximation."""

    def forward(self, a):
        t = np.tanh(_GELU_C * a * (1.0 + _GELU_K * a * a))
        return 0.5 * a * (1.0 + t)

    def backward(self, g):
        return (g * GeluPrime.apply(self.inputs[0]),)


class GeluPrime(Function):
    def forward(self, x):
        t, du = _gelu_parts(x)
        return 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * du

    def backward(self, g):
        return (g * GeluSecond.apply(self.inputs[0]),)


class GeluSecond(Function):
    def forward(self, x):
        t, du = _gelu_parts(x)
        ddu = _GELU_C * 6.0 * _GELU_K * x
        return (1.0 - t * t) * (du + 0.5 * x * (ddu - 2.0 * t * du * du))

    def backward(self, g):
        raise ContractError("third-order derivatives of gelu are not implemented")


# ----------------------------------------------------------------------
# shape primitives
# ----------------------------------------------------------------------


class Reshape(Function):
    shape: tuple

    def forward(self, a):
        self.in_shape = a.shape
        return a.reshape(self.shape)

    def backward(self, g):
        return (g.reshape(self.in_shape),)


class Transpose(Function):
    axes: tuple

    def forward(self, a):
        return a.transpose(self.axes)

    def backward(self, g):
        return (g.transpose(tuple(np.argsort(self.axes))),)


class Expand(Function):
    shape: tuple

    def forward(self, a):
        self.in_shape = a.shape
        try:
            return np.broadcast_to(a, self.shape)
        except ValueError:
            raise ShapeError(f"cannot expand {a.shape} to {self.shape}") from None

    def backward(self, g):
        return (SumTo.apply(g, shape=self.in_shape),)


class SumTo(Function):
    """Reduce a broadcast result back to ``shape`` (adjoint of :class:`Expand`)."""

    shape: tuple

    def forward(self, a):
        self.in_shape = a.shape
        lead = a.ndim - len(self.shape)
        axes = tuple(range(lead)) + tuple(
            lead + i for i, n in enumerate(self.shape) if n == 1 and a.shape[lead + i] != 1
        )
        out = a.sum(axis=axes, keepdims=True) if axes else a
        return out.reshape(self.shape)

    def backward(self, g):
        return (g.expand(self.in_shape),)


class Sum(Function):
    axis: tuple
    keepdims: bool

    def forward(self, a):
        self.in_shape = a.shape
        return np.asarray(a.sum(axis=self.axis, keepdims=self.keepdims))

    def backward(self, g):
        kept = tuple(1 if i in self.axis else n for i, n in enumerate(self.in_shape))
        return (g.reshape(kept).expand(self.in_shape),)


class Narrow(Function):
    """Slice ``[start, start + length)`` along ``axis``."""

    axis: int
    start: int
    length: int

    def forward(self, a):
        self.extent = a.shape[self.axis]
        idx = [slice(None)] * a.ndim
        idx[self.axis] = slice(self.start, self.start + self.length)
        return a[tuple(idx)]

    def backward(self, g):
        after = self.extent - self.start - self.length
        return (PadAxis.apply(g, axis=self.axis, before=self.start, after=after),)


class PadAxis(Function):
    """Zero-pad along one axis (adjoint of :class:`Narrow`)."""

    axis: int
    before: int
    after: int

    def forward(self, a):
        width = [(0, 0)] * a.ndim
        width[self.axis] = (self.before, self.after)
        self.length = a.shape[self.axis]
        return np.pad(a, width)

    def backward(self, g):
        return (Narrow.apply(g, axis=self.axis, start=self.before, length=self.length),)


class Concat(Function):
    axis: int

    def forward(self, *arrays):
        self.sizes = [a.shape[self.axis] for a in arrays]
        return np.concatenate(arrays, axis=self.axis)

    def backward(self, g):
        out, start = [], 0
        for n in self.sizes:
            out.append(Narrow.apply(g, axis=self.axis, start=start, length=n))
            start += n
        return tuple(out)


class Roll(Function):
    """Circular shift along ``axis``; ``shifts`` is a scalar or one value per leading index."""

    shifts: object
    axis: int

    def forward(self, a):
        s = np.asarray(self.shifts)
        if s.ndim == 0:
            return np.roll(a, int(s), axis=self.axis)
        ax = self.axis % a.ndim - 1
        return np.stack([np.roll(a[i], int(k), axis=ax) for i, k in enumerate(s)])

    def backward(self, g):
        return (Roll.apply(g, shifts=-np.asarray(self.shifts), axis=self.axis),)


class Flip(Function):
    axes: tuple

    def forward(self, a):
        return np.flip(a, self.axes).copy()

    def backward(self, g):
        return (Flip.apply(g, axes=self.axes),)


class TakeRows(Function):
    """``table[index]`` along axis 0 (embedding lookup)."""

    index: np.ndarray

    def forward(self, table):
        self.rows = table.shape[0]
        return table[self.index]

    def backward(self, g):
        return (IndexAddRows.apply(g, index=self.index, rows=self.rows),)


class IndexAddRows(Function):
    index: np.ndarray
    rows: int

    def forward(self, g):
        out = np.zeros((self.rows,) + g.shape[self.index.ndim:], dtype=g.dtype)
        np.add.at(out, self.index, g)
        return out

    def backward(self, g):
        return (TakeRows.apply(g, index=self.index),)


class MatMul(Function):
    """``a[..., m, k] @ b[k, n]``."""

    def forward(self, a, b):
        k, n = b.shape
        _add_macs(a.size * n)
        # one GEMM over all leading axes is far faster than a broadcast batch
        return (a.reshape(-1, k) @ b).reshape(a.shape[:-1] + (n,))

    def backward(self, g):
        a, b = self.inputs
        ga = gb = None
        if a.requires_grad:
            ga = MatMul.apply(g, b.transpose(1, 0))
        if b.requires_grad:
            k, n = b.shape
            gb = a.reshape(-1, k).transpose(1, 0) @ g.reshape(-1, n)
        return ga, gb


# ----------------------------------------------------------------------
# functional surface
# ----------------------------------------------------------------------


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if b.ndim != 2 or a.ndim < 2:
        raise ShapeError(f"matmul expects a[..., m, k] @ b[k, n], got {a.shape} and {b.shape}")
    if a.shape[-1] != b.shape[0]:
        raise ShapeError(
            f"matmul inner dimensions differ: a has shape {a.shape}, b has shape {b.shape}"
        )
    return MatMul.apply(a, b)


def gelu(x: Tensor) -> Tensor:
    return Gelu.apply(x)


def tanh(x: Tensor) -> Tensor:
    return Tanh.apply(x)


def sigmoid(x: Tensor) -> Tensor:
    return Sigmoid.apply(x)


def log(x: Tensor) -> Tensor:
    return Log.apply(x)


def exp(x: Tensor) -> Tensor:
    return Exp.apply(x)


def softplus(x: Tensor) -> Tensor:
    return Softplus.apply(x)


def absolute(x: Tensor) -> Tensor:
    return Abs.apply(x)


def concat(tensors: Iterable[Tensor], axis: int = 0) -> Tensor:
    tensors = list(tensors)
    ndim = tensors[0].ndim
    axis %= ndim
    for t in tensors[1:]:
        if t.ndim != ndim or any(t.shape[i] != tensors[0].shape[i] for i in range(ndim) if i != axis):
            raise ShapeError(
                f"concat along axis {axis}: shapes {[x.shape for x in tensors]} disagree"
            )
    return Concat.apply(*tensors, axis=axis)


def narrow(x: Tensor, axis: int, start: int, length: int) -> Tensor:
    return Narrow.apply(x, axis=axis % x.ndim, start=start, length=length)


def roll(x: Tensor, shifts, axis: int = -1) -> Tensor:
    """Circular shift; ``shifts`` may hold one shift per entry of axis 0."""
    s = np.asarray(shifts, dtype=np.int64)
    if s.ndim == 0:
        s = s % x.shape[axis]
    elif s.shape != (x.shape[0],):
        raise ShapeError(f"per-sample shifts {s.shape} do not match batch {x.shape[0]}")
    return Roll.apply(x, shifts=s, axis=axis)


def flip(x: Tensor, axes) -> Tensor:
    if isinstance(axes, int):
        axes = (axes,)
    return Flip.apply(x, axes=tuple(axes))


def take_rows(table: Tensor, index) -> Tensor:
    return TakeRows.apply(table, index=np.asarray(index, dtype=np.int64))


_UNARY = {"gelu": gelu, "tanh": tanh, "log": log, "sigmoid": sigmoid, "abs": absolute,
          "exp": exp, "softplus": softplus, "neg": lambda x: -x}
_BINARY = {"add": lambda a, b: a + b, "sub": lambda a, b: a - b, "mul": lambda a, b: a * b,
           "div": lambda a, b: a / b}


def elementwise(x: Tensor, op: str, other=None) -> Tensor:
    """Dispatch an elementwise op by name (``scale`` takes a number as ``other``)."""
    if op == "scale":
        return x * float(other)
    if op in _UNARY:
        return _UNARY[op](x)
    if op in _BINARY:
        return _BINARY[op](x, other)
    raise ValueError(f"unknown elementwise op {op!r}")
