"""Minimal dense reverse-mode automatic differentiation on numpy arrays.

Every value is a :class:`Tensor` wrapping a float64 ``numpy.ndarray``.  Operations
record their parents and a closure mapping the output cotangent to parent
cotangents; :func:`grad` walks the recorded graph in reverse topological order.

Derivatives with respect to network *inputs* that must themselves be
differentiated again (``du/dt`` inside a physics residual) are not obtained by
nesting reverse passes.  They are propagated forward alongside the primal values
with ordinary graph operations (see :func:`bofpinn.nn.mlp_forward_jvp`), so a
single reverse pass differentiates through them.
"""

from __future__ import annotations

from typing import Callable, Iterable, Sequence

import numpy as np

__all__ = [
    "Tensor",
    "tensor",
    "constant",
    "grad",
    "backward",
    "einsum",
    "concat",
    "stack",
    "where_const",
    "custom_op",
    "UnsupportedOperation",
]


class UnsupportedOperation(TypeError):
    """Raised when a graph contains something the engine cannot differentiate."""


def _as_array(value) -> np.ndarray:
    arr = np.asarray(value, dtype=np.float64)
    return arr


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum ``g`` down to ``shape`` after numpy broadcasting."""
    if g.shape == shape:
        return g
    ndim_extra = g.ndim - len(shape)
    if ndim_extra > 0:
        g = g.sum(axis=tuple(range(ndim_extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


class Tensor:
    __slots__ = ("data", "requires_grad", "_parents", "_backward", "op")

    __array_priority__ = 100.0

    def __init__(self, data, requires_grad=False, _parents=(), _backward=None, op="leaf"):
        self.data = data
        self.requires_grad = requires_grad
        self._parents = _parents
        self._backward = _backward
        self.op = op

    # -- basic properties -------------------------------------------------
    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float("nan")

    def numpy(self) -> np.ndarray:
        return self.data

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, op={self.op}, requires_grad={self.requires_grad})"

    def __len__(self) -> int:
        return self.data.shape[0]

    # -- graph construction helper ---------------------------------------
    @staticmethod
    def _make(data, parents, backward, op):
        rg = any(p.requires_grad for p in parents)
        if not rg:
            return Tensor(data, False, (), None, op)
        return Tensor(data, True, parents, backward, op)

    # -- arithmetic ------------------------------------------------------
    def __add__(self, other):
        other = _wrap(other)
        a, b = self, other

        def bw(g):
            return (_unbroadcast(g, a.shape) if a.requires_grad else None,
                    _unbroadcast(g, b.shape) if b.requires_grad else None)

        return Tensor._make(a.data + b.data, (a, b), bw, "add")

    __radd__ = __add__

    def __sub__(self, other):
        other = _wrap(other)
        a, b = self, other

        def bw(g):
            return (_unbroadcast(g, a.shape) if a.requires_grad else None,
                    _unbroadcast(-g, b.shape) if b.requires_grad else None)

        return Tensor._make(a.data - b.data, (a, b), bw, "sub")

    def __rsub__(self, other):
        return _wrap(other) - self

    def __mul__(self, other):
        other = _wrap(other)
        a, b = self, other

        def bw(g):
            return (_unbroadcast(g * b.data, a.shape) if a.requires_grad else None,
                    _unbroadcast(g * a.data, b.shape) if b.requires_grad else None)

        return Tensor._make(a.data * b.data, (a, b), bw, "mul")

    __rmul__ = __mul__

    def __truediv__(self, other):
        other = _wrap(other)
        a, b = self, other
        out = a.data / b.data

        def bw(g):
            ga = _unbroadcast(g / b.data, a.shape) if a.requires_grad else None
            gb = _unbroadcast(-g * out / b.data, b.shape) if b.requires_grad else None
            return ga, gb

        return Tensor._make(out, (a, b), bw, "div")

    def __rtruediv__(self, other):
        return _wrap(other) / self

    def __neg__(self):
        a = self
        return Tensor._make(-a.data, (a,), lambda g: (-g,), "neg")

    def __pow__(self, exponent):
        if isinstance(exponent, Tensor):
            raise UnsupportedOperation("tensor-valued exponents are not supported")
        p = float(exponent)
        a = self
        out = a.data ** p

        def bw(g):
            if p == 2.0:
                return (2.0 * a.data * g,)
            return (p * a.data ** (p - 1.0) * g,)

        return Tensor._make(out, (a,), bw, "pow")

    def __matmul__(self, other):
        other = _wrap(other)
        a, b = self, other

        def bw(g):
            ga = gb = None
            if a.requires_grad:
                if b.ndim == 1:
                    ga = np.multiply.outer(g, b.data) if a.ndim > 1 else g * b.data
                else:
                    ga = g @ np.swapaxes(b.data, -1, -2)
                ga = _unbroadcast(ga, a.shape)
            if b.requires_grad:
                if a.ndim == 1:
                    gb = np.multiply.outer(a.data, g)
                elif b.ndim == 1:
                    gb = np.swapaxes(a.data, -1, -2) @ g
                else:
                    gb = np.swapaxes(a.data, -1, -2) @ g
                gb = _unbroadcast(gb, b.shape)
            return ga, gb

        return Tensor._make(a.data @ b.data, (a, b), bw, "matmul")

    def __rmatmul__(self, other):
        return _wrap(other) @ self

    # -- elementwise functions ------------------------------------------
    def exp(self):
        a = self
        out = np.exp(a.data)
        return Tensor._make(out, (a,), lambda g: (g * out,), "exp")

    def sin(self):
        a = self
        return Tensor._make(np.sin(a.data), (a,), lambda g: (g * np.cos(a.data),), "sin")

    def cos(self):
        a = self
        return Tensor._make(np.cos(a.data), (a,), lambda g: (-g * np.sin(a.data),), "cos")

    def tanh(self):
        a = self
        out = np.tanh(a.data)
        return Tensor._make(out, (a,), lambda g: (g * (1.0 - out * out),), "tanh")

    def square(self):
        a = self
        return Tensor._make(a.data * a.data, (a,), lambda g: (2.0 * a.data * g,), "square")

    def sqrt(self):
        a = self
        out = np.sqrt(a.data)
        return Tensor._make(out, (a,), lambda g: (0.5 * g / out,), "sqrt")

    # -- reductions -----------------------------------------------------
    def sum(self, axis=None, keepdims=False):
        a = self
        out = a.data.sum(axis=axis, keepdims=keepdims)

        def bw(g):
            if axis is not None and not keepdims:
                g = np.expand_dims(g, axis)
            return (np.broadcast_to(g, a.shape),)

        return Tensor._make(np.asarray(out), (a,), bw, "sum")

    def mean(self, axis=None, keepdims=False):
        if axis is None:
            n = self.data.size
        else:
            axes = (axis,) if np.isscalar(axis) else tuple(axis)
            n = int(np.prod([self.data.shape[ax] for ax in axes]))
        return self.sum(axis=axis, keepdims=keepdims) * (1.0 / n)

    # -- shape manipulation ----------------------------------------------
    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        a = self
        return Tensor._make(a.data.reshape(shape), (a,), lambda g: (g.reshape(a.shape),), "reshape")

    def transpose(self, *axes):
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        if not axes:
            axes = tuple(reversed(range(self.ndim)))
        inv = tuple(np.argsort(axes))
        a = self
        return Tensor._make(a.data.transpose(axes), (a,), lambda g: (g.transpose(inv),), "transpose")

    @property
    def T(self):
        return self.transpose()

    def __getitem__(self, index):
        a = self
        out = a.data[index]

        basic = _is_basic_index(index)

        def bw(g):
            full = np.zeros_like(a.data)
            if basic:
                full[index] = g
            else:
                np.add.at(full, index, g)
            return (full,)

        return Tensor._make(np.array(out, copy=True) if np.ndim(out) else np.asarray(out), (a,), bw, "getitem")

    def broadcast_to(self, shape):
        a = self
        return Tensor._make(np.broadcast_to(a.data, shape), (a,),
                            lambda g: (_unbroadcast(g, a.shape),), "broadcast")


def _is_basic_index(index) -> bool:
    items = index if isinstance(index, tuple) else (index,)
    return all(isinstance(i, (int, np.integer, slice)) or i is None or i is Ellipsis for i in items)


def _wrap(x) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(_as_array(x))


def tensor(data, requires_grad=False) -> Tensor:
    """Create a leaf tensor; non-finite input is rejected."""
    arr = np.array(data, dtype=np.float64)
    if not np.all(np.isfinite(arr)):
        raise ValueError("leaf tensors must hold finite values")
    return Tensor(arr, requires_grad=requires_grad)


def constant(data) -> Tensor:
    """Wrap an array as a non-differentiable tensor without copying."""
    return Tensor(_as_array(data))


def where_const(mask, a: Tensor, b: Tensor) -> Tensor:
    """Elementwise select with a constant boolean mask."""
    a, b = _wrap(a), _wrap(b)
    mask = np.asarray(mask, dtype=bool)

    def bw(g):
        return (_unbroadcast(np.where(mask, g, 0.0), a.shape) if a.requires_grad else None,
                _unbroadcast(np.where(mask, 0.0, g), b.shape) if b.requires_grad else None)

    return Tensor._make(np.where(mask, a.data, b.data), (a, b), bw, "where")


def _parse_einsum(subscripts: str, n: int):
    subscripts = subscripts.replace(" ", "")
    if "->" not in subscripts:
        raise UnsupportedOperation("einsum requires an explicit output ('->')")
    lhs, out = subscripts.split("->")
    ins = lhs.split(",")
    if len(ins) != n or "." in subscripts:
        raise UnsupportedOperation(f"unsupported einsum subscripts {subscripts!r}")
    for s in ins:
        if len(set(s)) != len(s):
            raise UnsupportedOperation("repeated indices within one operand are not supported")
    return ins, out


def einsum(subscripts: str, *operands) -> Tensor:
    """Differentiable ``numpy.einsum`` with explicit output subscripts."""
    ops = [_wrap(o) for o in operands]
    ins, out = _parse_einsum(subscripts, len(ops))
    data = np.einsum(subscripts, *[o.data for o in ops], optimize=len(ops) > 1)
    sizes = {}
    for s, o in zip(ins, ops):
        for ch, n in zip(s, o.shape):
            sizes[ch] = n

    def bw(g):
        grads = []
        for k, (s, o) in enumerate(zip(ins, ops)):
            if not o.requires_grad:
                grads.append(None)
                continue
            others = [ins[j] for j in range(len(ops)) if j != k]
            available = set(out).union(*others) if others else set(out)
            target = "".join(ch for ch in s if ch in available)
            expr = ",".join([out] + others) + "->" + target
            gk = np.einsum(expr, g, *[ops[j].data for j in range(len(ops)) if j != k],
                           optimize=len(ops) > 1)
            if target != s:
                # indices summed only within this operand: broadcast back
                shape = [sizes[ch] if ch in target else 1 for ch in s]
                gk = np.broadcast_to(gk.reshape(shape), tuple(sizes[ch] for ch in s))
            grads.append(gk)
        return tuple(grads)

    return Tensor._make(np.asarray(data), tuple(ops), bw, "einsum")


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    ts = [_wrap(t) for t in tensors]
    data = np.concatenate([t.data for t in ts], axis=axis)
    splits = np.cumsum([t.shape[axis] for t in ts])[:-1]

    def bw(g):
        return tuple(np.split(g, splits, axis=axis))

    return Tensor._make(data, tuple(ts), bw, "concat")


def stack(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    ts = [_wrap(t) for t in tensors]
    data = np.stack([t.data for t in ts], axis=axis)

    def bw(g):
        return tuple(np.take(g, i, axis=axis) for i in range(len(ts)))

    return Tensor._make(data, tuple(ts), bw, "stack")


def custom_op(data: np.ndarray, parents: Sequence[Tensor],
              backward: Callable[[np.ndarray], tuple], op: str = "custom") -> Tensor:
    """Register an externally computed value with a hand-written vector-Jacobian product."""
    return Tensor._make(data, tuple(_wrap(p) for p in parents), backward, op)


def _toposort(root: Tensor) -> list:
    order, seen = [], set()
    stack_ = [(root, False)]
    while stack_:
        node, done = stack_.pop()
        if done:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack_.append((node, True))
        for p in node._parents:
            if p.requires_grad and id(p) not in seen:
                stack_.append((p, False))
    return order


def backward(root: Tensor, seed=None) -> dict:
    """Reverse sweep from ``root``; returns ``{id(node): cotangent}``."""
    if seed is None:
        if root.data.size != 1:
            raise ValueError("gradient root must be a scalar; pass an explicit seed otherwise")
        seed = np.ones_like(root.data)
    grads = {id(root): np.asarray(seed, dtype=np.float64)}
    if not root.requires_grad:
        return grads
    for node in reversed(_toposort(root)):
        g = grads.pop(id(node), None) if node._parents else grads.get(id(node))
        if g is None or node._backward is None:
            if g is not None:
                grads[id(node)] = g
            continue
        pgs = node._backward(g)
        for p, pg in zip(node._parents, pgs):
            if pg is None or not p.requires_grad:
                continue
            key = id(p)
            if key in grads:
                grads[key] = grads[key] + pg
            else:
                grads[key] = pg
    return grads


def grad(root: Tensor, wrt: Iterable[Tensor]) -> list:
    """Gradients of a scalar ``root`` with respect to each tensor in ``wrt``.

    Tensors that do not influence ``root`` get zero gradients.
    """
    wrt = list(wrt)
    table = backward(root)
    out = []
    for w in wrt:
        g = table.get(id(w))
        out.append(np.zeros_like(w.data) if g is None else np.array(np.broadcast_to(g, w.shape)))
    return out
