"""Dense tensors with tape-based reverse-mode differentiation.

Arrays live in numpy buffers; every differentiable op records a closure that
maps the output adjoint to input adjoints. ``backward`` orders the recorded
graph topologically and replays the closures in reverse.

Broadcasting is limited to scalars and to bias-adds over the last axis.
"""

from __future__ import annotations

import contextlib
import math
from typing import Callable, Iterable, Sequence

import numpy as np


class DimensionError(ValueError):
    """Operand shapes are incompatible."""


class ContractError(RuntimeError):
    """A documented precondition was violated."""


_GRAD_ENABLED = True


@contextlib.contextmanager
def no_grad():
    global _GRAD_ENABLED
    prev = _GRAD_ENABLED
    _GRAD_ENABLED = False
    try:
        yield
    finally:
        _GRAD_ENABLED = prev


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "op")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        arr = np.array(data, dtype=dtype if dtype is not None else None, copy=True)
        if dtype is None and arr.dtype.kind != "f":
            arr = arr.astype(np.float64)
        if arr.ndim > 0 and min(arr.shape) < 1:
            raise DimensionError(f"all extents must be >= 1, got {arr.shape}")
        self.data = np.ascontiguousarray(arr)
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable[[np.ndarray], None] | None = None
        self.op = "leaf"

    @classmethod
    def _wrap(cls, arr: np.ndarray) -> "Tensor":
        t = cls.__new__(cls)
        t.data = arr
        t.grad = None
        t.requires_grad = False
        t._parents = ()
        t._backward = None
        t.op = "const"
        return t

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def detach(self) -> "Tensor":
        return Tensor._wrap(self.data)

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, dtype={self.dtype}, op={self.op})"

    # operator sugar
    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return add(neg(self), other)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(self, other)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __truediv__(self, other):
        if isinstance(other, Tensor):
            raise DimensionError("division is only defined by a scalar")
        return scale(self, 1.0 / other)


def as_tensor(x, dtype=None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    arr = np.asarray(x, dtype=dtype)
    if arr.dtype.kind != "f":
        arr = arr.astype(np.float64)
    return Tensor._wrap(np.ascontiguousarray(arr))


def _result(arr: np.ndarray, parents: Sequence[Tensor], backward, op: str) -> Tensor:
    out = Tensor._wrap(arr)
    out.op = op
    if _GRAD_ENABLED and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward
    return out


def _accum(t: Tensor, g: np.ndarray) -> None:
    if not t.requires_grad:
        return
    g = g.astype(t.data.dtype, copy=False)
    if t.grad is None:
        t.grad = np.array(g, copy=True)
    else:
        t.grad = t.grad + g


class GradTape:
    """Topologically ordered record of the ops that produced ``root``."""

    def __init__(self, root: Tensor):
        order: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(root, False)]
        # iterative DFS; deep transformer graphs overflow the recursion limit
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in reversed(node._parents):
                if p.requires_grad and id(p) not in seen:
                    stack.append((p, False))
        self.ops = order

    def __len__(self) -> int:
        return len(self.ops)

    def replay(self, seed_grad: np.ndarray) -> int:
        grads: dict[int, np.ndarray] = {id(self.ops[-1]): seed_grad}
        visited = 0
        for node in reversed(self.ops):
            g = grads.pop(id(node), None)
            if node._backward is None:
                # leaf: keep the accumulated adjoint
                if g is not None:
                    _accum(node, g)
                continue
            visited += 1
            if g is None:
                continue
            for parent, pg in zip(node._parents, node._backward(g)):
                if pg is None or not parent.requires_grad:
                    continue
                key = id(parent)
                if key in grads:
                    grads[key] = grads[key] + pg
                else:
                    grads[key] = pg
        return visited


def backward(loss: Tensor) -> GradTape:
    """Populate ``.grad`` on every requires_grad leaf reachable from ``loss``."""
    if loss.data.size != 1 or loss.ndim != 0:
        raise ContractError(f"backward needs a scalar loss, got shape {loss.shape}")
    if not loss.requires_grad:
        raise ContractError("loss does not depend on any requires_grad tensor")
    tape = GradTape(loss)
    tape.replay(np.ones_like(loss.data))
    return tape


# elementwise and shape ops ---------------------------------------------------


def _scalar_like(x, ref: Tensor):
    if isinstance(x, Tensor):
        return x
    if np.ndim(x) != 0:
        raise DimensionError("only scalars may be mixed with tensors implicitly")
    return float(x)


def add(a: Tensor, b) -> Tensor:
    b = _scalar_like(b, a)
    if not isinstance(b, Tensor):
        return _result(a.data + a.data.dtype.type(b), (a,), lambda g: (g,), "add_scalar")
    if a.shape == b.shape:
        return _result(a.data + b.data, (a, b), lambda g: (g, g), "add")
    if b.ndim == 1 and a.ndim >= 1 and a.shape[-1] == b.shape[0]:
        lead = tuple(range(a.ndim - 1))

        def bw(g):
            return g, g.sum(axis=lead)

        return _result(a.data + b.data, (a, b), bw, "add_bias")
    if b.ndim == 0:
        return _result(a.data + b.data, (a, b), lambda g: (g, g.sum()), "add_scalar_t")
    raise DimensionError(f"add: incompatible shapes {a.shape} and {b.shape}")


def neg(a: Tensor) -> Tensor:
    return _result(-a.data, (a,), lambda g: (-g,), "neg")


def sub(a: Tensor, b) -> Tensor:
    if isinstance(b, Tensor):
        return add(a, neg(b))
    return add(a, -float(b))


def scale(a: Tensor, c: float) -> Tensor:
    c = a.data.dtype.type(c)
    return _result(a.data * c, (a,), lambda g: (g * c,), "scale")


def mul(a: Tensor, b) -> Tensor:
    b = _scalar_like(b, a)
    if not isinstance(b, Tensor):
        return scale(a, b)
    if a.shape != b.shape:
        raise DimensionError(f"mul: shapes {a.shape} and {b.shape} differ")
    ad, bd = a.data, b.data
    return _result(ad * bd, (a, b), lambda g: (g * bd, g * ad), "mul")


def square(a: Tensor) -> Tensor:
    ad = a.data
    return _result(ad * ad, (a,), lambda g: (2.0 * g * ad,), "square")


def total_sum(a: Tensor) -> Tensor:
    shape = a.shape
    return _result(
        np.asarray(a.data.sum(), dtype=a.dtype),
        (a,),
        lambda g: (np.broadcast_to(g, shape).copy(),),
        "sum",
    )


def mean(a: Tensor) -> Tensor:
    return scale(total_sum(a), 1.0 / a.data.size)


def mean_over_axis(a: Tensor, axis: int) -> Tensor:
    axis = axis % a.ndim
    n = a.shape[axis]
    shape = a.shape

    def bw(g):
        return (np.broadcast_to(np.expand_dims(g, axis), shape) / n,)

    return _result(a.data.mean(axis=axis), (a,), bw, "mean_axis")


def reshape(a: Tensor, shape: Sequence[int]) -> Tensor:
    old = a.shape
    try:
        out = a.data.reshape(shape)
    except ValueError as exc:
        raise DimensionError(f"cannot reshape {old} to {tuple(shape)}") from exc
    return _result(out, (a,), lambda g: (g.reshape(old),), "reshape")


def transpose(a: Tensor, axes: Sequence[int] | None = None) -> Tensor:
    if axes is None:
        if a.ndim != 2:
            raise DimensionError("transpose without axes needs a 2-D tensor")
        axes = (1, 0)
    axes = tuple(axes)
    if sorted(axes) != list(range(a.ndim)):
        raise DimensionError(f"bad permutation {axes} for rank {a.ndim}")
    inv = tuple(np.argsort(axes))
    return _result(
        np.ascontiguousarray(a.data.transpose(axes)),
        (a,),
        lambda g: (np.ascontiguousarray(g.transpose(inv)),),
        "transpose",
    )


def _check_indices(idx, n: int) -> np.ndarray:
    idx = np.asarray(idx, dtype=np.int64).reshape(-1)
    if idx.size and (idx.min() < 0 or idx.max() >= n):
        raise IndexError(f"row index out of range for {n} rows: {idx.min()}..{idx.max()}")
    return idx


def gather_rows(a: Tensor, indices) -> Tensor:
    """Select rows along axis 0; repeated indices are allowed."""
    idx = _check_indices(indices, a.shape[0])
    if idx.size == 0:
        raise DimensionError("gather_rows needs at least one index")
    shape = a.shape

    def bw(g):
        out = np.zeros(shape, dtype=g.dtype)
        np.add.at(out, idx, g)
        return (out,)

    return _result(a.data[idx], (a,), bw, "gather_rows")


def scatter_rows(a: Tensor, indices, n_rows: int) -> Tensor:
    """Place the rows of ``a`` at ``indices`` in an ``n_rows`` zero tensor."""
    idx = _check_indices(indices, n_rows)
    if idx.size != a.shape[0]:
        raise DimensionError(f"scatter_rows: {a.shape[0]} rows but {idx.size} indices")
    if np.unique(idx).size != idx.size:
        raise ContractError("scatter_rows indices must be unique")
    out = np.zeros((n_rows,) + a.shape[1:], dtype=a.dtype)
    out[idx] = a.data
    return _result(out, (a,), lambda g: (g[idx],), "scatter_rows")


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = list(tensors)
    if not tensors:
        raise DimensionError("concat of nothing")
    ref = tensors[0]
    axis = axis % ref.ndim
    for t in tensors[1:]:
        if t.ndim != ref.ndim or any(
            t.shape[i] != ref.shape[i] for i in range(ref.ndim) if i != axis
        ):
            raise DimensionError(f"concat: {ref.shape} vs {t.shape} along axis {axis}")
    sizes = np.cumsum([t.shape[axis] for t in tensors])[:-1]

    def bw(g):
        return tuple(np.split(g, sizes, axis=axis))

    return _result(np.concatenate([t.data for t in tensors], axis=axis), tensors, bw, "concat")


# linear algebra -------------------------------------------------------------


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """``a[..., m, k] @ b[k, n]`` or batched ``a[..., m, k] @ b[..., k, n]``.

    Batch extents must match exactly when ``b`` is batched.
    """
    if a.ndim < 2 or b.ndim < 2:
        raise DimensionError(f"matmul needs rank >= 2 operands, got {a.shape} and {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise DimensionError(f"matmul: inner extents differ, {a.shape} @ {b.shape}")
    if b.ndim > 2 and a.shape[:-2] != b.shape[:-2]:
        raise DimensionError(f"matmul: batch extents differ, {a.shape} @ {b.shape}")
    ad, bd = a.data, b.data
    out = np.matmul(ad, bd)

    if bd.ndim == 2:

        def bw(g):
            ga = np.matmul(g, bd.T)
            k, n = bd.shape
            gb = ad.reshape(-1, k).T @ g.reshape(-1, n)
            return ga, gb

    else:

        def bw(g):
            return np.matmul(g, np.swapaxes(bd, -1, -2)), np.matmul(np.swapaxes(ad, -1, -2), g)

    return _result(out, (a, b), bw, "matmul")


def linear(x: Tensor, weight: Tensor, bias: Tensor | None = None) -> Tensor:
    y = matmul(x, weight)
    return add(y, bias) if bias is not None else y


# nonlinearities --------------------------------------------------------------

_GELU_C = math.sqrt(2.0 / math.pi)


def gelu(x: Tensor) -> Tensor:
    """tanh approximation of GELU."""
    xd = x.data
    c = xd.dtype.type(_GELU_C)
    inner = c * (xd + 0.044715 * xd**3)
    th = np.tanh(inner)
    out = 0.5 * xd * (1.0 + th)

    def bw(g):
        dinner = c * (1.0 + 3 * 0.044715 * xd**2)
        return (g * (0.5 * (1.0 + th) + 0.5 * xd * (1.0 - th * th) * dinner),)

    return _result(out, (x,), bw, "gelu")


def softmax_rows(x: Tensor) -> Tensor:
    shifted = x.data - x.data.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    s = e / e.sum(axis=-1, keepdims=True)

    def bw(g):
        return (s * (g - (g * s).sum(axis=-1, keepdims=True)),)

    return _result(s, (x,), bw, "softmax")


def log_softmax_rows(x: Tensor) -> Tensor:
    shifted = x.data - x.data.max(axis=-1, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=-1, keepdims=True))
    out = shifted - lse
    s = np.exp(out)

    def bw(g):
        return (g - s * g.sum(axis=-1, keepdims=True),)

    return _result(out, (x,), bw, "log_softmax")


def layer_norm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-6) -> Tensor:
    d = x.shape[-1]
    if gamma.shape != (d,) or beta.shape != (d,):
        raise DimensionError(f"layer_norm: last extent {d} vs gamma {gamma.shape}, beta {beta.shape}")
    xd = x.data
    mu = xd.mean(axis=-1, keepdims=True)
    xc = xd - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    rstd = 1.0 / np.sqrt(var + xd.dtype.type(eps))
    xhat = xc * rstd
    out = xhat * gamma.data + beta.data
    lead = tuple(range(x.ndim - 1))

    def bw(g):
        gxhat = g * gamma.data
        gx = rstd * (
            gxhat
            - gxhat.mean(axis=-1, keepdims=True)
            - xhat * (gxhat * xhat).mean(axis=-1, keepdims=True)
        )
        return gx, (g * xhat).sum(axis=lead), g.sum(axis=lead)

    return _result(out, (x, gamma, beta), bw, "layer_norm")


def cross_entropy(logits: Tensor, labels) -> Tensor:
    """Mean negative log-likelihood of integer ``labels`` under row-wise softmax."""
    labels = np.asarray(labels, dtype=np.int64).reshape(-1)
    if logits.ndim != 2 or logits.shape[0] != labels.size:
        raise DimensionError(f"cross_entropy: logits {logits.shape} vs {labels.size} labels")
    if labels.min() < 0 or labels.max() >= logits.shape[1]:
        raise IndexError(f"label out of range for {logits.shape[1]} classes")
    logp = log_softmax_rows(logits)
    n, c = logits.shape
    onehot = np.zeros((n, c), dtype=logits.dtype)
    onehot[np.arange(n), labels] = -1.0 / n
    return total_sum(mul(logp, as_tensor(onehot)))


def parameters_of(tensors: Iterable[Tensor]) -> list[Tensor]:
    return [t for t in tensors if t.requires_grad]
