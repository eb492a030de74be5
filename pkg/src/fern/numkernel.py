"""Small dense-tensor kernel with define-by-run reverse-mode autodiff.

Every op takes and returns :class:`Tensor` objects backed by contiguous
float64 numpy arrays.  While a :class:`Tape` is active, ops record a node
with the closure needed to push the output cotangent back to the inputs.
``Tape.backward(loss)`` replays that record in reverse.

Broadcasting is restricted: elementwise ops accept equal shapes, or a
second operand whose shape is a suffix of the first (a bias shared over
leading batch axes).  Anything else goes through :func:`broadcast_to`.

Lifecycle: a tape is single use.  After ``backward`` it is spent and a
second call raises :class:`TapeError`; run the forward again under a new
tape.
"""

from __future__ import annotations

import contextlib
from typing import Callable, Iterable, Sequence

import numpy as np


class ShapeError(ValueError):
    pass


class NonFiniteError(FloatingPointError):
    pass


class TapeError(RuntimeError):
    pass


_ACTIVE_TAPES: list["Tape"] = []
_PROBES: list[list[tuple[int, ...]]] = []


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "name", "tracked")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        arr = np.asarray(data, dtype=np.float64)
        if not arr.flags.c_contiguous:
            arr = np.ascontiguousarray(arr)
        if not np.all(np.isfinite(arr)):
            raise NonFiniteError(f"non-finite value in tensor {name or ''}".strip())
        self.data = arr
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self.tracked = requires_grad
        self.name = name
        for probe in _PROBES:
            probe.append(arr.shape)

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float("nan")

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    # operator sugar; scalars are lifted to constants
    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(_lift(other, self), self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(self, other)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, index):
        return take(self, index)

    def backward(self) -> None:
        tape = _ACTIVE_TAPES[-1] if _ACTIVE_TAPES else None
        if tape is None:
            raise TapeError("backward() needs an active tape; use Tape.backward(loss)")
        tape.backward(self)


class _Node:
    __slots__ = ("out", "inputs", "grad_fn", "op")

    def __init__(self, op, out, inputs, grad_fn):
        self.op = op
        self.out = out
        self.inputs = inputs
        self.grad_fn = grad_fn


class Tape:
    """Ordered op record for one forward pass.

    Use as a context manager; ops executed inside are recorded.  Order of
    recording is already a topological order, so backward is a reverse scan.
    """

    def __init__(self):
        self.nodes: list[_Node] = []
        self.spent = False

    def __enter__(self):
        _ACTIVE_TAPES.append(self)
        return self

    def __exit__(self, *exc):
        _ACTIVE_TAPES.remove(self)
        return False

    def __len__(self):
        return len(self.nodes)

    def record(self, op: str, out: Tensor, inputs: tuple, grad_fn: Callable) -> None:
        self.nodes.append(_Node(op, out, inputs, grad_fn))

    def backward(self, loss: Tensor, leaves: Iterable[Tensor] = ()) -> dict[int, np.ndarray]:
        """Write d(loss)/d(leaf) into ``leaf.grad`` (overwriting) for every leaf.

        Leaves passed explicitly but untouched by ``loss`` get zero gradients.
        Returns a mapping ``id(tensor) -> gradient`` for all grad-requiring
        tensors reached.
        """
        if self.spent:
            raise TapeError("tape already consumed; re-run the forward pass")
        if loss.data.size != 1:
            raise ShapeError(f"backward needs a scalar loss, got shape {loss.shape}")
        self.spent = True
        grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
        req: dict[int, Tensor] = {}
        for node in reversed(self.nodes):
            g = grads.pop(id(node.out), None)
            if g is None:
                continue
            in_grads = node.grad_fn(g)
            for t, gi in zip(node.inputs, in_grads):
                if gi is None or not t.tracked:
                    continue
                key = id(t)
                if key in grads:
                    grads[key] = grads[key] + gi
                else:
                    grads[key] = gi
                if t.requires_grad:
                    req[key] = t
        out: dict[int, np.ndarray] = {}
        for key, t in req.items():
            g = grads.get(key, np.zeros_like(t.data))
            t.grad = g
            out[key] = g
        for t in leaves:
            if id(t) not in out:
                t.grad = np.zeros_like(t.data)
                out[id(t)] = t.grad
        self.nodes.clear()
        return out


def backward(loss: Tensor, leaves: Iterable[Tensor] = ()) -> dict[int, np.ndarray]:
    """Backward through the innermost active tape."""
    if not _ACTIVE_TAPES:
        raise TapeError("no active tape")
    return _ACTIVE_TAPES[-1].backward(loss, leaves)


def _recording(inputs: Sequence[Tensor]) -> "Tape | None":
    if not _ACTIVE_TAPES:
        return None
    if any(t.tracked for t in inputs):
        return _ACTIVE_TAPES[-1]
    return None


def _emit(op: str, value: np.ndarray, inputs: tuple, grad_fn: Callable) -> Tensor:
    if not np.all(np.isfinite(value)):
        raise NonFiniteError(f"non-finite result in {op}")
    out = Tensor(value)
    tape = _recording(inputs)
    if tape is not None:
        out.tracked = True
        tape.record(op, out, inputs, grad_fn)
    return out


def _lift(x, like: Tensor | None = None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=np.float64))


def _reduce_to(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if g.shape == shape:
        return g
    lead = g.ndim - len(shape)
    return g.sum(axis=tuple(range(lead))).reshape(shape)


def _check_elementwise(a: Tensor, b: Tensor, op: str) -> None:
    if a.shape == b.shape or b.ndim == 0 or a.ndim == 0:
        return
    if b.ndim < a.ndim and a.shape[a.ndim - b.ndim:] == b.shape:
        return
    if a.ndim < b.ndim and b.shape[b.ndim - a.ndim:] == a.shape:
        return
    raise ShapeError(f"{op}: shapes {a.shape} and {b.shape} are not leading-batch compatible")


# ---------------------------------------------------------------- primitives


def add(a, b) -> Tensor:
    a, b = _lift(a), _lift(b)
    _check_elementwise(a, b, "add")
    sa, sb = a.shape, b.shape
    return _emit("add", a.data + b.data, (a, b),
                 lambda g: (_reduce_to(g, sa), _reduce_to(g, sb)))


def sub(a, b) -> Tensor:
    a, b = _lift(a), _lift(b)
    _check_elementwise(a, b, "sub")
    sa, sb = a.shape, b.shape
    return _emit("sub", a.data - b.data, (a, b),
                 lambda g: (_reduce_to(g, sa), -_reduce_to(g, sb)))


def mul(a, b) -> Tensor:
    a, b = _lift(a), _lift(b)
    _check_elementwise(a, b, "mul")
    ad, bd = a.data, b.data
    return _emit("mul", ad * bd, (a, b),
                 lambda g: (_reduce_to(g * bd, ad.shape), _reduce_to(g * ad, bd.shape)))


def neg(a: Tensor) -> Tensor:
    return _emit("neg", -a.data, (a,), lambda g: (-g,))


def square(a: Tensor) -> Tensor:
    ad = a.data
    return _emit("square", ad * ad, (a,), lambda g: (2.0 * ad * g,))


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """``a`` of shape (..., k) times a 2-D ``b`` of shape (k, n)."""
    a, b = _lift(a), _lift(b)
    if b.ndim != 2 or a.ndim < 1 or a.shape[-1] != b.shape[0]:
        raise ShapeError(f"matmul: cannot multiply {a.shape} by {b.shape}")
    ad, bd = a.data, b.data

    def grad_fn(g):
        ga = g @ bd.T
        gb = ad.reshape(-1, ad.shape[-1]).T @ g.reshape(-1, g.shape[-1])
        return ga, gb

    return _emit("matmul", ad @ bd, (a, b), grad_fn)


def tanh(a: Tensor) -> Tensor:
    y = np.tanh(a.data)
    return _emit("tanh", y, (a,), lambda g: (g * (1.0 - y * y),))


def softplus(a: Tensor) -> Tensor:
    x = a.data
    y = np.logaddexp(0.0, x)
    sig = 0.5 * (1.0 + np.tanh(0.5 * x))
    return _emit("softplus", y, (a,), lambda g: (g * sig,))


def sum(a: Tensor, axis: int | None = None, keepdims: bool = False) -> Tensor:  # noqa: A001
    shape = a.shape

    def grad_fn(g):
        if axis is None:
            return (np.broadcast_to(g, shape).copy(),)
        gk = g if keepdims else np.expand_dims(g, axis)
        return (np.broadcast_to(gk, shape).copy(),)

    return _emit("sum", np.sum(a.data, axis=axis, keepdims=keepdims), (a,), grad_fn)


def mean(a: Tensor, axis: int | None = None, keepdims: bool = False) -> Tensor:
    n = a.data.size if axis is None else a.shape[axis]
    return mul(sum(a, axis=axis, keepdims=keepdims), 1.0 / n)


def reshape(a: Tensor, shape: tuple[int, ...]) -> Tensor:
    old = a.shape
    return _emit("reshape", a.data.reshape(shape), (a,), lambda g: (g.reshape(old),))


def broadcast_to(a: Tensor, shape: tuple[int, ...]) -> Tensor:
    """Explicit broadcast (numpy rules); backward sums over expanded axes."""
    old = a.shape
    value = np.broadcast_to(a.data, shape).copy()

    def grad_fn(g):
        lead = g.ndim - len(old)
        g = g.sum(axis=tuple(range(lead))) if lead else g
        axes = tuple(i for i, n in enumerate(old) if n == 1 and g.shape[i] != 1)
        if axes:
            g = g.sum(axis=axes, keepdims=True)
        return (g,)

    return _emit("broadcast", value, (a,), grad_fn)


def take(a: Tensor, index) -> Tensor:
    """Basic (slice/int) indexing."""
    shape = a.shape

    def grad_fn(g):
        out = np.zeros(shape)
        out[index] = g
        return (out,)

    return _emit("slice", np.array(a.data[index]), (a,), grad_fn)


def concat(tensors: Sequence[Tensor], axis: int = -1) -> Tensor:
    tensors = [_lift(t) for t in tensors]
    sizes = [t.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]

    def grad_fn(g):
        return tuple(np.split(g, splits, axis=axis))

    return _emit("concat", np.concatenate([t.data for t in tensors], axis=axis),
                 tuple(tensors), grad_fn)


def stack(tensors: Sequence[Tensor], axis: int = -1) -> Tensor:
    tensors = [_lift(t) for t in tensors]
    n = len(tensors)

    def grad_fn(g):
        return tuple(np.take(g, i, axis=axis) for i in range(n))

    return _emit("stack", np.stack([t.data for t in tensors], axis=axis),
                 tuple(tensors), grad_fn)


def l2_normalize(a: Tensor, axis: int = -1) -> Tensor:
    """``a / ||a||`` along ``axis``; zero-norm rows raise (caller handles)."""
    x = a.data
    norm = np.sqrt(np.sum(x * x, axis=axis, keepdims=True))
    if np.any(norm == 0.0):
        raise NonFiniteError("l2_normalize: zero-norm vector")
    v = x / norm

    def grad_fn(g):
        return ((g - v * np.sum(v * g, axis=axis, keepdims=True)) / norm,)

    return _emit("l2_normalize", v, (a,), grad_fn)


def huber(pred: Tensor, target, delta: float = 1.0) -> Tensor:
    """Mean elementwise Huber loss."""
    target = _lift(target)
    if pred.shape != target.shape:
        raise ShapeError(f"huber: shapes {pred.shape} and {target.shape} differ")
    e = pred.data - target.data
    ae = np.abs(e)
    quad = ae <= delta
    per = np.where(quad, 0.5 * e * e, delta * (ae - 0.5 * delta))
    n = e.size

    def grad_fn(g):
        de = np.where(quad, e, delta * np.sign(e)) * (g / n)
        return de, -de

    return _emit("huber", np.asarray(per.mean()), (pred, target), grad_fn)


# ---------------------------------------------------------------- helpers


def parameter(data, name: str | None = None) -> Tensor:
    return Tensor(data, requires_grad=True, name=name)


def constant(data) -> Tensor:
    return Tensor(data)


@contextlib.contextmanager
def allocation_probe():
    """Collect the shape of every Tensor created inside the block."""
    shapes: list[tuple[int, ...]] = []
    _PROBES.append(shapes)
    try:
        yield shapes
    finally:
        _PROBES.remove(shapes)


def grad_check(f: Callable[[np.ndarray], Tensor], point: np.ndarray, h: float = 1e-6,
               coords: Sequence[int] | None = None) -> float:
    """Max relative error between tape gradient and central differences.

    ``f`` maps a flat float64 vector (wrapped as a leaf tensor) to a scalar
    tensor.  ``coords`` restricts the finite-difference sweep to a subset of
    flat indices.
    """
    point = np.asarray(point, dtype=np.float64).copy()
    leaf = parameter(point)
    with Tape() as tape:
        out = f(leaf)
    tape.backward(out, leaves=[leaf])
    analytic = leaf.grad.reshape(-1)
    flat = point.reshape(-1)
    idx = range(flat.size) if coords is None else coords
    worst = 0.0
    for i in idx:
        orig = flat[i]
        flat[i] = orig + h
        fp = f(Tensor(point)).item()
        flat[i] = orig - h
        fm = f(Tensor(point)).item()
        flat[i] = orig
        numeric = (fp - fm) / (2.0 * h)
        err = abs(analytic[i] - numeric) / (abs(analytic[i]) + 1e-12)
        worst = max(worst, err)
    return worst
