"""Dense tensors with tape-based reverse-mode differentiation.

Values live in contiguous numpy arrays. Every differentiable operation that
touches a tensor requiring gradients is appended to the active :class:`Tape`
together with a closure computing input gradients from the output gradient.
Replaying the tape backwards is therefore already in topological order.

Compute precision is float32 unless changed with :func:`precision`.
"""
from __future__ import annotations

import contextlib
from typing import Callable, Iterable, Sequence

import numpy as np

from .errors import InvalidShapeError, NonFiniteError

_DTYPE = np.dtype(np.float32)
_TAPES: list["Tape"] = []


def default_dtype() -> np.dtype:
    return _DTYPE


@contextlib.contextmanager
def precision(dtype):
    """Temporarily switch the default compute dtype (``float32``/``float64``)."""
    global _DTYPE
    new = np.dtype(dtype)
    if new not in (np.dtype(np.float32), np.dtype(np.float64)):
        raise ValueError(f"unsupported precision {new}")
    old, _DTYPE = _DTYPE, new
    try:
        yield new
    finally:
        _DTYPE = old


def _check_finite(arr: np.ndarray, what: str) -> None:
    if not np.isfinite(arr).all():
        raise NonFiniteError(f"non-finite values produced by {what}")


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "produced")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        arr = np.array(data, dtype=dtype or _DTYPE, copy=None)
        if any(n < 1 for n in arr.shape):
            raise InvalidShapeError(f"zero-length axis in shape {arr.shape}")
        _check_finite(arr, "tensor construction")
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None
        self.produced = False

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def size(self) -> int:
        return self.data.size

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float(self.data)

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def __repr__(self):
        return f"Tensor(shape={self.shape}, dtype={self.dtype}, requires_grad={self.requires_grad})"

    # operator sugar
    def __add__(self, other): return add(self, other)
    def __radd__(self, other): return add(other, self)
    def __sub__(self, other): return sub(self, other)
    def __rsub__(self, other): return sub(other, self)
    def __mul__(self, other): return mul(self, other)
    def __rmul__(self, other): return mul(other, self)
    def __truediv__(self, other): return div(self, other)
    def __rtruediv__(self, other): return div(other, self)
    def __neg__(self): return neg(self)
    def __matmul__(self, other): return matmul(self, other)

    def reshape(self, *shape): return reshape(self, shape[0] if len(shape) == 1 and not isinstance(shape[0], int) else shape)
    def permute(self, *order): return permute(self, order[0] if len(order) == 1 and not isinstance(order[0], int) else order)
    def sum(self, axis=None, keepdims=False): return tsum(self, axis, keepdims)
    def mean(self, axis=None, keepdims=False): return mean(self, axis, keepdims)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


class Tape:
    """Ordered record of differentiable operations.

    Use as a context manager; operations executed inside the ``with`` block on
    tensors that require gradients are recorded.
    """

    def __init__(self):
        self.records: list[tuple[Tensor, tuple[Tensor, ...], Callable]] = []

    def __enter__(self) -> "Tape":
        _TAPES.append(self)
        return self

    def __exit__(self, *exc):
        _TAPES.remove(self)
        return False

    def __len__(self):
        return len(self.records)

    def record(self, out: Tensor, inputs: tuple[Tensor, ...], backward: Callable) -> None:
        self.records.append((out, inputs, backward))

    def backward(self, loss: Tensor, params: Iterable[Tensor] | None = None) -> None:
        backward(self, loss, params)


def apply_op(out_data: np.ndarray, inputs: Sequence[Tensor], backward_fn: Callable, name: str = "op") -> Tensor:
    """Wrap a forward result and register its gradient rule on the active tape.

    ``backward_fn(g)`` receives the output gradient and returns one gradient
    array (or ``None``) per input, already reduced to that input's shape.
    """
    _check_finite(out_data, name)
    out = Tensor.__new__(Tensor)
    out.data = out_data
    out.grad = None
    out.produced = False
    needs = bool(_TAPES) and any(t.requires_grad for t in inputs)
    out.requires_grad = needs
    if needs:
        out.produced = True
        _TAPES[-1].record(out, tuple(inputs), backward_fn)
    return out


def backward(tape: Tape, loss: Tensor, params: Iterable[Tensor] | None = None) -> None:
    """Populate ``.grad`` of every leaf reached from ``loss``.

    Leaves listed in ``params`` that the loss does not depend on receive zeros.
    """
    if loss.data.size != 1:
        raise InvalidShapeError(f"backward needs a scalar loss, got shape {loss.shape}")
    grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    leaves: dict[int, Tensor] = {}
    if loss.requires_grad and not loss.produced:
        leaves[id(loss)] = loss
    for out, inputs, fn in reversed(tape.records):
        g = grads.pop(id(out), None)
        if g is None:
            continue
        in_grads = fn(g)
        for t, gi in zip(inputs, in_grads):
            if gi is None or not t.requires_grad:
                continue
            key = id(t)
            if key in grads:
                grads[key] = grads[key] + gi
            else:
                grads[key] = gi
            if not t.produced:
                leaves[key] = t
    for key, leaf in leaves.items():
        leaf.grad = np.asarray(grads.get(key, np.zeros_like(leaf.data)), dtype=leaf.dtype).reshape(leaf.shape)
    if params is not None:
        for p in params:
            if id(p) not in leaves:
                p.grad = np.zeros_like(p.data)


# ---------------------------------------------------------------- creation


class Rng:
    """Counter-keyed PCG64 generator.

    Every draw builds a fresh PCG64 stream from ``(seed, counter)`` and then
    increments the counter, so a draw depends only on the seed and on how many
    draws preceded it.
    """

    ALGORITHM = "PCG64(SeedSequence([seed, counter]))"

    def __init__(self, seed: int, counter: int = 0):
        self.seed = int(seed) & 0xFFFFFFFFFFFFFFFF
        self.counter = int(counter)

    def __repr__(self):
        return f"Rng(seed={self.seed}, counter={self.counter})"

    def generator(self) -> np.random.Generator:
        gen = np.random.Generator(np.random.PCG64(np.random.SeedSequence([self.seed, self.counter])))
        self.counter += 1
        return gen

    def spawn(self, index: int) -> "Rng":
        """Independent child stream seeded by hash(seed, index)."""
        state = np.random.SeedSequence([self.seed, 0x5EED, int(index)]).generate_state(1, np.uint64)
        return Rng(int(state[0]))

    def normal(self, shape, mu=0.0, sigma=1.0) -> np.ndarray:
        return self.generator().normal(mu, sigma, size=shape)

    def uniform(self, shape=None, low=0.0, high=1.0):
        return self.generator().uniform(low, high, size=shape)

    def integers(self, low, high, size=None):
        return self.generator().integers(low, high, size=size)

    def truncated_normal(self, shape, sigma=0.02, bound=2.0) -> np.ndarray:
        gen = self.generator()
        out = gen.normal(0.0, 1.0, size=shape)
        bad = np.abs(out) > bound
        while bad.any():
            out[bad] = gen.normal(0.0, 1.0, size=int(bad.sum()))
            bad = np.abs(out) > bound
        return out * sigma


def create(shape, init="zeros", rng: Rng | None = None, requires_grad=False) -> Tensor:
    """Build a tensor filled per ``init``.

    ``init`` is ``"zeros"``, ``"ones"``, ``("uniform", a, b)``,
    ``("normal", mu, sigma)`` or ``("trunc_normal", sigma)``.
    """
    shape = tuple(int(s) for s in shape)
    if any(s < 1 for s in shape):
        raise InvalidShapeError(f"zero-length axis in shape {shape}")
    if init == "zeros":
        data = np.zeros(shape)
    elif init == "ones":
        data = np.ones(shape)
    else:
        kind, *args = init
        if rng is None:
            raise ValueError(f"{kind} init needs an rng")
        if kind == "uniform":
            data = rng.uniform(shape, *args)
        elif kind == "normal":
            mu, sigma = args
            if sigma < 0:
                raise ValueError("sigma must be >= 0")
            data = rng.normal(shape, mu, sigma)
        elif kind == "trunc_normal":
            data = rng.truncated_normal(shape, *args)
        else:
            raise ValueError(f"unknown init {init!r}")
    return Tensor(data, requires_grad=requires_grad)


# ---------------------------------------------------------------- helpers


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


def _broadcast_shape(a, b) -> tuple:
    try:
        return np.broadcast_shapes(a, b)
    except ValueError:
        raise InvalidShapeError(f"shapes {a} and {b} do not broadcast") from None


# ---------------------------------------------------------------- elementwise


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape(a.shape, b.shape)
    return apply_op(a.data + b.data, (a, b),
                    lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)), "add")


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape(a.shape, b.shape)
    return apply_op(a.data - b.data, (a, b),
                    lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)), "sub")


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape(a.shape, b.shape)
    return apply_op(a.data * b.data, (a, b),
                    lambda g: (_unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)), "mul")


def div(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape(a.shape, b.shape)
    with np.errstate(divide="ignore", invalid="ignore"):
        out = a.data / b.data

    def grad(g):
        ga = _unbroadcast(g / b.data, a.shape)
        gb = _unbroadcast(-g * a.data / (b.data * b.data), b.shape)
        return ga, gb

    return apply_op(out, (a, b), grad, "div")


def neg(a) -> Tensor:
    a = as_tensor(a)
    return apply_op(-a.data, (a,), lambda g: (-g,), "neg")


def square(a) -> Tensor:
    a = as_tensor(a)
    return apply_op(a.data * a.data, (a,), lambda g: (2.0 * a.data * g,), "square")


def sqrt(a) -> Tensor:
    a = as_tensor(a)
    with np.errstate(invalid="ignore"):
        out = np.sqrt(a.data)
    return apply_op(out, (a,), lambda g: (0.5 * g / out,), "sqrt")


def exp(a) -> Tensor:
    a = as_tensor(a)
    with np.errstate(over="ignore"):
        out = np.exp(a.data)
    return apply_op(out, (a,), lambda g: (g * out,), "exp")


def tanh(a) -> Tensor:
    a = as_tensor(a)
    out = np.tanh(a.data)
    return apply_op(out, (a,), lambda g: (g * (1.0 - out * out),), "tanh")


# ---------------------------------------------------------------- reductions


def _norm_axes(axis, ndim) -> tuple:
    if axis is None:
        return tuple(range(ndim))
    if isinstance(axis, int):
        axis = (axis,)
    return tuple(sorted(a % ndim for a in axis))


def tsum(a, axis=None, keepdims=False) -> Tensor:
    a = as_tensor(a)
    axes = _norm_axes(axis, a.ndim)
    out = a.data.sum(axis=axes, keepdims=keepdims)

    def grad(g):
        if not keepdims:
            g = np.expand_dims(g, axes)
        return (np.broadcast_to(g, a.shape).copy(),)

    return apply_op(np.asarray(out), (a,), grad, "sum")


def mean(a, axis=None, keepdims=False) -> Tensor:
    a = as_tensor(a)
    axes = _norm_axes(axis, a.ndim)
    count = int(np.prod([a.shape[i] for i in axes])) if axes else 1
    return mul(tsum(a, axes, keepdims), 1.0 / count)


def softmax(a, axis=-1) -> Tensor:
    a = as_tensor(a)
    shifted = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    out = e / e.sum(axis=axis, keepdims=True)

    def grad(g):
        return (out * (g - (g * out).sum(axis=axis, keepdims=True)),)

    return apply_op(out, (a,), grad, "softmax")


# ---------------------------------------------------------------- structure


def reshape(a, shape) -> Tensor:
    a = as_tensor(a)
    shape = tuple(int(s) for s in shape)
    if -1 in shape:
        known = int(np.prod([s for s in shape if s != -1]))
        if known == 0 or a.size % known:
            raise InvalidShapeError(f"cannot reshape {a.shape} to {shape}")
        shape = tuple(a.size // known if s == -1 else s for s in shape)
    if int(np.prod(shape)) != a.size or any(s < 1 for s in shape):
        raise InvalidShapeError(f"cannot reshape {a.shape} ({a.size} elements) to {shape}")
    src = a.shape
    return apply_op(a.data.reshape(shape), (a,), lambda g: (g.reshape(src),), "reshape")


def permute(a, order) -> Tensor:
    a = as_tensor(a)
    order = tuple(int(o) for o in order)
    if sorted(order) != list(range(a.ndim)):
        raise InvalidShapeError(f"{order} is not a permutation of {a.ndim} axes")
    inverse = tuple(int(i) for i in np.argsort(order))
    out = np.ascontiguousarray(a.data.transpose(order))
    return apply_op(out, (a,), lambda g: (g.transpose(inverse),), "permute")


def transpose(a) -> Tensor:
    """Swap the two trailing axes."""
    a = as_tensor(a)
    order = list(range(a.ndim))
    order[-1], order[-2] = order[-2], order[-1]
    return permute(a, order)


def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim == 1:
        return reshape(matmul(reshape(a, (1, a.shape[0])), b), b.shape[:-2] + (b.shape[-1],) if b.ndim > 1 else ())
    if b.ndim == 1:
        return reshape(matmul(a, reshape(b, (b.shape[0], 1))), a.shape[:-1])
    if a.shape[-1] != b.shape[-2]:
        raise InvalidShapeError(f"matmul inner dimensions differ: {a.shape} @ {b.shape}")
    _broadcast_shape(a.shape[:-2], b.shape[:-2])
    out = np.matmul(a.data, b.data)

    def grad(g):
        ga = _unbroadcast(np.matmul(g, np.swapaxes(b.data, -1, -2)), a.shape) if a.requires_grad else None
        gb = _unbroadcast(np.matmul(np.swapaxes(a.data, -1, -2), g), b.shape) if b.requires_grad else None
        return ga, gb

    return apply_op(out, (a, b), grad, "matmul")


# ---------------------------------------------------------------- dump format

_DUMP_MAGIC = "DXTENSOR"
_DUMP_DTYPES = {"float32": np.dtype("<f4"), "float64": np.dtype("<f8")}


def dumps_tensor(arr) -> bytes:
    """Serialize to ``DXTENSOR v1 <dtype> <ndim> <extents...>\\n`` + raw LE payload."""
    arr = arr.data if isinstance(arr, Tensor) else np.asarray(arr)
    name = np.dtype(arr.dtype).name
    if name not in _DUMP_DTYPES:
        raise InvalidShapeError(f"cannot dump dtype {name}")
    header = " ".join([_DUMP_MAGIC, "v1", name, str(arr.ndim), *map(str, arr.shape)]) + "\n"
    return header.encode("ascii") + np.ascontiguousarray(arr, dtype=_DUMP_DTYPES[name]).tobytes()


def loads_tensor(buf: bytes, offset: int = 0) -> tuple[np.ndarray, int]:
    """Parse one dump starting at ``offset``; returns the array and the end offset."""
    nl = buf.index(b"\n", offset)
    parts = buf[offset:nl].decode("ascii").split()
    if len(parts) < 4 or parts[0] != _DUMP_MAGIC or parts[1] != "v1":
        raise InvalidShapeError("not a DXTENSOR v1 blob")
    dtype = _DUMP_DTYPES.get(parts[2])
    if dtype is None:
        raise InvalidShapeError(f"unknown dtype {parts[2]}")
    ndim = int(parts[3])
    shape = tuple(int(p) for p in parts[4:4 + ndim])
    if len(shape) != ndim:
        raise InvalidShapeError("truncated DXTENSOR header")
    count = int(np.prod(shape)) if shape else 1
    start = nl + 1
    end = start + count * dtype.itemsize
    if end > len(buf):
        raise InvalidShapeError("truncated DXTENSOR payload")
    arr = np.frombuffer(buf[start:end], dtype=dtype).reshape(shape)
    return arr.astype(dtype.newbyteorder("=")), end


def numerical_grad(fn: Callable[[], float], arr: np.ndarray, h: float = 1e-3, index: Iterable | None = None) -> np.ndarray:
    """Central finite differences of scalar ``fn()`` w.r.t. ``arr`` (mutated in place and restored)."""
    grad = np.zeros_like(arr)
    flat = arr.reshape(-1)
    gflat = grad.reshape(-1)
    for i in (range(flat.size) if index is None else index):
        old = flat[i]
        flat[i] = old + h
        fp = fn()
        flat[i] = old - h
        fm = fn()
        flat[i] = old
        gflat[i] = (fp - fm) / (2.0 * h)
    return grad

