"""Dense tensors with tape-based reverse-mode differentiation.

Every differentiable operation executed while recording is appended to the
calling thread's active :class:`Tape`. :func:`backward` replays that tape in
reverse. Leaf tensors (created with ``requires_grad=True``) accumulate into
``.grad``; intermediate gradients live only for the duration of a backward
pass, so calling :func:`backward` twice on the same root adds the gradients
twice. Call :func:`zero_grad` between optimisation steps.

Tensors are rank 0 to 3 and hold finite values only. Any operation that would
produce NaN or Inf raises :class:`~lowersimpler.errors.NonFiniteError`.
"""

from __future__ import annotations

import builtins
import threading
from contextlib import contextmanager
from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

import numpy as np

from .errors import ContractError, DimensionError, EmptyBatchError, NonFiniteError

MAX_RANK = 3

_state = threading.local()


class Tape:
    """Ordered record of operations executed on one thread."""

    def __init__(self):
        self.records: list[tuple] = []

    def __len__(self):
        return len(self.records)

    def reset(self):
        self.records.clear()


def _local():
    if not hasattr(_state, "stack"):
        _state.stack = [Tape()]
        _state.enabled = True
    return _state


def current_tape() -> Tape:
    return _local().stack[-1]


@contextmanager
def tape():
    """Record into a fresh tape for the duration of the block."""
    st = _local()
    t = Tape()
    st.stack.append(t)
    try:
        yield t
    finally:
        st.stack.pop()


@contextmanager
def no_grad():
    st = _local()
    prev = st.enabled
    st.enabled = False
    try:
        yield
    finally:
        st.enabled = prev


def _check_finite(arr: np.ndarray, what: str):
    if arr.dtype.kind == "f" and not np.isfinite(arr).all():
        bad = int(arr.size - np.isfinite(arr).sum())
        raise NonFiniteError(f"{what} produced {bad} non-finite value(s)")


class Tensor:
    """A rank-0..3 real array that can take part in gradient recording."""

    __slots__ = ("data", "requires_grad", "grad", "name", "_tape", "_index")

    __array_priority__ = 100  # make ndarray <op> Tensor defer to Tensor

    def __init__(self, data, requires_grad: bool = False, name: str | None = None, dtype=None):
        if dtype is None:
            if isinstance(data, np.ndarray) and data.dtype.kind == "f":
                dtype = data.dtype
            else:
                dtype = np.float64
        arr = np.array(data, dtype=dtype)
        if arr.ndim > MAX_RANK:
            raise DimensionError(f"rank {arr.ndim} exceeds the supported maximum of {MAX_RANK}")
        _check_finite(arr, "tensor construction")
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad = np.zeros_like(arr) if requires_grad else None
        self.name = name
        self._tape = None
        self._index = -1

    @property
    def shape(self) -> tuple:
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
        return self._tape is None

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float("nan")

    def detach(self) -> "Tensor":
        return Tensor(self.data, dtype=self.data.dtype)

    def __repr__(self):
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}{flag})"

    def __len__(self):
        return self.shape[0]

    # operator sugar
    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, key):
        return getitem(self, key)

    @property
    def T(self):
        return transpose(self)


def _const(x, like: Tensor | None = None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    dtype = like.dtype if like is not None else None
    return Tensor(np.asarray(x, dtype=dtype) if dtype is not None else x, dtype=dtype)


def _result(data: np.ndarray, inputs: Sequence[Tensor], backward: Callable, what: str) -> Tensor:
    _check_finite(data, what)
    if data.ndim > MAX_RANK:
        raise DimensionError(f"{what} result has rank {data.ndim} > {MAX_RANK}")
    out = Tensor.__new__(Tensor)
    out.data = data
    out.grad = None
    out.name = None
    out._tape = None
    out._index = -1
    st = _local()
    if st.enabled and any(t.requires_grad for t in inputs):
        tp = st.stack[-1]
        out.requires_grad = True
        out._tape = tp
        out._index = len(tp.records)
        tp.records.append((out, tuple(inputs), backward))
    else:
        out.requires_grad = False
    return out


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    if g.shape == shape:
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


def _broadcast_check(a: Tensor, b: Tensor, op: str):
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise DimensionError(f"{op}: incompatible shapes {a.shape} and {b.shape}") from None


# ---------------------------------------------------------------------------
# elementwise arithmetic
# ---------------------------------------------------------------------------


def add(a, b) -> Tensor:
    a, b = (_const(a, b if isinstance(b, Tensor) else None), _const(b, a if isinstance(a, Tensor) else None))
    _broadcast_check(a, b, "add")

    def back(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return _result(a.data + b.data, (a, b), back, "add")


def sub(a, b) -> Tensor:
    a, b = (_const(a, b if isinstance(b, Tensor) else None), _const(b, a if isinstance(a, Tensor) else None))
    _broadcast_check(a, b, "sub")

    def back(g):
        return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)

    return _result(a.data - b.data, (a, b), back, "sub")


def mul(a, b) -> Tensor:
    a, b = (_const(a, b if isinstance(b, Tensor) else None), _const(b, a if isinstance(a, Tensor) else None))
    _broadcast_check(a, b, "mul")

    def back(g):
        ga = _unbroadcast(g * b.data, a.shape) if a.requires_grad else None
        gb = _unbroadcast(g * a.data, b.shape) if b.requires_grad else None
        return ga, gb

    return _result(a.data * b.data, (a, b), back, "mul")


def scalar_mul(s, a: Tensor) -> Tensor:
    """Scale every vector in ``a`` by one scalar.

    ``s`` is a number, a size-1 tensor, or a column holding one scalar per
    row of ``a`` (shape ``a.shape[:-1] + (1,)``).
    """
    s = _const(s, a)
    if s.size != 1 and s.shape != a.shape[:-1] + (1,):
        raise DimensionError(f"scalar_mul: gate shape {s.shape} cannot scale rows of {a.shape}")
    return mul(s, a)


def where(cond, a: Tensor, b: Tensor) -> Tensor:
    """Select from ``a`` where ``cond`` holds, else from ``b`` (cond is constant)."""
    a, b = _const(a), _const(b)
    if a.shape != b.shape:
        raise DimensionError(f"where: branch shapes {a.shape} and {b.shape} differ")
    cond = np.broadcast_to(np.asarray(cond, dtype=bool), a.shape)

    def back(g):
        zero = np.zeros((), dtype=g.dtype)
        return np.where(cond, g, zero), np.where(cond, zero, g)

    return _result(np.where(cond, a.data, b.data), (a, b), back, "where")


_EWISE = {"add": add, "sub": sub, "mul": mul, "scalar_mul": lambda a, b: scalar_mul(b, a)}


def ewise(op: str, a, b) -> Tensor:
    """Dispatch an elementwise binary operation by name.

    For ``scalar_mul`` the scalar is ``b``.
    """
    try:
        fn = _EWISE[op]
    except KeyError:
        raise ContractError(f"unknown elementwise op {op!r}") from None
    return fn(a, b)


def sigmoid(a: Tensor) -> Tensor:
    # tanh form never overflows
    y = 0.5 * (1.0 + np.tanh(0.5 * a.data))

    def back(g):
        return (g * y * (1.0 - y),)

    return _result(y, (a,), back, "sigmoid")


def tanh(a: Tensor) -> Tensor:
    y = np.tanh(a.data)

    def back(g):
        return (g * (1.0 - y * y),)

    return _result(y, (a,), back, "tanh")


def activation(op: str, a: Tensor) -> Tensor:
    if op == "sigmoid":
        return sigmoid(a)
    if op == "tanh":
        return tanh(a)
    raise ContractError(f"unknown activation {op!r}")


# ---------------------------------------------------------------------------
# linear algebra and shape manipulation
# ---------------------------------------------------------------------------


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product with a leading batch axis allowed on either side.

    Supported ranks: (2|3) @ (1|2), and 3 @ 3 for batched products. A rank-1
    right operand is treated as a column and its axis dropped from the result.
    """
    a, b = _const(a), _const(b)
    if a.ndim not in (2, 3) or b.ndim not in (1, 2, 3) or (b.ndim == 3 and a.ndim != 3):
        raise DimensionError(f"matmul: unsupported ranks {a.shape} @ {b.shape}")
    k = b.shape[0] if b.ndim == 1 else b.shape[-2]
    if a.shape[-1] != k or (b.ndim == 3 and a.shape[0] != b.shape[0]):
        raise DimensionError(f"matmul: shapes {a.shape} and {b.shape} do not align")
    out = a.data @ b.data

    def back(g):
        ga = gb = None
        if b.ndim == 1:
            if a.requires_grad:
                ga = g[..., None] * b.data
            if b.requires_grad:
                gb = a.data.reshape(-1, k).T @ g.reshape(-1)
            return ga, gb
        if a.requires_grad:
            ga = g @ np.swapaxes(b.data, -1, -2)
        if b.requires_grad:
            if b.ndim == 2:
                gb = a.data.reshape(-1, k).T @ g.reshape(-1, g.shape[-1])
            else:
                gb = np.swapaxes(a.data, -1, -2) @ g
        return ga, gb

    return _result(out, (a, b), back, "matmul")


def _norm_axis(axis: int, ndim: int, op: str) -> int:
    if not -ndim <= axis < ndim:
        raise DimensionError(f"{op}: axis {axis} out of range for rank {ndim}")
    return axis % ndim


def concat(parts: Sequence[Tensor], axis: int = -1) -> Tensor:
    parts = [_const(p) for p in parts]
    if not parts:
        raise ContractError("concat: no parts given")
    if len(parts) == 1:
        return parts[0]
    ref = parts[0]
    ax = _norm_axis(axis, ref.ndim, "concat")
    for p in parts[1:]:
        if p.ndim != ref.ndim or any(
            p.shape[i] != ref.shape[i] for i in range(ref.ndim) if i != ax
        ):
            raise DimensionError(f"concat: {p.shape} does not match {ref.shape} off axis {ax}")
    sizes = [p.shape[ax] for p in parts]
    cuts = np.cumsum(sizes)[:-1]

    def back(g):
        return tuple(np.split(g, cuts, axis=ax))

    return _result(np.concatenate([p.data for p in parts], axis=ax), parts, back, "concat")


def split(a: Tensor, sizes: Sequence[int], axis: int = -1) -> list[Tensor]:
    """Cut ``a`` along ``axis`` into consecutive pieces of the given sizes."""
    ax = _norm_axis(axis, a.ndim, "split")
    if builtins.sum(sizes) != a.shape[ax]:
        raise DimensionError(f"split: sizes {list(sizes)} do not sum to {a.shape[ax]}")
    out, start = [], 0
    for n in sizes:
        key = [slice(None)] * a.ndim
        key[ax] = slice(start, start + n)
        out.append(getitem(a, tuple(key)))
        start += n
    return out


def _is_basic_key(key) -> bool:
    if not isinstance(key, tuple):
        key = (key,)
    return all(isinstance(k, (int, np.integer, slice)) or k is None or k is Ellipsis for k in key)


def getitem(a: Tensor, key) -> Tensor:
    out = a.data[key]
    basic = _is_basic_key(key)

    def back(g):
        full = np.zeros_like(a.data)
        if basic:
            full[key] = g
        else:
            np.add.at(full, key, g)
        return (full,)

    return _result(np.array(out, copy=True), (a,), back, "getitem")


def stack(parts: Sequence[Tensor], axis: int = 0) -> Tensor:
    parts = [_const(p) for p in parts]
    if not parts:
        raise ContractError("stack: no parts given")
    shape = parts[0].shape
    for p in parts:
        if p.shape != shape:
            raise DimensionError(f"stack: {p.shape} does not match {shape}")
    ax = _norm_axis(axis, len(shape) + 1, "stack")

    def back(g):
        return tuple(np.take(g, i, axis=ax) for i in range(len(parts)))

    return _result(np.stack([p.data for p in parts], axis=ax), parts, back, "stack")


def reshape(a: Tensor, shape: Sequence[int]) -> Tensor:
    try:
        out = a.data.reshape(shape)
    except ValueError:
        raise DimensionError(f"reshape: cannot view {a.shape} as {tuple(shape)}") from None

    def back(g):
        return (g.reshape(a.shape),)

    return _result(out, (a,), back, "reshape")


def transpose(a: Tensor, axes: Sequence[int] | None = None) -> Tensor:
    if axes is None:
        axes = tuple(reversed(range(a.ndim)))
    axes = tuple(axes)
    inv = tuple(np.argsort(axes))

    def back(g):
        return (np.transpose(g, inv),)

    return _result(np.ascontiguousarray(np.transpose(a.data, axes)), (a,), back, "transpose")


def sum(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:  # noqa: A001 - mirrors numpy
    out = a.data.sum(axis=axis, keepdims=keepdims)

    def back(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, a.shape).copy(),)

    return _result(np.asarray(out), (a,), back, "sum")


def mean(a: Tensor, axis=None) -> Tensor:
    n = a.size if axis is None else a.shape[axis]
    return mul(sum(a, axis=axis), 1.0 / n)


def embedding(weight: Tensor, ids) -> Tensor:
    """Gather rows of ``weight`` by integer ids of any shape."""
    ids = np.asarray(ids, dtype=np.int64)
    if ids.size and (ids.min() < 0 or ids.max() >= weight.shape[0]):
        raise IndexError(f"embedding: id out of range [0, {weight.shape[0]})")

    def back(g):
        gw = np.zeros_like(weight.data)
        np.add.at(gw, ids.reshape(-1), g.reshape(-1, weight.shape[1]))
        return (gw,)

    return _result(weight.data[ids], (weight,), back, "embedding")


def take_time(xs: Tensor, index) -> Tensor:
    """Per-column gather along time: ``out[t, b] = xs[index[t, b], b]``."""
    index = np.asarray(index, dtype=np.int64)
    if index.shape != xs.shape[:2]:
        raise DimensionError(f"take_time: index {index.shape} must match leading dims of {xs.shape}")
    cols = np.broadcast_to(np.arange(xs.shape[1])[None, :], index.shape)

    def back(g):
        gx = np.zeros_like(xs.data)
        np.add.at(gx, (index, cols), g)
        return (gx,)

    return _result(xs.data[index, cols], (xs,), back, "take_time")


# ---------------------------------------------------------------------------
# normalisers and losses
# ---------------------------------------------------------------------------


def softmax(a: Tensor, mask=None, axis: int = -1) -> Tensor:
    """Softmax along ``axis``; masked-out entries get exactly zero weight."""
    x = a.data
    if mask is not None:
        mask = np.broadcast_to(np.asarray(mask, dtype=bool), x.shape)
        if not mask.any(axis=axis).all():
            raise ContractError("softmax: a row has no unmasked positions")
        x = np.where(mask, x, -np.inf)
    m = x.max(axis=axis, keepdims=True)
    e = np.exp(x - m)
    y = e / e.sum(axis=axis, keepdims=True)

    def back(g):
        return (y * (g - (g * y).sum(axis=axis, keepdims=True)),)

    return _result(y, (a,), back, "softmax")


def softmax_xent(logits: Tensor, targets, mask=None) -> Tensor:
    """Mean masked negative log-likelihood of ``targets`` under softmax(logits).

    ``logits`` is [n x V]; ``targets`` holds n ids in [0, V); ``mask`` marks the
    rows that count. Returns a scalar tensor.
    """
    if logits.ndim != 2:
        raise DimensionError(f"softmax_xent: logits must be [n x V], got {logits.shape}")
    n, v = logits.shape
    targets = np.asarray(targets, dtype=np.int64).reshape(-1)
    if targets.shape != (n,):
        raise DimensionError(f"softmax_xent: {targets.shape[0]} targets for {n} rows")
    mask = np.ones(n, dtype=bool) if mask is None else np.asarray(mask, dtype=bool).reshape(-1)
    if mask.shape != (n,):
        raise DimensionError(f"softmax_xent: mask length {mask.shape[0]} for {n} rows")
    live = targets[mask]
    if live.size and (live.min() < 0 or live.max() >= v):
        raise IndexError(f"softmax_xent: target id out of range [0, {v})")
    count = int(mask.sum())
    if count == 0:
        raise EmptyBatchError("softmax_xent: every position is masked")
    safe_t = np.where(mask, targets, 0)
    x = logits.data
    shifted = x - x.max(axis=1, keepdims=True)
    logz = np.log(np.exp(shifted).sum(axis=1))
    nll = logz - shifted[np.arange(n), safe_t]
    loss = np.asarray((nll * mask).sum() / count, dtype=x.dtype)

    def back(g):
        p = np.exp(shifted - logz[:, None])
        p[np.arange(n), safe_t] -= 1.0
        p *= (mask / count)[:, None].astype(x.dtype)
        return (p * g,)

    return _result(loss, (logits,), back, "softmax_xent")


# ---------------------------------------------------------------------------
# differentiation
# ---------------------------------------------------------------------------


def backward(root: Tensor) -> None:
    """Accumulate d(root)/d(leaf) into ``.grad`` of every recorded leaf."""
    if root.size != 1:
        raise ContractError(f"backward: root must be a scalar, got shape {root.shape}")
    if root._tape is None:
        raise ContractError("backward: root was not recorded on a tape")
    records = root._tape.records
    grads = {id(root): np.ones_like(root.data)}
    for i in range(root._index, -1, -1):
        out, inputs, fn = records[i]
        g = grads.pop(id(out), None)
        if g is None:
            continue
        for t, gi in zip(inputs, fn(g)):
            if gi is None or not t.requires_grad:
                continue
            if t._tape is None:
                if t.grad is None:
                    t.grad = np.zeros_like(t.data)
                t.grad += gi
            else:
                key = id(t)
                prev = grads.get(key)
                grads[key] = gi if prev is None else prev + gi


def zero_grad(params: Iterable[Tensor]) -> None:
    for p in params:
        if p.grad is None:
            p.grad = np.zeros_like(p.data)
        else:
            p.grad.fill(0.0)


@dataclass
class GradCheckReport:
    max_rel_err: float
    passed: bool
    tol: float
    checked: int
    worst: tuple | None = None  # (input index, flat element index)
    per_input: list[float] = field(default_factory=list)

    def __bool__(self):
        return self.passed


def grad_check(
    f: Callable[[], Tensor],
    inputs: Sequence[Tensor],
    eps: float = 1e-5,
    tol: float = 1e-4,
    max_elements: int | None = None,
    seed: int = 0,
    ref_dtype=np.float64,
) -> GradCheckReport:
    """Compare autodiff gradients of scalar ``f()`` with central differences.

    ``f`` closes over ``inputs``, which must be float64 leaves. With
    ``max_elements`` set, each input is checked on that many randomly chosen
    elements instead of all of them.

    ``ref_dtype`` is the precision of the finite-difference evaluations. The
    float64 default cannot resolve gradient entries much below
    ``ulp(f) / (eps * tol)``; deep models have such entries, and
    ``np.longdouble`` (extended precision on x86) lowers that floor. The
    analytic gradients are always the float64 ones.
    """
    if not eps > 0:
        raise ContractError(f"grad_check: eps must be positive, got {eps}")
    for t in inputs:
        if t.dtype != np.float64:
            raise ContractError("grad_check: inputs must be float64 (double precision mode)")
        if not t.requires_grad:
            raise ContractError("grad_check: every input must require grad")
    saved = [None if t.grad is None else t.grad.copy() for t in inputs]
    zero_grad(inputs)
    with tape():
        y = f()
        if y.size != 1:
            raise ContractError(f"grad_check: f must return a scalar, got shape {y.shape}")
        backward(y)
    analytic = [t.grad.copy() for t in inputs]

    def value():
        with no_grad():
            out = f()
        v = out.data.reshape(-1)[0]
        if not np.isfinite(v):
            raise NonFiniteError("grad_check: f returned a non-finite value under perturbation")
        return v

    originals = [t.data for t in inputs]
    for t in inputs:
        t.data = t.data.astype(ref_dtype)
    try:
        worst, worst_at, checked, per_input = _compare(inputs, analytic, value, eps, max_elements, seed)
    finally:
        for t, d, g in zip(inputs, originals, saved):
            t.data, t.grad = d, g
    return GradCheckReport(worst, worst < tol, tol, checked, worst_at, per_input)


def _compare(inputs, analytic, value, eps, max_elements, seed):
    rng = np.random.default_rng(seed)
    worst, worst_at, checked, per_input = 0.0, None, 0, []
    for k, t in enumerate(inputs):
        flat = t.data.reshape(-1)
        idx = np.arange(flat.size)
        if max_elements is not None and flat.size > max_elements:
            idx = np.sort(rng.choice(flat.size, size=max_elements, replace=False))
        a_flat = analytic[k].reshape(-1)
        local = 0.0
        for j in idx:
            orig = flat[j]
            flat[j] = orig + eps
            fp = value()
            flat[j] = orig - eps
            fm = value()
            flat[j] = orig
            num = float((fp - fm) / (2 * eps))
            a = float(a_flat[j])
            err = abs(a - num) / max(abs(a), abs(num), 1e-8)
            checked += 1
            local = max(local, err)
            if err > worst:
                worst, worst_at = err, (k, int(j))
        per_input.append(local)
    return worst, worst_at, checked, per_input
