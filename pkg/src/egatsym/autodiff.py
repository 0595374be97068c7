"""A small reverse-mode autodiff engine over float64 numpy arrays.

Only the primitives the EGAT model needs are provided. Operations are
recorded on the innermost active :class:`Tape`; outside a tape they run as
plain numpy and record nothing, which is the inference path.

    >>> x = Tensor([1.0, 2.0], requires_grad=True)
    >>> with Tape() as tape:
    ...     loss = sum_(x * x)
    >>> backward(loss, [x], tape)[0]
    array([2., 4.])
"""
from __future__ import annotations

import math
import os
import threading
import warnings
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from . import _kernels

DEBUG = os.environ.get("EGATSYM_DEBUG", "0") not in ("", "0")

_local = threading.local()


def _stack() -> list:
    st = getattr(_local, "stack", None)
    if st is None:
        st = _local.stack = []
    return st


class Tape:
    """Ordered record of primitive applications, used for the reverse sweep.

    Each record is ``(output, inputs, adjoint)`` where ``adjoint`` maps the
    output cotangent to a tuple of input cotangents. Records are appended in
    execution order, so inputs always precede the operations that use them.
    """

    def __init__(self) -> None:
        self.records: list[tuple[Tensor, tuple[Tensor, ...], Callable]] = []

    def __enter__(self) -> "Tape":
        _stack().append(self)
        return self

    def __exit__(self, *exc) -> None:
        _stack().pop()

    def __len__(self) -> int:
        return len(self.records)


def active_tape() -> Tape | None:
    st = _stack()
    return st[-1] if st else None


class Tensor:
    """Dense float64 array plus the bookkeeping needed by the tape."""

    __slots__ = ("data", "requires_grad", "name")
    __array_priority__ = 100

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = requires_grad
        self.name = name

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def size(self) -> int:
        return self.data.size

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float(self.data)

    def __repr__(self) -> str:
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}{tag})"

    def __add__(self, other):
        return add(self, other) if isinstance(other, Tensor) else add_scalar(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other) if isinstance(other, Tensor) else add_scalar(self, -other)

    def __rsub__(self, other):
        return add_scalar(neg(self), other)

    def __mul__(self, other):
        return mul(self, other) if isinstance(other, Tensor) else scale(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return div(self, other) if isinstance(other, Tensor) else scale(self, 1.0 / other)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _emit(data: np.ndarray, inputs: tuple[Tensor, ...], adjoint: Callable) -> Tensor:
    if DEBUG and not np.all(np.isfinite(data)):
        raise FloatingPointError("non-finite value produced by a primitive")
    out = Tensor(data)
    tape = active_tape()
    if tape is not None and any(t.requires_grad for t in inputs):
        out.requires_grad = True
        tape.records.append((out, inputs, adjoint))
    return out


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if g.shape == shape:
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


def _check_broadcast(a: Tensor, b: Tensor, op: str) -> tuple[int, ...]:
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ValueError(f"{op}: shape mismatch {a.shape} vs {b.shape}") from None


# ---------------------------------------------------------------- primitives

def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.data.ndim != 2 or b.data.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ValueError(f"matmul: shape mismatch {a.shape} @ {b.shape}")
    ad, bd = a.data, b.data
    return _emit(ad @ bd, (a, b), lambda g: (g @ bd.T, ad.T @ g))


def add(a: Tensor, b: Tensor) -> Tensor:
    _check_broadcast(a, b, "add")
    sa, sb = a.shape, b.shape
    return _emit(a.data + b.data, (a, b), lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)))


def sub(a: Tensor, b: Tensor) -> Tensor:
    _check_broadcast(a, b, "sub")
    sa, sb = a.shape, b.shape
    return _emit(a.data - b.data, (a, b), lambda g: (_unbroadcast(g, sa), _unbroadcast(-g, sb)))


def mul(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise (Hadamard) product."""
    _check_broadcast(a, b, "hadamard")
    ad, bd = a.data, b.data
    return _emit(ad * bd, (a, b),
                 lambda g: (_unbroadcast(g * bd, ad.shape), _unbroadcast(g * ad, bd.shape)))


hadamard = mul


def div(a: Tensor, b: Tensor) -> Tensor:
    _check_broadcast(a, b, "div")
    ad, bd = a.data, b.data
    out = ad / bd
    return _emit(out, (a, b),
                 lambda g: (_unbroadcast(g / bd, ad.shape), _unbroadcast(-g * out / bd, bd.shape)))


def neg(a: Tensor) -> Tensor:
    return _emit(-a.data, (a,), lambda g: (-g,))


def scale(a: Tensor, c: float) -> Tensor:
    c = float(c)
    return _emit(a.data * c, (a,), lambda g: (g * c,))


def add_scalar(a: Tensor, c: float) -> Tensor:
    return _emit(a.data + float(c), (a,), lambda g: (g,))


def concat(ts: Sequence[Tensor], axis: int = -1) -> Tensor:
    ts = tuple(ts)
    data = np.concatenate([t.data for t in ts], axis=axis)
    ax = axis % data.ndim
    cuts = np.cumsum([t.shape[ax] for t in ts])[:-1]
    return _emit(data, ts, lambda g: tuple(np.split(g, cuts, axis=ax)))


def reshape(a: Tensor, shape: Sequence[int]) -> Tensor:
    shape = tuple(shape)
    orig = a.shape
    try:
        data = a.data.reshape(shape)
    except ValueError:
        raise ValueError(f"reshape: cannot view {orig} as {shape}") from None
    return _emit(data, (a,), lambda g: (g.reshape(orig),))


def relu(a: Tensor) -> Tensor:
    mask = a.data > 0
    masks = getattr(_local, "relu_masks", None)
    if masks is not None:
        masks.append(mask)
    return _emit(np.where(mask, a.data, 0.0), (a,), lambda g: (g * mask,))


def exp(a: Tensor) -> Tensor:
    out = np.exp(a.data)
    return _emit(out, (a,), lambda g: (g * out,))


def log(a: Tensor) -> Tensor:
    ad = a.data
    return _emit(np.log(ad), (a,), lambda g: (g / ad,))


def sqrt(a: Tensor) -> Tensor:
    out = np.sqrt(a.data)
    return _emit(out, (a,), lambda g: (g / (2.0 * out),))


def _expand(g: np.ndarray, shape: tuple[int, ...], axis, keepdims: bool) -> np.ndarray:
    if axis is not None and not keepdims:
        g = np.expand_dims(g, axis)
    return np.broadcast_to(g, shape)


def sum_(a: Tensor, axis: int | None = None, keepdims: bool = False) -> Tensor:
    shape = a.shape
    return _emit(np.sum(a.data, axis=axis, keepdims=keepdims), (a,),
                 lambda g: (_expand(g, shape, axis, keepdims),))


def mean(a: Tensor, axis: int | None = None, keepdims: bool = False) -> Tensor:
    shape = a.shape
    n = a.size if axis is None else shape[axis]
    if n == 0:
        raise ValueError("mean of an empty axis")
    return _emit(np.mean(a.data, axis=axis, keepdims=keepdims), (a,),
                 lambda g: (_expand(g, shape, axis, keepdims) / n,))


def variance(a: Tensor, axis: int | None = None, keepdims: bool = False) -> Tensor:
    """Population variance (divides by n)."""
    shape = a.shape
    n = a.size if axis is None else shape[axis]
    if n == 0:
        raise ValueError("variance of an empty axis")
    centered = a.data - np.mean(a.data, axis=axis, keepdims=True)
    out = np.mean(centered * centered, axis=axis, keepdims=keepdims)
    return _emit(out, (a,), lambda g: (_expand(g, shape, axis, keepdims) * (2.0 / n) * centered,))


def gather(a: Tensor, idx: np.ndarray) -> Tensor:
    """Rows ``a[idx]``; the adjoint scatters back with a segment sum."""
    idx = np.asarray(idx, dtype=np.int64)
    n = a.shape[0]
    _kernels.check_segments(idx, n)
    return _emit(a.data[idx], (a,), lambda g: (_kernels.segment_sum(g, idx, n),))


def segment_sum(a: Tensor, seg: np.ndarray, n: int) -> Tensor:
    """Sum rows of ``a`` into ``n`` buckets keyed by ``seg``."""
    seg = np.asarray(seg, dtype=np.int64)
    if seg.shape[0] != a.shape[0]:
        raise ValueError("segment_sum: one segment id per row required")
    _kernels.check_segments(seg, n)
    return _emit(_kernels.segment_sum(a.data, seg, n), (a,), lambda g: (g[seg],))


def segment_softmax(logits: Tensor, seg: np.ndarray, n: int) -> Tensor:
    """Softmax over rows sharing a segment id, independently per column."""
    seg = np.asarray(seg, dtype=np.int64)
    if seg.shape[0] != logits.shape[0]:
        raise ValueError("segment_softmax: one segment id per row required")
    _kernels.check_segments(seg, n)
    s = _kernels.segment_softmax(logits.data, seg, n)
    return _emit(s, (logits,), lambda g: (_kernels.segment_softmax_grad(s, g, seg, n),))


# ---------------------------------------------------------------- reverse sweep

def backward(loss: Tensor, leaves: Sequence[Tensor], tape: Tape | None = None,
             strict: bool = False) -> list[np.ndarray]:
    """Gradients of scalar ``loss`` with respect to each of ``leaves``.

    A leaf that does not influence the loss gets a zero gradient; with
    ``strict`` a warning is emitted for it as well.
    """
    if loss.size != 1:
        raise ValueError(f"loss must be a scalar, got shape {loss.shape}")
    tape = tape if tape is not None else active_tape()
    if tape is None:
        raise RuntimeError("backward needs the tape the loss was recorded on")
    grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    for out, inputs, adjoint in reversed(tape.records):
        g = grads.pop(id(out), None)
        if g is None:
            continue
        for inp, gi in zip(inputs, adjoint(g)):
            if gi is None or not inp.requires_grad:
                continue
            key = id(inp)
            prev = grads.get(key)
            grads[key] = gi if prev is None else prev + gi
    result = []
    for leaf in leaves:
        g = grads.get(id(leaf))
        if g is None:
            if strict:
                warnings.warn(f"leaf {leaf!r} is disconnected from the loss", stacklevel=2)
            g = np.zeros_like(leaf.data)
        result.append(np.asarray(g, dtype=np.float64).reshape(leaf.shape))
    return result


def _eval_with_masks(f: Callable[[], Tensor]) -> tuple[float, list[np.ndarray]]:
    _local.relu_masks = []
    try:
        value = f().item()
        return value, _local.relu_masks
    finally:
        _local.relu_masks = None


def _same_masks(m1: list[np.ndarray], m2: list[np.ndarray]) -> bool:
    return len(m1) == len(m2) and all(np.array_equal(a, b) for a, b in zip(m1, m2))


def grad_check(f: Callable[[], Tensor], params: Sequence[Tensor], h: float = 1e-4,
               coords_per_param: int | None = None, rng: np.random.Generator | None = None,
               min_h: float = 1e-8, floor: float = 1e-10) -> float:
    """Max relative error between tape gradients and central differences.

    The difference quotient is the fourth-order five-point stencil, which
    keeps both truncation and cancellation error far below the tolerance
    even for gradients near 1e-7. ``f`` rebuilds the scalar loss from the current values of ``params``.
    With ``coords_per_param`` only that many randomly drawn coordinates of
    each parameter are differenced. A stencil whose sample points see different
    ReLU activation patterns straddles a kink, where the difference quotient
    is not a derivative estimate; the step is then shrunk tenfold until the
    patterns agree, and the coordinate is skipped if ``min_h`` is reached.

    The error is ``|analytic - numeric| / max(|analytic|, |numeric|, floor)``;
    ``floor`` keeps exactly-zero gradients, whose difference quotient is pure
    cancellation noise of order 1e-13, from reading as relative error 1.
    """
    if h <= 0:
        raise ValueError("h must be positive")
    params = list(params)
    if not params:
        return 0.0
    with Tape() as tape:
        loss = f()
    if not np.isfinite(loss.data).all():
        raise FloatingPointError("non-finite loss")
    analytic = backward(loss, params, tape)
    rng = rng if rng is not None else np.random.default_rng(0)
    worst = 0.0
    for p, ga in zip(params, analytic):
        flat = p.data.reshape(-1)
        coords = np.arange(flat.size)
        if coords_per_param is not None and flat.size > coords_per_param:
            coords = rng.choice(flat.size, size=coords_per_param, replace=False)
        for c in coords:
            orig = flat[c]
            step = h
            fd = None
            while step >= min_h:
                vals, masks = [], []
                for k in (2, 1, -1, -2):
                    flat[c] = orig + k * step
                    v, m = _eval_with_masks(f)
                    vals.append(v)
                    masks.append(m)
                flat[c] = orig
                if not all(math.isfinite(v) for v in vals):
                    raise FloatingPointError("non-finite loss during differencing")
                if all(_same_masks(masks[0], m) for m in masks[1:]):
                    fd = (8.0 * (vals[1] - vals[2]) - (vals[0] - vals[3])) / (12.0 * step)
                    break
                step /= 10.0
            if fd is None:
                warnings.warn(f"gradient check skipped coordinate {c} of {p.name or 'tensor'}: ReLU kink")
                continue
            an = float(ga.reshape(-1)[c])
            err = abs(an - fd) / max(abs(an), abs(fd), floor)
            worst = max(worst, err)
    return worst


# ---------------------------------------------------------------- optimizer

@dataclass
class AdamState:
    lr: float
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: list[np.ndarray] = field(default_factory=list)
    v: list[np.ndarray] = field(default_factory=list)

    @classmethod
    def for_params(cls, params: Sequence[Tensor], lr: float) -> "AdamState":
        return cls(lr=lr, m=[np.zeros_like(p.data) for p in params],
                   v=[np.zeros_like(p.data) for p in params])


def adam_step(state: AdamState, params: Sequence[Tensor],
              grads: Sequence[np.ndarray]) -> tuple[Sequence[Tensor], AdamState]:
    """One bias-corrected Adam update.

    Parameter arrays are replaced rather than written in place, so arrays
    captured before the step stay valid snapshots.
    """
    if not (len(params) == len(grads) == len(state.m)):
        raise ValueError("params, grads and optimizer state differ in length")
    for p, g, m in zip(params, grads, state.m):
        if p.shape != np.shape(g) or p.shape != m.shape:
            raise ValueError(f"adam_step: shape mismatch for {p!r}")
    state.step += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1 ** state.step
    c2 = 1.0 - b2 ** state.step
    for k, (p, g) in enumerate(zip(params, grads)):
        state.m[k] = b1 * state.m[k] + (1.0 - b1) * g
        state.v[k] = b2 * state.v[k] + (1.0 - b2) * (g * g)
        p.data = p.data - state.lr * (state.m[k] / c1) / (np.sqrt(state.v[k] / c2) + state.eps)
    return params, state
