"""Dense float64 tensors with tape-based reverse-mode autodiff.

Ops record onto the innermost active :class:`Tape` (entered with ``with``) when
at least one input requires grad; outside a tape they just compute. The op set
is deliberately small: matmul, transpose, reshape, concat, slice, add,
multiply, divide, scale, mean, rowsoftmax, sigmoid, log, square, layer_norm.
"""

from __future__ import annotations

import contextlib
import math
import struct
import threading
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .errors import (
    FormatVersionMismatch,
    MissingGrad,
    NonScalarLoss,
    ShapeMismatch,
    TensorFormatError,
)

DTYPE = np.float64


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "name", "__weakref__")

    def __init__(self, data, requires_grad=False, name=None):
        self.data = np.asarray(data, dtype=DTYPE)
        self.requires_grad = requires_grad
        self.grad = None
        self.name = name

    @property
    def shape(self):
        return self.data.shape

    @property
    def size(self):
        return self.data.size

    def item(self):
        return float(self.data.reshape(-1)[0])

    def numpy(self):
        return self.data

    def zero_grad(self):
        self.grad = None

    def __repr__(self):
        flag = ", requires_grad" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}{flag})"

    def __add__(self, other):
        return add(self, _lift(other))

    __radd__ = __add__

    def __sub__(self, other):
        return add(self, scale(_lift(other), -1.0))

    def __rsub__(self, other):
        return add(_lift(other), scale(self, -1.0))

    def __mul__(self, other):
        if isinstance(other, (int, float)):
            return scale(self, other)
        return multiply(self, _lift(other))

    __rmul__ = __mul__

    def __truediv__(self, other):
        if isinstance(other, (int, float)):
            return scale(self, 1.0 / other)
        return divide(self, _lift(other))

    def __neg__(self):
        return scale(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, key):
        return slice_(self, key)

    @property
    def T(self):
        return transpose(self)


def _lift(x):
    return x if isinstance(x, Tensor) else Tensor(x)


def constant(data) -> Tensor:
    return Tensor(data, requires_grad=False)


def parameter(data, name=None) -> Tensor:
    return Tensor(np.array(data, dtype=DTYPE), requires_grad=True, name=name)


# --------------------------------------------------------------------------- tape

_local = threading.local()


def _stack():
    if not hasattr(_local, "tapes"):
        _local.tapes = []
    return _local.tapes


def active_tape():
    stack = _stack()
    return stack[-1] if stack else None


@dataclass
class Node:
    out: Tensor
    inputs: tuple
    backward: Callable


class Tape:
    """Append-only op record; one tape belongs to one thread."""

    def __init__(self):
        self.nodes: list[Node] = []

    def __enter__(self):
        _stack().append(self)
        return self

    def __exit__(self, *exc):
        _stack().pop()

    def __len__(self):
        return len(self.nodes)

    def _propagate(self, loss):
        if loss.size != 1:
            raise NonScalarLoss(f"loss must be scalar, got shape {loss.shape}")
        grads = {id(loss): (loss, np.ones_like(loss.data))}
        for node in reversed(self.nodes):
            entry = grads.pop(id(node.out), None)
            if entry is None:
                continue
            in_grads = node.backward(entry[1])
            for inp, g in zip(node.inputs, in_grads):
                if g is None or not inp.requires_grad:
                    continue
                key = id(inp)
                if key in grads:
                    grads[key] = (inp, grads[key][1] + g)
                else:
                    grads[key] = (inp, g)
        # whatever is left was never produced on this tape: the leaves
        return grads

    def backward(self, loss: Tensor) -> None:
        """Accumulate d(loss)/d(leaf) into ``.grad`` of every leaf that requires grad."""
        for leaf, g in self._propagate(loss).values():
            if not leaf.requires_grad:
                continue
            if leaf.grad is None:
                leaf.grad = g.copy()
            else:
                leaf.grad = leaf.grad + g

    def gradients(self, loss: Tensor, wrt: Sequence[Tensor]) -> list[np.ndarray]:
        """Return d(loss)/d(t) for each ``t`` in ``wrt`` without touching ``.grad``."""
        found = self._propagate(loss)
        return [found[id(t)][1] if id(t) in found else np.zeros_like(t.data) for t in wrt]


def backward(tape: Tape, loss: Tensor) -> None:
    tape.backward(loss)


def _record(out_data, inputs, backward_fn):
    out = Tensor(out_data)
    tape = active_tape()
    if tape is not None and any(t.requires_grad for t in inputs):
        out.requires_grad = True
        tape.nodes.append(Node(out, tuple(inputs), backward_fn))
    return out


# ------------------------------------------------------------------ MAC counting


class MacCounter:
    def __init__(self):
        self.counts: dict[str, int] = {}

    def add(self, tag, n):
        self.counts[tag] = self.counts.get(tag, 0) + int(n)

    def __getitem__(self, tag):
        return self.counts.get(tag, 0)


@contextlib.contextmanager
def count_macs():
    """Count multiply-accumulates of every matmul run in this thread, keyed by tag."""
    counter = MacCounter()
    prev = getattr(_local, "macs", None)
    _local.macs = counter
    try:
        yield counter
    finally:
        _local.macs = prev


# ------------------------------------------------------------------------- ops


def _unbroadcast(g, shape):
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for i, n in enumerate(shape):
        if n == 1 and g.shape[i] != 1:
            g = g.sum(axis=i, keepdims=True)
    return g


def matmul(a: Tensor, b: Tensor, tag: str = "other") -> Tensor:
    if a.data.ndim < 2 or b.data.ndim < 2:
        raise ShapeMismatch(f"matmul needs ndim >= 2, got {a.shape} @ {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise ShapeMismatch(f"matmul inner dims differ: {a.shape} @ {b.shape}")
    out = a.data @ b.data
    counter = getattr(_local, "macs", None)
    if counter is not None:
        counter.add(tag, out.size * a.shape[-1])
    A, B = a.data, b.data

    def back(g):
        ga = gb = None
        if a.requires_grad:
            ga = _unbroadcast(g @ np.swapaxes(B, -1, -2), A.shape)
        if b.requires_grad:
            gb = _unbroadcast(np.swapaxes(A, -1, -2) @ g, B.shape)
        return ga, gb

    return _record(out, (a, b), back)


def transpose(a: Tensor, axes=None) -> Tensor:
    if axes is None:
        axes = list(range(a.data.ndim))
        axes[-1], axes[-2] = axes[-2], axes[-1]
    axes = tuple(axes)
    inv = tuple(np.argsort(axes))
    return _record(np.transpose(a.data, axes), (a,), lambda g: (np.transpose(g, inv),))


def reshape(a: Tensor, shape) -> Tensor:
    old = a.shape
    return _record(a.data.reshape(shape), (a,), lambda g: (g.reshape(old),))


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    datas = [t.data for t in tensors]
    try:
        out = np.concatenate(datas, axis=axis)
    except ValueError as exc:
        raise ShapeMismatch(str(exc)) from None
    cuts = np.cumsum([d.shape[axis] for d in datas])[:-1]

    def back(g):
        return tuple(np.split(g, cuts, axis=axis))

    return _record(out, tuple(tensors), back)


def slice_(a: Tensor, key) -> Tensor:
    shape = a.shape

    def back(g):
        full = np.zeros(shape, dtype=DTYPE)
        full[key] = g
        return (full,)

    return _record(a.data[key], (a,), back)


def add(a: Tensor, b: Tensor) -> Tensor:
    sa, sb = a.shape, b.shape
    return _record(
        a.data + b.data, (a, b), lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb))
    )


def multiply(a: Tensor, b: Tensor) -> Tensor:
    A, B = a.data, b.data
    return _record(
        A * B, (a, b), lambda g: (_unbroadcast(g * B, A.shape), _unbroadcast(g * A, B.shape))
    )


def divide(a: Tensor, b: Tensor) -> Tensor:
    A, B = a.data, b.data
    return _record(
        A / B,
        (a, b),
        lambda g: (_unbroadcast(g / B, A.shape), _unbroadcast(-g * A / (B * B), B.shape)),
    )


def scale(a: Tensor, c: float) -> Tensor:
    c = float(c)
    return _record(a.data * c, (a,), lambda g: (g * c,))


def mean(a: Tensor, axis=None, keepdims=False) -> Tensor:
    shape = a.shape
    out = a.data.mean(axis=axis, keepdims=keepdims)
    count = a.data.size // max(out.size, 1)

    def back(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g / count, shape).copy(),)

    return _record(out, (a,), back)


def sum_all(a: Tensor) -> Tensor:
    return scale(mean(a), a.size)


def rowsoftmax(a: Tensor) -> Tensor:
    x = a.data - a.data.max(axis=-1, keepdims=True)
    e = np.exp(x)
    y = e / e.sum(axis=-1, keepdims=True)
    return _record(y, (a,), lambda g: (y * (g - (g * y).sum(axis=-1, keepdims=True)),))


def _sigmoid(x):
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def sigmoid(a: Tensor) -> Tensor:
    y = _sigmoid(a.data)
    return _record(y, (a,), lambda g: (g * y * (1.0 - y),))


def log(a: Tensor) -> Tensor:
    x = a.data
    return _record(np.log(x), (a,), lambda g: (g / x,))


def square(a: Tensor) -> Tensor:
    x = a.data
    return _record(x * x, (a,), lambda g: (2.0 * x * g,))


def layer_norm(a: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalize the last axis to zero mean / unit variance (no affine part)."""
    x = a.data
    mu = x.mean(axis=-1, keepdims=True)
    xc = x - mu
    inv = 1.0 / np.sqrt((xc * xc).mean(axis=-1, keepdims=True) + eps)
    y = xc * inv

    def back(g):
        n = x.shape[-1]
        gy = g - g.mean(axis=-1, keepdims=True)
        return (inv * (gy - y * (g * y).sum(axis=-1, keepdims=True) / n),)

    return _record(y, (a,), back)


# ------------------------------------------------------------------- attention


@dataclass
class AttentionParams:
    w_q: Tensor
    w_k: Tensor
    w_v: Tensor
    w_o: Tensor
    heads: int = 4

    def __post_init__(self):
        c = self.w_q.shape[0]
        for w in self.parameters():
            if w.shape != (c, c):
                raise ShapeMismatch(f"projection must be {c}x{c}, got {w.shape}")
        if self.heads < 1 or c % self.heads:
            raise ShapeMismatch(f"heads={self.heads} must divide C={c}")

    @property
    def dim(self):
        return self.w_q.shape[0]

    def parameters(self):
        return [self.w_q, self.w_k, self.w_v, self.w_o]

    @classmethod
    def init(cls, dim, heads, rng, std=None, prefix="attn"):
        std = 1.0 / math.sqrt(dim) if std is None else std
        ws = [parameter(rng.normal(0.0, std, (dim, dim)), f"{prefix}.{n}") for n in "qkvo"]
        return cls(*ws, heads=heads)


# above this many score entries an untaped forward runs one head at a time
_HEAD_LOOP_ENTRIES = 1 << 24


def _split_heads(x: Tensor, h: int) -> Tensor:
    *lead, n, c = x.shape
    x = reshape(x, (*lead, n, h, c // h))
    nd = len(lead)
    return transpose(x, (*range(nd), nd + 1, nd, nd + 2))


def _merge_heads(x: Tensor) -> Tensor:
    *lead, h, n, d = x.shape
    nd = len(lead)
    x = transpose(x, (*range(nd), nd + 1, nd, nd + 2))
    return reshape(x, (*lead, n, h * d))


def attention(params: AttentionParams, queries: Tensor, keys: Tensor, return_weights=False):
    """Multi-head attention of ``queries`` (..., n, C) over ``keys`` (..., m, C).

    Keys double as values. Returns (..., n, C), plus the (..., h, n, m)
    weight array when ``return_weights`` is set.
    """
    c = params.dim
    if queries.shape[-1] != c or keys.shape[-1] != c:
        raise ShapeMismatch(f"attention width {c} vs inputs {queries.shape}, {keys.shape}")
    if queries.shape[:-2] != keys.shape[:-2]:
        raise ShapeMismatch(f"batch dims differ: {queries.shape} vs {keys.shape}")
    if queries.shape[-2] < 1 or keys.shape[-2] < 1:
        raise ShapeMismatch("attention over an empty sequence")
    h = params.heads
    d = c // h
    q = _split_heads(matmul(queries, params.w_q, "proj"), h)
    k = _split_heads(matmul(keys, params.w_k, "proj"), h)
    v = _split_heads(matmul(keys, params.w_v, "proj"), h)
    entries = math.prod(q.shape[:-1]) * keys.shape[-2]
    if active_tape() is None and entries > _HEAD_LOOP_ENTRIES and not return_weights:
        nd = q.data.ndim
        idx = lambda i: (slice(None),) * (nd - 3) + (slice(i, i + 1),)
        parts = []
        for i in range(h):
            qi, ki, vi = q[idx(i)], k[idx(i)], v[idx(i)]
            s = scale(matmul(qi, transpose(ki), "core"), 1.0 / math.sqrt(d))
            parts.append(matmul(rowsoftmax(s), vi, "core"))
        ctx = concat(parts, axis=nd - 3)
        weights = None
    else:
        s = scale(matmul(q, transpose(k), "core"), 1.0 / math.sqrt(d))
        a = rowsoftmax(s)
        ctx = matmul(a, v, "core")
        weights = a.data
    out = matmul(_merge_heads(ctx), params.w_o, "proj")
    return (out, weights) if return_weights else out


def scaled_dot_attention(params: AttentionParams, seq: Tensor, return_weights=False):
    """Self-attention over the token axis of ``seq`` (..., n, C)."""
    return attention(params, seq, seq, return_weights=return_weights)


# ------------------------------------------------------------ gradient checking


def finite_diff_check(f, x, eps: float = 1e-5, coords=None) -> float:
    """Max relative error between tape gradients and central differences.

    ``x`` is a Tensor or a list of Tensors; ``f`` maps it to a scalar Tensor.
    ``coords`` optionally limits the check to ``(tensor_index, flat_index)`` pairs.
    Error per coordinate is ``|a - b| / max(1, |a|, |b|)``.
    """
    xs = list(x) if isinstance(x, (list, tuple)) else [x]
    saved = [(t.requires_grad, t.grad) for t in xs]
    for t in xs:
        t.requires_grad = True
    try:
        with Tape() as tape:
            y = f(x)
        analytic = tape.gradients(y, xs)
        if coords is None:
            coords = [(i, j) for i, t in enumerate(xs) for j in range(t.size)]
        worst = 0.0
        for i, j in coords:
            flat = xs[i].data.reshape(-1)
            orig = flat[j]
            flat[j] = orig + eps
            up = f(x).item()
            flat[j] = orig - eps
            down = f(x).item()
            flat[j] = orig
            num = (up - down) / (2.0 * eps)
            a = analytic[i].reshape(-1)[j]
            worst = max(worst, abs(a - num) / max(1.0, abs(a), abs(num)))
        return worst
    finally:
        for t, (rg, g) in zip(xs, saved):
            t.requires_grad, t.grad = rg, g


# ------------------------------------------------------------------- optimizer


@dataclass
class AdamWState:
    step: int = 0
    m: list = field(default_factory=list)
    v: list = field(default_factory=list)


def adamw_step(
    params: Sequence[Tensor],
    state: AdamWState,
    lr: float = 1e-4,
    betas: tuple[float, float] = (0.9, 0.999),
    weight_decay: float = 0.01,
    eps: float = 1e-8,
) -> None:
    """One AdamW update in place (weight decay decoupled from the moments)."""
    for p in params:
        if p.grad is None:
            raise MissingGrad(f"parameter {p.name or p.shape} has no gradient")
    if not state.m:
        state.m = [np.zeros_like(p.data) for p in params]
        state.v = [np.zeros_like(p.data) for p in params]
    b1, b2 = betas
    state.step += 1
    c1 = 1.0 - b1**state.step
    c2 = 1.0 - b2**state.step
    for p, m, v in zip(params, state.m, state.v):
        g = p.grad
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        if weight_decay:
            p.data *= 1.0 - lr * weight_decay
        p.data -= lr * (m / c1) / (np.sqrt(v / c2) + eps)


def zero_grad(params: Sequence[Tensor]) -> None:
    for p in params:
        p.grad = None


# ---------------------------------------------------------------- PRTK format

MAGIC = b"PRTK"
VERSION = 1


def encode_prtk(array) -> bytes:
    arr = np.asarray(array)
    if arr.ndim > 255:
        raise TensorFormatError("rank above 255")
    head = MAGIC + struct.pack("<BB", VERSION, arr.ndim)
    head += struct.pack(f"<{arr.ndim}I", *arr.shape)
    return head + np.ascontiguousarray(arr, dtype="<f4").tobytes()


def decode_prtk(buf: bytes, offset: int = 0) -> tuple[np.ndarray, int]:
    """Decode one record at ``offset``; return the float64 array and the next offset."""
    if buf[offset : offset + 4] != MAGIC:
        raise TensorFormatError(f"bad magic at byte {offset}")
    if len(buf) < offset + 6:
        raise TensorFormatError("truncated header")
    version, rank = buf[offset + 4], buf[offset + 5]
    if version != VERSION:
        raise FormatVersionMismatch(f"PRTK version {version}, expected {VERSION}")
    pos = offset + 6
    if len(buf) < pos + 4 * rank:
        raise TensorFormatError("truncated extents")
    shape = struct.unpack_from(f"<{rank}I", buf, pos)
    pos += 4 * rank
    n = math.prod(shape)
    end = pos + 4 * n
    if len(buf) < end:
        raise TensorFormatError(f"payload needs {4 * n} bytes, {len(buf) - pos} left")
    arr = np.frombuffer(buf, dtype="<f4", count=n, offset=pos).astype(DTYPE).reshape(shape)
    return arr, end


def write_tensor(path, array) -> None:
    with open(path, "wb") as fh:
        fh.write(encode_prtk(array.data if isinstance(array, Tensor) else array))


def read_tensor(path) -> np.ndarray:
    with open(path, "rb") as fh:
        buf = fh.read()
    arr, end = decode_prtk(buf)
    if end != len(buf):
        raise TensorFormatError(f"{len(buf) - end} trailing bytes in {path}")
    return arr
