"""Dense-tensor reverse-mode automatic differentiation.

Minimal engine: a ``Tensor`` wraps a numpy array; while a ``Tape`` is
active, every primitive records its adjoint so ``Tape.backward`` can
replay the graph in exact reverse execution order. Without an active
tape the same primitives run forward-only, which is what rollout workers
use. Tapes are single-owner and refuse a second backward pass.

Shapes are dense and fixed; graph batching elsewhere in the package is
done with masks, not ragged tensors.
"""

from __future__ import annotations

import struct
import threading
from dataclasses import dataclass, field

import numpy as np

_DEFAULT_DTYPE = np.float64


def set_default_dtype(dtype) -> None:
    """Switch new-tensor precision (float64 for tests, float32 for speed)."""
    global _DEFAULT_DTYPE
    dtype = np.dtype(dtype)
    if dtype not in (np.dtype(np.float32), np.dtype(np.float64)):
        raise ValueError(f"unsupported dtype {dtype}")
    _DEFAULT_DTYPE = dtype.type


def default_dtype():
    return _DEFAULT_DTYPE


class ShapeError(ValueError):
    def __init__(self, op: str, *shapes):
        super().__init__(f"{op}: incompatible shapes {' vs '.join(str(s) for s in shapes)}")
        self.op = op
        self.shapes = shapes


class TapeExhaustedError(RuntimeError):
    pass


_tls = threading.local()


def _active_tape():
    return getattr(_tls, "tape", None)


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "_leaf")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        keep = isinstance(data, np.ndarray) and data.dtype in (np.float32, np.float64)
        arr = np.asarray(data)
        if dtype is not None:
            arr = arr.astype(dtype)
        elif not keep:
            arr = arr.astype(_DEFAULT_DTYPE)
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad = None
        self._leaf = True

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    def item(self) -> float:
        return float(self.data)

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, grad={self.requires_grad})"

    def __add__(self, other):
        return add(self, _lift(other))

    def __radd__(self, other):
        return add(_lift(other), self)

    def __sub__(self, other):
        return sub(self, _lift(other))

    def __rsub__(self, other):
        return sub(_lift(other), self)

    def __mul__(self, other):
        return mul(self, _lift(other))

    def __rmul__(self, other):
        return mul(_lift(other), self)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, _lift(other))


def _lift(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(np.asarray(x))


@dataclass
class _Node:
    out: Tensor
    parents: list  # [(Tensor, vjp callable)]


class Tape:
    """Ordered record of primitive executions. Single-owner, one backward."""

    def __init__(self):
        self._nodes: list[_Node] = []
        self._consumed = False

    def __enter__(self):
        if _active_tape() is not None:
            raise RuntimeError("a Tape is already active on this thread")
        _tls.tape = self
        return self

    def __exit__(self, *exc):
        _tls.tape = None
        return False

    def _record(self, out: Tensor, parents) -> None:
        out._leaf = False
        self._nodes.append(_Node(out, parents))

    def backward(self, loss: Tensor) -> dict:
        """Accumulate gradients of a scalar loss into ``.grad`` of every
        requires_grad leaf reachable from it; returns {leaf: ndarray}."""
        if self._consumed:
            raise TapeExhaustedError("tape already consumed by a previous backward pass")
        self._consumed = True
        if loss.data.size != 1:
            raise ValueError(f"backward expects a scalar loss, got shape {loss.shape}")
        grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
        leaf_grads: dict[Tensor, np.ndarray] = {}
        for node in reversed(self._nodes):
            g = grads.pop(id(node.out), None)
            if g is None:
                continue
            for parent, vjp in node.parents:
                pg = vjp(g)
                if pg is None:
                    continue
                pid = id(parent)
                if pid in grads:
                    grads[pid] = grads[pid] + pg
                else:
                    grads[pid] = pg
                if parent._leaf and parent.requires_grad:
                    leaf_grads[parent] = grads[pid]
        for t, g in leaf_grads.items():
            t.grad = g if t.grad is None else t.grad + g
        return leaf_grads


def _needs_graph(*tensors) -> bool:
    return _active_tape() is not None and any(t.requires_grad or not t._leaf for t in tensors)


def _make(out_data, parents) -> Tensor:
    out = Tensor(out_data)
    tape = _active_tape()
    if tape is not None and parents:
        out.requires_grad = True
        tape._record(out, parents)
    return out


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum gradient over axes that numpy broadcasting introduced."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, (gs, s) in enumerate(zip(grad.shape, shape)) if s == 1 and gs != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


# ---------------------------------------------------------------------------
# primitives


def add(a: Tensor, b: Tensor) -> Tensor:
    a, b = _lift(a), _lift(b)
    try:
        out = a.data + b.data
    except ValueError:
        raise ShapeError("add", a.shape, b.shape) from None
    if not _needs_graph(a, b):
        return Tensor(out)
    parents = []
    if a.requires_grad or not a._leaf:
        parents.append((a, lambda g, sh=a.shape: _unbroadcast(g, sh)))
    if b.requires_grad or not b._leaf:
        parents.append((b, lambda g, sh=b.shape: _unbroadcast(g, sh)))
    return _make(out, parents)


def sub(a: Tensor, b: Tensor) -> Tensor:
    a, b = _lift(a), _lift(b)
    try:
        out = a.data - b.data
    except ValueError:
        raise ShapeError("sub", a.shape, b.shape) from None
    if not _needs_graph(a, b):
        return Tensor(out)
    parents = []
    if a.requires_grad or not a._leaf:
        parents.append((a, lambda g, sh=a.shape: _unbroadcast(g, sh)))
    if b.requires_grad or not b._leaf:
        parents.append((b, lambda g, sh=b.shape: _unbroadcast(-g, sh)))
    return _make(out, parents)


def mul(a: Tensor, b: Tensor) -> Tensor:
    a, b = _lift(a), _lift(b)
    try:
        out = a.data * b.data
    except ValueError:
        raise ShapeError("mul", a.shape, b.shape) from None
    if not _needs_graph(a, b):
        return Tensor(out)
    parents = []
    if a.requires_grad or not a._leaf:
        parents.append((a, lambda g, bd=b.data, sh=a.shape: _unbroadcast(g * bd, sh)))
    if b.requires_grad or not b._leaf:
        parents.append((b, lambda g, ad=a.data, sh=b.shape: _unbroadcast(g * ad, sh)))
    return _make(out, parents)


def neg(a: Tensor) -> Tensor:
    a = _lift(a)
    if not _needs_graph(a):
        return Tensor(-a.data)
    return _make(-a.data, [(a, lambda g: -g)])


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product with numpy batch broadcasting on leading axes."""
    a, b = _lift(a), _lift(b)
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise ShapeError("matmul", a.shape, b.shape)
    try:
        out = a.data @ b.data
    except ValueError:
        raise ShapeError("matmul", a.shape, b.shape) from None
    if not _needs_graph(a, b):
        return Tensor(out)
    parents = []
    if a.requires_grad or not a._leaf:
        parents.append((a, lambda g, bd=b.data, sh=a.shape:
                        _unbroadcast(g @ bd.swapaxes(-1, -2), sh)))
    if b.requires_grad or not b._leaf:
        parents.append((b, lambda g, ad=a.data, sh=b.shape:
                        _unbroadcast(ad.swapaxes(-1, -2) @ g, sh)))
    return _make(out, parents)


def tanh(a: Tensor) -> Tensor:
    a = _lift(a)
    out = np.tanh(a.data)
    if not _needs_graph(a):
        return Tensor(out)
    return _make(out, [(a, lambda g, o=out: g * (1.0 - o * o))])


def exp(a: Tensor) -> Tensor:
    a = _lift(a)
    out = np.exp(a.data)
    if not _needs_graph(a):
        return Tensor(out)
    return _make(out, [(a, lambda g, o=out: g * o)])


def log(a: Tensor) -> Tensor:
    a = _lift(a)
    out = np.log(a.data)
    if not _needs_graph(a):
        return Tensor(out)
    return _make(out, [(a, lambda g, ad=a.data: g / ad)])


def pow_const(a: Tensor, p: float) -> Tensor:
    a = _lift(a)
    out = a.data ** p
    if not _needs_graph(a):
        return Tensor(out)
    return _make(out, [(a, lambda g, ad=a.data: g * p * ad ** (p - 1.0))])


def softmax(a: Tensor, axis: int = -1) -> Tensor:
    """Numerically shifted softmax along one axis; rows sum to one."""
    a = _lift(a)
    shifted = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    out = e / e.sum(axis=axis, keepdims=True)
    if not _needs_graph(a):
        return Tensor(out)

    def vjp(g, o=out, ax=axis):
        return o * (g - (g * o).sum(axis=ax, keepdims=True))

    return _make(out, [(a, vjp)])


def layer_norm(a: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalize the last axis to zero mean, unit variance (no affine)."""
    a = _lift(a)
    mu = a.data.mean(axis=-1, keepdims=True)
    xc = a.data - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    out = xc * inv
    if not _needs_graph(a):
        return Tensor(out)

    def vjp(g, xh=out, iv=inv):
        n = g.shape[-1]
        return iv * (g - g.mean(axis=-1, keepdims=True) - xh * (g * xh).sum(axis=-1, keepdims=True) / n)

    return _make(out, [(a, vjp)])


def concat(tensors, axis: int = -1) -> Tensor:
    tensors = [_lift(t) for t in tensors]
    try:
        out = np.concatenate([t.data for t in tensors], axis=axis)
    except ValueError:
        raise ShapeError("concat", *[t.shape for t in tensors]) from None
    if not _needs_graph(*tensors):
        return Tensor(out)
    parents = []
    sizes = [t.shape[axis] for t in tensors]
    offsets = np.cumsum([0] + sizes)
    for t, lo, hi in zip(tensors, offsets[:-1], offsets[1:]):
        if t.requires_grad or not t._leaf:
            def vjp(g, lo=lo, hi=hi, ax=axis):
                sl = [slice(None)] * g.ndim
                sl[ax] = slice(lo, hi)
                return g[tuple(sl)]
            parents.append((t, vjp))
    return _make(out, parents)


def mean(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    a = _lift(a)
    out = a.data.mean(axis=axis, keepdims=keepdims)
    if not _needs_graph(a):
        return Tensor(out)

    def vjp(g, sh=a.shape, ax=axis, kd=keepdims):
        n = np.prod(sh) if ax is None else np.prod([sh[i] for i in np.atleast_1d(ax)])
        if not kd and ax is not None:
            g = np.expand_dims(g, tuple(np.atleast_1d(ax)))
        return np.broadcast_to(g / n, sh).copy()

    return _make(out, [(a, vjp)])


def tsum(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    a = _lift(a)
    out = a.data.sum(axis=axis, keepdims=keepdims)
    if not _needs_graph(a):
        return Tensor(out)

    def vjp(g, sh=a.shape, ax=axis, kd=keepdims):
        if not kd and ax is not None:
            g = np.expand_dims(g, tuple(np.atleast_1d(ax)))
        return np.broadcast_to(g, sh).copy()

    return _make(out, [(a, vjp)])


def clip(a: Tensor, lo: float, hi: float) -> Tensor:
    """Clamp values; gradient passes only strictly inside the interval."""
    a = _lift(a)
    out = np.clip(a.data, lo, hi)
    if not _needs_graph(a):
        return Tensor(out)
    inside = (a.data > lo) & (a.data < hi)
    return _make(out, [(a, lambda g, m=inside: g * m)])


def minimum(a: Tensor, b: Tensor) -> Tensor:
    a, b = _lift(a), _lift(b)
    try:
        out = np.minimum(a.data, b.data)
    except ValueError:
        raise ShapeError("minimum", a.shape, b.shape) from None
    if not _needs_graph(a, b):
        return Tensor(out)
    take_a = a.data <= b.data
    parents = []
    if a.requires_grad or not a._leaf:
        parents.append((a, lambda g, m=take_a, sh=a.shape: _unbroadcast(g * m, sh)))
    if b.requires_grad or not b._leaf:
        parents.append((b, lambda g, m=~take_a, sh=b.shape: _unbroadcast(g * m, sh)))
    return _make(out, parents)


def gather_rows(a: Tensor, idx: np.ndarray) -> Tensor:
    """Select rows along axis 0; gradient scatter-adds back."""
    a = _lift(a)
    idx = np.asarray(idx, dtype=np.intp)
    out = a.data[idx]
    if not _needs_graph(a):
        return Tensor(out)

    def vjp(g, sh=a.shape, ix=idx):
        buf = np.zeros(sh, dtype=g.dtype)
        np.add.at(buf, ix, g)
        return buf

    return _make(out, [(a, vjp)])


def narrow(a: Tensor, axis: int, start: int, length: int) -> Tensor:
    """Contiguous slice along one axis; gradient zero-pads back."""
    a = _lift(a)
    sl = [slice(None)] * a.ndim
    sl[axis] = slice(start, start + length)
    sl = tuple(sl)
    out = a.data[sl]
    if not _needs_graph(a):
        return Tensor(out)

    def vjp(g, sh=a.shape, s=sl):
        buf = np.zeros(sh, dtype=g.dtype)
        buf[s] = g
        return buf

    return _make(out, [(a, vjp)])


def transpose(a: Tensor, axes) -> Tensor:
    a = _lift(a)
    axes = tuple(axes)
    out = a.data.transpose(axes)
    if not _needs_graph(a):
        return Tensor(out)
    inv = tuple(np.argsort(axes))
    return _make(out, [(a, lambda g, iv=inv: g.transpose(iv))])


def reshape(a: Tensor, shape) -> Tensor:
    a = _lift(a)
    out = a.data.reshape(shape)
    if not _needs_graph(a):
        return Tensor(out)
    return _make(out, [(a, lambda g, sh=a.shape: g.reshape(sh))])


# ---------------------------------------------------------------------------
# optimizer


@dataclass
class AdamState:
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)
    step: int = 0


def global_grad_norm(grads: dict) -> float:
    total = 0.0
    for g in grads.values():
        total += float(np.sum(np.asarray(g, dtype=np.float64) ** 2))
    return float(np.sqrt(total))


def adam_step(params: dict, grads: dict, state: AdamState, lr: float,
              beta1: float = 0.9, beta2: float = 0.995, eps: float = 2e-6,
              max_grad_norm: float = 5.0) -> float:
    """In-place Adam update with bias correction; the gradient set is
    global-norm clipped before touching the moments. Returns the
    pre-clip gradient norm."""
    for name, g in grads.items():
        if not np.all(np.isfinite(g)):
            raise FloatingPointError(f"non-finite gradient for parameter {name!r}")
    norm = global_grad_norm(grads)
    scale = 1.0
    if max_grad_norm is not None and norm > max_grad_norm:
        scale = max_grad_norm / norm
    state.step += 1
    t = state.step
    for name, p in params.items():
        if name not in grads:
            continue
        g = np.asarray(grads[name]) * scale
        if name not in state.m:
            state.m[name] = np.zeros_like(p.data)
            state.v[name] = np.zeros_like(p.data)
        m = state.m[name]
        v = state.v[name]
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * g * g
        mhat = m / (1.0 - beta1 ** t)
        vhat = v / (1.0 - beta2 ** t)
        p.data -= (lr * mhat / (np.sqrt(vhat) + eps)).astype(p.data.dtype)
    return norm


def xavier_uniform(rng: np.random.Generator, fan_in: int, fan_out: int,
                   shape=None, gain: float = 1.0, dtype=None) -> Tensor:
    limit = gain * np.sqrt(6.0 / (fan_in + fan_out))
    shape = (fan_in, fan_out) if shape is None else shape
    data = rng.uniform(-limit, limit, size=shape)
    return Tensor(data, requires_grad=True, dtype=dtype or _DEFAULT_DTYPE)


# ---------------------------------------------------------------------------
# checkpoint container
#
# Byte layout (all integers little-endian):
#   magic   4 bytes  b"ESWT"
#   version u32      1
#   count   u32      number of tensors
#   per tensor:
#     name_len u16, name utf-8
#     dtype    u8   (0 = float64, 1 = float32)
#     ndim     u8
#     dims     u32 * ndim
#     data     raw little-endian values, C order

_MAGIC = b"ESWT"
_DTYPE_CODES = {np.dtype(np.float64): 0, np.dtype(np.float32): 1}
_CODE_DTYPES = {0: np.dtype("<f8"), 1: np.dtype("<f4")}


def save_checkpoint(path, tensors: dict) -> None:
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<II", 1, len(tensors)))
        for name, t in tensors.items():
            arr = t.data if isinstance(t, Tensor) else np.asarray(t)
            code = _DTYPE_CODES[np.dtype(arr.dtype)]
            raw = name.encode("utf-8")
            fh.write(struct.pack("<H", len(raw)))
            fh.write(raw)
            fh.write(struct.pack("<BB", code, arr.ndim))
            fh.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
            fh.write(np.ascontiguousarray(arr).astype(arr.dtype.newbyteorder("<")).tobytes())


def load_checkpoint(path) -> dict:
    with open(path, "rb") as fh:
        if fh.read(4) != _MAGIC:
            raise ValueError(f"{path}: not a checkpoint container")
        version, count = struct.unpack("<II", fh.read(8))
        if version != 1:
            raise ValueError(f"{path}: unsupported container version {version}")
        out = {}
        for _ in range(count):
            (name_len,) = struct.unpack("<H", fh.read(2))
            name = fh.read(name_len).decode("utf-8")
            code, ndim = struct.unpack("<BB", fh.read(2))
            dims = struct.unpack(f"<{ndim}I", fh.read(4 * ndim))
            dtype = _CODE_DTYPES[code]
            n = int(np.prod(dims)) if ndim else 1
            data = np.frombuffer(fh.read(n * dtype.itemsize), dtype=dtype).reshape(dims)
            out[name] = data.astype(dtype.newbyteorder("=")).copy()
    return out
