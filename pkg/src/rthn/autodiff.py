"""Dense float64 tensors with tape-based reverse-mode differentiation.

Every primitive that produces a tensor depending on a ``requires_grad`` input
records itself on the current thread's :class:`GradTape`. :func:`backward`
replays that tape in reverse exactly once and then clears it. Tapes are
thread-local, so independent workers never share graph state.
"""

import threading
from contextlib import contextmanager

import numpy as np

from . import kernels


class ShapeError(ValueError):
    """Operand shapes are incompatible."""


class MaskError(ValueError):
    """A softmax row has no unmasked entry."""


class GradTape:
    """Ordered record of the primitive ops executed since the last backward."""

    def __init__(self):
        self.nodes = []
        self.enabled = True

    def record(self, node):
        self.nodes.append(node)

    def clear(self):
        for node in self.nodes:
            node._backward = None
            node._parents = ()
        self.nodes = []

    def __len__(self):
        return len(self.nodes)


_local = threading.local()


def get_tape():
    tape = getattr(_local, "tape", None)
    if tape is None:
        tape = _local.tape = GradTape()
    return tape


@contextmanager
def no_grad():
    """Run ops without recording them (inference, finite differences)."""
    tape = get_tape()
    prev = tape.enabled
    tape.enabled = False
    try:
        yield
    finally:
        tape.enabled = prev


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "_parents", "_backward", "name")

    def __init__(self, data, requires_grad=False, name=None):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = bool(requires_grad)
        self.grad = None
        self._parents = ()
        self._backward = None
        self.name = name

    # -- basic properties -------------------------------------------------
    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def is_leaf(self):
        return not self._parents

    def numpy(self):
        return self.data

    def item(self):
        return float(self.data)

    def detach(self):
        return Tensor(self.data)

    def zero_grad(self):
        self.grad = None

    def __repr__(self):
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad}{tag})"

    # -- operator sugar ---------------------------------------------------
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, idx):
        return index(self, idx)

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis=axis, keepdims=keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes):
        return transpose(self, axes or None)


def as_tensor(x):
    return x if isinstance(x, Tensor) else Tensor(x)


def _make(data, parents, backward):
    out = Tensor(data)
    tape = get_tape()
    if tape.enabled and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = parents
        out._backward = backward
        tape.record(out)
    return out


def _accum(t, g):
    if t.requires_grad:
        t.grad = g if t.grad is None else t.grad + g


def _unbroadcast(g, shape):
    if g.shape == shape:
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


def _check_broadcast(a, b, op):
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(f"{op}: cannot broadcast shapes {a.shape} and {b.shape}") from None


# -- elementwise ----------------------------------------------------------
def add(a, b):
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a, b, "add")

    def bw(g):
        _accum(a, _unbroadcast(g, a.shape))
        _accum(b, _unbroadcast(g, b.shape))

    return _make(a.data + b.data, (a, b), bw)


def sub(a, b):
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a, b, "sub")

    def bw(g):
        _accum(a, _unbroadcast(g, a.shape))
        _accum(b, _unbroadcast(-g, b.shape))

    return _make(a.data - b.data, (a, b), bw)


def mul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a, b, "mul")

    def bw(g):
        if a.requires_grad:
            _accum(a, _unbroadcast(g * b.data, a.shape))
        if b.requires_grad:
            _accum(b, _unbroadcast(g * a.data, b.shape))

    return _make(a.data * b.data, (a, b), bw)


def relu(x):
    x = as_tensor(x)
    pos = x.data > 0

    def bw(g):
        _accum(x, g * pos)

    return _make(np.where(pos, x.data, 0.0), (x,), bw)


def tanh(x):
    x = as_tensor(x)
    y = np.tanh(x.data)

    def bw(g):
        _accum(x, g * (1.0 - y * y))

    return _make(y, (x,), bw)


def sigmoid(x):
    x = as_tensor(x)
    y = 0.5 * (np.tanh(0.5 * x.data) + 1.0)

    def bw(g):
        _accum(x, g * y * (1.0 - y))

    return _make(y, (x,), bw)


def log(x):
    x = as_tensor(x)

    def bw(g):
        _accum(x, g / x.data)

    return _make(np.log(x.data), (x,), bw)


def elementwise(name, *args, **kwargs):
    """Dispatch by name: relu | tanh | sigmoid | add | mul | concat."""
    table = {"relu": relu, "tanh": tanh, "sigmoid": sigmoid, "add": add, "mul": mul}
    if name == "concat":
        return concat(list(args), **kwargs)
    if name not in table:
        raise ValueError(f"unknown elementwise op {name!r}")
    return table[name](*args, **kwargs)


# -- reductions and shape ops ---------------------------------------------
def tsum(x, axis=None, keepdims=False):
    x = as_tensor(x)
    shape = x.shape

    def bw(g):
        if axis is not None and not keepdims:
            axes = (axis,) if isinstance(axis, int) else tuple(axis)
            axes = sorted(a % len(shape) for a in axes)
            for a in axes:
                g = np.expand_dims(g, a)
        _accum(x, np.broadcast_to(g, shape).copy())

    return _make(x.data.sum(axis=axis, keepdims=keepdims), (x,), bw)


def mean(x, axis=None, keepdims=False):
    x = as_tensor(x)
    if axis is None:
        n = x.data.size
    else:
        axes = (axis,) if isinstance(axis, int) else tuple(axis)
        n = int(np.prod([x.shape[a] for a in axes]))
    return mul(tsum(x, axis=axis, keepdims=keepdims), 1.0 / n)


def reshape(x, shape):
    x = as_tensor(x)
    old = x.shape

    def bw(g):
        _accum(x, g.reshape(old))

    return _make(x.data.reshape(shape), (x,), bw)


def transpose(x, axes=None):
    x = as_tensor(x)
    if axes is None:
        axes = tuple(reversed(range(x.ndim)))
    inv = np.argsort(axes)

    def bw(g):
        _accum(x, g.transpose(inv))

    return _make(x.data.transpose(axes), (x,), bw)


def swap_last(x):
    axes = list(range(x.ndim))
    axes[-1], axes[-2] = axes[-2], axes[-1]
    return transpose(x, tuple(axes))


def concat(tensors, axis=-1):
    tensors = [as_tensor(t) for t in tensors]
    ref = tensors[0].shape
    ax = axis % len(ref)
    for t in tensors[1:]:
        if t.ndim != len(ref) or any(
            t.shape[d] != ref[d] for d in range(len(ref)) if d != ax
        ):
            raise ShapeError(
                f"concat: shapes {[tt.shape for tt in tensors]} differ off axis {axis}"
            )
    sizes = [t.shape[ax] for t in tensors]
    bounds = np.cumsum([0] + sizes)

    def bw(g):
        for t, lo, hi in zip(tensors, bounds[:-1], bounds[1:]):
            if t.requires_grad:
                sl = [slice(None)] * g.ndim
                sl[ax] = slice(lo, hi)
                _accum(t, g[tuple(sl)])

    return _make(np.concatenate([t.data for t in tensors], axis=ax), tuple(tensors), bw)


def index(x, idx):
    """Basic or advanced indexing; the adjoint scatters with ``np.add.at``."""
    x = as_tensor(x)
    parts = idx if isinstance(idx, tuple) else (idx,)
    basic = all(isinstance(p, (slice, int, type(None), type(Ellipsis))) for p in parts)

    def bw(g):
        full = np.zeros_like(x.data)
        if basic:
            full[idx] = g
        else:
            np.add.at(full, idx, g)
        _accum(x, full)

    return _make(x.data[idx], (x,), bw)


def scatter(x, idx, shape):
    """Place ``x`` into a zero tensor of ``shape`` at ``idx`` (unique indices)."""
    x = as_tensor(x)
    out = np.zeros(shape)
    out[idx] = x.data

    def bw(g):
        _accum(x, g[idx])

    return _make(out, (x,), bw)


def embedding(table, ids):
    """Row gather ``table[ids]``; out-of-range ids raise IndexError."""
    table = as_tensor(table)
    ids = np.asarray(ids, dtype=np.int64)
    n = table.shape[0]
    if ids.size and (ids.min() < 0 or ids.max() >= n):
        raise IndexError(f"embedding id out of range [0, {n}): min {ids.min()}, max {ids.max()}")

    def bw(g):
        full = np.zeros_like(table.data)
        np.add.at(full, ids.reshape(-1), g.reshape(-1, table.shape[1]))
        _accum(table, full)

    return _make(table.data[ids], (table,), bw)


def stop_gradient(x):
    return Tensor(as_tensor(x).data)


# -- linear algebra -------------------------------------------------------
def matmul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul: incompatible shapes {a.shape} and {b.shape}")

    def bw(g):
        if a.requires_grad:
            _accum(a, _unbroadcast(g @ np.swapaxes(b.data, -1, -2), a.shape))
        if b.requires_grad:
            if b.ndim == 2 and a.ndim > 2:
                gb = a.data.reshape(-1, a.shape[-1]).T @ g.reshape(-1, g.shape[-1])
            else:
                gb = _unbroadcast(np.swapaxes(a.data, -1, -2) @ g, b.shape)
            _accum(b, gb)

    return _make(a.data @ b.data, (a, b), bw)


# -- normalisations -------------------------------------------------------
def _masked_softmax_data(x, mask, empty_ok):
    if mask is None:
        z = x - x.max(axis=-1, keepdims=True)
        e = np.exp(z)
        return e / e.sum(axis=-1, keepdims=True)
    mask = np.broadcast_to(np.asarray(mask, dtype=bool), x.shape)
    has_any = mask.any(axis=-1, keepdims=True)
    if not empty_ok and not has_any.all():
        raise MaskError("softmax: a row has every entry masked")
    z = np.where(mask, x, -np.inf)
    zmax = np.where(has_any, z.max(axis=-1, keepdims=True), 0.0)
    e = np.where(mask, np.exp(np.where(mask, x - zmax, 0.0)), 0.0)
    denom = e.sum(axis=-1, keepdims=True)
    return e / np.where(denom > 0, denom, 1.0)


def softmax(x, mask=None, empty_ok=False):
    """Softmax over the last axis; masked entries are exactly 0.

    With ``empty_ok`` a fully-masked row yields all zeros instead of raising.
    """
    x = as_tensor(x)
    y = _masked_softmax_data(x.data, mask, empty_ok)

    def bw(g):
        _accum(x, y * (g - (g * y).sum(axis=-1, keepdims=True)))

    return _make(y, (x,), bw)


def log_softmax(x):
    x = as_tensor(x)
    z = x.data - x.data.max(axis=-1, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=-1, keepdims=True))
    y = z - lse
    p = np.exp(y)

    def bw(g):
        _accum(x, g - p * g.sum(axis=-1, keepdims=True))

    return _make(y, (x,), bw)


def layer_norm(x, gain, bias, eps=1e-6):
    x, gain, bias = as_tensor(x), as_tensor(gain), as_tensor(bias)
    mu = x.data.mean(axis=-1, keepdims=True)
    xc = x.data - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv

    def bw(g):
        if gain.requires_grad:
            _accum(gain, (g * xhat).reshape(-1, xhat.shape[-1]).sum(axis=0))
        if bias.requires_grad:
            _accum(bias, g.reshape(-1, g.shape[-1]).sum(axis=0))
        if x.requires_grad:
            dxh = g * gain.data
            dx = inv * (
                dxh
                - dxh.mean(axis=-1, keepdims=True)
                - xhat * (dxh * xhat).mean(axis=-1, keepdims=True)
            )
            _accum(x, dx)

    return _make(xhat * gain.data + bias.data, (x, gain, bias), bw)


# -- recurrence -----------------------------------------------------------
def lstm_recurrence(xg, w_h, mask, reverse=False):
    """Masked LSTM over ``xg`` [N, T, 4h] (gate order i, f, g, o) -> [N, T, h].

    The time loop runs in a compiled kernel (see ``rthn.kernels``); this op
    records a single tape node for the whole sequence.
    """
    xg, w_h = as_tensor(xg), as_tensor(w_h)
    if xg.shape[-1] != w_h.shape[1] or w_h.shape[1] != 4 * w_h.shape[0]:
        raise ShapeError(f"lstm: gate width {xg.shape} incompatible with W_h {w_h.shape}")
    mask_tm = np.ascontiguousarray(np.asarray(mask, dtype=np.float64).T)
    xg_tm = np.ascontiguousarray(xg.data.transpose(1, 0, 2))
    out, gates, c_new, h_carry, c_carry = kernels.lstm_forward(xg_tm, w_h.data, mask_tm, reverse)

    def bw(g):
        d_out = np.ascontiguousarray(g.transpose(1, 0, 2))
        d_xg, d_w_h = kernels.lstm_backward(
            d_out, w_h.data, mask_tm, reverse, gates, c_new, h_carry, c_carry
        )
        _accum(xg, d_xg.transpose(1, 0, 2))
        _accum(w_h, d_w_h)

    return _make(out.transpose(1, 0, 2), (xg, w_h), bw)


# -- driver ---------------------------------------------------------------
def backward(loss):
    """Populate ``.grad`` on every requires_grad tensor reachable from ``loss``.

    Leaf gradients accumulate across calls until ``zero_grad``; the tape is
    consumed.
    """
    if loss.data.size != 1 or loss.ndim not in (0, 1):
        raise ValueError(f"backward: loss must be a scalar, got shape {loss.shape}")
    if not loss.requires_grad:
        raise ValueError("backward: loss is not connected to any requires_grad tensor")
    tape = get_tape()
    loss.grad = np.ones_like(loss.data) if loss.grad is None else loss.grad + 1.0
    for node in reversed(tape.nodes):
        if node.grad is not None and node._backward is not None:
            node._backward(node.grad)
    for node in tape.nodes:
        node.grad = None if node is not loss else node.grad
    tape.clear()
