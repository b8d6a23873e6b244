"""Dense tensors with reverse-mode differentiation.

A :class:`Tensor` wraps a numpy array. Operations return new tensors and,
when any input requires a gradient, record a backward closure and their
parents; that recorded graph is the gradient tape walked by
:meth:`Tensor.backward`.

Elementwise arithmetic requires equal shapes, except that one operand may
omit the leading batch dimension of the other. Nothing else broadcasts.
"""
from contextlib import contextmanager

import numpy as np

from . import kernels

_PRECISIONS = {"single": np.float32, "double": np.float64}
_dtype = np.float32


def set_precision(name):
    """Select the run-wide floating dtype: ``"single"`` or ``"double"``."""
    global _dtype
    if name not in _PRECISIONS:
        raise ValueError(f"unknown precision {name!r}; expected one of {sorted(_PRECISIONS)}")
    _dtype = _PRECISIONS[name]


def get_dtype():
    return _dtype


@contextmanager
def precision(name):
    previous = _dtype
    set_precision(name)
    try:
        yield
    finally:
        globals()["_dtype"] = previous


class ShapeError(ValueError):
    pass


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad=False, _parents=(), _backward=None):
        if isinstance(data, Tensor):
            data = data.data
        arr = np.asarray(data)
        if arr.dtype not in (np.float32, np.float64):
            arr = arr.astype(_dtype)
        self.data = arr
        self.grad = None
        self.requires_grad = requires_grad
        self._parents = _parents
        self._backward = _backward

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    def numpy(self):
        return self.data

    def item(self):
        return self.data.item()

    def __repr__(self):
        return f"Tensor(shape={self.shape}, dtype={self.data.dtype}, requires_grad={self.requires_grad})"

    def detach(self):
        return Tensor(self.data)

    def zero_grad(self):
        self.grad = None

    def backward(self, grad=None):
        if grad is None:
            if self.data.size != 1:
                raise ShapeError("backward() without a seed gradient needs a scalar tensor")
            grad = np.ones_like(self.data)
        order, seen = [], set()

        def visit(node):
            stack = [(node, False)]
            while stack:
                t, done = stack.pop()
                if done:
                    order.append(t)
                    continue
                if id(t) in seen:
                    continue
                seen.add(id(t))
                stack.append((t, True))
                for p in t._parents:
                    if p.requires_grad and id(p) not in seen:
                        stack.append((p, False))

        visit(self)
        grads = {id(self): np.asarray(grad, dtype=self.data.dtype)}
        for t in reversed(order):
            g = grads.pop(id(t), None)
            if g is None:
                continue
            if t._backward is None:
                t.grad = g if t.grad is None else t.grad + g
                continue
            for p, pg in zip(t._parents, t._backward(g)):
                if pg is None or not p.requires_grad:
                    continue
                key = id(p)
                grads[key] = pg if key not in grads else grads[key] + pg

    __add__ = lambda self, o: add(self, o)
    __radd__ = lambda self, o: add(o, self)
    __sub__ = lambda self, o: sub(self, o)
    __rsub__ = lambda self, o: sub(o, self)
    __mul__ = lambda self, o: mul(self, o)
    __rmul__ = lambda self, o: mul(o, self)
    __neg__ = lambda self: neg(self)
    __matmul__ = lambda self, o: matmul(self, o)

    def sum(self, axis=None):
        return sum_(self, axis)

    def mean(self):
        return mean(self)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)


def tensor(data, requires_grad=False):
    return Tensor(np.array(data, dtype=_dtype), requires_grad=requires_grad)


def parameter(data):
    return Tensor(np.array(data, dtype=_dtype), requires_grad=True)


def _as_tensor(x):
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=_dtype))


def _result(data, parents, backward):
    if any(p.requires_grad for p in parents):
        return Tensor(data, True, parents, backward)
    return Tensor(data)


def _broadcast_kind(a, b):
    """0: same shape, 1: b lacks a's batch dim, 2: a lacks b's batch dim."""
    if a.shape == b.shape:
        return 0
    if a.ndim == b.ndim + 1 and a.shape[1:] == b.shape:
        return 1
    if b.ndim == a.ndim + 1 and b.shape[1:] == a.shape:
        return 2
    raise ShapeError(f"shape mismatch: {a.shape} vs {b.shape}")


def _unbatch(g, kind, side):
    # side: which operand ("a" or "b") the gradient belongs to
    if (kind == 1 and side == "b") or (kind == 2 and side == "a"):
        return g.sum(axis=0)
    return g


def add(a, b):
    a, b = _as_tensor(a), _as_tensor(b)
    kind = _broadcast_kind(a, b)
    return _result(a.data + b.data, (a, b),
                   lambda g: (_unbatch(g, kind, "a"), _unbatch(g, kind, "b")))


def sub(a, b):
    a, b = _as_tensor(a), _as_tensor(b)
    kind = _broadcast_kind(a, b)
    return _result(a.data - b.data, (a, b),
                   lambda g: (_unbatch(g, kind, "a"), _unbatch(-g, kind, "b")))


def mul(a, b):
    a, b = _as_tensor(a), _as_tensor(b)
    kind = _broadcast_kind(a, b)
    return _result(a.data * b.data, (a, b),
                   lambda g: (_unbatch(g * b.data, kind, "a"), _unbatch(g * a.data, kind, "b")))


def scale(a, c):
    """Multiply by a python scalar."""
    a = _as_tensor(a)
    return _result(a.data * c, (a,), lambda g: (g * c,))


def neg(a):
    return _result(-a.data, (a,), lambda g: (-g,))


def matmul(a, b):
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul shape mismatch: {a.shape} @ {b.shape}")
    return _result(a.data @ b.data, (a, b), lambda g: (g @ b.data.T, a.data.T @ g))


def reshape(a, shape):
    old = a.shape
    out = a.data.reshape(shape)
    return _result(out, (a,), lambda g: (g.reshape(old),))


def flatten(a):
    """Collapse every dim but the leading batch dim."""
    return reshape(a, (a.shape[0], -1))


def sum_(a, axis=None):
    if axis is None:
        return _result(np.asarray(a.data.sum()), (a,),
                       lambda g: (np.broadcast_to(g, a.shape).copy(),))
    out = a.data.sum(axis=axis)
    return _result(out, (a,),
                   lambda g: (np.broadcast_to(np.expand_dims(g, axis), a.shape).copy(),))


def mean(a):
    n = a.size
    return _result(np.asarray(a.data.mean()), (a,),
                   lambda g: (np.full(a.shape, g / n, dtype=a.data.dtype),))


def relu(a):
    mask = a.data > 0
    return _result(a.data * mask, (a,), lambda g: (g * mask,))


def exp(a):
    out = np.exp(a.data)
    return _result(out, (a,), lambda g: (g * out,))


def square(a):
    return _result(a.data * a.data, (a,), lambda g: (2 * g * a.data,))


def minimum(a, b):
    a, b = _as_tensor(a), _as_tensor(b)
    if a.shape != b.shape:
        raise ShapeError(f"shape mismatch: {a.shape} vs {b.shape}")
    pick_a = a.data <= b.data
    return _result(np.where(pick_a, a.data, b.data), (a, b),
                   lambda g: (g * pick_a, g * ~pick_a))


def clip(a, lo, hi):
    inside = (a.data >= lo) & (a.data <= hi)
    return _result(np.clip(a.data, lo, hi), (a,), lambda g: (g * inside,))


def log_softmax(a):
    """Row-wise log-softmax of a [B, K] tensor."""
    z = a.data - a.data.max(axis=-1, keepdims=True)
    out = z - np.log(np.exp(z).sum(axis=-1, keepdims=True))
    p = np.exp(out)
    return _result(out, (a,), lambda g: (g - p * g.sum(axis=-1, keepdims=True),))


def select(a, index):
    """Pick a[i, index[i]] from a [B, K] tensor."""
    index = np.asarray(index, dtype=np.int64)
    rows = np.arange(a.shape[0])

    def backward(g):
        ga = np.zeros_like(a.data)
        ga[rows, index] = g
        return (ga,)

    return _result(a.data[rows, index], (a,), backward)


def one_hot(index, n):
    out = np.zeros((len(index), n), dtype=_dtype)
    out[np.arange(len(index)), np.asarray(index, dtype=np.int64)] = 1
    return Tensor(out)


def channel_affine(x, scale_, shift):
    """x[B,C,H,W] * scale[B,C] + shift[B,C], per channel."""
    if x.ndim != 4 or scale_.shape != x.shape[:2] or shift.shape != x.shape[:2]:
        raise ShapeError(f"channel_affine shape mismatch: {x.shape}, {scale_.shape}, {shift.shape}")
    s = scale_.data[:, :, None, None]
    out = x.data * s + shift.data[:, :, None, None]
    return _result(out, (x, scale_, shift),
                   lambda g: (g * s, (g * x.data).sum(axis=(2, 3)), g.sum(axis=(2, 3))))


def add_channel_bias(x, b):
    """x[B,C,H,W] + b[C]."""
    if x.ndim != 4 or b.shape != (x.shape[1],):
        raise ShapeError(f"bias shape mismatch: {x.shape}, {b.shape}")
    return _result(x.data + b.data[None, :, None, None], (x, b),
                   lambda g: (g, g.sum(axis=(0, 2, 3))))


def scale_channels(x, w):
    """x[B,C,H,W] * w[C]: per-channel scaling with no channel mixing."""
    if x.ndim != 4 or w.shape != (x.shape[1],):
        raise ShapeError(f"channel scale shape mismatch: {x.shape}, {w.shape}")
    ws = w.data[None, :, None, None]
    return _result(x.data * ws, (x, w),
                   lambda g: (g * ws, (g * x.data).sum(axis=(0, 2, 3))))


def _pad_for(k, padding):
    if padding == "SAME":
        if k % 2 == 0:
            raise ValueError(f"SAME padding needs an odd kernel size, got {k}")
        return k // 2
    if padding == "VALID":
        return 0
    raise ValueError(f"padding must be 'SAME' or 'VALID', got {padding!r}")


def _as_batch(x):
    if x.ndim == 3:
        return reshape(x, (1,) + x.shape), True
    if x.ndim == 4:
        return x, False
    raise ShapeError(f"conv input must be [C,H,W] or [B,C,H,W], got {x.shape}")


def conv2d(x, w, stride=1, padding="SAME"):
    """2-D cross-correlation of x[(B,)c_in,H,W] with w[c_out,c_in,k,k].

    SAME pads k//2 zeros on every side (odd k only), giving ceil(H/stride)
    outputs per axis.
    """
    if stride < 1:
        raise ValueError(f"stride must be >= 1, got {stride}")
    if w.ndim != 4 or w.shape[2] != w.shape[3]:
        raise ShapeError(f"filters must be [c_out,c_in,k,k], got {w.shape}")
    pad = _pad_for(w.shape[2], padding)
    xb, squeeze = _as_batch(x)
    if xb.shape[1] != w.shape[1]:
        raise ShapeError(f"input has {xb.shape[1]} channels, filters expect {w.shape[1]}")
    if xb.data.dtype != w.data.dtype:
        raise TypeError(f"dtype mismatch: {xb.data.dtype} vs {w.data.dtype}")
    H, W = xb.shape[2], xb.shape[3]
    k = w.shape[2]
    xd = np.ascontiguousarray(xb.data)
    wd = np.ascontiguousarray(w.data)
    out = kernels.conv2d_forward(xd, wd, stride, pad)

    def backward(g):
        g = np.ascontiguousarray(g)
        gx = kernels.conv2d_backward_input(g, wd, stride, pad, H, W) if xb.requires_grad else None
        gw = kernels.conv2d_backward_weight(xd, g, k, stride, pad) if w.requires_grad else None
        return gx, gw

    y = _result(out, (xb, w), backward)
    return reshape(y, y.shape[1:]) if squeeze else y


def conv_transpose2d(x, w, stride, out_hw):
    """Adjoint of ``conv2d(., w, stride, "SAME")``.

    x is [B, c_out, h, w] and the result is [B, c_in, *out_hw], where out_hw
    is the input size of the forward convolution being transposed.
    """
    k = w.shape[2]
    pad = _pad_for(k, "SAME")
    H, W = out_hw
    ho, wo = -(-H // stride), -(-W // stride)
    if x.ndim != 4 or x.shape[1] != w.shape[0] or x.shape[2:] != (ho, wo):
        raise ShapeError(f"conv_transpose2d shape mismatch: x {x.shape}, w {w.shape}, out {out_hw}")
    xd = np.ascontiguousarray(x.data)
    wd = np.ascontiguousarray(w.data)
    out = kernels.conv2d_backward_input(xd, wd, stride, pad, H, W)

    def backward(g):
        g = np.ascontiguousarray(g)
        gx = kernels.conv2d_forward(g, wd, stride, pad) if x.requires_grad else None
        gw = kernels.conv2d_backward_weight(g, xd, k, stride, pad) if w.requires_grad else None
        return gx, gw

    return _result(out, (x, w), backward)


def bce_with_logits(logits, target):
    """Mean binary cross-entropy over every element."""
    t = np.asarray(target.data if isinstance(target, Tensor) else target, dtype=logits.data.dtype)
    if t.shape != logits.shape:
        raise ShapeError(f"target shape {t.shape} != logits shape {logits.shape}")
    z = logits.data
    e = np.exp(-np.abs(z))
    loss = np.maximum(z, 0) - z * t + np.log1p(e)
    n = z.size
    sig = np.where(z >= 0, 1.0 / (1.0 + e), e / (1.0 + e)).astype(z.dtype)
    return _result(np.asarray(loss.mean()), (logits,), lambda g: (g * (sig - t) / n,))


def cross_entropy(logits, labels):
    """Mean categorical cross-entropy of [B, K] logits against integer labels."""
    labels = np.asarray(labels, dtype=np.int64)
    lsm = log_softmax(logits)
    return neg(mean(select(lsm, labels)))


def grad_check(f, x, h=1e-5):
    """Max relative error between analytic and central-difference gradients.

    ``f`` maps a Tensor to a scalar Tensor. The error per coordinate is
    |analytic - numeric| / max(1, |numeric|).
    """
    x0 = np.array(x.data if isinstance(x, Tensor) else x, dtype=np.float64)
    if get_dtype() is not np.float64 or x0.dtype != np.float64:
        raise TypeError("grad_check requires double precision")
    xt = Tensor(x0.copy(), requires_grad=True)
    out = f(xt)
    if out.size != 1:
        raise ShapeError(f"grad_check needs a scalar function, got shape {out.shape}")
    out.backward()
    analytic = np.zeros_like(x0) if xt.grad is None else xt.grad
    numeric = np.zeros_like(x0)
    flat = x0.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        fp = f(Tensor(x0.copy())).item()
        flat[i] = orig - h
        fm = f(Tensor(x0.copy())).item()
        flat[i] = orig
        numeric.reshape(-1)[i] = (fp - fm) / (2 * h)
    return float(np.max(np.abs(analytic - numeric) / np.maximum(1.0, np.abs(numeric))))
