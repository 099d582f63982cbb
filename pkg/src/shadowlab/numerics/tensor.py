"""Dense float64 tensors with tape-based reverse-mode differentiation.

Every differentiable operation appends one entry to the active tape.
``backward`` replays the tape once in reverse and accumulates gradients
into ``Tensor.grad``. A tape is single-shot: after ``backward`` it is
consumed and the next recorded operation starts a fresh one.
"""

from __future__ import annotations

import contextlib

import numpy as np


class TapeConsumedError(RuntimeError):
    """Raised when backward is called twice on the same forward pass."""


class ShapeError(ValueError):
    """Raised when operand shapes are incompatible."""


class _Tape:
    __slots__ = ("entries", "consumed")

    def __init__(self):
        self.entries = []  # (out, inputs, backward_fn)
        self.consumed = False


_ACTIVE = _Tape()
_GRAD_ENABLED = True


def _tape() -> _Tape:
    global _ACTIVE
    if _ACTIVE.consumed:
        _ACTIVE = _Tape()
    return _ACTIVE


@contextlib.contextmanager
def no_grad():
    """Disable tape recording inside the block."""
    global _GRAD_ENABLED
    prev = _GRAD_ENABLED
    _GRAD_ENABLED = False
    try:
        yield
    finally:
        _GRAD_ENABLED = prev


class Tensor:
    """A float64 array plus gradient bookkeeping.

    Args:
        data: array-like, cast to a C-contiguous float64 ndarray.
        requires_grad: when True, ``backward`` accumulates into ``grad``.
    """

    __slots__ = ("data", "grad", "requires_grad", "_tape")

    def __init__(self, data, requires_grad: bool = False):
        arr = np.asarray(data, dtype=np.float64)
        self.data = np.ascontiguousarray(arr)
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self._tape = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        if self.data.size != 1:
            raise ShapeError(f"item() requires a scalar, got shape {self.data.shape}")
        return float(self.data.reshape(()))

    def detach(self) -> "Tensor":
        return Tensor(self.data.copy())

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"

    # operator sugar; every op lives at module level
    def __add__(self, other):
        return add(self, _coerce(other))

    def __radd__(self, other):
        return add(_coerce(other), self)

    def __sub__(self, other):
        return sub(self, _coerce(other))

    def __rsub__(self, other):
        return sub(_coerce(other), self)

    def __mul__(self, other):
        return mul(self, _coerce(other))

    def __rmul__(self, other):
        return mul(_coerce(other), self)

    def __truediv__(self, other):
        return div(self, _coerce(other))

    def __rtruediv__(self, other):
        return div(_coerce(other), self)

    def __neg__(self):
        return neg(self)

    def __pow__(self, k):
        return power(self, k)

    def reshape(self, *shape):
        return reshape(self, shape if len(shape) > 1 else shape[0])

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        return tmean(self, axis=axis, keepdims=keepdims)


def _coerce(x) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=np.float64))


def as_tensor(x) -> Tensor:
    """Coerce an ndarray or scalar to a constant Tensor; pass Tensors through."""
    return _coerce(x)


def _record(out: Tensor, inputs, backward_fn):
    if not _GRAD_ENABLED:
        return
    if not any(t.requires_grad for t in inputs):
        return
    out.requires_grad = True
    tape = _tape()
    out._tape = tape
    tape.entries.append((out, tuple(inputs), backward_fn))


def _unbroadcast(grad: np.ndarray, shape) -> np.ndarray:
    """Sum grad down to ``shape``, undoing numpy broadcasting."""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, dim in enumerate(shape):
        if dim == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def backward(loss: Tensor):
    """Accumulate d(loss)/d(x) into ``x.grad`` for every tensor on the tape.

    Args:
        loss: scalar tensor produced by recorded operations.

    Raises:
        ShapeError: loss is not a scalar.
        TapeConsumedError: backward already ran for this forward pass.
        RuntimeError: loss does not depend on any recorded operation.
    """
    if loss.size != 1:
        raise ShapeError(f"backward requires a scalar loss, got shape {loss.shape}")
    tape = loss._tape
    if tape is None:
        raise RuntimeError("loss was not produced by recorded operations; nothing to differentiate")
    if tape.consumed:
        raise TapeConsumedError("tape already consumed; run a new forward pass before calling backward again")
    tape.consumed = True

    pending: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    for out, inputs, backward_fn in reversed(tape.entries):
        g = pending.pop(id(out), None)
        if g is None:
            continue
        if out.grad is None:
            out.grad = g.copy()
        else:
            out.grad = out.grad + g
        for t, gi in zip(inputs, backward_fn(g)):
            if gi is None or not t.requires_grad:
                continue
            key = id(t)
            if key in pending:
                pending[key] = pending[key] + gi
            else:
                pending[key] = gi
    # whatever remains belongs to leaves (tensors that are no entry's output)
    by_id = {}
    for out, inputs, _ in tape.entries:
        for t in inputs:
            by_id[id(t)] = t
    for key, g in pending.items():
        t = by_id.get(key)
        if t is None or not t.requires_grad:
            continue
        if t.grad is None:
            t.grad = np.zeros_like(t.data)
        t.grad = t.grad + np.broadcast_to(g, t.data.shape)
    # break the tape<->tensor reference cycle so the graph frees by refcount
    # instead of waiting on a gen-2 GC pass (it pins ~the whole forward pass)
    tape.entries.clear()


# ---------------------------------------------------------------------------
# elementwise arithmetic


def add(a: Tensor, b: Tensor) -> Tensor:
    out = Tensor(a.data + b.data)
    _record(out, (a, b), lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)))
    return out


def sub(a: Tensor, b: Tensor) -> Tensor:
    out = Tensor(a.data - b.data)
    _record(out, (a, b), lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)))
    return out


def mul(a: Tensor, b: Tensor) -> Tensor:
    out = Tensor(a.data * b.data)
    _record(out, (a, b), lambda g: (_unbroadcast(g * b.data, a.shape),
                                    _unbroadcast(g * a.data, b.shape)))
    return out


def div(a: Tensor, b: Tensor) -> Tensor:
    out = Tensor(a.data / b.data)

    def bw(g):
        ga = _unbroadcast(g / b.data, a.shape)
        gb = _unbroadcast(-g * a.data / (b.data * b.data), b.shape)
        return ga, gb

    _record(out, (a, b), bw)
    return out


def neg(a: Tensor) -> Tensor:
    out = Tensor(-a.data)
    _record(out, (a,), lambda g: (-g,))
    return out


def power(a: Tensor, k) -> Tensor:
    k = float(k)
    out = Tensor(a.data ** k)
    _record(out, (a,), lambda g: (g * k * a.data ** (k - 1.0),))
    return out


def log(a: Tensor) -> Tensor:
    out = Tensor(np.log(a.data))
    _record(out, (a,), lambda g: (g / a.data,))
    return out


def exp(a: Tensor) -> Tensor:
    y = np.exp(a.data)
    out = Tensor(y)
    _record(out, (a,), lambda g: (g * y,))
    return out


def sqrt(a: Tensor) -> Tensor:
    y = np.sqrt(a.data)
    out = Tensor(y)
    _record(out, (a,), lambda g: (g * 0.5 / y,))
    return out


def clip(a: Tensor, lo: float, hi: float) -> Tensor:
    """Clamp values; gradient is passed through inside [lo, hi], zero outside."""
    out = Tensor(np.clip(a.data, lo, hi))
    mask = (a.data >= lo) & (a.data <= hi)
    _record(out, (a,), lambda g: (g * mask,))
    return out


def relu(a: Tensor) -> Tensor:
    out = Tensor(np.maximum(a.data, 0.0))
    mask = a.data > 0.0
    _record(out, (a,), lambda g: (g * mask,))
    return out


def _sigmoid_stable(x: np.ndarray) -> np.ndarray:
    # split by sign so exp never sees a large positive argument
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    e = np.exp(x[~pos])
    out[~pos] = e / (1.0 + e)
    return out


def sigmoid(a: Tensor) -> Tensor:
    y = _sigmoid_stable(a.data)
    out = Tensor(y)
    _record(out, (a,), lambda g: (g * y * (1.0 - y),))
    return out


def silu(a: Tensor) -> Tensor:
    s = _sigmoid_stable(a.data)
    out = Tensor(a.data * s)
    _record(out, (a,), lambda g: (g * (s + a.data * s * (1.0 - s)),))
    return out


# ---------------------------------------------------------------------------
# reductions and shape ops


def tsum(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    out = Tensor(a.data.sum(axis=axis, keepdims=keepdims))

    def bw(g):
        if axis is None:
            return (np.broadcast_to(g, a.shape).copy(),)
        if not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, a.shape).copy(),)

    _record(out, (a,), bw)
    return out


def tmean(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    if axis is None:
        n = a.size
    else:
        axes = axis if isinstance(axis, tuple) else (axis,)
        n = 1
        for ax in axes:
            n *= a.shape[ax]
    return tsum(a, axis=axis, keepdims=keepdims) * (1.0 / n)


def reshape(a: Tensor, shape) -> Tensor:
    out = Tensor(a.data.reshape(shape))
    _record(out, (a,), lambda g: (g.reshape(a.shape),))
    return out


def concat(tensors, axis: int = 0) -> Tensor:
    tensors = [_coerce(t) for t in tensors]
    out = Tensor(np.concatenate([t.data for t in tensors], axis=axis))
    sizes = [t.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]

    def bw(g):
        return tuple(np.split(g, splits, axis=axis))

    _record(out, tuple(tensors), bw)
    return out


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.ndim != 2 or b.ndim != 2:
        raise ShapeError(f"matmul expects 2-D operands, got {a.shape} @ {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul inner dimensions differ: {a.shape} @ {b.shape}")
    out = Tensor(a.data @ b.data)
    _record(out, (a, b), lambda g: (g @ b.data.T, a.data.T @ g))
    return out


def upsample2x(a: Tensor) -> Tensor:
    """Nearest-neighbor 2x upsampling on (N, C, H, W)."""
    if a.ndim != 4:
        raise ShapeError(f"upsample2x expects (N, C, H, W), got {a.shape}")
    out = Tensor(a.data.repeat(2, axis=2).repeat(2, axis=3))

    def bw(g):
        n, c, h2, w2 = g.shape
        return (g.reshape(n, c, h2 // 2, 2, w2 // 2, 2).sum(axis=(3, 5)),)

    _record(out, (a,), bw)
    return out


# ---------------------------------------------------------------------------
# convolution


def _im2col(x: np.ndarray, k: int, stride: int, padding: int):
    n, c, h, w = x.shape
    if padding:
        x = np.pad(x, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    win = np.lib.stride_tricks.sliding_window_view(x, (k, k), axis=(2, 3))
    win = win[:, :, ::stride, ::stride]
    ho, wo = win.shape[2], win.shape[3]
    cols = win.transpose(0, 1, 4, 5, 2, 3).reshape(n, c * k * k, ho * wo)
    return np.ascontiguousarray(cols), ho, wo


def _col2im(cols: np.ndarray, xshape, k: int, stride: int, padding: int, ho: int, wo: int):
    n, c, h, w = xshape
    xpad = np.zeros((n, c, h + 2 * padding, w + 2 * padding))
    cols6 = cols.reshape(n, c, k, k, ho, wo)
    for i in range(k):
        for j in range(k):
            xpad[:, :, i:i + stride * ho:stride, j:j + stride * wo:stride] += cols6[:, :, i, j]
    if padding:
        return xpad[:, :, padding:padding + h, padding:padding + w]
    return xpad


def conv2d(x: Tensor, weight: Tensor, bias: Tensor | None = None,
           stride: int = 1, padding: int = 0) -> Tensor:
    """2-D cross-correlation on (N, C, H, W) with an (F, C, k, k) kernel.

    Stride-1 convolutions run as one stacked matrix product over the padded
    plane followed by shifted-window accumulation, which avoids building the
    k^2-times-larger im2col patch matrix; strided convolutions fall back to
    the classic im2col lowering.
    """
    if x.ndim != 4:
        raise ShapeError(f"conv2d input must be (N, C, H, W), got {x.shape}")
    if weight.ndim != 4 or weight.shape[2] != weight.shape[3]:
        raise ShapeError(f"conv2d kernel must be (F, C, k, k), got {weight.shape}")
    n, c, h, w = x.shape
    f, cw, k, _ = weight.shape
    if cw != c:
        raise ShapeError(f"conv2d: input has {c} channels but kernel expects {cw}")
    if h + 2 * padding < k or w + 2 * padding < k:
        raise ShapeError(f"conv2d: kernel {k}x{k} exceeds padded input {h + 2 * padding}x{w + 2 * padding}")
    if stride < 1:
        raise ShapeError(f"conv2d: stride must be >= 1, got {stride}")

    if k == 1 and stride == 1 and padding == 0:
        return _conv1x1(x, weight, bias)
    if stride == 1:
        return _conv_s1(x, weight, bias, padding)
    return _conv_im2col(x, weight, bias, stride, padding)


def _conv_s1(x: Tensor, weight: Tensor, bias: Tensor | None, padding: int) -> Tensor:
    # Internally runs channels-leading (C, N, H, W) so the whole batch forms a
    # single fat GEMM; samples are stacked along rows, and window shifts never
    # cross sample boundaries because the plane is padded per sample.
    n, c, h, w = x.shape
    f, _, k, _ = weight.shape
    p = padding
    hp, wp = h + 2 * p, w + 2 * p
    ho, wo = hp - k + 1, wp - k + 1
    xp = np.zeros((c, n, hp, wp))
    xp[:, :, p:p + h, p:p + w] = x.data.transpose(1, 0, 2, 3)
    xm = xp.reshape(c, n * hp * wp)
    # (i, j)-stacked kernel rows: one GEMM covers every shift at once
    wflat = np.ascontiguousarray(weight.data.transpose(2, 3, 0, 1)).reshape(k * k * f, c)
    y = np.matmul(wflat, xm).reshape(k, k, f, n, hp, wp)
    acc = y[0, 0, :, :, 0:ho, 0:wo].copy()
    for i in range(k):
        for j in range(k):
            if i or j:
                acc += y[i, j, :, :, i:i + ho, j:j + wo]
    out_data = np.ascontiguousarray(acc.transpose(1, 0, 2, 3))
    if bias is not None:
        out_data += bias.data.reshape(1, f, 1, 1)
    out = Tensor(out_data)

    inputs = (x, weight) if bias is None else (x, weight, bias)

    def bw(g):
        gt = np.ascontiguousarray(g.transpose(1, 0, 2, 3))
        dy = np.empty((k, k, f, n, hp, wp))
        for i in range(k):
            for j in range(k):
                blk = dy[i, j]
                blk[:, :, :i, :] = 0.0
                blk[:, :, i + ho:, :] = 0.0
                blk[:, :, i:i + ho, :j] = 0.0
                blk[:, :, i:i + ho, j + wo:] = 0.0
                blk[:, :, i:i + ho, j:j + wo] = gt
        dy2 = dy.reshape(k * k * f, n * hp * wp)
        gw = np.matmul(dy2, xm.T).reshape(k, k, f, c).transpose(2, 3, 0, 1)
        gxp = np.matmul(wflat.T, dy2).reshape(c, n, hp, wp)
        gx = gxp[:, :, p:p + h, p:p + w] if p else gxp
        gx = np.ascontiguousarray(gx.transpose(1, 0, 2, 3))
        if bias is None:
            return gx, gw
        return gx, gw, g.sum(axis=(0, 2, 3))

    _record(out, inputs, bw)
    return out


def _conv_im2col(x: Tensor, weight: Tensor, bias: Tensor | None,
                 stride: int, padding: int) -> Tensor:
    n, c, h, w = x.shape
    f, _, k, _ = weight.shape
    cols, ho, wo = _im2col(x.data, k, stride, padding)
    w2 = weight.data.reshape(f, c * k * k)
    out_data = np.matmul(w2, cols).reshape(n, f, ho, wo)
    if bias is not None:
        out_data = out_data + bias.data.reshape(1, f, 1, 1)
    out = Tensor(out_data)

    inputs = (x, weight) if bias is None else (x, weight, bias)

    def bw(g):
        g2 = np.ascontiguousarray(g.reshape(n, f, ho * wo))
        cols_b, _, _ = _im2col(x.data, k, stride, padding)
        gw = np.matmul(g2, cols_b.transpose(0, 2, 1)).sum(axis=0).reshape(f, c, k, k)
        gcols = np.matmul(w2.T, g2)
        gx = _col2im(gcols, x.shape, k, stride, padding, ho, wo)
        if bias is None:
            return gx, gw
        return gx, gw, g.sum(axis=(0, 2, 3))

    _record(out, inputs, bw)
    return out


def _conv1x1(x: Tensor, weight: Tensor, bias: Tensor | None) -> Tensor:
    # pointwise convolution as a single matmul, no patch extraction
    n, c, h, w = x.shape
    f = weight.shape[0]
    xm = x.data.reshape(n, c, h * w)
    w2 = weight.data.reshape(f, c)
    out_data = np.matmul(w2, xm).reshape(n, f, h, w)
    if bias is not None:
        out_data = out_data + bias.data.reshape(1, f, 1, 1)
    out = Tensor(out_data)
    inputs = (x, weight) if bias is None else (x, weight, bias)

    def bw(g):
        g2 = g.reshape(n, f, h * w)
        gw = np.matmul(g2, xm.transpose(0, 2, 1)).sum(axis=0).reshape(f, c, 1, 1)
        gx = np.matmul(w2.T, g2).reshape(n, c, h, w)
        if bias is None:
            return gx, gw
        return gx, gw, g.sum(axis=(0, 2, 3))

    _record(out, inputs, bw)
    return out


# ---------------------------------------------------------------------------
# group normalization (fused forward/backward)


def group_norm(x: Tensor, gamma: Tensor, beta: Tensor, groups: int, eps: float = 1e-5) -> Tensor:
    """Normalize (N, C, H, W) per sample within channel groups, then scale and shift."""
    if x.ndim != 4:
        raise ShapeError(f"group_norm input must be (N, C, H, W), got {x.shape}")
    n, c, h, w = x.shape
    if c % groups != 0:
        raise ShapeError(f"group_norm: {c} channels not divisible by {groups} groups")
    m = (c // groups) * h * w

    xg = x.data.reshape(n, groups, m)
    mu = xg.mean(axis=2, keepdims=True)
    var = xg.var(axis=2, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat_g = (xg - mu) * inv
    xhat = xhat_g.reshape(n, c, h, w)
    gma = gamma.data.reshape(1, c, 1, 1)
    out = Tensor(xhat * gma + beta.data.reshape(1, c, 1, 1))

    def bw(g):
        dgamma = (g * xhat).sum(axis=(0, 2, 3))
        dbeta = g.sum(axis=(0, 2, 3))
        dxhat = (g * gma).reshape(n, groups, m)
        t1 = dxhat.mean(axis=2, keepdims=True)
        t2 = (dxhat * xhat_g).mean(axis=2, keepdims=True)
        dx = (inv * (dxhat - t1 - xhat_g * t2)).reshape(n, c, h, w)
        return dx, dgamma, dbeta

    _record(out, (x, gamma, beta), bw)
    return out
