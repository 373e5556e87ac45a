"""Minimal reverse-mode automatic differentiation on numpy arrays.

A small tape-based engine: each operation records its parents and a list of
vector-Jacobian products, and ``Tensor.backward`` replays the tape in reverse
topological order.  Only the operations needed by this package are provided
(elementwise math, reductions, matmul, slicing/reshaping, conv2d, nearest
upsampling, and a couple of argmin-routing helpers for the rasterizer).

Gradients accumulate in float; dtype follows the data (float32 for training,
float64 for finite-difference verification).
"""

from __future__ import annotations

import numpy as np


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum `grad` down to `shape` (reverse of numpy broadcasting)."""
    if grad.shape == shape:
        return grad
    # sum away prepended axes
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    # sum axes that were broadcast from 1
    for ax, n in enumerate(shape):
        if n == 1 and grad.shape[ax] != 1:
            grad = grad.sum(axis=ax, keepdims=True)
    return grad.reshape(shape)


class Tensor:
    """A numpy array plus the bookkeeping needed for reverse-mode autodiff."""

    __slots__ = ("data", "requires_grad", "grad", "_parents", "_vjps")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        self.data = np.asarray(data, dtype=dtype) if dtype is not None else np.asarray(data)
        if self.data.dtype not in (np.float32, np.float64):
            self.data = self.data.astype(np.float64)
        self.requires_grad = requires_grad
        self.grad = None
        self._parents = ()
        self._vjps = ()

    # -- construction of derived nodes -------------------------------------

    @staticmethod
    def _make(data, parents, vjps):
        out = Tensor(data)
        parents = tuple(p for p in parents)
        if any(p.requires_grad for p in parents):
            out.requires_grad = True
            out._parents = parents
            out._vjps = tuple(vjps)
        return out

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    def detach(self) -> "Tensor":
        return Tensor(self.data.copy())

    def item(self) -> float:
        return float(self.data)

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, grad={self.requires_grad})"

    # -- backward pass ------------------------------------------------------

    def backward(self, grad=None):
        if grad is None:
            grad = np.ones_like(self.data)
        else:
            grad = np.asarray(grad, dtype=self.data.dtype)
        topo: list[Tensor] = []
        seen = set()

        def visit(t: Tensor):
            stack = [(t, iter(t._parents))]
            seen.add(id(t))
            while stack:
                node, it = stack[-1]
                advanced = False
                for p in it:
                    if id(p) not in seen and p.requires_grad:
                        seen.add(id(p))
                        stack.append((p, iter(p._parents)))
                        advanced = True
                        break
                if not advanced:
                    topo.append(node)
                    stack.pop()

        visit(self)
        grads = {id(self): grad}
        for node in reversed(topo):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if not node._parents:
                # only leaves keep a materialized .grad; intermediate grads
                # live in the dict for the duration of the sweep
                node.grad = g.copy() if node.grad is None else node.grad + g
            for parent, vjp in zip(node._parents, node._vjps):
                if not parent.requires_grad:
                    continue
                pg = vjp(g)
                if id(parent) in grads:
                    grads[id(parent)] = grads[id(parent)] + pg
                else:
                    grads[id(parent)] = pg

    def zero_grad(self):
        self.grad = None

    # -- elementwise arithmetic ---------------------------------------------

    def _coerce(self, other) -> "Tensor":
        if isinstance(other, Tensor):
            return other
        return Tensor(np.asarray(other, dtype=self.data.dtype))

    def __add__(self, other):
        o = self._coerce(other)
        return Tensor._make(
            self.data + o.data,
            (self, o),
            (lambda g: _unbroadcast(g, self.data.shape),
             lambda g: _unbroadcast(g, o.data.shape)),
        )

    __radd__ = __add__

    def __neg__(self):
        return Tensor._make(-self.data, (self,), (lambda g: -g,))

    def __sub__(self, other):
        return self + (-self._coerce(other))

    def __rsub__(self, other):
        return (-self) + other

    def __mul__(self, other):
        o = self._coerce(other)
        return Tensor._make(
            self.data * o.data,
            (self, o),
            (lambda g: _unbroadcast(g * o.data, self.data.shape),
             lambda g: _unbroadcast(g * self.data, o.data.shape)),
        )

    __rmul__ = __mul__

    def __truediv__(self, other):
        o = self._coerce(other)
        return Tensor._make(
            self.data / o.data,
            (self, o),
            (lambda g: _unbroadcast(g / o.data, self.data.shape),
             lambda g: _unbroadcast(-g * self.data / (o.data ** 2), o.data.shape)),
        )

    def __rtruediv__(self, other):
        return self._coerce(other) / self

    def __pow__(self, k: float):
        return Tensor._make(
            self.data ** k,
            (self,),
            (lambda g: g * k * self.data ** (k - 1),),
        )

    # -- elementwise functions ----------------------------------------------

    def exp(self):
        out = np.exp(self.data)
        return Tensor._make(out, (self,), (lambda g: g * out,))

    def log(self):
        return Tensor._make(np.log(self.data), (self,), (lambda g: g / self.data,))

    def sqrt(self):
        out = np.sqrt(self.data)
        return Tensor._make(out, (self,), (lambda g: g * 0.5 / out,))

    def sin(self):
        return Tensor._make(np.sin(self.data), (self,), (lambda g: g * np.cos(self.data),))

    def cos(self):
        return Tensor._make(np.cos(self.data), (self,), (lambda g: -g * np.sin(self.data),))

    def abs(self):
        s = np.sign(self.data)
        return Tensor._make(np.abs(self.data), (self,), (lambda g: g * s,))

    def tanh(self):
        out = np.tanh(self.data)
        return Tensor._make(out, (self,), (lambda g: g * (1.0 - out * out),))

    def sigmoid(self):
        out = _sigmoid_np(self.data)
        return Tensor._make(out, (self,), (lambda g: g * out * (1.0 - out),))

    def softplus(self):
        out = _softplus_np(self.data)
        s = _sigmoid_np(self.data)
        return Tensor._make(out, (self,), (lambda g: g * s,))

    def relu(self):
        mask = self.data > 0
        return Tensor._make(self.data * mask, (self,), (lambda g: g * mask,))

    def silu(self):
        s = _sigmoid_np(self.data)
        out = self.data * s
        d = s * (1.0 + self.data * (1.0 - s))
        return Tensor._make(out, (self,), (lambda g: g * d,))

    def clip(self, lo: float, hi: float):
        mask = (self.data >= lo) & (self.data <= hi)
        return Tensor._make(np.clip(self.data, lo, hi), (self,), (lambda g: g * mask,))

    # -- reductions ----------------------------------------------------------

    def sum(self, axis=None, keepdims=False):
        out = self.data.sum(axis=axis, keepdims=keepdims)

        def vjp(g):
            if axis is None:
                return np.broadcast_to(g, self.data.shape).copy()
            gg = g
            if not keepdims:
                axes = axis if isinstance(axis, tuple) else (axis,)
                axes = tuple(a % self.data.ndim for a in axes)
                for a in sorted(axes):
                    gg = np.expand_dims(gg, a)
            return np.broadcast_to(gg, self.data.shape).copy()

        return Tensor._make(out, (self,), (vjp,))

    def mean(self, axis=None, keepdims=False):
        if axis is None:
            n = self.data.size
        else:
            axes = axis if isinstance(axis, tuple) else (axis,)
            n = 1
            for a in axes:
                n *= self.data.shape[a]
        return self.sum(axis=axis, keepdims=keepdims) * (1.0 / n)

    # -- shape manipulation ---------------------------------------------------

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        old = self.data.shape
        return Tensor._make(
            self.data.reshape(shape), (self,), (lambda g: g.reshape(old),)
        )

    def transpose(self, *axes):
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        inv = np.argsort(axes)
        return Tensor._make(
            self.data.transpose(axes), (self,), (lambda g: g.transpose(inv),)
        )

    def __getitem__(self, idx):
        def vjp(g):
            out = np.zeros_like(self.data)
            np.add.at(out, idx, g)
            return out

        return Tensor._make(self.data[idx], (self,), (vjp,))

    # -- linear algebra --------------------------------------------------------

    def matmul(self, other):
        o = self._coerce(other)
        a, b = self.data, o.data
        out = a @ b

        def vjp_a(g):
            if b.ndim == 1:
                ga = np.expand_dims(g, -1) * b
            else:
                ga = g @ np.swapaxes(b, -1, -2)
            return _unbroadcast(ga, a.shape)

        def vjp_b(g):
            if b.ndim == 1:
                gb = (np.expand_dims(g, -1) * a).sum(axis=tuple(range(a.ndim - 1)))
            elif a.ndim == 1:
                gb = np.outer(a, g)
            else:
                gb = np.swapaxes(a, -1, -2) @ g
            return _unbroadcast(gb, b.shape)

        return Tensor._make(out, (self, o), (vjp_a, vjp_b))

    __matmul__ = matmul


# -- free functions ------------------------------------------------------------


def _sigmoid_np(x: np.ndarray) -> np.ndarray:
    # stable for large |x|; branch-free
    ex = np.exp(-np.abs(x))
    pos = 1.0 / (1.0 + ex)
    return np.where(x >= 0, pos, 1.0 - pos)


def _softplus_np(x: np.ndarray) -> np.ndarray:
    return np.maximum(x, 0.0) + np.log1p(np.exp(-np.abs(x)))


def tensor(data, requires_grad=False, dtype=None) -> Tensor:
    return Tensor(data, requires_grad=requires_grad, dtype=dtype)


def as_tensor(x, dtype=None) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x, dtype=dtype)


def stack(tensors: list, axis: int = 0) -> Tensor:
    datas = [t.data for t in tensors]
    out = np.stack(datas, axis=axis)
    vjps = []
    for i, t in enumerate(tensors):
        vjps.append(lambda g, i=i: np.take(g, i, axis=axis))
    return Tensor._make(out, tuple(tensors), tuple(vjps))


def concat(tensors: list, axis: int = 0) -> Tensor:
    datas = [t.data for t in tensors]
    out = np.concatenate(datas, axis=axis)
    sizes = [d.shape[axis] for d in datas]
    offsets = np.cumsum([0] + sizes)
    vjps = []
    for i, t in enumerate(tensors):
        sl = [slice(None)] * out.ndim
        sl[axis] = slice(int(offsets[i]), int(offsets[i + 1]))
        vjps.append(lambda g, sl=tuple(sl): g[sl])
    return Tensor._make(out, tuple(tensors), tuple(vjps))


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    shifted = x - np.max(x.data, axis=axis, keepdims=True)
    e = shifted.exp()
    return e / e.sum(axis=axis, keepdims=True)


def amax(values: Tensor, axis: int = -1) -> Tensor:
    """Maximum along an axis; backward routes to the argmax (first at ties)."""
    idx = np.expand_dims(np.argmax(values.data, axis=axis), axis)
    out = np.squeeze(np.take_along_axis(values.data, idx, axis=axis), axis=axis)

    def vjp(g):
        full = np.zeros_like(values.data)
        np.put_along_axis(full, idx, np.expand_dims(g, axis), axis=axis)
        return full

    return Tensor._make(out, (values,), (vjp,))


def min_with_companion(values: Tensor, companion: Tensor, axis: int = -1):
    """Minimum of `values` along `axis`, with `companion` gathered at the argmin.

    Backward routes both upstream gradients to the argmin entries only
    (subgradient of the min; first index wins at ties).
    """
    idx = np.argmin(values.data, axis=axis)
    take = np.take_along_axis
    exp_idx = np.expand_dims(idx, axis)
    vmin = np.squeeze(take(values.data, exp_idx, axis=axis), axis=axis)
    cmin = np.squeeze(take(companion.data, exp_idx, axis=axis), axis=axis)

    def vjp_values(g):
        out = np.zeros_like(values.data)
        np.put_along_axis(out, exp_idx, np.expand_dims(g, axis), axis=axis)
        return out

    def vjp_companion(g):
        out = np.zeros_like(companion.data)
        np.put_along_axis(out, exp_idx, np.expand_dims(g, axis), axis=axis)
        return out

    v = Tensor._make(vmin, (values,), (vjp_values,))
    c = Tensor._make(cmin, (companion,), (vjp_companion,))
    return v, c


# -- conv2d / upsampling ---------------------------------------------------------


def _im2col(x: np.ndarray, kh: int, kw: int, stride: int, pad: int):
    b, c, h, w = x.shape
    if pad:
        x = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    oh = (x.shape[2] - kh) // stride + 1
    ow = (x.shape[3] - kw) // stride + 1
    cols = np.empty((b, c, kh, kw, oh, ow), dtype=x.dtype)
    for i in range(kh):
        for j in range(kw):
            cols[:, :, i, j] = x[:, :, i : i + stride * oh : stride, j : j + stride * ow : stride]
    return cols.reshape(b, c * kh * kw, oh * ow), oh, ow


def _col2im(cols: np.ndarray, x_shape, kh, kw, stride, pad, oh, ow):
    b, c, h, w = x_shape
    xp = np.zeros((b, c, h + 2 * pad, w + 2 * pad), dtype=cols.dtype)
    cols = cols.reshape(b, c, kh, kw, oh, ow)
    for i in range(kh):
        for j in range(kw):
            xp[:, :, i : i + stride * oh : stride, j : j + stride * ow : stride] += cols[:, :, i, j]
    if pad:
        return xp[:, :, pad:-pad, pad:-pad]
    return xp


def conv2d(x: Tensor, w: Tensor, b: Tensor | None = None, stride: int = 1, pad: int = 0) -> Tensor:
    """2D convolution, NCHW layout; w has shape (out_c, in_c, kh, kw)."""
    oc, ic, kh, kw = w.data.shape
    cols, oh, ow = _im2col(x.data, kh, kw, stride, pad)
    wmat = w.data.reshape(oc, ic * kh * kw)
    out = np.matmul(wmat, cols)
    if b is not None:
        out = out + b.data[None, :, None]
    bsz = x.data.shape[0]
    out = out.reshape(bsz, oc, oh, ow)

    def vjp_x(g):
        gm = g.reshape(bsz, oc, oh * ow)
        gcols = np.matmul(wmat.T, gm)
        return _col2im(gcols, x.data.shape, kh, kw, stride, pad, oh, ow)

    def vjp_w(g):
        gm = g.reshape(bsz, oc, oh * ow)
        gw = np.matmul(gm, cols.swapaxes(1, 2)).sum(axis=0)
        return gw.reshape(w.data.shape)

    parents = [x, w]
    vjps = [vjp_x, vjp_w]
    if b is not None:
        parents.append(b)
        vjps.append(lambda g: g.sum(axis=(0, 2, 3)))
    return Tensor._make(out, tuple(parents), tuple(vjps))


def upsample_nearest2d(x: Tensor, factor: int = 2) -> Tensor:
    out = np.repeat(np.repeat(x.data, factor, axis=2), factor, axis=3)
    b, c, h, w = x.data.shape

    def vjp(g):
        return g.reshape(b, c, h, factor, w, factor).sum(axis=(3, 5))

    return Tensor._make(out, (x,), (vjp,))


def numeric_gradient(fn, x: np.ndarray, step: float = 1e-4) -> np.ndarray:
    """Central finite differences of a scalar-valued fn over a flat copy of x."""
    x = np.asarray(x, dtype=np.float64)
    g = np.zeros_like(x)
    flat = x.reshape(-1)
    gf = g.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + step
        fp = fn(x)
        flat[i] = orig - step
        fm = fn(x)
        flat[i] = orig
        gf[i] = (fp - fm) / (2.0 * step)
    return g
