"""Network building blocks on top of the tape autograd engine.

Everything here is plain float64 numpy under the hood.  The selective scan
is the one place where the forward/backward pair is hand-written (ssm module)
rather than traced op by op; `ssm_scan` bridges it into the tape.
"""

from __future__ import annotations

import numpy as np

from . import ssm
from . import autograd as ag
from .autograd import Tensor


class Module:
    """Minimal parameter container; submodules discovered by attribute walk."""

    def parameters(self) -> list[Tensor]:
        return [t for _, t in self.named_parameters()]

    def named_parameters(self):
        out = []
        for name, val in vars(self).items():
            if isinstance(val, Tensor) and val.requires_grad:
                out.append((name, val))
            elif isinstance(val, Module):
                out.extend((f"{name}.{n}", t) for n, t in val.named_parameters())
            elif isinstance(val, (list, tuple)):
                for i, item in enumerate(val):
                    if isinstance(item, Module):
                        out.extend((f"{name}.{i}.{n}", t)
                                   for n, t in item.named_parameters())
                    elif isinstance(item, Tensor) and item.requires_grad:
                        out.append((f"{name}.{i}", item))
        return out

    def zero_grad(self):
        for p in self.parameters():
            p.zero_grad()

    def n_params(self) -> int:
        return sum(int(np.prod(p.shape)) for p in self.parameters())

    def astype(self, dtype) -> "Module":
        for p in self.parameters():
            p.data = p.data.astype(dtype)
        return self

    def state_dict(self) -> dict:
        return {n: p.data.copy() for n, p in self.named_parameters()}

    def load_state_dict(self, state: dict):
        mine = dict(self.named_parameters())
        missing = sorted(set(mine) - set(state))
        extra = sorted(set(state) - set(mine))
        if missing or extra:
            raise ValueError(f"state mismatch: missing={missing} extra={extra}")
        for n, p in mine.items():
            arr = np.asarray(state[n], dtype=p.data.dtype)
            if arr.shape != p.shape:
                raise ValueError(f"shape mismatch for {n}: {arr.shape} vs {p.shape}")
            p.data = arr.copy()


class Linear(Module):
    def __init__(self, d_in: int, d_out: int, rng: np.random.Generator,
                 bias: bool = True, scale: float | None = None):
        if scale is None:
            scale = d_in ** -0.5
        self.w = Tensor(rng.normal(0.0, scale, size=(d_in, d_out)), requires_grad=True)
        self.b = Tensor(np.zeros(d_out), requires_grad=True) if bias else None

    def __call__(self, x: Tensor) -> Tensor:
        y = x.matmul(self.w)
        if self.b is not None:
            y = y + self.b
        return y


class LayerNorm(Module):
    def __init__(self, d: int, eps: float = 1e-5):
        self.g = Tensor(np.ones(d), requires_grad=True)
        self.b = Tensor(np.zeros(d), requires_grad=True)
        self.eps = eps

    def __call__(self, x: Tensor) -> Tensor:
        mu = x.mean(axis=-1, keepdims=True)
        xc = x - mu
        var = (xc * xc).mean(axis=-1, keepdims=True)
        return xc * ((var + self.eps) ** -0.5) * self.g + self.b


class InstanceNorm(Module):
    """Per-sample feature normalization with learned affine terms.

    For (B, D) activations this normalizes each row; for (B, C, H, W) maps
    it normalizes each (H, W) plane per channel per sample.
    """

    def __init__(self, d: int, eps: float = 1e-5):
        self.g = Tensor(np.ones(d), requires_grad=True)
        self.b = Tensor(np.zeros(d), requires_grad=True)
        self.eps = eps

    def __call__(self, x: Tensor) -> Tensor:
        if x.ndim == 2:
            mu = x.mean(axis=1, keepdims=True)
            xc = x - mu
            var = (xc * xc).mean(axis=1, keepdims=True)
            return xc * ((var + self.eps) ** -0.5) * self.g + self.b
        if x.ndim == 4:
            mu = x.mean(axis=(2, 3), keepdims=True)
            xc = x - mu
            var = (xc * xc).mean(axis=(2, 3), keepdims=True)
            g = self.g.reshape(1, -1, 1, 1)
            b = self.b.reshape(1, -1, 1, 1)
            return xc * ((var + self.eps) ** -0.5) * g + b
        raise ValueError("InstanceNorm expects (B, D) or (B, C, H, W)")


class SsmLayer(Module):
    """Selective SSM layer whose parameters live on the autograd tape."""

    _FIELDS = ("A_log", "skip", "w_delta", "b_delta", "w_b", "w_c")

    def __init__(self, d_model: int, n_state: int, rng: np.random.Generator,
                 mode: str = "zoh"):
        ref = ssm.SsmLayerParams.init(d_model, n_state, rng, mode=mode)
        self.A_log = Tensor(ref.A_log, requires_grad=True)
        self.skip = Tensor(ref.skip, requires_grad=True)
        self.w_delta = Tensor(ref.w_delta, requires_grad=True)
        self.b_delta = Tensor(ref.b_delta, requires_grad=True)
        self.w_b = Tensor(ref.w_b, requires_grad=True)
        self.w_c = Tensor(ref.w_c, requires_grad=True)
        self.mode = mode

    def numpy_params(self) -> ssm.SsmLayerParams:
        return ssm.SsmLayerParams(
            self.A_log.data, self.skip.data, self.w_delta.data,
            self.b_delta.data, self.w_b.data, self.w_c.data, mode=self.mode)

    def __call__(self, u: Tensor) -> Tensor:
        return ssm_scan(u, self)


def ssm_scan(u: Tensor, layer: SsmLayer) -> Tensor:
    """Selective scan as a single tape node with a hand-derived adjoint."""
    params = layer.numpy_params()
    y = ssm.selective_scan(u.data, params, path="chunked")
    cache = {"g": None, "du": None, "grads": None}

    def ensure(g):
        if cache["g"] is not g:
            du, grads = ssm.selective_scan_grad(u.data, params, g)
            cache["g"], cache["du"], cache["grads"] = g, du, grads

    def vjp_u(g):
        ensure(g)
        return cache["du"]

    def field_vjp(name):
        def vjp(g):
            ensure(g)
            return cache["grads"][name]
        return vjp

    parents = (u,) + tuple(getattr(layer, f) for f in SsmLayer._FIELDS)
    vjps = (vjp_u,) + tuple(field_vjp(f) for f in SsmLayer._FIELDS)
    return Tensor._make(y, parents, vjps)


class CrossAttention(Module):
    """Standard multi-head attention of query tokens over context tokens."""

    def __init__(self, d_model: int, n_heads: int, rng: np.random.Generator,
                 d_context: int | None = None):
        if d_model % n_heads:
            raise ValueError("d_model must be divisible by n_heads")
        d_context = d_context or d_model
        self.n_heads = n_heads
        self.d_head = d_model // n_heads
        self.wq = Linear(d_model, d_model, rng)
        self.wk = Linear(d_context, d_model, rng)
        self.wv = Linear(d_context, d_model, rng)
        self.wo = Linear(d_model, d_model, rng)

    def __call__(self, queries: Tensor, context: Tensor) -> Tensor:
        nq, nc = queries.shape[0], context.shape[0]
        h, dh = self.n_heads, self.d_head
        q = self.wq(queries).reshape(nq, h, dh).transpose(1, 0, 2)  # (h, nq, dh)
        k = self.wk(context).reshape(nc, h, dh).transpose(1, 0, 2)
        v = self.wv(context).reshape(nc, h, dh).transpose(1, 0, 2)
        att = q.matmul(k.transpose(0, 2, 1)) * (dh ** -0.5)         # (h, nq, nc)
        att = ag.softmax(att, axis=-1)
        out = att.matmul(v)                                          # (h, nq, dh)
        out = out.transpose(1, 0, 2).reshape(nq, h * dh)
        return self.wo(out)


class GatedFeedForward(Module):
    """Pointwise gated MLP: (silu(x W_g) * x W_u) W_o."""

    def __init__(self, d_model: int, rng: np.random.Generator, expand: int = 2):
        d_h = expand * d_model
        self.wg = Linear(d_model, d_h, rng)
        self.wu = Linear(d_model, d_h, rng)
        self.wo = Linear(d_h, d_model, rng, scale=d_h ** -0.5 * 0.5)

    def __call__(self, x: Tensor) -> Tensor:
        return self.wo(self.wg(x).silu() * self.wu(x))
