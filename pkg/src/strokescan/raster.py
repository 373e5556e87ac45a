"""Brush stroke rasterization.

The stroke spine is a quadratic Bezier: endpoints at center +/- w*(cos t,
sin t) with the control point offset perpendicular to the chord by
2*(bend - 0.5)*w (so the spine midpoint moves by (bend - 0.5)*w; bend = 0.5
is a straight stroke).  The spine is sampled at 16 points; coverage is the
union over the 15 polyline segments of tapered capsules, with thickness
falling linearly from h at the spine midpoint to 0.3*h at both tips, and the
intensity carries a subtle radial shading (slope 0.25).  The soft variant
takes a logistic edge profile of a log-sum-exp smooth max over the
per-segment capsule fields, which stays smooth in the parameters even where
the nearest-segment assignment switches (a hard min over segments would not).

Two rasterizers share this geometry:

* ``rasterize_oracle``  -- hard-edged indicator mask (ground truth).
* ``rasterize_soft``    -- logistic edge profile, differentiable in all 10
  parameters; ``rasterize_soft_grad`` is its reverse-mode derivative.
"""

from __future__ import annotations

import functools
from dataclasses import dataclass

import numpy as np

from . import autograd as ag
from .autograd import Tensor
from .strokes import PARAM_DIM, StrokeParams

try:
    from . import _kernels
except ImportError:  # pragma: no cover - numba is optional
    _kernels = None

SPINE_SAMPLES = 16
TIP_TAPER = 0.3
SHADING_SLOPE = 0.25
MIN_RES = 8

# corner-rounding scales of the soft field, in image units; both sit well
# above the 1e-4 finite-difference step so step-limited central differences
# can resolve the analytic gradient
_CLAMP_EPS = 1e-2
_DIST_EPS2 = 1.44e-4


@dataclass(frozen=True)
class GrayAlphaImage:
    """Single-stroke render: intensity and alpha, both H x W in [0, 1]."""

    width: int
    height: int
    intensity: np.ndarray
    alpha: np.ndarray

    def __post_init__(self):
        if self.width <= 0 or self.height <= 0:
            raise ValueError("image dimensions must be positive")
        for name in ("intensity", "alpha"):
            arr = getattr(self, name)
            if arr.shape != (self.height, self.width):
                raise ValueError(f"{name} shape {arr.shape} != ({self.height}, {self.width})")


@dataclass(frozen=True)
class Canvas:
    """RGB painting surface, H x W x 3 in [0, 1]."""

    width: int
    height: int
    rgb: np.ndarray

    def __post_init__(self):
        if self.rgb.shape != (self.height, self.width, 3):
            raise ValueError(f"rgb shape {self.rgb.shape} != ({self.height}, {self.width}, 3)")

    @classmethod
    def blank(cls, height: int, width: int, fill: float = 1.0) -> "Canvas":
        return cls(width, height, np.full((height, width, 3), fill, dtype=np.float64))


@functools.lru_cache(maxsize=32)
def pixel_grid(res: int) -> np.ndarray:
    """Pixel-center coordinates, row-major, shape (res*res, 2) as (x, y)."""
    c = (np.arange(res) + 0.5) / res
    xx, yy = np.meshgrid(c, c)
    return np.stack([xx.ravel(), yy.ravel()], axis=1)


def _spine_points(v: np.ndarray) -> np.ndarray:
    cx, cy, w, h, theta, bend = v[:6]
    ang = 2.0 * np.pi * theta
    d = np.array([np.cos(ang), np.sin(ang)])
    perp = np.array([-np.sin(ang), np.cos(ang)])
    c = np.array([cx, cy])
    e0 = c - w * d
    e1 = c + w * d
    ctrl = c + 2.0 * (bend - 0.5) * w * perp
    t = np.linspace(0.0, 1.0, SPINE_SAMPLES)[:, None]
    return (1 - t) ** 2 * e0 + 2 * t * (1 - t) * ctrl + t ** 2 * e1


def segment_fields(v: np.ndarray, pts: np.ndarray):
    """Per-segment point distances and arc parameters.

    Returns (dist, tpar), both (M, K) for M points and K = 15 segments; tpar
    holds the arc parameter in [0, 1] of the projection onto each segment.
    """
    q = _spine_points(v)
    A, B = q[:-1], q[1:]                      # (K, 2)
    seg = B - A
    seglen2 = (seg * seg).sum(axis=1) + 1e-12
    d = pts[:, None, :] - A[None, :, :]       # (M, K, 2)
    ss = np.clip((d * seg[None]).sum(axis=2) / seglen2, 0.0, 1.0)
    proj = A[None] + ss[..., None] * seg[None]
    diff = pts[:, None, :] - proj
    # same regularized metric as the soft path so that the soft mask
    # converges to this reference exactly as softness -> 0
    dist = np.sqrt((diff * diff).sum(axis=2) + _DIST_EPS2)
    tpar = (np.arange(len(seg)) + ss) / (SPINE_SAMPLES - 1)
    return dist, tpar


def distance_field(v: np.ndarray, pts: np.ndarray):
    """Min distance from each point to the spine polyline, and the arc
    parameter of the nearest spine point."""
    dist, tpar = segment_fields(v, pts)
    k = np.argmin(dist, axis=1)
    m = np.arange(len(pts))
    return dist[m, k], tpar[m, k]


def _thickness(h: float, tpar: np.ndarray) -> np.ndarray:
    return h * (1.0 - (1.0 - TIP_TAPER) * np.abs(2.0 * tpar - 1.0))


def _segment_taper() -> np.ndarray:
    """Per-segment thickness factors, evaluated at segment midpoints.

    The taper is a staircase over the 15 segments rather than a continuous
    function of the projection parameter: tying thickness to the projection
    would couple it to a quantity that varies at rate ~|pixel offset| /
    |segment length| under rotation, which destroys finite-difference
    resolvability for short segments.  The |2t-1| corner is smoothed so the
    midpoint carries no kink.
    """
    k = SPINE_SAMPLES - 1
    tt = (np.arange(k) + 0.5) * (2.0 / k) - 1.0
    return 1.0 - (1.0 - TIP_TAPER) * np.sqrt(tt * tt + 6.4e-3)


def rasterize_oracle(s: StrokeParams, res: int) -> GrayAlphaImage:
    """Hard-edged (aliased) stroke mask; ground truth for distillation."""
    if res < MIN_RES:
        raise ValueError(f"res must be >= {MIN_RES}")
    v = s.as_vector()
    pts = pixel_grid(res)
    thick = s.h * _segment_taper()
    if _kernels is not None:
        q = _spine_points(v)
        out = _kernels.oracle_forward(np.ascontiguousarray(q[:, 0]),
                                      np.ascontiguousarray(q[:, 1]),
                                      thick, pts[:, 0].copy(), pts[:, 1].copy(),
                                      _DIST_EPS2, SHADING_SLOPE)
        intensity, inside = out[0], out[1]
    else:
        dist, _ = segment_fields(v, pts)
        inside_k = (dist <= thick[None, :]) & (thick[None, :] > 0)
        inside = inside_k.any(axis=1)
        shading = np.where(inside_k,
                           1.0 - SHADING_SLOPE * dist / np.maximum(thick, 1e-30), 0.0)
        intensity = shading.max(axis=1)
    alpha = s.a * inside
    return GrayAlphaImage(res, res, intensity.reshape(res, res), alpha.reshape(res, res))


def default_softness(res: int) -> float:
    return 1.5 / res


# -- differentiable path -------------------------------------------------------


def _spine_tensors(p: Tensor):
    """Segment start points and direction vectors, four (n, K) tensors."""
    cx, cy = p[:, 0], p[:, 1]
    w = p[:, 2]
    ang = p[:, 4] * (2.0 * np.pi)
    cos_t, sin_t = ang.cos(), ang.sin()
    bendoff = (p[:, 5] - 0.5) * 2.0 * w
    e0x, e0y = cx - w * cos_t, cy - w * sin_t
    e1x, e1y = cx + w * cos_t, cy + w * sin_t
    ctrlx, ctrly = cx - sin_t * bendoff, cy + cos_t * bendoff
    ts = np.linspace(0.0, 1.0, SPINE_SAMPLES)
    qx = ag.stack([e0x * float((1 - t) ** 2) + ctrlx * float(2 * t * (1 - t))
                   + e1x * float(t ** 2) for t in ts], axis=1)     # (n, 16)
    qy = ag.stack([e0y * float((1 - t) ** 2) + ctrly * float(2 * t * (1 - t))
                   + e1y * float(t ** 2) for t in ts], axis=1)
    ax, ay = qx[:, :-1], qy[:, :-1]
    sx = qx[:, 1:] - ax
    sy = qy[:, 1:] - ay
    return ax, ay, sx, sy


def _capsule_forward(ax, ay, sx, sy, h, a, pts, softness):
    """Plain-numpy forward of the per-pixel capsule fields.

    Inputs are (n, K) segment geometry plus (n,) height and alpha.  Returns
    (out, cache): out stacks (intensity, alpha) as (2, n, M); the cache holds
    the intermediates the hand-written backward needs.

    Design notes on the nonlinearities (all corner-rounding widths are fixed
    in image units, well above the 1e-4 finite-difference step, so central
    differences can resolve the analytic gradient):

    * projection parameter: smooth clamp onto [0, 1] built from two sqrt
      terms, exactly antisymmetric about 1/2 (so reversing the spine yields
      bitwise-mirrored projections, giving rotation-by-pi symmetry);
    * point distance: sqrt with the _DIST_EPS2 floor shared with the oracle;
    * union over segments: edge sigmoid of a log-sum-exp smooth max.  A
      complement-product union would multiply the edge slope by the capsule
      overlap count (up to K-fold for fat strokes whose capsules coincide);
      lse keeps the edge scale pinned at `softness` and still converges to
      the hard union as softness -> 0;
    * radial shading: ratio with a smooth saturation at 4 (keeps intensity
      in [0, 1] for degenerate strokes without a clip kink).
    """
    dt = ax.dtype
    n, K = ax.shape
    M = len(pts)
    px = pts[:, 0].reshape(1, M, 1).astype(dt)
    py = pts[:, 1].reshape(1, M, 1).astype(dt)
    axb, ayb = ax[:, None, :], ay[:, None, :]
    sxb, syb = sx[:, None, :], sy[:, None, :]
    L = sx * sx + sy * sy + 1e-12                                  # (n, K)
    Lb = L[:, None, :]
    rx = px - axb
    ry = py - ayb
    u = (rx * sxb + ry * syb) / Lb                                 # (n, M, K)
    dclamp = _CLAMP_EPS * (L + 1e-12) ** -0.5
    d2 = (dclamp * dclamp)[:, None, :]
    s1 = np.sqrt(u * u + d2)
    s2 = np.sqrt((u - 1.0) * (u - 1.0) + d2)
    ss = (s1 - s2 + 1.0) * 0.5
    ex = px - (axb + sxb * ss)
    ey = py - (ayb + syb * ss)
    dist = np.sqrt(ex * ex + ey * ey + _DIST_EPS2)
    taper = _segment_taper().astype(dt)
    t = (h[:, None] * taper[None, :])[:, None, :]                  # (n, 1, K)
    inv_soft = dt.type(1.0 / softness)
    z = (t - dist) * inv_soft
    zmax = z.max(axis=2)
    w_exp = np.exp(z - zmax[:, :, None])
    S = w_exp.sum(axis=2)
    lse = zmax + np.log(S)
    mask = ag._sigmoid_np(lse)                                     # (n, M)
    alpha = a[:, None] * mask
    sig = ag._sigmoid_np(z)
    r = dist / (t + 1e-12)
    y = (r * 0.25) ** 4 + 1.0
    q = np.sqrt(np.sqrt(y))                                        # y ** 0.25
    shading = 1.0 - SHADING_SLOPE * (r / q)
    num = (shading * sig).sum(axis=2)
    den = sig.sum(axis=2) + 1e-9
    intensity = mask * (num / den)
    out = np.stack([intensity, alpha])
    cache = dict(px=px, py=py, L=L, u=u, d2=d2, s1=s1, s2=s2, ss=ss,
                 ex=ex, ey=ey, dist=dist, t=t, taper=taper, inv_soft=inv_soft,
                 w_exp=w_exp, S=S, mask=mask, sig=sig, r=r, y=y, q=q,
                 shading=shading, num=num, den=den, a=a,
                 ax=ax, ay=ay, sx=sx, sy=sy)
    return out, cache


def _capsule_backward(g, c):
    """Hand-derived vjp of _capsule_forward.

    g is the (2, n, M) upstream gradient for (intensity, alpha); returns
    gradients for (ax, ay, sx, sy, h, a).  Verified in tests against the
    pure-tape reference implementation (_soft_fields_batch_ref).
    """
    gI, gA = g[0], g[1]
    mask, num, den = c["mask"], c["num"], c["den"]
    sig, dist, t = c["sig"], c["dist"], c["t"]
    sxb, syb = c["sx"][:, None, :], c["sy"][:, None, :]
    L, Lb = c["L"], c["L"][:, None, :]
    u, s1, s2, ss = c["u"], c["s1"], c["s2"], c["ss"]
    ex, ey = c["ex"], c["ey"]

    gmask = gA * c["a"][:, None] + gI * (num / den)
    ga = (gA * mask).sum(axis=1)
    glse = gmask * mask * (1.0 - mask)                             # (n, M)
    c1 = gI * (mask / den)
    c2 = c1 * (num / den)
    g_sig = c1[:, :, None] * c["shading"] - c2[:, :, None]
    # d(r / (r^4/256 + 1)^(1/4))/dr collapses to y^(-5/4)
    g_r = (-SHADING_SLOPE) * (c1[:, :, None] * sig) / (c["y"] * c["q"])
    inv_t = 1.0 / (t + 1e-12)
    g_dist = g_r * inv_t
    g_t = -(g_r * c["r"]) * inv_t
    # lse gradient routes through the exact softmax over segments
    p_soft = c["w_exp"] / c["S"][:, :, None]
    g_z = g_sig * sig * (1.0 - sig) + glse[:, :, None] * p_soft
    g_t += g_z * c["inv_soft"]
    g_dist -= g_z * c["inv_soft"]
    gh = (g_t.sum(axis=1) * c["taper"][None, :]).sum(axis=1)
    gd = g_dist / dist
    g_ex = gd * ex
    g_ey = gd * ey
    g_ss = -(g_ex * sxb + g_ey * syb)
    g_rx = g_ex.copy()
    g_ry = g_ey.copy()
    g_sx3 = -g_ex * ss
    g_sy3 = -g_ey * ss
    # ss = (s1 - s2 + 1) / 2 with s2 carrying the negated upstream
    g_s1 = 0.5 * g_ss
    g_u = g_s1 * (u / s1 - (u - 1.0) / s2)
    g_d2 = g_s1 * (0.5 / s1 - 0.5 / s2)
    gu_L = g_u / Lb
    rx = c["px"] - c["ax"][:, None, :]
    ry = c["py"] - c["ay"][:, None, :]
    g_rx += gu_L * sxb
    g_ry += gu_L * syb
    g_sx3 += gu_L * rx
    g_sy3 += gu_L * ry
    g_L = (-gu_L * u).sum(axis=1)                                  # (n, K)
    # d2 = eps^2 / (L + 1e-12) so dd2/dL = -d2 / (L + 1e-12)
    g_L -= (c["d2"][:, 0, :] / (L + 1e-12)) * g_d2.sum(axis=1)
    g_sx = g_sx3.sum(axis=1) + 2.0 * c["sx"] * g_L
    g_sy = g_sy3.sum(axis=1) + 2.0 * c["sy"] * g_L
    g_ax = -g_rx.sum(axis=1)
    g_ay = -g_ry.sum(axis=1)
    return g_ax, g_ay, g_sx, g_sy, gh, ga


def _kernel_consts(dt, softness: float) -> np.ndarray:
    return np.array([1.0 / softness, _CLAMP_EPS, _DIST_EPS2, SHADING_SLOPE,
                     1.0, 1e-12, 1e-9], dtype=dt)


def _capsule_fields(ax: Tensor, ay: Tensor, sx: Tensor, sy: Tensor,
                    h: Tensor, a: Tensor, pts: np.ndarray, softness: float) -> Tensor:
    """Tape node over the fused capsule fields; returns (2, n, M)."""
    dt = ax.dtype
    if _kernels is not None:
        px = np.ascontiguousarray(pts[:, 0].astype(dt))
        py = np.ascontiguousarray(pts[:, 1].astype(dt))
        taper = _segment_taper().astype(dt)
        consts = _kernel_consts(dt, softness)
        out = _kernels.capsule_forward(ax.data, ay.data, sx.data, sy.data,
                                       h.data, a.data, px, py, taper, consts)

        def backend(g):
            return _kernels.capsule_backward(
                np.ascontiguousarray(g[0]), np.ascontiguousarray(g[1]),
                ax.data, ay.data, sx.data, sy.data, h.data, a.data,
                px, py, taper, consts)
    else:
        out, cache = _capsule_forward(ax.data, ay.data, sx.data, sy.data,
                                      h.data, a.data, pts, softness)

        def backend(g):
            return _capsule_backward(g, cache)

    memo = {}

    def grads(g):
        # backward computes all six input gradients at once; memoize on the
        # upstream array so each vjp call reuses the same sweep
        if memo.get("g") is not g:
            memo["g"] = g
            memo["out"] = backend(g)
        return memo["out"]

    vjps = [lambda g, i=i: grads(g)[i] for i in range(6)]
    return Tensor._make(out, (ax, ay, sx, sy, h, a), vjps)


def _soft_fields_batch(p: Tensor, pts: np.ndarray, softness: float):
    """Soft intensity/alpha fields, (n, M) each, for an (n, 10) stroke tensor.

    The spine geometry runs on the tape (cheap, (n, 16) arrays); the per-pixel
    capsule fields run through one fused custom op with a hand-written
    backward, which keeps the tape-node count independent of the pixel count.
    """
    n = p.shape[0]
    M = len(pts)
    ax, ay, sx, sy = _spine_tensors(p)
    out = _capsule_fields(ax, ay, sx, sy, p[:, 3], p[:, 9], pts, softness)
    return out[0], out[1]


def _soft_fields_batch_ref(p: Tensor, pts: np.ndarray, softness: float):
    """Pure-tape reference of _soft_fields_batch (same math, every step an
    autograd node).  Kept for cross-checking the fused op's hand-written
    backward; not used in production paths."""
    n = p.shape[0]
    M = len(pts)
    K = SPINE_SAMPLES - 1
    dt = p.dtype
    ax, ay, sx, sy = _spine_tensors(p)
    ax = ax.reshape(n, 1, K)
    ay = ay.reshape(n, 1, K)
    sx = sx.reshape(n, 1, K)
    sy = sy.reshape(n, 1, K)
    h = p[:, 3]
    seglen2 = sx * sx + sy * sy + 1e-12
    px = Tensor(pts[:, 0].reshape(1, M, 1).astype(dt))
    py = Tensor(pts[:, 1].reshape(1, M, 1).astype(dt))
    ss_raw = ((px - ax) * sx + (py - ay) * sy) / seglen2           # (n, M, K)
    dclamp = _CLAMP_EPS * (seglen2 + 1e-12) ** -0.5
    d2 = dclamp * dclamp
    ss = ((ss_raw * ss_raw + d2).sqrt()
          - ((ss_raw - 1.0) * (ss_raw - 1.0) + d2).sqrt() + 1.0) * 0.5
    diffx = px - (ax + sx * ss)
    diffy = py - (ay + sy * ss)
    dist = (diffx * diffx + diffy * diffy + _DIST_EPS2).sqrt()     # (n, M, K)
    thick = h.reshape(n, 1, 1) * Tensor(_segment_taper().reshape(1, 1, K).astype(dt))
    z = (thick - dist) * (1.0 / softness)
    zmax = ag.amax(z, axis=2)                                      # (n, M)
    lse = zmax + ((z - zmax.reshape(n, M, 1)).exp().sum(axis=2)).log()
    mask = lse.sigmoid()
    alpha = p[:, 9].reshape(n, 1) * mask
    sig = z.sigmoid()
    r = dist / (thick + 1e-12)
    r_sat = r / ((r * 0.25) ** 4 + 1.0).sqrt().sqrt()
    shading = 1.0 - SHADING_SLOPE * r_sat
    intensity = mask * ((shading * sig).sum(axis=2) / (sig.sum(axis=2) + 1e-9))
    return intensity, alpha


def _soft_fields(p: Tensor, pts: np.ndarray, softness: float):
    """Soft intensity/alpha fields as autograd tensors; p is a (10,) tensor."""
    M = len(pts)
    intensity, alpha = _soft_fields_batch(p.reshape(1, PARAM_DIM), pts, softness)
    return intensity.reshape(M), alpha.reshape(M)


def rasterize_soft(s: StrokeParams, res: int, softness: float | None = None) -> GrayAlphaImage:
    """Logistic-edge stroke; differentiable everywhere in all 10 parameters."""
    if res < MIN_RES:
        raise ValueError(f"res must be >= {MIN_RES}")
    if softness is None:
        softness = default_softness(res)
    if softness <= 0:
        raise ValueError("softness must be > 0")
    p = Tensor(s.as_vector())
    intensity, alpha = _soft_fields(p, pixel_grid(res), softness)
    return GrayAlphaImage(res, res, intensity.data.reshape(res, res),
                          alpha.data.reshape(res, res))


def rasterize_soft_grad(s: StrokeParams, res: int, softness: float | None,
                        up_intensity: np.ndarray, up_alpha: np.ndarray) -> np.ndarray:
    """d(loss)/d(params) given per-pixel upstream gradients of the loss with
    respect to the soft intensity and alpha images."""
    if softness is None:
        softness = default_softness(res)
    up_intensity = np.asarray(up_intensity, dtype=np.float64)
    up_alpha = np.asarray(up_alpha, dtype=np.float64)
    if up_intensity.shape != (res, res) or up_alpha.shape != (res, res):
        raise ValueError("upstream gradients must match the render resolution")
    p = Tensor(s.as_vector(), requires_grad=True)
    intensity, alpha = _soft_fields(p, pixel_grid(res), softness)
    loss = (intensity * up_intensity.ravel()).sum() + (alpha * up_alpha.ravel()).sum()
    loss.backward()
    return p.grad.copy()


# -- colorize / composite ------------------------------------------------------


def colorize(layer: GrayAlphaImage, s: StrokeParams) -> np.ndarray:
    """RGBA layer (H, W, 4): rgb = intensity * stroke color, straight alpha."""
    color = np.array([s.r, s.g, s.b])
    rgb = layer.intensity[..., None] * color
    return np.concatenate([rgb, layer.alpha[..., None]], axis=2)


def composite_over(canvas: Canvas, layer: np.ndarray) -> Canvas:
    """Straight-alpha over: out = layer.rgb * a + canvas * (1 - a)."""
    if layer.shape != (canvas.height, canvas.width, 4):
        raise ValueError(f"layer shape {layer.shape} does not match canvas "
                         f"({canvas.height}, {canvas.width}, 4)")
    a = layer[..., 3:4]
    out = layer[..., :3] * a + canvas.rgb * (1.0 - a)
    return Canvas(canvas.width, canvas.height, out)


def _render_core(params: Tensor, background, pts: np.ndarray, softness: float) -> Tensor:
    """Fused render+composite tape node (numba path), returns (M, 3)."""
    dt = params.dtype
    M = len(pts)
    ax, ay, sx, sy = _spine_tensors(params)
    h, a = params[:, 3], params[:, 9]
    cr, cg, cb = params[:, 6], params[:, 7], params[:, 8]
    bg_t = background if isinstance(background, Tensor) else None
    if bg_t is not None:
        bg = np.ascontiguousarray(bg_t.data.reshape(M, 3))
    else:
        bg = np.full((M, 3), background, dtype=dt)
    px = np.ascontiguousarray(pts[:, 0].astype(dt))
    py = np.ascontiguousarray(pts[:, 1].astype(dt))
    taper = _segment_taper().astype(dt)
    consts = _kernel_consts(dt, softness)
    args = (ax.data, ay.data, sx.data, sy.data, h.data, a.data,
            cr.data, cg.data, cb.data, bg, px, py, taper, consts)
    out = _kernels.render_forward(*args)
    memo = {}

    def grads(g):
        if memo.get("g") is not g:
            memo["g"] = g
            memo["out"] = _kernels.render_backward(np.ascontiguousarray(g), *args)
        return memo["out"]

    parents = [ax, ay, sx, sy, h, a, cr, cg, cb]
    vjps = [lambda g, i=i: grads(g)[i] for i in range(9)]
    if bg_t is not None:
        parents.append(bg_t)
        vjps.append(lambda g: grads(g)[9].reshape(bg_t.shape))
    return Tensor._make(out, parents, vjps)


def render_sequence_soft(params: Tensor, res: int, softness: float | None = None,
                         background=1.0) -> Tensor:
    """Differentiable painting of a whole (n, 10) stroke tensor over a canvas.

    Returns a (res, res, 3) tensor; gradients flow into every stroke
    parameter through the soft masks and the over-operator.
    """
    if softness is None:
        softness = default_softness(res)
    pts = pixel_grid(res)
    if _kernels is not None:
        return _render_core(params, background, pts, softness).reshape(res, res, 3)
    return _render_sequence_ref(params, background, pts, softness).reshape(res, res, 3)


def _render_sequence_ref(params: Tensor, background, pts: np.ndarray,
                         softness: float) -> Tensor:
    """Stroke-at-a-time tape render; fallback and cross-check for the fused
    kernel path.  Returns (M, 3)."""
    M = len(pts)
    if isinstance(background, Tensor):
        canvas = background.reshape(M, 3)
    else:
        canvas = Tensor(np.full((M, 3), background, dtype=params.dtype))
    n = params.shape[0]
    intensity, alpha = _soft_fields_batch(params, pts, softness)
    colors = params[:, 6:9]
    for i in range(n):
        a = alpha[i].reshape(M, 1)
        rgb = intensity[i].reshape(M, 1) * colors[i].reshape(1, 3)
        canvas = rgb * a + canvas * (1.0 - a)
    return canvas.reshape(M, 3)


def paint_sequence(strokes, res: int, background: float = 1.0,
                   renderer: str = "oracle", softness: float | None = None) -> Canvas:
    """Non-differentiable painting loop (oracle or soft masks)."""
    canvas = Canvas.blank(res, res, background)
    for s in strokes:
        layer = rasterize_oracle(s, res) if renderer == "oracle" else rasterize_soft(s, res, softness)
        canvas = composite_over(canvas, colorize(layer, s))
    return canvas
