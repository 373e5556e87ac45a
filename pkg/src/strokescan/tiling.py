"""Overlapping-patch painting.

The source image is split into a grid of patches (optionally overlapping),
strokes are predicted per patch, and the patches are merged group by group:
all patches' group-g layers are feather-blended into one image-wide layer
and composited before any group g+1 stroke lands.  This preserves global
stroke ordering at group granularity while keeping per-patch prediction
independent.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import raster
from .raster import Canvas
from .strokes import (GridDescriptor, PaintingRecord, StrokeEntry,
                      StrokeParams, StrokeSequence)

GROUP_SIZE = 10


@dataclass(frozen=True)
class PatchGrid:
    height: int
    width: int
    gx: int
    gy: int
    patch_px: int
    overlap: float
    rects: tuple       # ((y0, x0, y1, x1), ...) row-major patch order
    weights: tuple     # matching (patch_px, patch_px) feather masks

    def descriptor(self) -> GridDescriptor:
        return GridDescriptor(self.gx, self.gy, self.overlap, self.patch_px)


def _axis_layout(size: int, g: int, overlap: float):
    """Patch side, starts, and per-patch 1D feather weights for one axis."""
    side = int(np.ceil(size * (1.0 + overlap * (g - 1)) / g))
    side = min(side, size)
    if g == 1:
        starts = [0]
    else:
        starts = [round(i * (size - side) / (g - 1)) for i in range(g)]
    ramps = []
    for i in range(g):
        w = np.ones(side)
        if i > 0:                                   # left overlap band
            band = starts[i - 1] + side - starts[i]
            if band > 0:
                t = (np.arange(band) + 0.5) / band
                w[:band] = t
        if i < g - 1:                               # right overlap band
            band = starts[i] + side - starts[i + 1]
            if band > 0:
                t = (np.arange(band) + 0.5) / band
                w[side - band:] = np.minimum(w[side - band:], 1.0 - t)
        ramps.append(w)
    # wide overlaps can make non-adjacent patches share pixels, where the
    # pairwise ramps no longer sum to 1; normalizing per axis position makes
    # the partition of unity exact for any layout
    acc = np.zeros(size)
    for st, w in zip(starts, ramps):
        acc[st:st + side] += w
    ramps = [w / acc[st:st + side] for st, w in zip(starts, ramps)]
    return side, starts, ramps


def plan_patches(height: int, width: int, gx: int, gy: int,
                 overlap: float = 0.0) -> PatchGrid:
    """Grid layout with separable linear feather ramps.

    The ramps over each overlap band are complementary (one patch falls
    linearly while its neighbor rises) and are normalized along each axis,
    so the weights sum to 1 at every pixel by construction.
    """
    if not 0.0 <= overlap < 0.5:
        raise ValueError("overlap must be in [0, 0.5)")
    if gx < 1 or gy < 1:
        raise ValueError("grid dims must be >= 1")
    if gx > width or gy > height:
        raise ValueError("grid larger than image")
    if height != width or gx != gy:
        # rectangular support exists but patches must stay square for the
        # resolution-free stroke parameterization
        side_x, sx, rx = _axis_layout(width, gx, overlap)
        side_y, sy, ry = _axis_layout(height, gy, overlap)
        if side_x != side_y:
            raise ValueError("non-square patches; use a square grid/image")
    else:
        side_x, sx, rx = _axis_layout(width, gx, overlap)
        side_y, sy, ry = side_x, sx, rx
    rects, weights = [], []
    for j in range(gy):
        for i in range(gx):
            rects.append((sy[j], sx[i], sy[j] + side_y, sx[i] + side_x))
            weights.append(ry[j][:, None] * rx[i][None, :])
    return PatchGrid(height, width, gx, gy, side_x, overlap,
                     tuple(rects), tuple(weights))


def render_group(group: list[StrokeParams], patch_px: int,
                 renderer: str = "oracle") -> np.ndarray:
    """Composite one stroke group over a transparent canvas.

    Returns a premultiplied RGBA array (patch_px, patch_px, 4).
    """
    out = np.zeros((patch_px, patch_px, 4))
    for s in group:
        layer = (raster.rasterize_oracle(s, patch_px) if renderer == "oracle"
                 else raster.rasterize_soft(s, patch_px))
        rgba = raster.colorize(layer, s)            # straight alpha
        a = rgba[..., 3:4]
        src = np.concatenate([rgba[..., :3] * a, a], axis=2)   # premultiply
        out = src + out * (1.0 - a)
    return out


def _groups(seq: StrokeSequence, group_size: int):
    items = list(seq)
    return [items[i:i + group_size] for i in range(0, len(items), group_size)]


def paint_strokes(seq: StrokeSequence, res: int, group_size: int = GROUP_SIZE,
                  renderer: str = "oracle", background: float = 1.0) -> Canvas:
    """Direct single-patch painting through the same group pipeline that
    render_tiled uses, so the two agree bitwise on a 1x1 grid."""
    canvas = np.full((res, res, 3), background, dtype=np.float64)
    for group in _groups(seq, group_size):
        layer = render_group(group, res, renderer)
        a = layer[..., 3:4]
        canvas = layer[..., :3] + canvas * (1.0 - a)
    return Canvas(res, res, np.clip(canvas, 0.0, 1.0))


def render_tiled(img: Canvas, predict, grid: PatchGrid,
                 group_size: int = GROUP_SIZE, renderer: str = "oracle",
                 background: float = 1.0):
    """Paint `img` patch by patch.  Returns (Canvas, PaintingRecord).

    `predict` is a callable Canvas -> StrokeSequence applied to each source
    patch (at native patch resolution; the callable owns any resampling to
    its model resolution).
    """
    H, W = img.height, img.width
    if (H, W) != (grid.height, grid.width):
        raise ValueError("grid was planned for a different image size")
    seqs = []
    for (y0, x0, y1, x1) in grid.rects:
        patch = Canvas(x1 - x0, y1 - y0, img.rgb[y0:y1, x0:x1].copy())
        seqs.append(predict(patch))
    n_groups = max((int(np.ceil(len(s) / group_size)) for s in seqs), default=0)
    canvas = np.full((H, W, 3), background, dtype=np.float64)
    wsum = np.zeros((H, W, 1))
    for p, (y0, x0, y1, x1) in enumerate(grid.rects):
        wsum[y0:y1, x0:x1, 0] += grid.weights[p]
    entries = []
    for g in range(n_groups):
        num = np.zeros((H, W, 4))
        for p, (y0, x0, y1, x1) in enumerate(grid.rects):
            group = list(seqs[p])[g * group_size:(g + 1) * group_size]
            if not group:
                continue
            layer = render_group(group, grid.patch_px, renderer)
            num[y0:y1, x0:x1] += grid.weights[p][..., None] * layer
            for s in group:
                entries.append(StrokeEntry(patch_id=p, group_index=g, params=s))
        blended = num / np.maximum(wsum, 1e-12)
        a = blended[..., 3:4]
        canvas = blended[..., :3] + canvas * (1.0 - a)
    record = PaintingRecord(height=H, width=W, grid=grid.descriptor(),
                            group_size=group_size, entries=tuple(entries))
    return Canvas(W, H, np.clip(canvas, 0.0, 1.0)), record
