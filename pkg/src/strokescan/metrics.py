"""Image comparison metrics: pixel MSE and patch-seam discontinuity."""

from __future__ import annotations

import numpy as np

from .raster import Canvas


def mse_metric(a: Canvas, b: Canvas) -> float:
    """Mean squared difference over all pixels and channels, inputs in [0,1]."""
    if (a.height, a.width) != (b.height, b.width):
        raise ValueError(f"size mismatch: {(a.height, a.width)} vs {(b.height, b.width)}")
    d = a.rgb - b.rgb
    return float((d * d).mean())


def seam_metric(img: Canvas, gx: int, gy: int) -> float:
    """Mean absolute jump across the interior boundary lines of the
    non-overlapping gx x gy patch layout.

    Measures the discontinuity that disjoint-patch painting leaves at patch
    edges; lower is smoother.
    """
    H, W = img.height, img.width
    diffs = []
    for i in range(1, gx):
        x = round(i * W / gx)
        diffs.append(np.abs(img.rgb[:, x] - img.rgb[:, x - 1]).ravel())
    for j in range(1, gy):
        y = round(j * H / gy)
        diffs.append(np.abs(img.rgb[y, :] - img.rgb[y - 1, :]).ravel())
    if not diffs:
        return 0.0
    return float(np.concatenate(diffs).mean())
