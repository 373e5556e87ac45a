"""PNG round-tripping and atomic file writes."""

from __future__ import annotations

import os
import tempfile

import numpy as np
from PIL import Image

from .raster import Canvas


def atomic_write_bytes(path: str, data: bytes):
    """Write via a temp file + rename so interrupted runs never leave a
    partial artifact."""
    d = os.path.dirname(os.path.abspath(path)) or "."
    fd, tmp = tempfile.mkstemp(dir=d, prefix=".tmp-", suffix="~")
    try:
        with os.fdopen(fd, "wb") as f:
            f.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def atomic_write_text(path: str, text: str):
    atomic_write_bytes(path, text.encode("utf-8"))


def load_png(path: str) -> Canvas:
    img = Image.open(path).convert("RGB")
    arr = np.asarray(img, dtype=np.float64) / 255.0
    return Canvas(img.width, img.height, arr)


def save_png(path: str, canvas: Canvas):
    arr = np.clip(np.rint(canvas.rgb * 255.0), 0, 255).astype(np.uint8)
    img = Image.fromarray(arr, mode="RGB")
    import io
    buf = io.BytesIO()
    img.save(buf, format="PNG")
    atomic_write_bytes(path, buf.getvalue())


def resize_bilinear(canvas: Canvas, height: int, width: int) -> Canvas:
    """Separable bilinear resample to (height, width)."""
    src = canvas.rgb
    ys = (np.arange(height) + 0.5) * canvas.height / height - 0.5
    xs = (np.arange(width) + 0.5) * canvas.width / width - 0.5
    y0 = np.clip(np.floor(ys).astype(int), 0, canvas.height - 1)
    x0 = np.clip(np.floor(xs).astype(int), 0, canvas.width - 1)
    y1 = np.minimum(y0 + 1, canvas.height - 1)
    x1 = np.minimum(x0 + 1, canvas.width - 1)
    fy = np.clip(ys - y0, 0.0, 1.0)[:, None, None]
    fx = np.clip(xs - x0, 0.0, 1.0)[None, :, None]
    top = src[y0][:, x0] * (1 - fx) + src[y0][:, x1] * fx
    bot = src[y1][:, x0] * (1 - fx) + src[y1][:, x1] * fx
    return Canvas(width, height, top * (1 - fy) + bot * fy)
