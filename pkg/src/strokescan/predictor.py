"""Single-shot stroke predictor.

An image patch is encoded by a stack of 2D selective-scan blocks (four scan
routes over the token grid, merged by averaging) and decoded by a fixed set
of learned stroke queries through interleaved selective-SSM and
cross-attention layers.  One forward pass emits the whole stroke sequence.
"""

from __future__ import annotations

import io
import json
import struct
from dataclasses import dataclass, asdict

import numpy as np

from . import autograd as ag
from .autograd import Tensor
from .layers import (CrossAttention, GatedFeedForward, LayerNorm, Linear,
                     Module, SsmLayer)
from .raster import Canvas
from .strokes import PARAM_DIM, StrokeSequence


@dataclass(frozen=True)
class EncoderConfig:
    d_model: int = 96
    n_state: int = 8
    n_blocks: int = 4          # split into two stages around one downsample
    n_heads: int = 4           # kept for config symmetry; encoder has no attention
    patch_embed: int = 8

    def __post_init__(self):
        if min(self.d_model, self.n_state, self.n_blocks,
               self.n_heads, self.patch_embed) < 1:
            raise ValueError("all EncoderConfig fields must be positive")


@dataclass(frozen=True)
class DecoderConfig:
    d_model: int = 192
    n_state: int = 8
    n_blocks: int = 4
    n_strokes: int = 100
    n_heads: int = 4

    def __post_init__(self):
        if min(self.d_model, self.n_state, self.n_blocks,
               self.n_strokes, self.n_heads) < 1:
            raise ValueError("all DecoderConfig fields must be positive")
        if self.d_model % self.n_heads:
            raise ValueError("d_model must be divisible by n_heads")


@dataclass(frozen=True)
class ImageTokens:
    """Encoder output: (H'*W', d) features plus the grid they came from."""

    tokens: Tensor
    grid: tuple[int, int]

    def __post_init__(self):
        h, w = self.grid
        if self.tokens.shape[0] != h * w:
            raise ValueError("token count does not match grid shape")


class SS2DBlock(Module):
    """One 2D selective-scan block over a (H, W, d) feature grid."""

    def __init__(self, d_model: int, n_state: int, rng: np.random.Generator):
        self.ln1 = LayerNorm(d_model)
        self.ssm = SsmLayer(d_model, n_state, rng)
        self.ln2 = LayerNorm(d_model)
        self.ff = GatedFeedForward(d_model, rng)

    def scan_stage(self, x: Tensor) -> Tensor:
        """Four-route cross-scan average, before residual and feedforward.

        Routes: row-major, row-major reversed, column-major, column-major
        reversed.  One shared SSM layer processes all four flattenings; each
        result is mapped back to grid order and the four are averaged.
        """
        h, w, d = x.shape
        flat = x.reshape(h * w, d)
        rev = flat[::-1]
        colm = x.transpose(1, 0, 2).reshape(h * w, d)
        colr = colm[::-1]
        y_row = self.ssm(flat)
        y_rowr = self.ssm(rev)[::-1]
        y_col = self.ssm(colm).reshape(w, h, d).transpose(1, 0, 2).reshape(h * w, d)
        y_colr = self.ssm(colr)[::-1].reshape(w, h, d).transpose(1, 0, 2).reshape(h * w, d)
        merged = (y_row + y_rowr + y_col + y_colr) * 0.25
        return merged.reshape(h, w, d)

    def __call__(self, x: Tensor) -> Tensor:
        x = x + self.scan_stage(self.ln1(x))
        x = x + self.ff(self.ln2(x))
        return x


class Encoder(Module):
    """Patch embedding, two SS2D stages with a 2x downsample between them."""

    def __init__(self, cfg: EncoderConfig, rng: np.random.Generator):
        self.cfg = cfg
        d = cfg.d_model
        self.embed = Linear(3 * cfg.patch_embed ** 2, d, rng)
        n1 = cfg.n_blocks // 2
        n2 = cfg.n_blocks - n1
        self.stage1 = [SS2DBlock(d, cfg.n_state, rng) for _ in range(n1)]
        self.merge = Linear(4 * d, 2 * d, rng)
        self.stage2 = [SS2DBlock(2 * d, cfg.n_state, rng) for _ in range(n2)]
        self.d_out = 2 * d
        self.pos: Tensor | None = None  # lazily sized to the token grid

    def _positional(self, h: int, w: int) -> Tensor:
        if self.pos is None or self.pos.shape != (h * w, self.d_out):
            rng = np.random.default_rng(0)
            self.pos = Tensor(rng.normal(0.0, 0.02, size=(h * w, self.d_out)),
                              requires_grad=True)
        return self.pos

    def __call__(self, img: Canvas, add_positional: bool = True) -> ImageTokens:
        p = self.cfg.patch_embed
        H, W = img.height, img.width
        if H % (2 * p) or W % (2 * p):
            raise ValueError(f"image side must be divisible by {2 * p}")
        gh, gw = H // p, W // p
        x = img.rgb.reshape(gh, p, gw, p, 3).transpose(0, 2, 1, 3, 4)
        x = Tensor(x.reshape(gh, gw, p * p * 3))
        x = self.embed(x)
        for blk in self.stage1:
            x = blk(x)
        # 2x2 patch merge halves the grid and doubles the channels
        d = x.shape[2]
        x = x.reshape(gh // 2, 2, gw // 2, 2, d).transpose(0, 2, 1, 3, 4)
        x = self.merge(x.reshape(gh // 2, gw // 2, 4 * d))
        for blk in self.stage2:
            x = blk(x)
        h2, w2 = gh // 2, gw // 2
        tokens = x.reshape(h2 * w2, self.d_out)
        if add_positional:
            tokens = tokens + self._positional(h2, w2)
        return ImageTokens(tokens, (h2, w2))


class DecoderBlock(Module):
    """Selective scan over the query sequence, then cross-attention."""

    def __init__(self, cfg: DecoderConfig, d_context: int,
                 rng: np.random.Generator):
        self.ln1 = LayerNorm(cfg.d_model)
        self.ssm = SsmLayer(cfg.d_model, cfg.n_state, rng)
        self.ln2 = LayerNorm(cfg.d_model)
        self.attn = CrossAttention(cfg.d_model, cfg.n_heads, rng,
                                   d_context=d_context)

    def __call__(self, queries: Tensor, context: Tensor) -> Tensor:
        q = queries + self.ssm(self.ln1(queries))
        q = q + self.attn(self.ln2(q), context)
        return q


class Predictor(Module):
    """Image patch in, fixed-length stroke parameter sequence out."""

    def __init__(self, enc_cfg: EncoderConfig | None = None,
                 dec_cfg: DecoderConfig | None = None, seed: int = 0):
        self.enc_cfg = enc_cfg or EncoderConfig()
        self.dec_cfg = dec_cfg or DecoderConfig()
        rng = np.random.default_rng(seed)
        self.encoder = Encoder(self.enc_cfg, rng)
        d = self.dec_cfg.d_model
        self.queries = Tensor(rng.normal(0.0, 0.02, size=(self.dec_cfg.n_strokes, d)),
                              requires_grad=True)
        self.ctx_proj = Linear(self.encoder.d_out, d, rng)
        self.blocks = [DecoderBlock(self.dec_cfg, d, rng)
                       for _ in range(self.dec_cfg.n_blocks)]
        self.ln_out = LayerNorm(d)
        self.head = Linear(d, PARAM_DIM, rng, scale=d ** -0.5 * 0.1)

    def forward_params(self, img: Canvas) -> Tensor:
        """(n_strokes, 10) parameter tensor in (0, 1), on the tape."""
        ctx = self.ctx_proj(self.encoder(img).tokens)
        q = self.queries
        for blk in self.blocks:
            q = blk(q, ctx)
        return self.head(self.ln_out(q)).sigmoid()

    def __call__(self, img: Canvas) -> Tensor:
        return self.forward_params(img)


def predict_strokes(img: Canvas, model: Predictor) -> StrokeSequence:
    return StrokeSequence.from_array(model.forward_params(img).data)


# -- checkpoint container ------------------------------------------------------
#
# Byte layout (all integers little-endian):
#   magic    4 bytes  b"SSCK"
#   version  uint32   (= 1)
#   meta_len uint32, then meta_len bytes of UTF-8 JSON (configs etc.)
#   count    uint32
#   then per tensor:
#     name_len uint16, name bytes (UTF-8)
#     ndim     uint8, ndim * uint32 dims
#     payload  prod(dims) float32, row-major
MAGIC = b"SSCK"
VERSION = 1


def save_tensors(path: str, tensors: dict, meta: dict | None = None):
    buf = io.BytesIO()
    meta_b = json.dumps(meta or {}).encode("utf-8")
    buf.write(MAGIC)
    buf.write(struct.pack("<I", VERSION))
    buf.write(struct.pack("<I", len(meta_b)))
    buf.write(meta_b)
    buf.write(struct.pack("<I", len(tensors)))
    for name, arr in tensors.items():
        arr = np.asarray(arr, dtype=np.float32)
        nb = name.encode("utf-8")
        buf.write(struct.pack("<H", len(nb)))
        buf.write(nb)
        buf.write(struct.pack("<B", arr.ndim))
        for dim in arr.shape:
            buf.write(struct.pack("<I", dim))
        buf.write(arr.astype("<f4").tobytes(order="C"))
    from .imageio import atomic_write_bytes
    atomic_write_bytes(path, buf.getvalue())


def load_tensors(path: str):
    with open(path, "rb") as f:
        raw = f.read()
    if raw[:4] != MAGIC:
        raise ValueError("not a checkpoint file (bad magic)")
    off = 4
    (ver,) = struct.unpack_from("<I", raw, off); off += 4
    if ver != VERSION:
        raise ValueError(f"unsupported checkpoint version {ver}")
    (meta_len,) = struct.unpack_from("<I", raw, off); off += 4
    meta = json.loads(raw[off:off + meta_len].decode("utf-8")); off += meta_len
    (count,) = struct.unpack_from("<I", raw, off); off += 4
    tensors = {}
    for _ in range(count):
        (nlen,) = struct.unpack_from("<H", raw, off); off += 2
        name = raw[off:off + nlen].decode("utf-8"); off += nlen
        (ndim,) = struct.unpack_from("<B", raw, off); off += 1
        dims = struct.unpack_from(f"<{ndim}I", raw, off); off += 4 * ndim
        n = int(np.prod(dims)) if ndim else 1
        arr = np.frombuffer(raw, dtype="<f4", count=n, offset=off).reshape(dims)
        off += 4 * n
        tensors[name] = arr.astype(np.float64)
    return tensors, meta


def save_predictor(path: str, model: Predictor):
    state = model.state_dict()
    # the positional table is created lazily; persist it if it exists
    if model.encoder.pos is not None:
        state["encoder.pos"] = model.encoder.pos.data
    meta = {"encoder": asdict(model.enc_cfg), "decoder": asdict(model.dec_cfg)}
    save_tensors(path, state, meta)


def load_predictor(path: str) -> Predictor:
    tensors, meta = load_tensors(path)
    model = Predictor(EncoderConfig(**meta["encoder"]),
                      DecoderConfig(**meta["decoder"]))
    pos = tensors.pop("encoder.pos", None)
    model.load_state_dict(tensors)
    # restore the lazily created positional table after the strict key check
    if pos is not None:
        model.encoder.pos = Tensor(pos, requires_grad=True)
    return model
