"""Desk-scale training loops.

Three entry points: distill a neural stroke renderer from the hard
rasterizer, train the stroke predictor (L2 phase, then an added
non-saturating GAN term), and a network-free direct stroke fit driven by the
soft rasterizer's gradients.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from . import autograd as ag
from . import raster
from .autograd import Tensor
from .layers import InstanceNorm, Linear, Module
from .predictor import DecoderConfig, EncoderConfig, Predictor
from .raster import Canvas
from .strokes import PARAM_DIM, StrokeParams, StrokeSequence


@dataclass
class TrainConfig:
    batch_size: int = 16
    steps: int = 1000
    lr: float = 1e-3
    seed: int = 0
    lambda_p: float = 0.2      # multi-scale gradient proxy weight
    lambda_bce: float = 1.0    # alpha head
    lambda_g: float = 0.1      # generator GAN term
    gan_start_fraction: float = 0.5
    group_size: int = 10
    n_strokes: int = 8
    render_res: int = 64
    lr_min_fraction: float = 1.0   # <1 enables cosine decay down to lr * fraction

    def __post_init__(self):
        if not 0.0 <= self.gan_start_fraction <= 1.0:
            raise ValueError("gan_start_fraction must be in [0, 1]")
        if not 0.0 < self.lr_min_fraction <= 1.0:
            raise ValueError("lr_min_fraction must be in (0, 1]")

    def lr_at(self, step: int) -> float:
        """Cosine-annealed learning rate for `step`; constant when
        lr_min_fraction == 1."""
        if self.lr_min_fraction >= 1.0 or self.steps <= 1:
            return self.lr
        lo = self.lr * self.lr_min_fraction
        t = step / (self.steps - 1)
        return lo + 0.5 * (self.lr - lo) * (1.0 + np.cos(np.pi * t))


class Adam:
    """Adaptive-moment optimizer, beta = (0.9, 0.999)."""

    def __init__(self, params: list[Tensor], lr: float = 1e-3,
                 betas=(0.9, 0.999), eps: float = 1e-8):
        self.params = list(params)
        self.lr = lr
        self.b1, self.b2 = betas
        self.eps = eps
        self.t = 0
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]

    def step(self):
        self.t += 1
        c1 = 1.0 - self.b1 ** self.t
        c2 = 1.0 - self.b2 ** self.t
        for i, p in enumerate(self.params):
            if p.grad is None:
                continue
            g = p.grad
            self.m[i] = self.b1 * self.m[i] + (1 - self.b1) * g
            self.v[i] = self.b2 * self.v[i] + (1 - self.b2) * g * g
            p.data = p.data - self.lr * (self.m[i] / c1) / (np.sqrt(self.v[i] / c2) + self.eps)

    def zero_grad(self):
        for p in self.params:
            p.zero_grad()


def nonsaturating_gan_losses(d_real, d_fake):
    """(d_loss, g_loss) in softplus form, averaged over the batch."""
    d_real = ag.as_tensor(d_real)
    d_fake = ag.as_tensor(d_fake)
    d_loss = (-d_real).softplus().mean() + d_fake.softplus().mean()
    g_loss = (-d_fake).softplus().mean()
    return d_loss, g_loss


# -- neural stroke renderer ----------------------------------------------------


class RendererNet(Module):
    """Stroke parameters to a 64x64 (intensity, alpha) pair.

    Linear stack with instance normalization after each linear layer, then an
    upsampling convolutional decoder; both heads are logistic-squashed.
    """

    RES = 64

    def __init__(self, seed: int = 0):
        rng = np.random.default_rng(seed)
        self.fc1 = Linear(PARAM_DIM, 128, rng)
        self.in1 = InstanceNorm(128)
        self.fc2 = Linear(128, 512, rng)
        self.in2 = InstanceNorm(512)
        self.fc3 = Linear(512, 48 * 4 * 4, rng)
        chans = [48, 32, 24, 16, 12]
        self.convs = [
            (Tensor(rng.normal(0.0, (chans[i] * 9) ** -0.5,
                               size=(chans[i + 1], chans[i], 3, 3)), requires_grad=True),
             Tensor(np.zeros(chans[i + 1]), requires_grad=True))
            for i in range(4)
        ]
        self.head_w = Tensor(rng.normal(0.0, (chans[-1] * 9) ** -0.5,
                                        size=(2, chans[-1], 3, 3)), requires_grad=True)
        self.head_b = Tensor(np.zeros(2), requires_grad=True)
        self.astype(np.float32)  # training net; f64 precision is not needed here

    def named_parameters(self):
        out = super().named_parameters()
        for i, (w, b) in enumerate(self.convs):
            out.append((f"convs.{i}.w", w))
            out.append((f"convs.{i}.b", b))
        return out

    def logits(self, params: Tensor) -> Tensor:
        """(B, 2, 64, 64) pre-sigmoid maps for a (B, 10) parameter batch."""
        x = self.in1(self.fc1(params)).relu()
        x = self.in2(self.fc2(x)).relu()
        x = self.fc3(x).reshape(params.shape[0], 48, 4, 4)
        for w, b in self.convs:
            x = ag.upsample_nearest2d(x, 2)
            x = ag.conv2d(x, w, b, stride=1, pad=1).relu()
        return ag.conv2d(x, self.head_w, self.head_b, stride=1, pad=1)

    def __call__(self, params: Tensor):
        """(intensity, alpha), each (B, 64, 64) in (0, 1)."""
        out = self.logits(params).sigmoid()
        return out[:, 0], out[:, 1]


class Discriminator(Module):
    """4-layer strided conv net on 64x64 RGB renders, one logit per image."""

    def __init__(self, seed: int = 0):
        rng = np.random.default_rng(seed)
        chans = [3, 12, 24, 48, 48]
        self.convs = []
        for i in range(4):
            w = Tensor(rng.normal(0.0, (chans[i] * 16) ** -0.5,
                                  size=(chans[i + 1], chans[i], 4, 4)), requires_grad=True)
            b = Tensor(np.zeros(chans[i + 1]), requires_grad=True)
            self.convs.append((w, b))
        self.fc = Linear(48 * 4 * 4, 1, rng)
        self.astype(np.float32)

    def named_parameters(self):
        out = super().named_parameters()
        for i, (w, b) in enumerate(self.convs):
            out.append((f"convs.{i}.w", w))
            out.append((f"convs.{i}.b", b))
        return out

    def __call__(self, imgs: Tensor) -> Tensor:
        """imgs: (B, 3, 64, 64) -> (B,) logits."""
        x = imgs
        for w, b in self.convs:
            x = ag.conv2d(x, w, b, stride=2, pad=1)
            # leaky relu
            x = x.relu() - (-x).relu() * 0.2
        x = x.reshape(x.shape[0], 48 * 4 * 4)
        return self.fc(x).reshape(x.shape[0])


def sample_stroke_batch(rng: np.random.Generator, n: int) -> np.ndarray:
    """Uniform stroke parameters with non-degenerate sizes, shape (n, 10)."""
    p = rng.random((n, PARAM_DIM))
    p[:, 2] = 0.05 + 0.55 * p[:, 2]
    p[:, 3] = 0.05 + 0.55 * p[:, 3]
    return p


def _avg_pool(x: Tensor, k: int) -> Tensor:
    b, h, w = x.shape
    return x.reshape(b, h // k, k, w // k, k).mean(axis=(2, 4))


def _msgrad_l1(a: Tensor, b: Tensor) -> Tensor:
    """Multi-scale image-gradient L1: edge/texture stand-in for a perceptual
    loss, computed at three dyadic scales."""
    total = None
    for k in (1, 2, 4):
        pa = _avg_pool(a, k) if k > 1 else a
        pb = _avg_pool(b, k) if k > 1 else b
        dx = (pa[:, :, 1:] - pa[:, :, :-1]) - (pb[:, :, 1:] - pb[:, :, :-1])
        dy = (pa[:, 1:, :] - pa[:, :-1, :]) - (pb[:, 1:, :] - pb[:, :-1, :])
        term = dx.abs().mean() + dy.abs().mean()
        total = term if total is None else total + term
    return total * (1.0 / 3.0)


def _oracle_batch(params: np.ndarray, res: int):
    inten = np.empty((len(params), res, res))
    alpha = np.empty((len(params), res, res))
    for i, row in enumerate(params):
        img = raster.rasterize_oracle(StrokeParams.from_vector(row), res)
        inten[i] = img.intensity
        alpha[i] = img.alpha / max(row[9], 1e-12)  # mask only; net learns shape
    return inten, alpha


def _check_finite(value: float, step: int, parts: dict):
    if not np.isfinite(value):
        raise RuntimeError(f"non-finite loss at step {step}: {parts}")


def train_neural_renderer(cfg: TrainConfig, net: RendererNet | None = None):
    """Distill the hard rasterizer into RendererNet.  Returns (net, log)."""
    rng = np.random.default_rng(cfg.seed)
    net = net or RendererNet(seed=cfg.seed)
    opt = Adam(net.parameters(), lr=cfg.lr)
    log = []
    res = RendererNet.RES
    for step in range(cfg.steps):
        t0 = time.perf_counter()
        opt.lr = cfg.lr_at(step)
        batch = sample_stroke_batch(rng, cfg.batch_size)
        tgt_i, tgt_a = _oracle_batch(batch, res)
        tgt_i = tgt_i.astype(np.float32)
        tgt_a = tgt_a.astype(np.float32)
        logits = net.logits(Tensor(batch, dtype=np.float32))
        i_hat = logits[:, 0].sigmoid()
        a_logit = logits[:, 1]
        l2 = ((i_hat - tgt_i) ** 2).mean()
        lp = _msgrad_l1(i_hat, Tensor(tgt_i))
        # stable binary cross-entropy on the alpha logits
        bce = (a_logit.softplus() - a_logit * tgt_a).mean()
        loss = l2 + cfg.lambda_p * lp + cfg.lambda_bce * bce
        parts = {"l2": l2.item(), "perc": lp.item(), "bce": bce.item()}
        _check_finite(loss.item(), step, parts)
        opt.zero_grad()
        loss.backward()
        opt.step()
        log.append({"step": step, "loss": loss.item(), **parts,
                    "wall_ms": (time.perf_counter() - t0) * 1e3})
    return net, log


def eval_renderer(net: RendererNet, n: int = 200, seed: int = 10_000):
    """Held-out comparison vs the hard rasterizer: (alpha IoU, intensity L2)."""
    rng = np.random.default_rng(seed)
    batch = sample_stroke_batch(rng, n)
    tgt_i, tgt_a = _oracle_batch(batch, RendererNet.RES)
    ious, l2s = [], []
    for i in range(0, n, 25):
        i_hat, a_hat = net(Tensor(batch[i:i + 25], dtype=np.float32))
        pred = a_hat.data > 0.5
        true = tgt_a[i:i + 25] > 0.5
        for j in range(len(pred)):
            union = (pred[j] | true[j]).sum()
            ious.append((pred[j] & true[j]).sum() / union if union else 1.0)
        l2s.append(((i_hat.data - tgt_i[i:i + 25]) ** 2).mean(axis=(1, 2)))
    return float(np.mean(ious)), float(np.mean(np.concatenate(l2s)))


# -- toy data ------------------------------------------------------------------


def toy_images(n: int, seed: int = 0, res: int = 64) -> list[Canvas]:
    """Procedural color gradients with soft blobs; stands in for a photo set."""
    rng = np.random.default_rng(seed)
    yy, xx = np.mgrid[0:res, 0:res] / (res - 1)
    out = []
    for _ in range(n):
        c0, c1 = rng.random(3), rng.random(3)
        ang = rng.random() * 2 * np.pi
        t = (np.cos(ang) * xx + np.sin(ang) * yy)
        t = (t - t.min()) / (t.max() - t.min() + 1e-12)
        img = t[..., None] * c1 + (1 - t[..., None]) * c0
        for _ in range(rng.integers(1, 4)):
            cx, cy = rng.random(2)
            r = 0.1 + 0.2 * rng.random()
            blob = np.exp(-(((xx - cx) ** 2 + (yy - cy) ** 2) / (2 * r * r)))
            img = img * (1 - blob[..., None]) + blob[..., None] * rng.random(3)
        out.append(Canvas(res, res, np.clip(img, 0.0, 1.0)))
    return out


# -- predictor training --------------------------------------------------------


def _render_with(renderer, params: Tensor, res: int) -> Tensor:
    """(res, res, 3) differentiable render of a (n, 10) stroke tensor."""
    if renderer == "soft" or renderer is None:
        return raster.render_sequence_soft(params, res)
    if isinstance(renderer, RendererNet):
        i_hat, a_hat = renderer(params)
        n = params.shape[0]
        canvas = Tensor(np.ones((res, res, 3)))
        for i in range(n):
            color = ag.stack([params[i, 6], params[i, 7], params[i, 8]])
            a = (a_hat[i] * params[i, 9]).reshape(res, res, 1)
            rgb = i_hat[i].reshape(res, res, 1) * color
            canvas = rgb * a + canvas * (1.0 - a)
        return canvas
    raise ValueError("renderer must be 'soft' or a RendererNet")


def train_predictor(cfg: TrainConfig, renderer="soft",
                    images: list[Canvas] | None = None,
                    model: Predictor | None = None):
    """Two-phase predictor training.  Returns (model, log).

    Phase 1 (steps below gan_start_fraction * steps): pixel L2 only.
    Phase 2: adds the non-saturating generator term against a concurrently
    trained convolutional discriminator.  Log records carry the cumulative
    discriminator update count so the schedule is auditable.
    """
    rng = np.random.default_rng(cfg.seed)
    res = cfg.render_res
    gan_on = cfg.gan_start_fraction < 1.0 and cfg.steps > 0
    if gan_on and res != 64:
        raise ValueError("the adversarial phase requires render_res = 64 "
                         "(discriminator input size); set gan_start_fraction "
                         "to 1.0 to train without it")
    if images is None:
        images = toy_images(16, seed=cfg.seed, res=res)
    if model is None:
        model = Predictor(
            EncoderConfig(d_model=32, n_state=4, n_blocks=2, patch_embed=8),
            DecoderConfig(d_model=64, n_state=4, n_blocks=2,
                          n_strokes=cfg.n_strokes, n_heads=4),
            seed=cfg.seed)
    opt = Adam(model.parameters(), lr=cfg.lr)
    disc = Discriminator(seed=cfg.seed + 1)
    d_opt = Adam(disc.parameters(), lr=cfg.lr)
    gan_start = int(np.ceil(cfg.gan_start_fraction * cfg.steps))
    disc_updates = 0
    log = []
    for step in range(cfg.steps):
        t0 = time.perf_counter()
        img = images[int(rng.integers(len(images)))]
        params = model.forward_params(img)
        rendered = _render_with(renderer, params, res)
        target = Tensor(img.rgb)
        l2 = ((rendered - target) ** 2).mean()
        parts = {"l2": l2.item(), "g": 0.0, "d": 0.0}
        if step >= gan_start:
            fake = rendered.transpose(2, 0, 1).reshape(1, 3, res, res)
            real = Tensor(img.rgb.transpose(2, 0, 1)[None])
            # discriminator update on detached fake
            d_loss, _ = nonsaturating_gan_losses(disc(real), disc(fake.detach()))
            d_opt.zero_grad()
            d_loss.backward()
            d_opt.step()
            disc_updates += 1
            _, g_loss = nonsaturating_gan_losses(disc(real).detach(), disc(fake))
            loss = l2 + cfg.lambda_g * g_loss
            parts["g"] = g_loss.item()
            parts["d"] = d_loss.item()
        else:
            loss = l2
        _check_finite(loss.item(), step, parts)
        opt.zero_grad()
        loss.backward()
        opt.step()
        log.append({"step": step, "loss": loss.item(), **parts,
                    "disc_updates": disc_updates,
                    "wall_ms": (time.perf_counter() - t0) * 1e3})
    return model, log


# -- direct stroke fitting -----------------------------------------------------


def _init_strokes(target: Canvas, n: int, rng: np.random.Generator) -> np.ndarray:
    """Jittered-grid positions, colors sampled from the target, sizes 0.3."""
    g = int(np.ceil(np.sqrt(n)))
    p = np.zeros((n, PARAM_DIM))
    for i in range(n):
        gx, gy = i % g, i // g
        cx = (gx + 0.25 + 0.5 * rng.random()) / g
        cy = (gy + 0.25 + 0.5 * rng.random()) / g
        px = min(int(cx * target.width), target.width - 1)
        py = min(int(cy * target.height), target.height - 1)
        p[i, 0], p[i, 1] = cx, cy
        p[i, 2] = p[i, 3] = 0.3
        p[i, 4] = rng.random()
        p[i, 5] = 0.5
        p[i, 6:9] = target.rgb[py, px]
        p[i, 9] = 0.8
    return np.clip(p, 0.02, 0.98)


def fit_strokes_direct(target: Canvas, n: int, iters: int, seed: int = 0,
                       lr: float = 0.05):
    """Gradient-descent stroke fit; returns (StrokeSequence, best MSE, curve).

    Parameters are optimized in logit space so every iterate stays inside
    (0, 1); the returned sequence is the best iterate seen.
    """
    if n < 1:
        raise ValueError("need at least one stroke")
    rng = np.random.default_rng(seed)
    res = target.height
    if target.width != res:
        raise ValueError("square targets only")
    p0 = _init_strokes(target, n, rng)
    # f32 is plenty for a pixel-MSE descent and halves the tape's footprint
    raw = Tensor(np.log(p0 / (1.0 - p0)), requires_grad=True, dtype=np.float32)
    opt = Adam([raw], lr=lr)
    tgt = Tensor(target.rgb.astype(np.float32))
    best = (np.inf, p0)
    curve = []
    for _ in range(iters):
        params = raw.sigmoid()
        rendered = raster.render_sequence_soft(params, res)
        loss = ((rendered - tgt) ** 2).mean()
        mse = loss.item()
        if mse < best[0]:
            best = (mse, params.data.copy())
        curve.append(min(best[0], mse))
        opt.zero_grad()
        loss.backward()
        opt.step()
    return StrokeSequence.from_array(best[1]), best[0], curve
