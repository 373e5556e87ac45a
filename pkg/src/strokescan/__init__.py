"""Stroke-based image painting: a selective-SSM stroke predictor, a
differentiable brush-stroke rasterizer, and overlapping-patch compositing."""

from .autograd import Tensor, numeric_gradient, tensor
from .metrics import mse_metric, seam_metric
from .predictor import (DecoderConfig, EncoderConfig, Predictor,
                        load_predictor, predict_strokes, save_predictor)
from .raster import (Canvas, GrayAlphaImage, composite_over, default_softness,
                     paint_sequence, rasterize_oracle, rasterize_soft,
                     rasterize_soft_grad, render_sequence_soft)
from .ssm import SsmLayerParams, selective_scan, selective_scan_grad, zoh_discretize
from .strokes import (PARAM_DIM, GridDescriptor, PaintingRecord, StrokeEntry,
                      StrokeParams, StrokeSequence, clamp_params,
                      deserialize, random_strokes, serialize)
from .tiling import PatchGrid, paint_strokes, plan_patches, render_group, render_tiled
from .training import (Adam, RendererNet, TrainConfig, fit_strokes_direct,
                       nonsaturating_gan_losses, train_neural_renderer,
                       train_predictor)

__version__ = "0.1.0"
