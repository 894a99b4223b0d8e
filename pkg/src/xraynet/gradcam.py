"""Gradient-weighted class activation maps and heatmap overlays.

The map for a target class taps a layer's feature maps A_k, pulls the
gradient of that class's logit back to the tap, weights each channel by
its spatially averaged gradient, and rectifies the weighted sum. The
result is max-normalized into [0, 1]; an all-zero raw map (the logit
does not depend on the tap) stays all-zero instead of dividing by zero.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import models
from .data import _LUMA
from .tensor import ShapeError, Tensor


@dataclass(frozen=True)
class Heatmap:
    """Normalized class-evidence map at the tapped layer's resolution."""

    values: Tensor  # (H', W') in [0, 1]; max is 1 unless all-zero
    layer: str
    target_class: int


def gradcam(model: models.ModelGraph, image: Tensor, target_class: int, layer_name: str | None = None) -> Heatmap:
    """Explain one eval-mode prediction; image is a single-sample batch."""
    if not isinstance(image, Tensor):
        raise TypeError("image must be a Tensor")
    if image.ndim != 4 or image.shape[0] != 1:
        raise ShapeError(f"gradcam takes a single-sample batch (1,C,H,W), got shape {image.shape}")
    name = layer_name or model.default_tap
    capture = models.feature_maps(model, image, name)
    grads = capture.class_gradient(target_class).numpy()[0]  # (C, H', W')
    acts = capture.activation.numpy()[0]
    weights = grads.mean(axis=(1, 2))
    raw = np.maximum((weights[:, None, None] * acts).sum(axis=0), 0.0)
    peak = raw.max()
    if peak > 0:
        raw = raw / peak
    return Heatmap(Tensor(raw.astype(np.float32)), name, int(target_class))


def upsample_bilinear(values: Tensor, out_h: int, out_w: int) -> Tensor:
    """Corner-aligned bilinear enlargement of a 2-D map; constants stay constant."""
    arr = values.numpy()
    if arr.ndim != 2:
        raise ShapeError(f"expected a 2-D map, got shape {arr.shape}")
    h, w = arr.shape
    if out_h < h or out_w < w:
        raise ShapeError(f"target {out_h}x{out_w} must be >= source {h}x{w}")
    if (h, w) == (out_h, out_w):
        return values
    ys = np.linspace(0.0, h - 1.0, out_h) if out_h > 1 else np.zeros(1)
    xs = np.linspace(0.0, w - 1.0, out_w) if out_w > 1 else np.zeros(1)
    y0 = np.floor(ys).astype(int)
    x0 = np.floor(xs).astype(int)
    y1 = np.minimum(y0 + 1, h - 1)
    x1 = np.minimum(x0 + 1, w - 1)
    wy = (ys - y0)[:, None]
    wx = (xs - x0)[None, :]
    out = (1 - wy) * ((1 - wx) * arr[y0[:, None], x0[None, :]] + wx * arr[y0[:, None], x1[None, :]]) + wy * (
        (1 - wx) * arr[y1[:, None], x0[None, :]] + wx * arr[y1[:, None], x1[None, :]]
    )
    return Tensor(out.astype(arr.dtype, copy=False))


def _heat_colors(values: np.ndarray) -> np.ndarray:
    """Piecewise-linear blue -> cyan -> yellow -> red colormap, (3,H,W)."""
    stops = np.array([0.0, 1.0 / 3.0, 2.0 / 3.0, 1.0])
    reds = np.array([0.0, 0.0, 1.0, 1.0])
    greens = np.array([0.0, 1.0, 1.0, 0.0])
    blues = np.array([0.5, 1.0, 0.0, 0.0])
    flat = values.reshape(-1)
    rgb = np.stack(
        [np.interp(flat, stops, reds), np.interp(flat, stops, greens), np.interp(flat, stops, blues)]
    )
    return rgb.reshape(3, *values.shape)


def overlay(heat: Tensor, image: Tensor, alpha: float = 0.4) -> Tensor:
    """Blend the colorized heatmap over the grayscale view of the image.

    heat is (H,W) in [0,1] at image resolution; image is (C,H,W) with 1
    or 3 channels. alpha 0 shows only the (grayscale-replicated) image,
    alpha 1 only the colormap. Returns a (3,H,W) RGB tensor in [0,1].
    """
    if not 0.0 <= alpha <= 1.0:
        raise ValueError(f"alpha must be in [0, 1], got {alpha}")
    hv = heat.numpy()
    img = image.numpy()
    if hv.ndim != 2:
        raise ShapeError(f"heatmap must be 2-D, got shape {hv.shape}")
    if img.ndim != 3 or img.shape[0] not in (1, 3):
        raise ShapeError(f"image must be CHW with 1 or 3 channels, got shape {img.shape}")
    if img.shape[1:] != hv.shape:
        raise ShapeError(f"heatmap {hv.shape} does not match image spatial extent {img.shape[1:]}")
    if img.shape[0] == 3:
        gray = np.tensordot(np.asarray(_LUMA, dtype=np.float64), img, axes=(0, 0))
    else:
        gray = img[0].astype(np.float64)
    base = np.broadcast_to(gray, (3, *gray.shape))
    colors = _heat_colors(np.clip(hv, 0.0, 1.0))
    out = (1.0 - alpha) * base + alpha * colors
    return Tensor(np.clip(out, 0.0, 1.0).astype(np.float32))
