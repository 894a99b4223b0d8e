"""Synthetic desk-scale image corpora for tests, selftests, and demos.

Two families: a texture corpus (smooth Gaussian blobs vs oriented
stripes, both noised) that a small CNN separates within a few epochs,
and a planted-signal corpus (flat noise vs noise plus a bright square
confined to the top-left quadrant) for localization checks. Images are
written as 8-bit grayscale PNG under one subdirectory per class label.
"""

from __future__ import annotations

import os

import numpy as np

from . import data as dt

PLANTED_QUADRANT = "top-left"  # the patch never leaves this quadrant


def blob_image(rng: np.random.Generator, hw: int = 32) -> np.ndarray:
    """A few soft Gaussian bumps plus pixel noise, HxW in [0, 1]."""
    yy, xx = np.mgrid[0:hw, 0:hw]
    img = np.zeros((hw, hw))
    for _ in range(int(rng.integers(2, 5))):
        cy, cx = rng.uniform(hw * 0.2, hw * 0.8, size=2)
        sigma = rng.uniform(hw / 10, hw / 5)
        amp = rng.uniform(0.5, 1.0)
        img += amp * np.exp(-((yy - cy) ** 2 + (xx - cx) ** 2) / (2 * sigma * sigma))
    img = img / max(float(img.max()), 1e-6) * 0.8
    img += rng.normal(0.0, 0.05, size=(hw, hw))
    return np.clip(img, 0.0, 1.0).astype(np.float32)


def stripe_image(rng: np.random.Generator, hw: int = 32) -> np.ndarray:
    """An oriented sinusoidal grating plus pixel noise, HxW in [0, 1]."""
    yy, xx = np.mgrid[0:hw, 0:hw]
    theta = rng.uniform(0.0, np.pi)
    cycles = rng.uniform(3.0, 6.0)
    phase = rng.uniform(0.0, 2 * np.pi)
    coord = (xx * np.cos(theta) + yy * np.sin(theta)) / hw
    img = 0.5 + 0.4 * np.sin(2 * np.pi * cycles * coord + phase)
    img += rng.normal(0.0, 0.05, size=(hw, hw))
    return np.clip(img, 0.0, 1.0).astype(np.float32)


def noise_image(rng: np.random.Generator, hw: int = 32) -> np.ndarray:
    """Flat mid-gray noise background, HxW in [0, 1]."""
    img = rng.normal(0.35, 0.08, size=(hw, hw))
    return np.clip(img, 0.0, 1.0).astype(np.float32)


def planted_patch_image(rng: np.random.Generator, hw: int = 32, patch: int = 7) -> np.ndarray:
    """Noise background with a bright square inside the top-left quadrant."""
    img = noise_image(rng, hw)
    half = hw // 2
    margin = 2
    hi = half - patch - margin
    if hi < margin:
        raise ValueError(f"patch {patch} does not fit the {half}x{half} quadrant with margin {margin}")
    r0 = int(rng.integers(margin, hi + 1))
    c0 = int(rng.integers(margin, hi + 1))
    img[r0 : r0 + patch, c0 : c0 + patch] = np.clip(
        0.95 + rng.normal(0.0, 0.02, size=(patch, patch)), 0.0, 1.0
    )
    return img.astype(np.float32)


def _write_class(root: str, label: str, images: list[np.ndarray]) -> None:
    cdir = os.path.join(root, label)
    os.makedirs(cdir, exist_ok=True)
    for i, img in enumerate(images):
        dt.save_image_png(os.path.join(cdir, f"{label.lower()}_{i:04d}.png"), img[None])


def write_texture_corpus(root: str, per_class: int, seed: int = 0, hw: int = 32) -> None:
    """NORMAL = blobs, PNEUMONIA = stripes; per_class images each."""
    rng = np.random.default_rng(np.random.SeedSequence([int(seed), 1]))
    _write_class(root, "NORMAL", [blob_image(rng, hw) for _ in range(per_class)])
    rng = np.random.default_rng(np.random.SeedSequence([int(seed), 2]))
    _write_class(root, "PNEUMONIA", [stripe_image(rng, hw) for _ in range(per_class)])


def write_planted_corpus(root: str, per_class: int, seed: int = 0, hw: int = 32) -> None:
    """NORMAL = plain noise, PNEUMONIA = noise + top-left quadrant patch."""
    rng = np.random.default_rng(np.random.SeedSequence([int(seed), 1]))
    _write_class(root, "NORMAL", [noise_image(rng, hw) for _ in range(per_class)])
    rng = np.random.default_rng(np.random.SeedSequence([int(seed), 2]))
    _write_class(root, "PNEUMONIA", [planted_patch_image(rng, hw) for _ in range(per_class)])
