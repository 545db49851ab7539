"""Toy per-pixel features and synthetic building scenes.

These stand in for a trained CNN and a real dataset so the whole pipeline can
run at desk scale.
"""
from __future__ import annotations

import numpy as np
from scipy import ndimage

from .preprocess import gradient_magnitude

FEATURE_NAMES = ("r", "g", "b", "row", "col", "local_mean", "local_std", "gradient")


def toy_features(image, window=5):
    """Eight channels per pixel: RGB, normalized position, window stats, gradient.

    Window mean and std of the luminance use replicated borders.
    """
    if window < 3 or window % 2 == 0:
        raise ValueError(f"window must be odd and >= 3, got {window}")
    img = np.asarray(image, dtype=np.float64)
    if img.ndim != 3 or img.shape[-1] != 3:
        raise ValueError(f"image must have shape (H, W, 3), got {img.shape}")
    h, w = img.shape[:2]
    lum = img.mean(axis=-1)
    half = window // 2
    padded = np.pad(lum, half, mode="edge")
    windows = np.lib.stride_tricks.sliding_window_view(padded, (window, window))
    mean = windows.mean(axis=(-2, -1))
    var = ((windows - mean[..., None, None]) ** 2).mean(axis=(-2, -1))
    std = np.sqrt(np.where(var > 1e-24, var, 0.0))
    rows, cols = np.meshgrid(np.arange(h) / h, np.arange(w) / w, indexing="ij")
    if h >= 3 and w >= 3:
        grad = gradient_magnitude(img)
    else:
        grad = np.zeros((h, w))
    return np.stack([img[..., 0], img[..., 1], img[..., 2], rows, cols, mean, std, grad],
                    axis=-1)


def rectangles_scene(rng, size=128, count=(3, 8), extent=(8, 32), margin=0, noise=0.0):
    """Random axis-aligned buildings on a textured background.

    Returns ``(image, mask)`` with ``image`` in ``[0, 1]`` of shape
    ``(size, size, 3)`` and ``mask`` uint8.
    """
    h = w = size
    mask = np.zeros((h, w), dtype=np.uint8)
    base = rng.uniform(0.25, 0.45, size=3)
    image = np.broadcast_to(base, (h, w, 3)).copy()
    # smooth background texture so color alone does not give the answer away
    texture = ndimage.gaussian_filter(rng.normal(size=(h, w)), 4.0)
    texture /= max(np.abs(texture).max(), 1e-12)
    image += 0.08 * texture[..., None]
    n = int(rng.integers(count[0], count[1] + 1))
    for _ in range(n):
        bh = int(rng.integers(extent[0], extent[1] + 1))
        bw = int(rng.integers(extent[0], extent[1] + 1))
        top = int(rng.integers(margin, max(margin + 1, h - margin - bh)))
        left = int(rng.integers(margin, max(margin + 1, w - margin - bw)))
        roof = np.clip(base + rng.uniform(0.2, 0.45) * rng.choice([-1.0, 1.0], p=[0.2, 0.8]),
                       0.05, 0.95)
        image[top:top + bh, left:left + bw] = roof
        mask[top:top + bh, left:left + bw] = 1
    if noise > 0:
        image = image + rng.normal(scale=noise, size=image.shape)
    return np.clip(image, 0.0, 1.0), mask


def rectangles_dataset(seed, count, size=128, noise=0.25):
    """``count`` independent noisy scenes from one seeded generator."""
    rng = np.random.default_rng(seed)
    return [rectangles_scene(rng, size=size, noise=noise) for _ in range(count)]
