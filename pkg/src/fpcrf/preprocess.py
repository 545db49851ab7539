"""Footprint preprocessing: coregistration, signed-distance labels, tiling."""
from __future__ import annotations

from typing import NamedTuple

import numpy as np
from scipy import ndimage

DISTANCE_CLASSES = 11
BOUNDARY_CLASS = 5


class ShiftEstimate(NamedTuple):
    dy: int
    dx: int
    score: float


class PatchPair(NamedTuple):
    row: int
    col: int
    image: np.ndarray
    labels: np.ndarray


def _sobel_magnitude(plane):
    gy = ndimage.sobel(plane, axis=0, mode="nearest")
    gx = ndimage.sobel(plane, axis=1, mode="nearest")
    return np.hypot(gx, gy)


def gradient_magnitude(image):
    """3x3 Sobel gradient magnitude of the channel-mean luminance.

    Borders replicate the edge pixels.
    """
    img = np.asarray(image, dtype=np.float64)
    if img.ndim == 3:
        img = img.mean(axis=-1)
    if img.ndim != 2 or img.shape[0] < 3 or img.shape[1] < 3:
        raise ValueError(f"image must be at least 3x3, got {np.shape(image)}")
    return _sobel_magnitude(img)


def apply_shift(mask, shift):
    """Translate ``mask`` by ``(dy, dx)``; vacated cells become 0."""
    mask = np.asarray(mask)
    dy, dx = int(shift[0]), int(shift[1])
    h, w = mask.shape[:2]
    out = np.zeros_like(mask)
    if abs(dy) >= h or abs(dx) >= w:
        return out
    src = mask[max(0, -dy):h - max(0, dy), max(0, -dx):w - max(0, dx)]
    out[max(0, dy):max(0, dy) + src.shape[0], max(0, dx):max(0, dx) + src.shape[1]] = src
    return out


def _zscore(a):
    a = a - a.mean()
    sd = a.std()
    return None if sd == 0 else a / sd


def _search_order(radius):
    shifts = [(dy, dx) for dy in range(-radius, radius + 1)
              for dx in range(-radius, radius + 1)]
    return sorted(shifts, key=lambda s: (abs(s[0]) + abs(s[1]), s[0], s[1]))


def coregister_gradient(mask, gradient, search_radius=7):
    """Shift estimate against a precomputed gradient-magnitude map.

    The footprint is compared through its own Sobel edge map: a filled mask
    correlates equally well with edge responses one pixel either side of the
    true outline, while its edge map peaks only at the true alignment.
    """
    mask = np.asarray(mask, dtype=np.float64)
    gradient = np.asarray(gradient, dtype=np.float64)
    if mask.shape != gradient.shape:
        raise ValueError(f"mask {mask.shape} and image {gradient.shape} differ in size")
    if search_radius < 0:
        raise ValueError("search_radius must be >= 0")
    g = _zscore(gradient)
    if g is None or _zscore(_sobel_magnitude(mask)) is None:
        raise ValueError("no correlation signal")
    best = None
    for dy, dx in _search_order(search_radius):
        e = _zscore(_sobel_magnitude(apply_shift(mask, (-dy, -dx))))
        if e is None:
            continue
        score = float(np.mean(e * g))
        if best is None or score > best.score:
            best = ShiftEstimate(dy, dx, score)
    if best is None:
        raise ValueError("no correlation signal")
    return best


def coregister(mask, image, search_radius=7):
    """Estimate the integer offset of ``mask`` relative to ``image``.

    Every shift in ``[-search_radius, search_radius]^2`` is scored by
    normalized cross-correlation against the image gradient magnitude.
    Ties go to the smallest ``|dy| + |dx|``, then row-major order. The
    returned offset is the displacement of the mask, so
    ``apply_shift(mask, (-dy, -dx))`` aligns it.
    """
    return coregister_gradient(mask, gradient_magnitude(image), search_radius)


def boundary_pixels(mask):
    """Building pixels with at least one in-image 4-neighbor that is background."""
    b = np.asarray(mask).astype(bool)
    bg = ~b
    edge = np.zeros_like(b)
    edge[1:, :] |= bg[:-1, :]
    edge[:-1, :] |= bg[1:, :]
    edge[:, 1:] |= bg[:, :-1]
    edge[:, :-1] |= bg[:, 1:]
    return b & edge


def _lower_envelope(f):
    """1-D squared distance transform of sampled function ``f`` (inf = no site)."""
    n = len(f)
    d = np.empty(n)
    v = np.zeros(n, dtype=np.int64)
    z = np.empty(n + 1)
    k = 0
    z[0], z[1] = -np.inf, np.inf
    first = next((i for i in range(n) if np.isfinite(f[i])), None)
    if first is None:
        d.fill(np.inf)
        return d
    v[0] = first
    for q in range(first + 1, n):
        if not np.isfinite(f[q]):
            continue
        p = v[k]
        s = ((f[q] + q * q) - (f[p] + p * p)) / (2.0 * (q - p))
        while s <= z[k]:
            k -= 1
            p = v[k]
            s = ((f[q] + q * q) - (f[p] + p * p)) / (2.0 * (q - p))
        k += 1
        v[k] = q
        z[k] = s
        z[k + 1] = np.inf
    k = 0
    for q in range(n):
        while z[k + 1] < q:
            k += 1
        p = v[k]
        d[q] = (q - p) ** 2 + f[p]
    return d


def squared_distance_to(sites):
    """Exact squared Euclidean distance to the nearest ``True`` cell.

    Two separable passes of the lower-envelope algorithm (columns, then rows).
    """
    sites = np.asarray(sites, dtype=bool)
    f = np.where(sites, 0.0, np.inf)
    cols = np.empty_like(f)
    for x in range(f.shape[1]):
        cols[:, x] = _lower_envelope(f[:, x])
    out = np.empty_like(f)
    for y in range(f.shape[0]):
        out[y] = _lower_envelope(cols[y])
    return out


def signed_distance(mask, truncation):
    """Truncated signed distance to the building outline.

    Positive inside buildings, negative outside, zero on the outline
    (building pixels touching background). A mask without any outline
    (uniform) gets ``+/-truncation`` everywhere.
    """
    if not truncation > 0:
        raise ValueError("truncation must be positive")
    b = np.asarray(mask).astype(bool)
    sign = np.where(b, 1.0, -1.0)
    edge = boundary_pixels(b)
    if not edge.any():
        return sign * float(truncation)
    dist = np.sqrt(squared_distance_to(edge))
    return sign * np.minimum(dist, float(truncation))


def quantize_distance(distance, truncation):
    """Map signed distances to the 11 classes, class 5 on the outline.

    ``5 + round(5 D / T)`` (half away from zero) clamped to ``[0, 10]``.
    Pixels outside buildings are capped at class 4 so thresholding at 5
    recovers the footprint even when ``T`` exceeds 10 pixels.
    """
    d = np.asarray(distance, dtype=np.float64)
    x = 5.0 * d / float(truncation)
    steps = np.sign(x) * np.floor(np.abs(x) + 0.5)
    labels = np.clip(BOUNDARY_CLASS + steps, 0, DISTANCE_CLASSES - 1)
    labels = np.where(d < 0, np.minimum(labels, BOUNDARY_CLASS - 1), labels)
    return labels.astype(np.int64)


def binarize_labels(labels):
    """Building iff class >= 5."""
    labels = np.asarray(labels)
    if labels.size and (labels.min() < 0 or labels.max() >= DISTANCE_CLASSES):
        raise ValueError(f"distance labels must lie in [0, {DISTANCE_CLASSES - 1}]")
    return (labels >= BOUNDARY_CLASS).astype(np.uint8)


def patch_anchors(length, size, overlap=0):
    """Window starts along one axis; the last window is flush with the far edge."""
    if size > length:
        raise ValueError(f"patch size {size} exceeds image extent {length}")
    if not 0 <= overlap < size:
        raise ValueError("overlap must satisfy 0 <= overlap < size")
    stride = size - overlap
    anchors = list(range(0, length - size + 1, stride))
    if anchors[-1] != length - size:
        anchors.append(length - size)
    return anchors


def extract_patches(image, labels, size=256, overlap=0):
    """Row-major sliding-window tiles of ``image`` and ``labels``."""
    image = np.asarray(image)
    labels = np.asarray(labels)
    if image.shape[:2] != labels.shape[:2]:
        raise ValueError(f"image {image.shape[:2]} and labels {labels.shape[:2]} differ")
    h, w = labels.shape[:2]
    return [
        PatchPair(r, c, image[r:r + size, c:c + size], labels[r:r + size, c:c + size])
        for r in patch_anchors(h, size, overlap)
        for c in patch_anchors(w, size, overlap)
    ]
