"""Pairwise kernels and the localized kernel stack used for message passing.

A kernel stack holds, for every kernel, every neighbor offset inside the
Manhattan window and every pixel, the kernel value between the pixel and its
neighbor at that offset. Pairs whose neighbor falls outside the image hold 0.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum

import numpy as np

DEFAULT_BANDWIDTHS = {
    "alpha": 3.0,
    "beta": 0.1,
    "gamma": 3.0,
    "delta": 1.0,
    "zeta": 1.0,
    "eta": 3.0,
}


class KernelKind(str, Enum):
    APPEARANCE = "a"
    SMOOTH = "s"
    FEATURE_DIFFERENCE = "fd"
    FEATURE_SPATIAL = "fs"
    FEATURE_COSINE = "fc"

    @property
    def terms(self):
        """``(bandwidth name, pair term)`` for each Gaussian factor of the kernel."""
        return _TERMS[self]

    @property
    def bandwidths(self):
        return tuple(name for name, _ in _TERMS[self])


_TERMS = {
    KernelKind.APPEARANCE: (("alpha", "position"), ("beta", "color")),
    KernelKind.SMOOTH: (("gamma", "position"),),
    KernelKind.FEATURE_DIFFERENCE: (("delta", "feature"),),
    KernelKind.FEATURE_SPATIAL: (("zeta", "feature"), ("eta", "position")),
    KernelKind.FEATURE_COSINE: (),
}


def parse_kinds(text):
    """Parse the ``a+s`` / ``fd`` shorthand into a tuple of kinds.

    ``none`` (or an empty string) selects no pairwise kernel at all.
    """
    text = text.strip()
    if text in ("", "none"):
        return ()
    kinds = []
    for part in text.split("+"):
        part = part.strip()
        try:
            kind = KernelKind(part)
        except ValueError:
            raise ValueError(f"unknown kernel name {part!r}") from None
        if kind in kinds:
            raise ValueError(f"kernel {part!r} listed twice")
        kinds.append(kind)
    return tuple(kinds)


def format_kinds(kinds):
    return "+".join(KernelKind(k).value for k in kinds) or "none"


def neighbor_offsets(radius):
    """Offsets ``(dy, dx)`` with ``|dy| + |dx| < radius``, center excluded.

    Ordered row-major by ``dy`` then ``dx``.
    """
    if radius < 2:
        raise ValueError(f"filter radius must be >= 2, got {radius}")
    reach = radius - 1
    offsets = [
        (dy, dx)
        for dy in range(-reach, reach + 1)
        for dx in range(-reach, reach + 1)
        if abs(dy) + abs(dx) < radius and (dy, dx) != (0, 0)
    ]
    return np.array(offsets, dtype=np.int64).reshape(-1, 2)


def _sqdist(u, v, what):
    u = np.asarray(u, dtype=np.float64).ravel()
    v = np.asarray(v, dtype=np.float64).ravel()
    if u.shape != v.shape:
        raise ValueError(f"{what} vectors differ in dimension: {u.size} vs {v.size}")
    return float(np.sum((u - v) ** 2))


def kernel_value(kind, f_i=None, f_j=None, p_i=None, p_j=None, c_i=None, c_j=None,
                 bandwidths=None):
    """Evaluate one kernel for a single pixel pair.

    Args:
        kind: a :class:`KernelKind` or its shorthand.
        f_i, f_j: feature vectors (feature kinds).
        p_i, p_j: pixel positions (appearance, smooth, feature spatial).
        c_i, c_j: colors (appearance).
        bandwidths: mapping from bandwidth name (``alpha`` ... ``eta``) to
            a positive value; missing names fall back to the defaults.

    The cosine kernel is ``1 - (f_i . f_j)**2 / (|f_i| |f_j|)`` clamped to
    ``[0, 1]``.
    """
    kind = KernelKind(kind)
    theta = dict(DEFAULT_BANDWIDTHS)
    theta.update(bandwidths or {})
    if kind is KernelKind.FEATURE_COSINE:
        u = np.asarray(f_i, dtype=np.float64).ravel()
        v = np.asarray(f_j, dtype=np.float64).ravel()
        if u.shape != v.shape:
            raise ValueError(
                f"feature vectors differ in dimension: {u.size} vs {v.size}"
            )
        nu, nv = np.linalg.norm(u), np.linalg.norm(v)
        if nu == 0.0 or nv == 0.0:
            raise ValueError("cosine kernel undefined for a zero-norm feature vector")
        value = 1.0 - float(np.dot(u, v)) ** 2 / (nu * nv)
        return min(max(value, 0.0), 1.0)

    pairs = {"position": (p_i, p_j), "color": (c_i, c_j), "feature": (f_i, f_j)}
    exponent = 0.0
    for name, term in kind.terms:
        a, b = pairs[term]
        if a is None or b is None:
            raise ValueError(f"kernel {kind.value!r} needs {term} vectors")
        t = theta[name]
        if t <= 0:
            raise ValueError(f"bandwidth {name} must be positive, got {t}")
        exponent += _sqdist(a, b, term) / (2.0 * t * t)
    return math.exp(-exponent)


def standardize_features(features):
    """Shift and scale each channel to zero mean and unit (population) std.

    Constant channels map to zeros.
    """
    f = np.asarray(features, dtype=np.float64)
    squeeze = f.ndim == 2
    if squeeze:
        f = f[..., None]
    flat = f.reshape(-1, f.shape[-1])
    mean = flat.mean(axis=0)
    std = flat.std(axis=0)
    out = np.zeros_like(f)
    live = std > 1e-12 * np.maximum(1.0, np.abs(mean))
    out[..., live] = (f[..., live] - mean[live]) / std[live]
    return out[..., 0] if squeeze else out


def neighbor_views(arr, offsets):
    """Yield ``(k, view)`` where ``view[i] = arr[i + offset_k]`` (zero outside)."""
    h, w = arr.shape[:2]
    pad = int(np.abs(offsets).max()) if len(offsets) else 0
    width = [(pad, pad), (pad, pad)] + [(0, 0)] * (arr.ndim - 2)
    padded = np.pad(arr, width)
    for k, (dy, dx) in enumerate(offsets):
        yield k, padded[pad + dy:pad + dy + h, pad + dx:pad + dx + w]


def validity_mask(offsets, height, width):
    """Boolean ``(K, H, W)``: True where the neighbor at each offset is in-image."""
    rows = np.arange(height)
    cols = np.arange(width)
    valid = np.empty((len(offsets), height, width), dtype=bool)
    for k, (dy, dx) in enumerate(offsets):
        vr = (rows + dy >= 0) & (rows + dy < height)
        vc = (cols + dx >= 0) & (cols + dx < width)
        valid[k] = vr[:, None] & vc[None, :]
    return valid


@dataclass(frozen=True)
class PairTerms:
    """Bandwidth-independent pair quantities for every offset and pixel.

    ``sq`` maps a term name (``position``, ``color``, ``feature``) to squared
    distances of shape ``(K, H, W)`` (``(K, 1, 1)`` for positions). Entries for
    invalid pairs are unspecified and must be masked with ``valid``.
    """

    offsets: np.ndarray
    valid: np.ndarray
    sq: dict
    cosine: np.ndarray | None = None


def _sq_neighbor_distance(arr, offsets):
    out = np.empty((len(offsets),) + arr.shape[:2])
    for k, view in neighbor_views(arr, offsets):
        diff = arr - view
        np.einsum("hwd,hwd->hw", diff, diff, out=out[k])
    return out


def pair_terms(features, image_rgb, kinds, radius):
    """Precompute the pair quantities the given kernel kinds need."""
    kinds = tuple(KernelKind(k) for k in kinds)
    offsets = neighbor_offsets(radius)
    f = np.asarray(features, dtype=np.float64)
    if f.ndim == 2:
        f = f[..., None]
    if f.ndim != 3:
        raise ValueError(f"features must have shape (H, W, D), got {f.shape}")
    h, w = f.shape[:2]
    if h < 1 or w < 1:
        raise ValueError("feature map must be at least 1x1")
    valid = validity_mask(offsets, h, w)
    needed = {term for kind in kinds for _, term in kind.terms}
    sq = {}
    if "position" in needed:
        sq["position"] = (offsets ** 2).sum(axis=1).astype(np.float64)[:, None, None]
    if "color" in needed:
        if image_rgb is None:
            raise ValueError("appearance kernel requires an RGB image")
        rgb = np.asarray(image_rgb, dtype=np.float64)
        if rgb.shape != (h, w, 3):
            raise ValueError(f"RGB image must have shape {(h, w, 3)}, got {rgb.shape}")
        sq["color"] = _sq_neighbor_distance(rgb, offsets)
    if "feature" in needed:
        sq["feature"] = _sq_neighbor_distance(f, offsets)
    cosine = None
    if KernelKind.FEATURE_COSINE in kinds:
        cosine = _cosine_stack(f, offsets, valid)
    return PairTerms(offsets=offsets, valid=valid, sq=sq, cosine=cosine)


def _cosine_stack(f, offsets, valid):
    norms = np.linalg.norm(f, axis=-1)
    neighbor_norms = dict(neighbor_views(norms, offsets))
    out = np.zeros(valid.shape)
    for k, fv in neighbor_views(f, offsets):
        nj = neighbor_norms[k]
        ok = valid[k]
        denom = norms * nj
        if ((denom == 0) & ok).any():
            raise ValueError("cosine kernel undefined for a zero-norm feature vector")
        dot = np.einsum("hwd,hwd->hw", f, fv)
        val = 1.0 - dot ** 2 / np.where(ok, denom, 1.0)
        out[k] = np.where(ok, np.clip(val, 0.0, 1.0), 0.0)
    return out


def kind_values(terms, kind, bandwidths):
    """Kernel values ``(K, H, W)`` of one kind, zero on invalid pairs."""
    kind = KernelKind(kind)
    if kind is KernelKind.FEATURE_COSINE:
        return terms.cosine.copy()
    exponent = 0.0
    for name, term in kind.terms:
        theta = float(bandwidths[name])
        if theta <= 0:
            raise ValueError(f"bandwidth {name} must be positive, got {theta}")
        exponent = exponent + terms.sq[term] / (2.0 * theta * theta)
    values = np.exp(-np.broadcast_to(exponent, terms.valid.shape))
    return np.where(terms.valid, values, 0.0)


@dataclass(frozen=True)
class KernelStack:
    """Kernel values ``(M, K, H, W)`` for M kinds and K neighbor offsets."""

    values: np.ndarray
    offsets: np.ndarray
    valid: np.ndarray
    kinds: tuple = ()

    @property
    def shape(self):
        return self.valid.shape[1:]


def stack_from_terms(terms, kinds, bandwidths):
    kinds = tuple(KernelKind(k) for k in kinds)
    h, w = terms.valid.shape[1:]
    values = np.empty((len(kinds), len(terms.offsets), h, w))
    for m, kind in enumerate(kinds):
        values[m] = kind_values(terms, kind, bandwidths)
    return KernelStack(values=values, offsets=terms.offsets, valid=terms.valid,
                       kinds=kinds)


def build_kernel_stack(features, image_rgb, kinds, params):
    """Precompute the truncated kernels for every pixel and neighbor offset.

    Args:
        features: ``(H, W, D)`` feature map, already standardized.
        image_rgb: ``(H, W, 3)`` colors in ``[0, 1]``; required only when the
            appearance kernel is active.
        kinds: kernel kinds, one stack slice each.
        params: :class:`~fpcrf.config.CrfParams` supplying ``filter_radius``
            and ``bandwidths``.
    """
    terms = pair_terms(features, image_rgb, kinds, params.filter_radius)
    return stack_from_terms(terms, kinds, params.bandwidths)


def empty_stack(height, width):
    """A stack with no kernels and no offsets (pairwise term switched off)."""
    return KernelStack(
        values=np.zeros((0, 0, height, width)),
        offsets=np.zeros((0, 2), dtype=np.int64),
        valid=np.zeros((0, height, width), dtype=bool),
    )
