"""Conversions and invariant checks for the per-pixel fields.

Fields are plain numpy arrays:

* unary potentials ``(H, W, C)``: negative log-probabilities in nats
* marginals ``(H, W, C)``: per-pixel distributions over labels
* labels ``(H, W)``: integer class indices
* masks ``(H, W)``: uint8 0/1, 1 = building
"""
from __future__ import annotations

import numpy as np

PROB_FLOOR = 1e-12


def unary_from_probabilities(probs):
    """Return ``-log(p)`` with ``p`` clamped at ``PROB_FLOOR`` so it stays finite."""
    probs = np.asarray(probs, dtype=np.float64)
    if probs.ndim != 3 or probs.shape[-1] < 2:
        raise ValueError(f"expected (H, W, C>=2) probabilities, got {probs.shape}")
    return -np.log(np.maximum(probs, PROB_FLOOR))


def softmax_neg(unary):
    """Per-pixel ``exp(-u) / sum exp(-u)`` with max-subtraction for stability."""
    logits = -np.asarray(unary, dtype=np.float64)
    return _normalize_exp(logits)


def _normalize_exp(logits):
    shifted = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)


def check_unary(unary):
    unary = np.asarray(unary, dtype=np.float64)
    if unary.ndim != 3 or unary.shape[-1] < 2:
        raise ValueError(f"unary must have shape (H, W, C>=2), got {unary.shape}")
    if not np.isfinite(unary).all():
        raise ValueError("unary potentials must be finite")
    return unary


def check_probabilities(q, atol=1e-6):
    q = np.asarray(q)
    if q.ndim != 3:
        raise ValueError(f"marginals must have shape (H, W, C), got {q.shape}")
    if (q < 0).any() or (q > 1).any():
        raise ValueError("marginals must lie in [0, 1]")
    err = np.abs(q.sum(axis=-1) - 1.0).max()
    if err > atol:
        raise ValueError(f"marginals do not sum to one (max error {err:.3g})")
    return q


def check_labels(labels, classes):
    labels = np.asarray(labels)
    if labels.ndim != 2:
        raise ValueError(f"labels must be 2-D, got shape {labels.shape}")
    if labels.size and (labels.min() < 0 or labels.max() >= classes):
        raise ValueError(f"labels must lie in [0, {classes - 1}]")
    return labels.astype(np.int64)


def labels_from_tensor(tensor):
    """Convert a float tensor holding integral labels to an int array."""
    arr = np.asarray(tensor)
    if arr.ndim == 3 and arr.shape[-1] == 1:
        arr = arr[..., 0]
    labels = np.rint(arr)
    if not np.array_equal(labels, arr):
        raise ValueError("label tensor contains non-integral values")
    return labels.astype(np.int64)
