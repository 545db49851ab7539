"""Timing sweeps and synthetic-data accuracy runs."""
from __future__ import annotations

import csv
import io
import logging
import time
from dataclasses import astuple, dataclass, fields

import numpy as np

from .config import CrfParams, potts
from .evaluation import ConfusionCounts, confusion, metrics
from .features import rectangles_dataset, toy_features
from .fields import unary_from_probabilities
from .inference import map_labels
from .kernels import KernelKind, neighbor_offsets, standardize_features
from .pipeline import refine
from .training import LogisticUnary, Model, Patch, TrainConfig, train

log = logging.getLogger(__name__)


@dataclass
class BenchRow:
    radius: int
    offsets: int
    classes: int
    height: int
    width: int
    iterations: int
    seconds: float
    iou: float
    unary_iou: float


def bench_csv(rows):
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow([f.name for f in fields(BenchRow)])
    for row in rows:
        values = astuple(row)
        writer.writerow(list(values[:6]) + [f"{values[6]:.6f}", f"{values[7]:.6f}",
                                            f"{values[8]:.6f}"])
    return buf.getvalue()


def time_inference(radius, classes=11, size=256, dims=8, iterations=5, repeats=3, seed=0,
                   kinds=(KernelKind.FEATURE_DIFFERENCE,)):
    """Best-of-``repeats`` wall time for kernel construction plus mean-field.

    The convergence tolerance is zero so every run performs all iterations.
    """
    rng = np.random.default_rng(seed)
    feats = standardize_features(rng.normal(size=(size, size, dims)))
    unary = unary_from_probabilities(rng.dirichlet(np.ones(classes), size=(size, size)))
    params = CrfParams(kinds=kinds, compatibility=potts(classes), filter_radius=radius,
                       iterations=iterations, tolerance=0.0)
    best = np.inf
    for _ in range(repeats):
        t0 = time.perf_counter()
        refine(feats, unary, params)
        best = min(best, time.perf_counter() - t0)
    return best


def synthetic_patches(seed, count, size=128, noise=0.25, window=5, tag="p"):
    return [
        Patch(standardize_features(toy_features(image, window)), mask.astype(np.int64),
              image_rgb=image, name=f"{tag}{i:04d}")
        for i, (image, mask) in enumerate(rectangles_dataset(seed, count, size, noise))
    ]


def fit_logistic_unary(patches, epochs=5, learning_rate=1.0, seed=0):
    """Train only the logistic unary (no pairwise term)."""
    dims = patches[0].features.shape[-1]
    model = Model(CrfParams(kinds=(), compatibility=potts(2)), LogisticUnary.zeros(dims, 2))
    config = TrainConfig(learning_rate=learning_rate, epochs=epochs, seed=seed,
                         trainable=("unary",))
    model, history = train(patches, model, config)
    return model.unary, history


def patch_set_iou(params, unary_model, patches):
    counts = ConfusionCounts()
    for p in patches:
        q, _ = refine(p.features, unary_model.potentials(p.features), params, p.image_rgb)
        counts = counts + confusion(map_labels(q), p.truth)
    return metrics(counts).iou


def fit_crf(patches, unary_model, params, epochs, learning_rate, seed=0):
    """Train CRF parameters over a frozen unary."""
    fixed = [Patch(p.features, p.truth, unary_model.potentials(p.features), p.image_rgb,
                   p.name) for p in patches]
    config = TrainConfig(learning_rate=learning_rate, epochs=epochs, seed=seed,
                         trainable=("weights", "bandwidths", "compatibility"))
    model, history = train(fixed, Model(params), config)
    return model.params, history


@dataclass
class TrendResult:
    unary_iou: float
    crf_iou: float
    params: CrfParams
    unary_history: list
    crf_history: list
    seconds: float

    @property
    def gain(self):
        return self.crf_iou - self.unary_iou


def trend_experiment(n_train=100, n_test=20, size=128, radius=7, seed=7, noise=0.25,
                     unary_epochs=5, unary_lr=1.0, crf_epochs=3, crf_lr=0.5):
    """Unary-only vs. CRF-refined test IoU on noisy synthetic rectangles.

    Training and test scenes come from distinct seeds. The unary is trained
    first and then frozen while the fd-kernel CRF parameters are learned.
    """
    t0 = time.perf_counter()
    train_set = synthetic_patches(seed, n_train, size, noise, tag="train")
    test_set = synthetic_patches(seed + 1, n_test, size, noise, tag="test")
    unary_model, unary_hist = fit_logistic_unary(train_set, unary_epochs, unary_lr, seed)
    base = CrfParams(kinds=(), compatibility=potts(2))
    unary_iou = patch_set_iou(base, unary_model, test_set)
    init = CrfParams(kinds=(KernelKind.FEATURE_DIFFERENCE,), compatibility=potts(2),
                     filter_radius=radius)
    params, crf_hist = fit_crf(train_set, unary_model, init, crf_epochs, crf_lr, seed)
    crf_iou = patch_set_iou(params, unary_model, test_set)
    return TrendResult(unary_iou, crf_iou, params, unary_hist, crf_hist,
                       time.perf_counter() - t0)


def run_bench(radii, classes=11, size=256, iterations=5, repeats=3, seed=0,
              n_train=20, n_test=10, patch_size=128, noise=0.25, unary_epochs=5,
              unary_lr=1.0, crf_epochs=1, crf_lr=0.5):
    """Per-radius timing on a random instance plus synthetic-data IoU.

    Rows come back sorted by neighborhood size. Timing uses ``classes``
    labels on a ``size``-square grid; IoU uses the binary synthetic scenes
    with a CRF trained separately for each radius.
    """
    radii = sorted(set(int(r) for r in radii))
    for r in radii:
        # validate the whole sweep before spending time on any of it
        CrfParams(filter_radius=r)
    train_set = synthetic_patches(seed, n_train, patch_size, noise, tag="train")
    test_set = synthetic_patches(seed + 1, n_test, patch_size, noise, tag="test")
    unary_model, _ = fit_logistic_unary(train_set, unary_epochs, unary_lr, seed)
    unary_iou = patch_set_iou(CrfParams(kinds=(), compatibility=potts(2)), unary_model, test_set)
    rows = []
    for r in radii:
        seconds = time_inference(r, classes, size, iterations=iterations, repeats=repeats,
                                 seed=seed)
        init = CrfParams(kinds=(KernelKind.FEATURE_DIFFERENCE,), compatibility=potts(2),
                         filter_radius=r, iterations=iterations)
        if crf_epochs:
            params, _ = fit_crf(train_set, unary_model, init, crf_epochs, crf_lr, seed)
        else:
            params = init
        iou = patch_set_iou(params, unary_model, test_set)
        log.info("r=%d: %.3fs, IoU %.4f (unary %.4f)", r, seconds, iou, unary_iou)
        rows.append(BenchRow(r, len(neighbor_offsets(r)), classes, size, size, iterations,
                             seconds, iou, unary_iou))
    return rows
