"""File-level workflows shared by the CLI: checkpoints, tiled inference, datasets."""
from __future__ import annotations

import json
import logging
import os
import platform
import time
from concurrent.futures import ThreadPoolExecutor
from contextlib import contextmanager
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .config import CrfParams
from .errors import ConfigError, FormatError
from .features import toy_features
from .fields import check_unary, labels_from_tensor
from .inference import map_labels, mean_field
from .io import read_tensor, write_tensor
from .kernels import (
    DEFAULT_BANDWIDTHS,
    KernelKind,
    build_kernel_stack,
    empty_stack,
    format_kinds,
    parse_kinds,
    standardize_features,
)
from .preprocess import DISTANCE_CLASSES, binarize_labels, patch_anchors
from .training import LogisticUnary, Model, Patch

log = logging.getLogger(__name__)

CHECKPOINT_FORMAT = "fpcrf-checkpoint-1"
_BANDWIDTH_ORDER = tuple(DEFAULT_BANDWIDTHS)


@dataclass
class RunManifest:
    subcommand: str
    inputs: dict = field(default_factory=dict)
    outputs: dict = field(default_factory=dict)
    config: str | None = None
    settings: list = field(default_factory=list)
    seed: int | None = None
    threads: int = 1
    timings_ms: dict = field(default_factory=dict)
    results: dict = field(default_factory=dict)
    failed_stage: str | None = None
    version: str = __version__
    python: str = platform.python_version()

    @contextmanager
    def stage(self, name):
        """Time a block and record it under ``name`` (milliseconds)."""
        t0 = time.perf_counter()
        try:
            yield
        except Exception as exc:
            self.failed_stage = name
            if not hasattr(exc, "stage"):
                exc.stage = name
            raise
        finally:
            self.timings_ms[name] = round((time.perf_counter() - t0) * 1000.0, 3)

    def write(self, path):
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(asdict(self), fh, indent=2, sort_keys=True, default=_jsonable)
            fh.write("\n")


def _jsonable(obj):
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.floating,)):
        return float(obj)
    if isinstance(obj, Path):
        return str(obj)
    raise TypeError(f"not serializable: {type(obj)}")


# -- checkpoints -----------------------------------------------------------

def save_checkpoint(model, directory, feature_window=5):
    """Write a checkpoint directory: ``checkpoint.txt`` plus FPT1 tensors."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    p = model.params
    lines = [
        f"format = {CHECKPOINT_FORMAT}",
        f"kernels = {format_kinds(p.kinds)}",
        f"filter_radius = {p.filter_radius}",
        f"iterations = {p.iterations}",
        f"tolerance = {p.tolerance!r}",
        f"classes = {p.classes}",
        f"bandwidth_names = {' '.join(_BANDWIDTH_ORDER)}",
        f"unary = {'logistic' if model.unary is not None else 'none'}",
        f"feature_window = {feature_window}",
    ]
    (directory / "checkpoint.txt").write_text("\n".join(lines) + "\n", encoding="utf-8")
    if len(p.weights):
        write_tensor(p.weights, directory / "weights.fpt")
    write_tensor([p.bandwidths[n] for n in _BANDWIDTH_ORDER], directory / "bandwidths.fpt")
    write_tensor(p.compatibility, directory / "compatibility.fpt")
    if model.unary is not None:
        write_tensor(model.unary.weight, directory / "unary_weight.fpt")
        write_tensor(model.unary.bias, directory / "unary_bias.fpt")


def load_checkpoint(directory):
    """Read a checkpoint; returns ``(model, feature_window)``."""
    directory = Path(directory)
    manifest = directory / "checkpoint.txt"
    if not manifest.is_file():
        raise FileNotFoundError(f"checkpoint manifest not found: {manifest}")
    meta = {}
    for line in manifest.read_text(encoding="utf-8").splitlines():
        if "=" in line:
            k, v = line.split("=", 1)
            meta[k.strip()] = v.strip()
    if meta.get("format") != CHECKPOINT_FORMAT:
        raise FormatError(f"{manifest}: unsupported checkpoint format {meta.get('format')!r}")
    kinds = parse_kinds(meta["kernels"])
    weights = (read_tensor(directory / "weights.fpt").astype(np.float64)
               if kinds else np.zeros(0))
    names = meta["bandwidth_names"].split()
    values = read_tensor(directory / "bandwidths.fpt").astype(np.float64)
    params = CrfParams(
        kinds=kinds,
        weights=weights,
        bandwidths={n: float(v) for n, v in zip(names, values)},
        compatibility=read_tensor(directory / "compatibility.fpt").astype(np.float64),
        filter_radius=int(meta["filter_radius"]),
        iterations=int(meta["iterations"]),
        tolerance=float(meta["tolerance"]),
    )
    unary = None
    if meta.get("unary") == "logistic":
        unary = LogisticUnary(
            read_tensor(directory / "unary_weight.fpt").astype(np.float64),
            read_tensor(directory / "unary_bias.fpt").astype(np.float64),
        )
    return Model(params, unary), int(meta.get("feature_window", 5))


# -- inference -------------------------------------------------------------

def prepare_features(features=None, image=None, window=5):
    """Standardized features from a feature tensor or, failing that, the image."""
    if features is None:
        if image is None:
            raise ConfigError("need a feature tensor or an RGB image")
        features = toy_features(image, window)
    features = np.asarray(features, dtype=np.float64)
    if features.ndim == 2:
        features = features[..., None]
    return standardize_features(features)


def refine(features, unary, params, image_rgb=None):
    """Mean-field marginals for one patch."""
    h, w = unary.shape[:2]
    if params.kinds:
        stack = build_kernel_stack(features, image_rgb, params.kinds, params)
    else:
        stack = empty_stack(h, w)
    return mean_field(unary, stack, params)


@dataclass
class TiledResult:
    marginals: np.ndarray
    seam_disagreement: float
    tiles: int
    iterations: list


def infer_tiled(features, unary, params, image_rgb=None, patch_size=256, overlap=0,
                threads=1):
    """Run inference tile by tile and average marginals where tiles overlap.

    With pairwise terms, tiles see truncated neighborhoods at their borders,
    so results near seams can differ from whole-image inference. The fraction
    of multiply-covered pixels whose per-tile MAP labels disagree is reported
    as ``seam_disagreement``.
    """
    unary = check_unary(unary)
    h, w, c = unary.shape
    if features.shape[:2] != (h, w):
        raise ValueError(f"features {features.shape[:2]} vs unary {(h, w)}")
    if image_rgb is not None and image_rgb.shape[:2] != (h, w):
        raise ValueError(f"image {image_rgb.shape[:2]} vs unary {(h, w)}")
    rows = patch_anchors(h, min(patch_size, h), overlap if patch_size < h else 0)
    cols = patch_anchors(w, min(patch_size, w), overlap if patch_size < w else 0)
    ph, pw = min(patch_size, h), min(patch_size, w)
    tiles = [(r, c0) for r in rows for c0 in cols]

    def run(tile):
        r, c0 = tile
        sl = (slice(r, r + ph), slice(c0, c0 + pw))
        rgb = None if image_rgb is None else image_rgb[sl]
        return refine(features[sl], unary[sl], params, rgb)

    if threads > 1 and len(tiles) > 1:
        with ThreadPoolExecutor(threads) as pool:
            results = list(pool.map(run, tiles))
    else:
        results = [run(t) for t in tiles]

    total = np.zeros((h, w, c))
    cover = np.zeros((h, w), dtype=np.int64)
    first_label = np.full((h, w), -1, dtype=np.int64)
    disagree = np.zeros((h, w), dtype=bool)
    for (r, c0), (q, _) in zip(tiles, results):
        sl = (slice(r, r + ph), slice(c0, c0 + pw))
        total[sl] += q
        cover[sl] += 1
        lab = map_labels(q)
        seen = first_label[sl] >= 0
        disagree[sl] |= seen & (first_label[sl] != lab)
        first_label[sl] = np.where(seen, first_label[sl], lab)
    shared = cover > 1
    rate = float(disagree[shared].mean()) if shared.any() else 0.0
    return TiledResult(
        marginals=total / cover[..., None],
        seam_disagreement=rate,
        tiles=len(tiles),
        iterations=[tr.iterations for _, tr in results],
    )


def labels_to_mask(labels, classes):
    """Binary footprint from MAP labels: ``l >= 5`` for distance labels, else ``l > 0``."""
    if classes == DISTANCE_CLASSES:
        return binarize_labels(labels)
    return (np.asarray(labels) > 0).astype(np.uint8)


# -- datasets --------------------------------------------------------------

def load_dataset(directory, classes, window=5):
    """Patches from ``NAME.labels.fpt`` with ``NAME.image.fpt`` and/or
    ``NAME.features.fpt`` and an optional ``NAME.unary.fpt``."""
    directory = Path(directory)
    if not directory.is_dir():
        raise FileNotFoundError(f"dataset directory not found: {directory}")
    label_files = sorted(directory.glob("*.labels.fpt"))
    if not label_files:
        raise FileNotFoundError(f"no *.labels.fpt files in {directory}")
    patches = []
    for lf in label_files:
        name = lf.name[: -len(".labels.fpt")]
        img_path = directory / f"{name}.image.fpt"
        feat_path = directory / f"{name}.features.fpt"
        unary_path = directory / f"{name}.unary.fpt"
        image = read_tensor(img_path).astype(np.float64) if img_path.is_file() else None
        feats = read_tensor(feat_path).astype(np.float64) if feat_path.is_file() else None
        if image is None and feats is None:
            raise FileNotFoundError(f"{name}: needs {img_path.name} or {feat_path.name}")
        truth = labels_from_tensor(read_tensor(lf))
        if truth.min() < 0 or truth.max() >= classes:
            raise ConfigError(f"{lf}: labels outside [0, {classes - 1}]")
        unary = None
        if unary_path.is_file():
            unary = read_tensor(unary_path).astype(np.float64)
            if unary.shape != truth.shape + (classes,):
                raise ConfigError(f"{unary_path}: expected shape {truth.shape + (classes,)}")
        patches.append(Patch(
            features=prepare_features(feats, image, window),
            truth=truth,
            unary=unary,
            image_rgb=image,
            name=name,
        ))
    return patches


def resolve_threads(flag):
    if flag is not None:
        return int(flag)
    env = os.environ.get("FPCRF_THREADS")
    return int(env) if env else None


def needs_rgb(params):
    return KernelKind.APPEARANCE in params.kinds
