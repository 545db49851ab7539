"""CRF parameters and the ``key = value`` configuration format."""
from __future__ import annotations

import copy
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError
from .kernels import DEFAULT_BANDWIDTHS, KernelKind, format_kinds, parse_kinds

TRAINABLE_GROUPS = ("weights", "bandwidths", "compatibility", "unary")


def potts(classes):
    """Potts compatibility ``1 - delta(l, l')``."""
    return 1.0 - np.eye(classes)


@dataclass
class CrfParams:
    """Learnable CRF parameters plus the inference schedule.

    ``bandwidths`` always carries all six names; only the ones bound by the
    active kinds take part in inference and training. ``compatibility`` may be
    left as ``None`` until the number of classes is known (see
    :meth:`with_classes`).
    """

    kinds: tuple = (KernelKind.FEATURE_DIFFERENCE,)
    weights: np.ndarray = None
    bandwidths: dict = field(default_factory=lambda: dict(DEFAULT_BANDWIDTHS))
    compatibility: np.ndarray = None
    filter_radius: int = 7
    iterations: int = 5
    tolerance: float = 1e-6

    def __post_init__(self):
        self.kinds = tuple(KernelKind(k) for k in self.kinds)
        if self.weights is None:
            self.weights = np.ones(len(self.kinds))
        self.weights = np.asarray(self.weights, dtype=np.float64).reshape(-1)
        if self.compatibility is not None:
            self.compatibility = np.asarray(self.compatibility, dtype=np.float64)
        self.validate()

    def validate(self):
        if len(self.weights) != len(self.kinds):
            raise ConfigError(
                f"{len(self.kinds)} kernels but {len(self.weights)} kernel weights"
            )
        if (self.weights < 0).any() or not np.isfinite(self.weights).all():
            raise ConfigError("kernel weights must be finite and nonnegative")
        if self.filter_radius < 2:
            raise ConfigError(
                f"filter_radius must be >= 2, got {self.filter_radius}"
            )
        if self.iterations < 1:
            raise ConfigError(f"iterations must be >= 1, got {self.iterations}")
        if self.tolerance < 0:
            raise ConfigError(f"tolerance must be >= 0, got {self.tolerance}")
        for name, value in self.bandwidths.items():
            if not value > 0 or not np.isfinite(value):
                raise ConfigError(f"bandwidth theta_{name} must be positive")
        mu = self.compatibility
        if mu is not None and (mu.ndim != 2 or mu.shape[0] != mu.shape[1]):
            raise ConfigError(f"compatibility must be square, got {mu.shape}")

    @property
    def classes(self):
        return None if self.compatibility is None else self.compatibility.shape[0]

    @property
    def active_bandwidths(self):
        names = []
        for kind in self.kinds:
            names.extend(n for n in kind.bandwidths if n not in names)
        return tuple(names)

    def with_classes(self, classes):
        """Copy with a Potts compatibility if none is set yet."""
        out = self.copy()
        if out.compatibility is None:
            out.compatibility = potts(classes)
        elif out.compatibility.shape[0] != classes:
            raise ConfigError(
                f"compatibility is {out.classes}x{out.classes} but data has "
                f"{classes} classes"
            )
        return out

    def copy(self):
        return copy.deepcopy(self)


@dataclass
class RunSettings:
    learning_rate: float = 1e-4
    epochs: int = 10
    batch_size: int = 4
    seed: int = 0
    trainable: tuple = ("weights", "bandwidths", "compatibility")
    classes: int = 2
    truncation: float = 20.0
    search_radius: int = 7
    patch_size: int = 256
    overlap: int = 0
    threads: int = 1
    feature_window: int = 5


@dataclass
class Config:
    params: CrfParams = field(default_factory=CrfParams)
    settings: RunSettings = field(default_factory=RunSettings)


def _positive_float(v):
    x = float(v)
    if not x > 0 or not np.isfinite(x):
        raise ValueError(f"must be positive, got {v}")
    return x


def _nonneg_float(v):
    x = float(v)
    if not x >= 0 or not np.isfinite(x):
        raise ValueError(f"must be nonnegative, got {v}")
    return x


def _int_at_least(lo):
    def conv(v):
        x = int(v)
        if x < lo:
            raise ValueError(f"must be >= {lo}, got {x}")
        return x
    return conv


def _float_list(v):
    return [float(x) for x in v.replace(",", " ").split()]


def _trainable(v):
    groups = tuple(g.strip() for g in v.replace(",", "+").split("+") if g.strip())
    for g in groups:
        if g not in TRAINABLE_GROUPS and g != "none":
            raise ValueError(f"unknown parameter group {g!r}")
    return tuple(g for g in groups if g != "none")


# key -> (target, attribute, converter)
_KEYS = {
    "kernels": ("params", "kinds", parse_kinds),
    "kernel_weights": ("params", "weights", _float_list),
    "filter_radius": ("params", "filter_radius", _int_at_least(2)),
    "iterations": ("params", "iterations", _int_at_least(1)),
    "tolerance": ("params", "tolerance", _nonneg_float),
    "learning_rate": ("settings", "learning_rate", _positive_float),
    "epochs": ("settings", "epochs", _int_at_least(0)),
    "batch_size": ("settings", "batch_size", _int_at_least(1)),
    "seed": ("settings", "seed", int),
    "trainable": ("settings", "trainable", _trainable),
    "classes": ("settings", "classes", _int_at_least(2)),
    "truncation": ("settings", "truncation", _positive_float),
    "search_radius": ("settings", "search_radius", _int_at_least(0)),
    "patch_size": ("settings", "patch_size", _int_at_least(1)),
    "overlap": ("settings", "overlap", _int_at_least(0)),
    "threads": ("settings", "threads", _int_at_least(1)),
    "feature_window": ("settings", "feature_window", _int_at_least(3)),
}
for _name in DEFAULT_BANDWIDTHS:
    _KEYS[f"theta_{_name}"] = ("bandwidth", _name, _positive_float)


def apply_setting(config, key, value, line=None):
    """Set one ``key = value`` pair on ``config``; raises :class:`ConfigError`."""
    key = key.strip().replace("-", "_")
    if key not in _KEYS:
        raise ConfigError(f"unknown key {key!r}", line)
    target, attr, conv = _KEYS[key]
    try:
        parsed = conv(str(value).strip())
    except ValueError as exc:
        raise ConfigError(f"{key}: {exc}", line) from None
    if target == "bandwidth":
        config.params.bandwidths[attr] = parsed
    elif target == "params":
        setattr(config.params, attr, parsed)
    else:
        setattr(config.settings, attr, parsed)
    if key == "kernels" and len(config.params.weights) != len(parsed):
        config.params.weights = np.ones(len(parsed))


def finalize(config):
    p = config.params
    p.kinds = tuple(KernelKind(k) for k in p.kinds)
    p.weights = np.asarray(p.weights, dtype=np.float64).reshape(-1)
    p.validate()
    s = config.settings
    if s.feature_window % 2 == 0:
        raise ConfigError(f"feature_window must be odd, got {s.feature_window}")
    if s.overlap >= s.patch_size:
        raise ConfigError("overlap must be smaller than patch_size")
    return config


def parse_config_text(text, source="<config>"):
    config = Config()
    weights_line = None
    kernels_line = None
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}: expected 'key = value'", lineno)
        key, value = line.split("=", 1)
        key = key.strip()
        if key == "kernel_weights":
            weights_line = lineno
        if key == "kernels":
            kernels_line = lineno
        try:
            apply_setting(config, key, value, lineno)
        except ConfigError as exc:
            exc.args = (f"{source}: {exc.args[0]}",)
            raise
    try:
        return finalize(config)
    except ConfigError as exc:
        raise ConfigError(
            f"{source}: {exc}", weights_line or kernels_line
        ) from None


def parse_config(path=None):
    """Parse a config file; ``None`` gives all defaults."""
    if path is None:
        return finalize(Config())
    with open(path, encoding="utf-8") as fh:
        return parse_config_text(fh.read(), source=str(path))


def config_lines(config):
    """Render ``config`` back to ``key = value`` lines (used in manifests)."""
    p, s = config.params, config.settings
    lines = [
        f"kernels = {format_kinds(p.kinds)}",
        "kernel_weights = " + ", ".join(repr(float(w)) for w in p.weights),
        f"filter_radius = {p.filter_radius}",
        f"iterations = {p.iterations}",
        f"tolerance = {p.tolerance!r}",
    ]
    lines += [f"theta_{k} = {v!r}" for k, v in p.bandwidths.items()]
    lines += [
        f"learning_rate = {s.learning_rate!r}",
        f"epochs = {s.epochs}",
        f"batch_size = {s.batch_size}",
        f"seed = {s.seed}",
        f"trainable = {'+'.join(s.trainable) or 'none'}",
        f"classes = {s.classes}",
        f"truncation = {s.truncation!r}",
        f"search_radius = {s.search_radius}",
        f"patch_size = {s.patch_size}",
        f"overlap = {s.overlap}",
        f"threads = {s.threads}",
        f"feature_window = {s.feature_window}",
    ]
    return lines
