"""Learning CRF parameters by backpropagating through unrolled mean-field.

Gradients are derived by hand: the forward pass keeps each iteration's input
marginals and weighted messages, and the backward pass walks them in reverse.
Bandwidths are optimized in log-space, so every reported bandwidth gradient
is with respect to ``log(theta)``.
"""
from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .config import TRAINABLE_GROUPS, CrfParams
from .errors import NumericError
from .fields import PROB_FLOOR, check_labels
from .inference import mean_field
from .kernels import empty_stack, neighbor_views, pair_terms, stack_from_terms


_LOG_THETA_BOUND = math.log(1e8)


@dataclass
class TrainConfig:
    learning_rate: float = 1e-4
    epochs: int = 10
    batch_size: int = 4
    seed: int = 0
    trainable: tuple = ("weights", "bandwidths", "compatibility")
    threads: int = 1

    def __post_init__(self):
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be positive")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.epochs < 0:
            raise ValueError("epochs must be >= 0")
        self.trainable = tuple(self.trainable)
        for g in self.trainable:
            if g not in TRAINABLE_GROUPS:
                raise ValueError(f"unknown parameter group {g!r}")

    @classmethod
    def from_settings(cls, settings):
        return cls(
            learning_rate=settings.learning_rate,
            epochs=settings.epochs,
            batch_size=settings.batch_size,
            seed=settings.seed,
            trainable=settings.trainable,
            threads=settings.threads,
        )


@dataclass
class LogisticUnary:
    """Per-pixel multinomial logistic classifier over the feature vector."""

    weight: np.ndarray
    bias: np.ndarray

    @classmethod
    def zeros(cls, dims, classes):
        return cls(np.zeros((dims, classes)), np.zeros(classes))

    @property
    def classes(self):
        return self.bias.shape[0]

    def logits(self, features):
        return np.asarray(features, dtype=np.float64) @ self.weight + self.bias

    def potentials(self, features):
        """Unary potentials ``-log softmax(logits)``."""
        z = self.logits(features)
        zmax = z.max(axis=-1, keepdims=True)
        lse = zmax + np.log(np.exp(z - zmax).sum(axis=-1, keepdims=True))
        return lse - z

    def copy(self):
        return LogisticUnary(self.weight.copy(), self.bias.copy())


@dataclass
class Model:
    """CRF parameters plus an optional trainable unary source."""

    params: CrfParams
    unary: LogisticUnary | None = None

    def copy(self):
        return Model(self.params.copy(), None if self.unary is None else self.unary.copy())


@dataclass
class Patch:
    """One training/evaluation sample.

    ``features`` should already be standardized. ``unary`` is a fixed
    ``(H, W, C)`` potential; when it is ``None`` the model's logistic unary
    is used.
    """

    features: np.ndarray
    truth: np.ndarray
    unary: np.ndarray | None = None
    image_rgb: np.ndarray | None = None
    name: str = "patch"

    @property
    def shape(self):
        return self.truth.shape


@dataclass
class GradientReport:
    """Analytic vs. central-difference gradient, one row per scalar."""

    names: list = field(default_factory=list)
    analytic: list = field(default_factory=list)
    numeric: list = field(default_factory=list)

    @property
    def relative_errors(self):
        return [
            abs(a - f) / max(abs(a), abs(f), 1e-8)
            for a, f in zip(self.analytic, self.numeric)
        ]

    @property
    def max_relative_error(self):
        errs = self.relative_errors
        return max(errs) if errs else 0.0

    def rows(self):
        return list(zip(self.names, self.analytic, self.numeric, self.relative_errors))


def nll_loss(q, truth):
    """Mean over pixels of ``-log Q_i(truth_i)`` with Q clamped at 1e-12."""
    q = np.asarray(q)
    truth = check_labels(truth, q.shape[-1])
    if truth.shape != q.shape[:2]:
        raise ValueError(f"marginals {q.shape[:2]} vs truth {truth.shape}")
    picked = np.take_along_axis(q, truth[..., None], axis=-1)[..., 0]
    return float(-np.log(np.maximum(picked, PROB_FLOOR)).mean())


def _nll_grad(q, truth):
    picked = np.take_along_axis(q, truth[..., None], axis=-1)[..., 0]
    g = np.zeros_like(q)
    live = picked > PROB_FLOOR
    vals = np.where(live, -1.0 / (picked.size * np.where(live, picked, 1.0)), 0.0)
    np.put_along_axis(g, truth[..., None], vals[..., None], axis=-1)
    return g


def _softmax_backward(p, grad):
    return p * (grad - (grad * p).sum(axis=-1, keepdims=True))


def _forward(patch, model):
    params = model.params
    h, w = patch.shape
    terms = None
    if params.kinds:
        terms = pair_terms(patch.features, patch.image_rgb, params.kinds,
                           params.filter_radius)
        stack = stack_from_terms(terms, params.kinds, params.bandwidths)
    else:
        stack = empty_stack(h, w)
    if patch.unary is not None:
        unary = np.asarray(patch.unary, dtype=np.float64)
    elif model.unary is not None:
        unary = model.unary.potentials(patch.features)
    else:
        raise ValueError(f"{patch.name}: no unary potentials and no unary model")
    q, trace = mean_field(unary, stack, params, keep_history=True)
    return terms, stack, unary, q, trace


def patch_loss(patch, model):
    q = _forward(patch, model)[3]
    return nll_loss(q, patch.truth)


def patch_loss_and_gradients(patch, model):
    """Loss and full gradient dict for one patch (all groups, frozen or not)."""
    params = model.params
    terms, stack, unary, q, trace = _forward(patch, model)
    truth = check_labels(patch.truth, q.shape[-1])
    loss = nll_loss(q, truth)
    if not math.isfinite(loss):
        raise NumericError(f"non-finite loss in patch {patch.name!r}")

    mu = params.compatibility
    offsets = stack.offsets
    n_off = len(offsets)
    h, w, c = q.shape
    pad = int(np.abs(offsets).max()) if n_off else 0
    combined = np.tensordot(params.weights, stack.values, axes=1) if n_off else None

    outputs = [hist[0] for hist in trace.history[1:]] + [q]
    g_q = _nll_grad(q, truth)
    g_unary = np.zeros_like(unary)
    g_mu = np.zeros_like(mu)
    g_kernel = np.zeros((n_off, h, w))  # d loss / d combined kernel
    for (q_prev, qcheck), q_out in zip(reversed(trace.history), reversed(outputs)):
        g_z = _softmax_backward(q_out, g_q)
        g_unary -= g_z
        g_qhat = -g_z
        g_mu += np.einsum("hwl,hwj->lj", g_qhat, qcheck)
        g_check = g_qhat @ mu
        g_prev = np.zeros((h + 2 * pad, w + 2 * pad, c))
        if n_off:
            for k, view in neighbor_views(q_prev, offsets):
                g_kernel[k] += np.einsum("hwl,hwl->hw", g_check, view)
                dy, dx = offsets[k]
                g_prev[pad + dy:pad + dy + h, pad + dx:pad + dx + w] += (
                    combined[k][..., None] * g_check
                )
        g_q = g_prev[pad:pad + h, pad:pad + w]
    q0 = trace.history[0][0]
    g_unary -= _softmax_backward(q0, g_q)

    grads = {
        "weights": np.zeros(len(params.kinds)),
        "bandwidths": {name: 0.0 for name in params.active_bandwidths},
        "compatibility": g_mu,
    }
    for m, kind in enumerate(params.kinds):
        km = stack.values[m]
        grads["weights"][m] = float((g_kernel * km).sum())
        g_km = params.weights[m] * g_kernel * km
        for name, term in kind.terms:
            theta = params.bandwidths[name]
            sq = np.broadcast_to(terms.sq[term], km.shape)
            grads["bandwidths"][name] += float(
                (g_km * np.where(stack.valid, sq, 0.0)).sum() / (theta * theta)
            )
    if model.unary is not None and patch.unary is None:
        z = model.unary.logits(patch.features)
        s = np.exp(z - z.max(axis=-1, keepdims=True))
        s /= s.sum(axis=-1, keepdims=True)
        g_logits = -g_unary + s * g_unary.sum(axis=-1, keepdims=True)
        f = patch.features.reshape(-1, patch.features.shape[-1])
        gl = g_logits.reshape(-1, c)
        grads["unary"] = {"weight": f.T @ gl, "bias": gl.sum(axis=0)}
    return loss, grads


def _add_grads(total, g, scale):
    for key, value in g.items():
        if isinstance(value, dict):
            sub = total.setdefault(key, {})
            for name, v in value.items():
                sub[name] = sub.get(name, 0.0) + scale * v
        elif key in total:
            total[key] = total[key] + scale * value
        else:
            total[key] = scale * value


def loss_and_gradients(batch, model, config=None):
    """Mean loss and gradients over a batch of patches.

    Patches may be evaluated concurrently (``config.threads``); the reduction
    always runs in batch order so results do not depend on the thread count.
    Gradients for groups not listed in ``config.trainable`` are dropped.
    """
    batch = list(batch)
    if not batch:
        raise ValueError("empty batch")
    config = config or TrainConfig()
    classes = {p.unary.shape[-1] for p in batch if p.unary is not None}
    if model.params.compatibility is not None:
        classes.add(model.params.classes)
    if len(classes) > 1:
        raise ValueError(f"patches disagree on the number of classes: {sorted(classes)}")
    if config.threads > 1 and len(batch) > 1:
        with ThreadPoolExecutor(config.threads) as pool:
            results = list(pool.map(lambda p: patch_loss_and_gradients(p, model), batch))
    else:
        results = [patch_loss_and_gradients(p, model) for p in batch]
    scale = 1.0 / len(batch)
    loss = 0.0
    total = {}
    for lo, g in results:
        loss += scale * lo
        _add_grads(total, g, scale)
    return loss, {k: v for k, v in total.items() if k in config.trainable}


def sgd_step(model, gradients, learning_rate):
    """Plain SGD; bandwidths step in log-space and weights are kept >= 0."""
    out = model.copy()
    p = out.params
    if "weights" in gradients:
        p.weights = np.maximum(p.weights - learning_rate * gradients["weights"], 0.0)
    if "bandwidths" in gradients:
        for name, g in gradients["bandwidths"].items():
            step = math.log(p.bandwidths[name]) - learning_rate * g
            # keep theta a positive, finite float even after a huge step
            p.bandwidths[name] = float(math.exp(min(max(step, -_LOG_THETA_BOUND),
                                                    _LOG_THETA_BOUND)))
    if "compatibility" in gradients:
        p.compatibility = p.compatibility - learning_rate * gradients["compatibility"]
    if "unary" in gradients and out.unary is not None:
        out.unary.weight = out.unary.weight - learning_rate * gradients["unary"]["weight"]
        out.unary.bias = out.unary.bias - learning_rate * gradients["unary"]["bias"]
    return out


def _batches(dataset, order, batch_size):
    shapes = {p.shape for p in dataset}
    size = batch_size if len(shapes) == 1 else 1
    for start in range(0, len(order), size):
        yield [dataset[i] for i in order[start:start + size]]


def train(dataset, model, config, callback=None):
    """Shuffle with ``config.seed`` and run mini-batch SGD.

    Returns the final model and the per-epoch mean training loss (the loss of
    each batch measured before its update, averaged over patches).
    """
    dataset = list(dataset)
    if not dataset:
        raise ValueError("empty dataset")
    if isinstance(model, CrfParams):
        model = Model(model)
    classes = _dataset_classes(dataset, model)
    model = Model(model.params.with_classes(classes),
                  None if model.unary is None else model.unary.copy())
    rng = np.random.default_rng(config.seed)
    history = []
    for epoch in range(config.epochs):
        order = rng.permutation(len(dataset))
        total = 0.0
        for batch in _batches(dataset, order, config.batch_size):
            loss, grads = loss_and_gradients(batch, model, config)
            total += loss * len(batch)
            model = sgd_step(model, grads, config.learning_rate)
        history.append(total / len(dataset))
        if callback is not None:
            callback(epoch, history[-1], model)
    return model, history


def _dataset_classes(dataset, model):
    for p in dataset:
        if p.unary is not None:
            return p.unary.shape[-1]
    if model.unary is not None:
        return model.unary.classes
    if model.params.compatibility is not None:
        return model.params.classes
    raise ValueError("cannot infer the number of classes")


def _slots(model, groups):
    """``(name, get, set)`` for every trainable scalar, in a fixed order."""
    p = model.params
    slots = []
    if "weights" in groups:
        for m in range(len(p.weights)):
            slots.append((f"w[{m}]:{p.kinds[m].value}",
                          lambda mod, m=m: mod.params.weights[m],
                          lambda mod, v, m=m: mod.params.weights.__setitem__(m, v)))
    if "bandwidths" in groups:
        for name in p.active_bandwidths:
            slots.append((f"log_theta_{name}",
                          lambda mod, n=name: math.log(mod.params.bandwidths[n]),
                          lambda mod, v, n=name: mod.params.bandwidths.__setitem__(n, math.exp(v))))
    if "compatibility" in groups:
        c = p.compatibility.shape[0]
        for a in range(c):
            for b in range(c):
                slots.append((f"mu[{a},{b}]",
                              lambda mod, a=a, b=b: mod.params.compatibility[a, b],
                              lambda mod, v, a=a, b=b: mod.params.compatibility.__setitem__((a, b), v)))
    if "unary" in groups and model.unary is not None:
        d, c = model.unary.weight.shape
        for a in range(d):
            for b in range(c):
                slots.append((f"unary_weight[{a},{b}]",
                              lambda mod, a=a, b=b: mod.unary.weight[a, b],
                              lambda mod, v, a=a, b=b: mod.unary.weight.__setitem__((a, b), v)))
        for b in range(c):
            slots.append((f"unary_bias[{b}]",
                          lambda mod, b=b: mod.unary.bias[b],
                          lambda mod, v, b=b: mod.unary.bias.__setitem__(b, v)))
    return slots


def _lookup(grads, name):
    if name.startswith("w["):
        return grads["weights"][int(name[2:name.index("]")])]
    if name.startswith("log_theta_"):
        return grads["bandwidths"][name[len("log_theta_"):]]
    idx = tuple(int(i) for i in name[name.index("[") + 1:name.index("]")].split(","))
    if name.startswith("mu["):
        return grads["compatibility"][idx]
    if name.startswith("unary_weight["):
        return grads["unary"]["weight"][idx]
    return grads["unary"]["bias"][idx]


def check_gradients(patch, model, config=None, eps=1e-3):
    """Compare analytic gradients against central differences on one patch."""
    config = config or TrainConfig()
    if isinstance(model, CrfParams):
        model = Model(model)
    model = model.copy()
    if model.params.compatibility is None:
        model.params = model.params.with_classes(_dataset_classes([patch], model))
    _, grads = loss_and_gradients([patch], model, config)
    report = GradientReport()
    for name, get, set_ in _slots(model, config.trainable):
        x0 = float(get(model))
        probe = model.copy()
        set_(probe, x0 + eps)
        up = patch_loss(patch, probe)
        set_(probe, x0 - eps)
        down = patch_loss(patch, probe)
        report.names.append(name)
        report.analytic.append(float(_lookup(grads, name)))
        report.numeric.append((up - down) / (2 * eps))
    return report
