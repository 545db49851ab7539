"""Mean-field inference with localized (windowed) message passing."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .fields import _normalize_exp, check_unary, softmax_neg
from .kernels import neighbor_views


@dataclass
class MeanFieldTrace:
    """Per-iteration max absolute marginal change and the stop reason.

    ``history`` is only filled when requested; it stores, per iteration, the
    marginals read by message passing and the weighted messages, which is
    what the backward pass needs.
    """

    changes: list = field(default_factory=list)
    converged: bool = False
    history: list | None = None

    @property
    def iterations(self):
        return len(self.changes)


def init_marginals(unary):
    return softmax_neg(check_unary(unary))


def _check_stack(q, stack):
    if q.ndim != 3 or q.shape[:2] != tuple(stack.shape):
        raise ValueError(
            f"marginals {q.shape[:2]} and kernel stack {tuple(stack.shape)} "
            "cover different grids"
        )


def message_pass(q, stack):
    """Kernel-weighted sum of neighbor marginals, one field per kernel.

    Returns an ``(M, H, W, C)`` array with
    ``out[m, i, l] = sum_k stack[m, k, i] * q[i + offset_k, l]``.
    """
    q = np.asarray(q, dtype=np.float64)
    _check_stack(q, stack)
    out = np.zeros((stack.values.shape[0],) + q.shape)
    if not len(stack.offsets):
        return out
    tmp = np.empty(q.shape)
    for k, view in neighbor_views(q, stack.offsets):
        for m in range(out.shape[0]):
            np.multiply(stack.values[m, k][..., None], view, out=tmp)
            out[m] += tmp
    return out


def weight_messages(messages, weights):
    weights = np.asarray(weights, dtype=np.float64).reshape(-1)
    if len(weights) != messages.shape[0]:
        raise ValueError(
            f"{messages.shape[0]} message fields but {len(weights)} weights"
        )
    out = np.zeros(messages.shape[1:])
    for m, w in enumerate(weights):
        out += w * messages[m]
    return out


def compatibility_transform(qcheck, compatibility):
    """Per-pixel ``out[i, l] = sum_l' mu[l, l'] * qcheck[i, l']`` (a 1x1 filter)."""
    mu = np.asarray(compatibility, dtype=np.float64)
    c = qcheck.shape[-1]
    if mu.shape != (c, c):
        raise ValueError(f"compatibility must be {c}x{c}, got {mu.shape}")
    return qcheck @ mu.T


def mean_field(unary, stack, params, keep_history=False):
    """Run the mean-field loop and return ``(marginals, trace)``.

    Each iteration passes messages, weights them by kernel, applies the
    compatibility matrix, subtracts from the negated unary and normalizes.
    All pixels update synchronously. The loop stops after
    ``params.iterations`` or once the largest marginal change drops below
    ``params.tolerance``.
    """
    unary = check_unary(unary)
    mu = params.compatibility
    if mu is None:
        raise ValueError("params carry no compatibility matrix")
    if mu.shape[0] != unary.shape[-1]:
        raise ValueError(
            f"unary has {unary.shape[-1]} classes, compatibility is {mu.shape}"
        )
    if len(params.weights) != stack.values.shape[0]:
        raise ValueError(
            f"{stack.values.shape[0]} kernels but {len(params.weights)} weights"
        )
    q = softmax_neg(unary)
    _check_stack(q, stack)
    trace = MeanFieldTrace(history=[] if keep_history else None)
    for _ in range(params.iterations):
        qcheck = weight_messages(message_pass(q, stack), params.weights)
        qhat = compatibility_transform(qcheck, mu)
        new = _normalize_exp(-unary - qhat)
        change = float(np.abs(new - q).max())
        if keep_history:
            trace.history.append((q, qcheck))
        trace.changes.append(change)
        q = new
        if change < params.tolerance:
            trace.converged = True
            break
    return q, trace


def map_labels(q):
    """Per-pixel argmax; ties go to the smallest label index."""
    return np.argmax(np.asarray(q), axis=-1).astype(np.int64)


def gibbs_energy(labels, unary, stack, params):
    """Unary plus pairwise energy of a labeling over all ordered in-window pairs."""
    unary = check_unary(unary)
    labels = np.asarray(labels, dtype=np.int64)
    if labels.shape != unary.shape[:2]:
        raise ValueError(f"labels {labels.shape} vs unary {unary.shape[:2]}")
    energy = float(np.take_along_axis(unary, labels[..., None], axis=-1).sum())
    if not len(stack.offsets) or not len(params.weights):
        return energy
    mu = params.compatibility
    combined = np.tensordot(params.weights, stack.values, axes=1)
    for k, neighbor in neighbor_views(labels, stack.offsets):
        valid = stack.valid[k]
        pen = mu[labels[valid], neighbor[valid]]
        energy += float((pen * combined[k][valid]).sum())
    return energy
