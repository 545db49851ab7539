"""Independent reference implementations used as test oracles.

These use explicit loops over pixel pairs and share no code with the package
beyond plain numpy, so agreement with them checks the vectorized paths.
"""
import math

import numpy as np

_THETA = {"alpha": 3.0, "beta": 0.1, "gamma": 3.0, "delta": 1.0, "zeta": 1.0, "eta": 3.0}


def pair_kernel(kind, fi, fj, pi, pj, ci, cj, theta):
    """Kernel value written out term by term."""
    def sq(u, v):
        return sum((float(a) - float(b)) ** 2 for a, b in zip(u, v))

    if kind == "a":
        return math.exp(-sq(pi, pj) / (2 * theta["alpha"] ** 2)
                        - sq(ci, cj) / (2 * theta["beta"] ** 2))
    if kind == "s":
        return math.exp(-sq(pi, pj) / (2 * theta["gamma"] ** 2))
    if kind == "fd":
        return math.exp(-sq(fi, fj) / (2 * theta["delta"] ** 2))
    if kind == "fs":
        return math.exp(-sq(fi, fj) / (2 * theta["zeta"] ** 2)
                        - sq(pi, pj) / (2 * theta["eta"] ** 2))
    if kind == "fc":
        dot = sum(float(a) * float(b) for a, b in zip(fi, fj))
        ni = math.sqrt(sum(float(a) ** 2 for a in fi))
        nj = math.sqrt(sum(float(b) ** 2 for b in fj))
        return min(max(1.0 - dot * dot / (ni * nj), 0.0), 1.0)
    raise ValueError(kind)


def dense_kernels(features, rgb, kinds, radius, theta=None):
    """All-pairs kernel matrices ``(M, N, N)`` with the Manhattan cutoff."""
    theta = dict(_THETA, **(theta or {}))
    h, w = features.shape[:2]
    n = h * w
    out = np.zeros((len(kinds), n, n))
    for m, kind in enumerate(kinds):
        for i in range(n):
            yi, xi = divmod(i, w)
            for j in range(n):
                yj, xj = divmod(j, w)
                if i == j or abs(yi - yj) + abs(xi - xj) >= radius:
                    continue
                out[m, i, j] = pair_kernel(
                    kind, features[yi, xi], features[yj, xj], (yi, xi), (yj, xj),
                    None if rgb is None else rgb[yi, xi],
                    None if rgb is None else rgb[yj, xj], theta)
    return out


def softmax_rows(z):
    out = np.empty_like(z)
    for i, row in enumerate(z):
        e = [math.exp(v - max(row)) for v in row]
        s = sum(e)
        out[i] = [v / s for v in e]
    return out


def naive_mean_field(unary, kernels, weights, mu, iterations):
    """Mean-field over all pixel pairs with dense kernel matrices.

    Returns the list of marginals after each iteration (flattened ``(N, C)``).
    """
    h, w, c = unary.shape
    psi = unary.reshape(-1, c)
    n = psi.shape[0]
    q = softmax_rows(-psi)
    history = []
    for _ in range(iterations):
        msg = np.zeros((n, c))
        for m in range(kernels.shape[0]):
            for i in range(n):
                for j in range(n):
                    if kernels[m, i, j] != 0.0:
                        msg[i] += weights[m] * kernels[m, i, j] * q[j]
        pairwise = np.zeros((n, c))
        for i in range(n):
            for l in range(c):
                pairwise[i, l] = sum(mu[l, k] * msg[i, k] for k in range(c))
        q = softmax_rows(-psi - pairwise)
        history.append(q.reshape(h, w, c))
    return history


def brute_signed_distance(mask, truncation):
    """Signed truncated distance by scanning every boundary pixel."""
    mask = np.asarray(mask).astype(bool)
    h, w = mask.shape
    boundary = []
    for y in range(h):
        for x in range(w):
            if not mask[y, x]:
                continue
            for dy, dx in ((-1, 0), (1, 0), (0, -1), (0, 1)):
                yy, xx = y + dy, x + dx
                if 0 <= yy < h and 0 <= xx < w and not mask[yy, xx]:
                    boundary.append((y, x))
                    break
    out = np.empty((h, w))
    for y in range(h):
        for x in range(w):
            d = min((math.hypot(y - by, x - bx) for by, bx in boundary),
                    default=math.inf)
            out[y, x] = (1 if mask[y, x] else -1) * min(d, truncation)
    return out


def sobel_at(plane, y, x):
    """Sobel magnitude at one pixel with edge replication."""
    h, w = plane.shape

    def px(yy, xx):
        return plane[min(max(yy, 0), h - 1), min(max(xx, 0), w - 1)]

    gx = (px(y - 1, x + 1) + 2 * px(y, x + 1) + px(y + 1, x + 1)
          - px(y - 1, x - 1) - 2 * px(y, x - 1) - px(y + 1, x - 1))
    gy = (px(y + 1, x - 1) + 2 * px(y + 1, x) + px(y + 1, x + 1)
          - px(y - 1, x - 1) - 2 * px(y - 1, x) - px(y - 1, x + 1))
    return math.hypot(gx, gy)
