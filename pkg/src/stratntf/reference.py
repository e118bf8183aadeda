"""Literal multi-index evaluation of the model and its update rules.

Everything here walks explicit index tuples with scalar arithmetic, without
any of the contraction kernels. It is slow and exists to cross-check the
vectorized code in tests.
"""

from __future__ import annotations

import itertools

import numpy as np

from .model import EPS, ModelState, StratifiedDataset


def _prod(values) -> float:
    out = 1.0
    for v in values:
        out *= v
    return out


def naive_reconstruct(model: ModelState, i: int) -> np.ndarray:
    w = model.codings[i]
    d1 = w.shape[0]
    dims = model.trailing_shape
    out = np.zeros((d1,) + dims)
    for idx in itertools.product(range(d1), *(range(d) for d in dims)):
        j, alpha = idx[0], idx[1:]
        value = 0.0
        for l in range(model.strata_ranks[i]):
            value += _prod(model.strata_factors[i][t][a, l] for t, a in enumerate(alpha))
        for l in range(model.topic_rank):
            value += w[j, l] * _prod(model.topics[t][a, l] for t, a in enumerate(alpha))
        out[idx] = value
    return out


def naive_objective(model: ModelState, dataset: StratifiedDataset) -> float:
    total = 0.0
    for i, a in enumerate(dataset):
        b = naive_reconstruct(model, i)
        for idx in itertools.product(*(range(d) for d in a.shape)):
            total += (a[idx] - b[idx]) ** 2
    return total


def _pinned(dims, t):
    """Index tuples over the trailing modes with entry ``t`` pinned to 0."""
    others = [range(d) if u != t else range(1) for u, d in enumerate(dims)]
    return itertools.product(*others)


def _clip(x, floor):
    return x if x > floor else floor


def naive_update_strata(model: ModelState, dataset: StratifiedDataset, i: int, mode: int,
                        clip_floor: float = EPS) -> np.ndarray:
    t = mode - 2
    a = dataset[i]
    b = naive_reconstruct(model, i)
    dims = model.trailing_shape
    v = model.strata_factors[i]
    out = v[t].copy()
    for l in range(v[t].shape[1]):
        for k in range(dims[t]):
            num = den = 0.0
            for j in range(a.shape[0]):
                for alpha in _pinned(dims, t):
                    weight = _prod(v[u][alpha[u], l] for u in range(len(dims)) if u != t)
                    full = list(alpha)
                    full[t] = k
                    num += weight * a[(j, *full)]
                    den += weight * b[(j, *full)]
            out[k, l] = v[t][k, l] * _clip(num, clip_floor) / _clip(den, clip_floor)
    return out


def naive_update_codings(model: ModelState, dataset: StratifiedDataset, i: int,
                         clip_floor: float = EPS) -> np.ndarray:
    a = dataset[i]
    b = naive_reconstruct(model, i)
    dims = model.trailing_shape
    w = model.codings[i]
    out = w.copy()
    for l in range(w.shape[1]):
        for k in range(w.shape[0]):
            num = den = 0.0
            for alpha in itertools.product(*(range(d) for d in dims)):
                weight = _prod(model.topics[u][alpha[u], l] for u in range(len(dims)))
                num += weight * a[(k, *alpha)]
                den += weight * b[(k, *alpha)]
            out[k, l] = w[k, l] * _clip(num, clip_floor) / _clip(den, clip_floor)
    return out


def naive_topic_sums(model: ModelState, dataset: StratifiedDataset, mode: int):
    t = mode - 2
    dims = model.trailing_shape
    h = model.topics
    r = model.topic_rank
    num = np.zeros((dims[t], r))
    den = np.zeros((dims[t], r))
    for i, a in enumerate(dataset):
        b = naive_reconstruct(model, i)
        w = model.codings[i]
        for l in range(r):
            for k in range(dims[t]):
                for j in range(a.shape[0]):
                    for alpha in _pinned(dims, t):
                        weight = w[j, l] * _prod(
                            h[u][alpha[u], l] for u in range(len(dims)) if u != t
                        )
                        full = list(alpha)
                        full[t] = k
                        num[k, l] += weight * a[(j, *full)]
                        den[k, l] += weight * b[(j, *full)]
    return num, den


def naive_tv_gradient(h: np.ndarray) -> np.ndarray:
    d = h.shape[0]
    g = np.zeros(d)
    for k in range(d):
        if k + 1 < d:
            g[k] -= np.sign(h[k + 1] - h[k])
        if k > 0:
            g[k] += np.sign(h[k] - h[k - 1])
    return g


def naive_update_topics(model: ModelState, dataset: StratifiedDataset, mode: int,
                        clip_floor: float = EPS, reg_strength: float = 0.0) -> np.ndarray:
    t = mode - 2
    num, den = naive_topic_sums(model, dataset, mode)
    h = model.topics[t]
    out = h.copy()
    for l in range(h.shape[1]):
        g = naive_tv_gradient(h[:, l]) if reg_strength else np.zeros(h.shape[0])
        for k in range(h.shape[0]):
            n = num[k, l] + reg_strength * max(-g[k], 0.0)
            d = den[k, l] + reg_strength * max(g[k], 0.0)
            out[k, l] = h[k, l] * _clip(n, clip_floor) / _clip(d, clip_floor)
    return out
