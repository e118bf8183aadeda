"""Multiplicative updates for strata features, codings and topics.

Every rule has the form ``factor *= max(numer, floor) / max(denom, floor)``
where ``numer`` and ``denom`` are the same contraction applied to the data
and to the current reconstruction. All entries of one factor matrix are
updated from a single reconstruction snapshot; the functions return the new
matrix and leave the model untouched.

``mode`` arguments use mode numbers 2..n.
"""

from __future__ import annotations

import numpy as np

from .model import EPS, ModelState, StratifiedDataset, reconstruct
from .tensor_core import mttkrp


def _trailing_index(model: ModelState, mode: int) -> int:
    t = int(mode) - 2
    if not 0 <= t < len(model.topics):
        raise ValueError(f"mode {mode} out of range 2..{model.ndim}")
    return t


def clipped_ratio(numer: np.ndarray, denom: np.ndarray, clip_floor: float = EPS) -> np.ndarray:
    return np.maximum(numer, clip_floor) / np.maximum(denom, clip_floor)


def strata_terms(model: ModelState, dataset: StratifiedDataset, i: int, mode: int):
    """Numerator and denominator contractions for the strata vectors of ``mode``."""
    t = _trailing_index(model, mode)
    factors = model.strata_factors[i]
    weights = {u + 1: f for u, f in enumerate(factors) if u != t}
    # axis 0 (samples) is summed with unit weight
    rank = factors[t].shape[1]
    numer = mttkrp(dataset[i], weights, t + 1, rank)
    denom = mttkrp(reconstruct(model, i), weights, t + 1, rank)
    return numer, denom


def update_strata_mode(model: ModelState, dataset: StratifiedDataset, i: int, mode: int,
                       clip_floor: float = EPS) -> np.ndarray:
    """New mode-``mode`` strata vectors of stratum ``i``.

    A stratum without strata features (rank 0) returns its empty matrix
    unchanged.
    """
    t = _trailing_index(model, mode)
    current = model.strata_factors[i][t]
    if current.shape[1] == 0:
        return current.copy()
    numer, denom = strata_terms(model, dataset, i, mode)
    return current * clipped_ratio(numer, denom, clip_floor)


def coding_terms(model: ModelState, dataset: StratifiedDataset, i: int):
    weights = {t + 1: h for t, h in enumerate(model.topics)}
    numer = mttkrp(dataset[i], weights, 0)
    denom = mttkrp(reconstruct(model, i), weights, 0)
    return numer, denom


def update_codings(model: ModelState, dataset: StratifiedDataset, i: int,
                   clip_floor: float = EPS) -> np.ndarray:
    """New coding matrix of stratum ``i``."""
    numer, denom = coding_terms(model, dataset, i)
    return model.codings[i] * clipped_ratio(numer, denom, clip_floor)


def topic_terms(model: ModelState, dataset: StratifiedDataset, i: int, mode: int):
    """Stratum ``i``'s contribution to the topic numerator and denominator."""
    t = _trailing_index(model, mode)
    weights = {0: model.codings[i]}
    weights.update({u + 1: h for u, h in enumerate(model.topics) if u != t})
    numer = mttkrp(dataset[i], weights, t + 1)
    denom = mttkrp(reconstruct(model, i), weights, t + 1)
    return numer, denom


def summed_topic_terms(model: ModelState, dataset: StratifiedDataset, mode: int, map_fn=map):
    """Topic numerator and denominator accumulated over all strata.

    ``map_fn`` may evaluate the per-stratum parts concurrently; the sums are
    always taken in ascending stratum order.
    """
    parts = list(map_fn(lambda i: topic_terms(model, dataset, i, mode), range(len(dataset))))
    numer, denom = parts[0]
    numer, denom = numer.copy(), denom.copy()
    for n_i, d_i in parts[1:]:
        numer += n_i
        denom += d_i
    return numer, denom


def update_topics_mode(model: ModelState, dataset: StratifiedDataset, mode: int,
                       clip_floor: float = EPS, map_fn=map) -> np.ndarray:
    """New mode-``mode`` topic vectors."""
    t = _trailing_index(model, mode)
    numer, denom = summed_topic_terms(model, dataset, mode, map_fn)
    return model.topics[t] * clipped_ratio(numer, denom, clip_floor)
