"""Total-variation penalty on topic vectors.

The penalty for one vector is the sum of absolute consecutive differences.
Its subgradient (with sign(0) = 0) is split into positive and negative parts
which enter the denominator and numerator of the topic update.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .model import EPS, ModelState, StratifiedDataset
from .mu_updates import _trailing_index, clipped_ratio, summed_topic_terms


@dataclass
class TvSplit:
    positive_part: np.ndarray
    negative_part: np.ndarray


def tv_seminorm(h) -> float:
    h = np.asarray(h, dtype=np.float64)
    if h.size == 0:
        raise ValueError("TV of an empty vector")
    return float(np.abs(np.diff(h, axis=0)).sum())


def tv_subgradient(h) -> np.ndarray:
    """Subgradient of the TV seminorm, column-wise for 2-D input."""
    h = np.asarray(h, dtype=np.float64)
    if h.shape[0] < 2:
        raise ValueError("TV subgradient needs at least two entries")
    s = np.sign(np.diff(h, axis=0))
    g = np.zeros_like(h)
    g[:-1] -= s
    g[1:] += s
    return g


def tv_split(g) -> TvSplit:
    g = np.asarray(g, dtype=np.float64)
    return TvSplit(np.maximum(0.0, g), -np.minimum(g, 0.0))


def update_topics_mode_regularized(model: ModelState, dataset: StratifiedDataset, mode: int,
                                   reg_strength: float, clip_floor: float = EPS,
                                   map_fn=map) -> np.ndarray:
    """Topic update with the TV term added to both sides of the ratio.

    With ``reg_strength == 0`` the result equals the plain topic update
    bit for bit.
    """
    if reg_strength < 0:
        raise ValueError("reg_strength must be >= 0")
    t = _trailing_index(model, mode)
    h = model.topics[t]
    numer, denom = summed_topic_terms(model, dataset, mode, map_fn)
    if h.shape[0] >= 2:
        split = tv_split(tv_subgradient(h))
        numer = numer + reg_strength * split.negative_part
        denom = denom + reg_strength * split.positive_part
    return h * clipped_ratio(numer, denom, clip_floor)


def normalize_topic(h, norm: str = "l2", clip_floor: float = EPS):
    """Return ``(h / ||h||, ||h||)``.

    An all-zero vector is first raised to ``clip_floor`` entrywise.
    """
    h = np.asarray(h, dtype=np.float64)
    if not np.any(h > 0):
        h = np.maximum(h, clip_floor)
    if norm == "l2":
        scale = float(np.linalg.norm(h))
    elif norm == "l1":
        scale = float(np.abs(h).sum())
    else:
        raise ValueError(f"unknown norm {norm!r}")
    return h / scale, scale


def normalize_topics_mode(model: ModelState, mode: int, norm: str = "l2",
                          clip_floor: float = EPS) -> np.ndarray:
    """Normalize every mode-``mode`` topic vector in place.

    The scales are multiplied into the matching coding columns of every
    stratum, so reconstructions do not change. Returns the scales.
    """
    t = _trailing_index(model, mode)
    h = model.topics[t]
    scales = np.empty(h.shape[1])
    for l in range(h.shape[1]):
        h[:, l], scales[l] = normalize_topic(h[:, l], norm, clip_floor)
    for w in model.codings:
        w *= scales
    return scales


def total_tv(model: ModelState, modes) -> float:
    """Sum of TV seminorms over all topic vectors of the given modes."""
    total = 0.0
    for mode in modes:
        h = model.topics[mode - 2]
        total += float(np.abs(np.diff(h, axis=0)).sum())
    return total
