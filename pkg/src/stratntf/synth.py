"""Synthetic data: planted models, salt-and-pepper noise and block overlays."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .model import ModelState, StratifiedDataset, keyed_rng, reconstruct

# substream tags, disjoint from the ones used for initialization
_PLANT_STRATA, _PLANT_CODING, _PLANT_TOPIC, _PLANT_NOISE, _SALT_PEPPER = 11, 12, 13, 14, 15


@dataclass
class PlantedSpec:
    leading_dims: Sequence[int]
    trailing_dims: Sequence[int]
    topic_rank: int
    strata_ranks: int | Sequence[int] = 1
    distribution: str = "uniform"  # or "sparse"
    density: float = 1.0
    noise: float = 0.0
    seed: int = 0
    topic_support: Sequence[Sequence[int]] | None = None

    def __post_init__(self):
        self.leading_dims = tuple(int(d) for d in self.leading_dims)
        self.trailing_dims = tuple(int(d) for d in self.trailing_dims)
        if not self.leading_dims or not self.trailing_dims:
            raise ValueError("need at least one stratum and one trailing mode")
        if min(self.leading_dims + self.trailing_dims) < 1:
            raise ValueError("all dims must be >= 1")
        if self.topic_rank < 1:
            raise ValueError("topic_rank must be >= 1")
        if np.isscalar(self.strata_ranks):
            self.strata_ranks = (int(self.strata_ranks),) * len(self.leading_dims)
        self.strata_ranks = tuple(int(r) for r in self.strata_ranks)
        if len(self.strata_ranks) != len(self.leading_dims) or min(self.strata_ranks) < 0:
            raise ValueError("one non-negative strata rank per stratum expected")
        if self.distribution not in ("uniform", "sparse"):
            raise ValueError(f"unknown distribution {self.distribution!r}")
        if not 0 < self.density <= 1:
            raise ValueError("density must lie in (0, 1]")
        if self.noise < 0:
            raise ValueError("noise must be >= 0")
        if self.topic_support is not None:
            self.topic_support = tuple(tuple(int(j) for j in sup) for sup in self.topic_support)
            if len(self.topic_support) != len(self.leading_dims):
                raise ValueError("topic_support needs one entry per stratum")
            if any(not 0 <= j < self.topic_rank for sup in self.topic_support for j in sup):
                raise ValueError("topic_support refers to a topic outside the rank")


def _draw(spec: PlantedSpec, shape, *key) -> np.ndarray:
    rng = keyed_rng(spec.seed, *key)
    values = rng.uniform(0.0, 1.0, shape)
    if spec.distribution == "sparse":
        values *= rng.uniform(0.0, 1.0, shape) < spec.density
    return values


def generate_planted(spec: PlantedSpec) -> tuple[StratifiedDataset, ModelState]:
    """Draw a ground-truth model and the data it generates.

    Data entries get additive noise uniform on ``[0, spec.noise]``. With
    ``topic_support`` set, stratum ``i`` only uses the listed topics (the
    other coding columns are zero).
    """
    dims = spec.trailing_dims
    r = spec.topic_rank
    strata = [
        [_draw(spec, (d, spec.strata_ranks[i]), _PLANT_STRATA, i, t) for t, d in enumerate(dims)]
        for i in range(len(spec.leading_dims))
    ]
    codings = [_draw(spec, (d1, r), _PLANT_CODING, i) for i, d1 in enumerate(spec.leading_dims)]
    if spec.topic_support is not None:
        for w, sup in zip(codings, spec.topic_support):
            mask = np.zeros(r, dtype=bool)
            mask[list(sup)] = True
            w[:, ~mask] = 0.0
    topics = [_draw(spec, (d, r), _PLANT_TOPIC, t) for t, d in enumerate(dims)]
    truth = ModelState(strata, codings, topics)
    data = []
    for i in range(len(spec.leading_dims)):
        a = reconstruct(truth, i)
        if spec.noise > 0:
            a = a + keyed_rng(spec.seed, _PLANT_NOISE, i).uniform(0.0, spec.noise, a.shape)
        data.append(a)
    return StratifiedDataset(data), truth


def scale_model(model: ModelState, factor: float) -> ModelState:
    """Copy of ``model`` whose reconstructions are all multiplied by ``factor``."""
    out = model.copy()
    for fs in out.strata_factors:
        if fs:
            fs[0] *= factor
    for w in out.codings:
        w *= factor
    return out


def rescale_to_unit(dataset: StratifiedDataset, truth: ModelState | None = None):
    """Divide every stratum by the largest entry of the dataset so all values
    lie in [0, 1]; ``truth`` is rescaled to keep generating the data."""
    peak = max(float(a.max()) for a in dataset)
    if peak == 0:
        return dataset, truth
    scaled = StratifiedDataset([a / peak for a in dataset])
    return scaled, (None if truth is None else scale_model(truth, 1.0 / peak))


def salt_and_pepper(x, p: float, seed: int, stream: int = 0) -> np.ndarray:
    """Set each entry to 0 with probability ``p`` and to 1 with probability ``p``.

    ``stream`` selects an independent substream of ``seed`` (e.g. one per
    stratum).
    """
    if not 0 <= p <= 0.5:
        raise ValueError(f"salt-and-pepper probability must lie in [0, 0.5], got {p}")
    x = np.array(x, dtype=np.float64)
    u = keyed_rng(seed, _SALT_PEPPER, stream).uniform(0.0, 1.0, x.shape)
    x[u < p] = 0.0
    x[(u >= p) & (u < 2 * p)] = 1.0
    return x


def apply_block_watermark(x, region: Sequence[tuple[int, int]], value: float) -> np.ndarray:
    """Raise every entry inside a box to at least ``value``.

    ``region`` holds half-open ``(start, stop)`` ranges for the last
    ``len(region)`` modes, in mode order. A 3-mode image stack with a
    2-range region is therefore marked identically in every image.
    """
    x = np.array(x, dtype=np.float64)
    if not 0 <= value <= 1:
        raise ValueError("watermark value must lie in [0, 1]")
    region = [tuple(int(v) for v in rg) for rg in region]
    if len(region) > x.ndim:
        raise ValueError(f"region has {len(region)} ranges for a {x.ndim}-mode tensor")
    axes = range(x.ndim - len(region), x.ndim)
    index = [slice(None)] * x.ndim
    for ax, (start, stop) in zip(axes, region):
        if not 0 <= start <= stop <= x.shape[ax]:
            raise ValueError(
                f"range {start}:{stop} out of bounds for mode {ax + 1} of size {x.shape[ax]}"
            )
        index[ax] = slice(start, stop)
    block = x[tuple(index)]
    x[tuple(index)] = np.maximum(block, value)
    return x
