"""Stratified-NTF parameters, reconstruction and objective.

Factor storage follows the usual CP convention: every group of rank-one
vectors that share a mode is stored as the columns of one matrix.

* ``strata_factors[i][t]`` has shape ``(d_{t+2}, r'(i))``: the ``t``-th
  trailing-mode vectors of stratum ``i``'s features.
* ``codings[i]`` has shape ``(d_1(i), r)``.
* ``topics[t]`` has shape ``(d_{t+2}, r)``.

Modes are numbered 1..n as in the data tensors, mode 1 being the sample mode.
Only modes 2..n carry strata and topic vectors, so trailing index ``t`` maps
to mode ``t + 2`` and to numpy axis ``t + 1``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .tensor_core import as_tensor, cp_to_tensor, sq_frobenius_distance

EPS = float(np.finfo(np.float64).eps)

# substream tags for keyed random generation
_STRATA, _CODING, _TOPIC = 1, 2, 3


def keyed_rng(seed: int, *key: int) -> np.random.Generator:
    """PCG64 generator for the substream ``key`` of ``seed``.

    Substreams are addressed by key rather than by draw order, so adding or
    reordering factors never changes the values of the others.
    """
    ss = np.random.SeedSequence(int(seed) & 0xFFFFFFFFFFFFFFFF, spawn_key=tuple(key))
    return np.random.Generator(np.random.PCG64(ss))


class StratifiedDataset:
    """A list of non-negative data tensors sharing their trailing dimensions."""

    def __init__(self, strata: Sequence):
        strata = [as_tensor(a) for a in strata]
        if not strata:
            raise ValueError("a dataset needs at least one stratum")
        ref = strata[0]
        if ref.ndim < 2:
            raise ValueError("strata must have at least two modes")
        for i, a in enumerate(strata):
            if a.ndim != ref.ndim or a.shape[1:] != ref.shape[1:]:
                raise ValueError(
                    f"stratum {i} has shape {a.shape}, trailing dims must match "
                    f"stratum 0 shape {ref.shape}"
                )
            if a.shape[0] < 1 or min(a.shape) < 1:
                raise ValueError(f"stratum {i} has an empty mode: {a.shape}")
            if not np.all(np.isfinite(a)):
                raise ValueError(f"stratum {i} contains non-finite entries")
            if np.any(a < 0):
                raise ValueError(f"stratum {i} contains negative entries")
        self.strata = strata

    def __len__(self):
        return len(self.strata)

    def __getitem__(self, i):
        return self.strata[i]

    def __iter__(self):
        return iter(self.strata)

    @property
    def ndim(self) -> int:
        return self.strata[0].ndim

    @property
    def trailing_shape(self) -> tuple[int, ...]:
        return self.strata[0].shape[1:]

    @property
    def leading_dims(self) -> tuple[int, ...]:
        return tuple(a.shape[0] for a in self.strata)

    def sq_norm(self) -> float:
        return float(sum(np.vdot(a, a) for a in self.strata))


@dataclass
class FitConfig:
    """Solver settings.

    ``strata_ranks`` is either one rank for every stratum or a per-stratum
    sequence. ``regularized_modes`` uses mode numbers 2..n and defaults to
    all of them. ``regularization`` picks the branch of the outer loop:
    ``"tv"`` runs the regularized topic update followed by normalization,
    ``"none"`` the plain update; left as ``None`` it is ``"tv"`` exactly
    when ``reg_strength > 0``.
    """

    topic_rank: int
    strata_ranks: int | Sequence[int] = 1
    outer_iterations: int = 100
    strata_sweeps: int = 2
    reg_strength: float = 0.0
    regularized_modes: Sequence[int] | None = None
    regularization: str | None = None
    normalization: str = "l2"
    seed: int = 0
    clip_floor: float = EPS
    early_stop: tuple[float, int] | None = None

    def __post_init__(self):
        if int(self.topic_rank) < 1:
            raise ValueError("topic_rank must be >= 1")
        if int(self.outer_iterations) < 1:
            raise ValueError("outer_iterations must be >= 1")
        if int(self.strata_sweeps) < 1:
            raise ValueError("strata_sweeps must be >= 1")
        if not self.reg_strength >= 0:
            raise ValueError("reg_strength must be >= 0")
        if not self.clip_floor > 0:
            raise ValueError("clip_floor must be > 0")
        if self.normalization not in ("l2", "l1"):
            raise ValueError(f"unknown normalization {self.normalization!r}")
        if self.regularization not in (None, "none", "tv"):
            raise ValueError(f"unknown regularization {self.regularization!r}")
        if self.regularization == "none" and self.reg_strength > 0:
            raise ValueError("reg_strength > 0 needs regularization 'tv'")
        ranks = (
            [self.strata_ranks]
            if np.isscalar(self.strata_ranks)
            else list(self.strata_ranks)
        )
        if any(int(r) < 0 for r in ranks):
            raise ValueError("strata ranks must be >= 0")
        if self.regularized_modes is not None:
            self.regularized_modes = tuple(int(m) for m in self.regularized_modes)
            if any(m < 2 for m in self.regularized_modes):
                raise ValueError("regularized modes are numbered from 2")
            if self.reg_strength > 0 and not self.regularized_modes:
                raise ValueError("reg_strength > 0 with no regularized modes")
        if self.early_stop is not None:
            tol, patience = self.early_stop
            if tol < 0 or int(patience) < 1:
                raise ValueError("early_stop needs rel_tol >= 0 and patience >= 1")

    @property
    def regularized(self) -> bool:
        if self.regularization is None:
            return self.reg_strength > 0
        return self.regularization == "tv"

    def ranks_for(self, n_strata: int) -> tuple[int, ...]:
        if np.isscalar(self.strata_ranks):
            return (int(self.strata_ranks),) * n_strata
        ranks = tuple(int(r) for r in self.strata_ranks)
        if len(ranks) != n_strata:
            raise ValueError(
                f"{len(ranks)} strata ranks given for {n_strata} strata"
            )
        return ranks

    def modes_to_regularize(self, ndim: int) -> tuple[int, ...]:
        if self.regularized_modes is None:
            return tuple(range(2, ndim + 1))
        bad = [m for m in self.regularized_modes if m > ndim]
        if bad:
            raise ValueError(f"regularized modes {bad} exceed the mode count {ndim}")
        return tuple(self.regularized_modes)


@dataclass
class ModelState:
    strata_factors: list[list[np.ndarray]]
    codings: list[np.ndarray]
    topics: list[np.ndarray]
    meta: dict = field(default_factory=dict, compare=False)

    @property
    def n_strata(self) -> int:
        return len(self.codings)

    @property
    def topic_rank(self) -> int:
        return self.topics[0].shape[1]

    @property
    def strata_ranks(self) -> tuple[int, ...]:
        return tuple(fs[0].shape[1] for fs in self.strata_factors)

    @property
    def trailing_shape(self) -> tuple[int, ...]:
        return tuple(h.shape[0] for h in self.topics)

    @property
    def ndim(self) -> int:
        return len(self.topics) + 1

    def copy(self) -> "ModelState":
        return ModelState(
            [[f.copy() for f in fs] for fs in self.strata_factors],
            [w.copy() for w in self.codings],
            [h.copy() for h in self.topics],
            dict(self.meta),
        )

    def arrays(self):
        """Yield ``(role, stratum, mode, matrix)`` for every factor matrix."""
        for i, fs in enumerate(self.strata_factors):
            for t, f in enumerate(fs):
                yield "strata", i, t + 2, f
        for i, w in enumerate(self.codings):
            yield "coding", i, 1, w
        for t, h in enumerate(self.topics):
            yield "topic", None, t + 2, h

    def check_against(self, dataset: StratifiedDataset):
        if self.n_strata != len(dataset):
            raise ValueError(
                f"model has {self.n_strata} strata, dataset has {len(dataset)}"
            )
        if self.trailing_shape != dataset.trailing_shape:
            raise ValueError(
                f"model trailing dims {self.trailing_shape} do not match "
                f"dataset {dataset.trailing_shape}"
            )
        for i, (w, a) in enumerate(zip(self.codings, dataset)):
            if w.shape[0] != a.shape[0]:
                raise ValueError(
                    f"stratum {i}: coding length {w.shape[0]} vs {a.shape[0]} samples"
                )


def init_model(dataset: StratifiedDataset, config: FitConfig) -> ModelState:
    """Draw every factor entry i.i.d. uniform on [0, 1].

    Each factor matrix comes from its own keyed substream of ``config.seed``.
    """
    s = len(dataset)
    r = int(config.topic_rank)
    ranks = config.ranks_for(s)
    dims = dataset.trailing_shape
    seed = config.seed
    strata = [
        [keyed_rng(seed, _STRATA, i, t).uniform(0.0, 1.0, (d, ranks[i])) for t, d in enumerate(dims)]
        for i in range(s)
    ]
    codings = [
        keyed_rng(seed, _CODING, i).uniform(0.0, 1.0, (d1, r))
        for i, d1 in enumerate(dataset.leading_dims)
    ]
    topics = [keyed_rng(seed, _TOPIC, t).uniform(0.0, 1.0, (d, r)) for t, d in enumerate(dims)]
    return ModelState(strata, codings, topics)


def _check_stratum(model: ModelState, i: int):
    if not 0 <= i < model.n_strata:
        raise IndexError(f"stratum index {i} out of range for {model.n_strata} strata")


def strata_tensor(model: ModelState, i: int) -> np.ndarray:
    """Stratum ``i``'s feature tensor over modes 2..n (zeros when r'(i) = 0)."""
    _check_stratum(model, i)
    return cp_to_tensor(model.strata_factors[i])


def topic_term(model: ModelState, i: int) -> np.ndarray:
    _check_stratum(model, i)
    return cp_to_tensor([model.codings[i]] + list(model.topics))


def reconstruct(model: ModelState, i: int) -> np.ndarray:
    """Approximation of stratum ``i``: the strata tensor broadcast along the
    sample mode plus the coded topic sum."""
    return topic_term(model, i) + strata_tensor(model, i)[None]


def stratum_losses(model: ModelState, dataset: StratifiedDataset) -> list[float]:
    model.check_against(dataset)
    return [
        sq_frobenius_distance(a, reconstruct(model, i)) for i, a in enumerate(dataset)
    ]


def objective(model: ModelState, dataset: StratifiedDataset) -> float:
    """Sum over strata of the squared Frobenius residual."""
    return float(sum(stratum_losses(model, dataset)))


def param_count(leading_dims: Sequence[int], trailing_dims: Sequence[int], topic_rank: int,
                strata_ranks: int | Sequence[int]) -> int:
    """Number of learnable scalars of a model with the given shape."""
    leading_dims = [int(d) for d in leading_dims]
    trailing = sum(int(d) for d in trailing_dims)
    if np.isscalar(strata_ranks):
        strata_ranks = [int(strata_ranks)] * len(leading_dims)
    if len(strata_ranks) != len(leading_dims):
        raise ValueError("one strata rank per stratum expected")
    if topic_rank < 1:
        raise ValueError("topic_rank must be >= 1")
    codings = topic_rank * sum(leading_dims)
    strata = sum(int(rp) for rp in strata_ranks) * trailing
    topics = topic_rank * trailing
    return codings + strata + topics
