"""Outer multiplicative-update loop."""

from __future__ import annotations

import logging
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from . import mu_updates
from .model import FitConfig, ModelState, StratifiedDataset, init_model, objective
from .tv_reg import normalize_topics_mode, update_topics_mode_regularized

logger = logging.getLogger(__name__)

MONOTONE_RTOL = 1e-10


class NonFiniteObjectiveError(FloatingPointError):
    """Raised when the objective stops being finite. ``model`` holds the state
    at the time of failure so callers can dump it."""

    def __init__(self, message, model, iteration):
        super().__init__(message)
        self.model = model
        self.iteration = iteration


@dataclass
class LossTrace:
    iterations: list[int] = field(default_factory=list)
    objectives: list[float] = field(default_factory=list)
    seconds: list[float] = field(default_factory=list)

    def append(self, iteration: int, value: float, elapsed: float):
        if self.iterations and iteration <= self.iterations[-1]:
            raise ValueError("trace iterations must increase")
        self.iterations.append(int(iteration))
        self.objectives.append(float(value))
        self.seconds.append(float(elapsed))

    def __len__(self):
        return len(self.iterations)

    def __iter__(self):
        return iter(zip(self.iterations, self.objectives, self.seconds))


@dataclass
class FitResult:
    model: ModelState
    trace: LossTrace
    config: FitConfig
    reason: str  # "max-iterations" | "tolerance" | "user-abort"

    @property
    def final_objective(self) -> float:
        return self.trace.objectives[-1]


def early_stop_check(trace: LossTrace | list, rel_tol: float, patience: int) -> bool:
    """True when the objective improved by less than ``rel_tol`` (relative)
    over the last ``patience`` iterations."""
    if rel_tol < 0:
        raise ValueError("rel_tol must be >= 0")
    values = trace.objectives if isinstance(trace, LossTrace) else list(trace)
    if len(values) <= patience:
        return False
    old, new = values[-1 - patience], values[-1]
    if old == 0:
        return new == 0 and rel_tol > 0
    return (old - new) / abs(old) < rel_tol


def relative_loss(result: FitResult | ModelState, dataset: StratifiedDataset) -> float:
    """Final objective divided by the squared norm of the data."""
    norm = dataset.sq_norm()
    if norm == 0:
        raise ValueError("relative loss of an all-zero dataset")
    if isinstance(result, FitResult):
        value = result.final_objective
    else:
        value = objective(result, dataset)
    return value / norm


def _serial_map(fn, items):
    return list(map(fn, items))


def fit(dataset: StratifiedDataset, config: FitConfig,
        progress: Callable[[int, float, float], object] | None = None,
        model: ModelState | None = None, threads: int | None = 1,
        on_phase: Callable[..., None] | None = None) -> FitResult:
    """Fit a Stratified-NTF model with multiplicative updates.

    Each outer iteration runs ``strata_sweeps`` sweeps over modes 2..n of the
    strata-vector update, then the coding update, then one topic update per
    mode (TV-regularized and followed by normalization when
    ``config.regularized``). The objective is recorded before the first
    iteration and after each one.

    Parameters
    ----------
    progress : callable, optional
        Called as ``progress(iteration, objective, elapsed_seconds)`` after
        every outer iteration. Returning ``False`` stops the fit with reason
        ``"user-abort"``.
    model : ModelState, optional
        Starting point; drawn with :func:`init_model` when omitted. It is
        copied, never modified.
    threads : int, optional
        Worker threads for per-stratum work. ``None`` uses all cores.
        Results do not depend on this value.
    on_phase : callable, optional
        Instrumentation hook called as ``on_phase(name, *details)`` before
        each update phase.
    """
    if model is None:
        model = init_model(dataset, config)
    else:
        model = model.copy()
    model.check_against(dataset)
    s = len(dataset)
    ranks = config.ranks_for(s)
    if tuple(ranks) != model.strata_ranks:
        raise ValueError(f"model strata ranks {model.strata_ranks} differ from config {ranks}")
    if model.topic_rank != config.topic_rank:
        raise ValueError("model topic rank differs from config")
    modes = list(range(2, dataset.ndim + 1))
    reg_modes = set(config.modes_to_regularize(dataset.ndim)) if config.regularized else set()
    if config.reg_strength > 0 and not reg_modes:
        raise ValueError("reg_strength > 0 with no regularized modes")
    floor = config.clip_floor
    hook = on_phase or (lambda *args: None)

    pool = None
    map_fn = _serial_map
    if threads is None or threads > 1:
        pool = ThreadPoolExecutor(max_workers=threads)
        map_fn = pool.map

    trace = LossTrace()
    start = time.perf_counter()
    previous = objective(model, dataset)
    trace.append(0, previous, 0.0)
    reason = "max-iterations"
    try:
        for it in range(1, config.outer_iterations + 1):
            for sweep in range(config.strata_sweeps):
                for mode in modes:
                    hook("strata", sweep, mode)
                    new = list(map_fn(
                        lambda i: mu_updates.update_strata_mode(model, dataset, i, mode, floor),
                        range(s),
                    ))
                    for i in range(s):
                        model.strata_factors[i][mode - 2] = new[i]
            hook("codings")
            new = list(map_fn(lambda i: mu_updates.update_codings(model, dataset, i, floor), range(s)))
            model.codings = new
            for mode in modes:
                if config.regularized:
                    hook("topics-regularized", mode)
                    lam = config.reg_strength if mode in reg_modes else 0.0
                    model.topics[mode - 2] = update_topics_mode_regularized(
                        model, dataset, mode, lam, floor, map_fn
                    )
                    hook("normalize", mode)
                    normalize_topics_mode(model, mode, config.normalization, floor)
                else:
                    hook("topics", mode)
                    model.topics[mode - 2] = mu_updates.update_topics_mode(
                        model, dataset, mode, floor, map_fn
                    )

            value = objective(model, dataset)
            elapsed = time.perf_counter() - start
            if not math.isfinite(value):
                raise NonFiniteObjectiveError(
                    f"objective became {value} at iteration {it}", model, it
                )
            if value > previous * (1 + MONOTONE_RTOL) + 1e-300:
                logger.warning(
                    "objective increased at iteration %d: %.17g -> %.17g", it, previous, value
                )
            previous = value
            trace.append(it, value, elapsed)
            if progress is not None and progress(it, value, elapsed) is False:
                reason = "user-abort"
                break
            if config.early_stop is not None and early_stop_check(trace, *config.early_stop):
                reason = "tolerance"
                break
    finally:
        if pool is not None:
            pool.shutdown()

    model.meta.update(normalization=config.normalization if config.regularized else "none")
    return FitResult(model, trace, config, reason)
