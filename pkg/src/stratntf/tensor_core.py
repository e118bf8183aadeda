"""Dense tensor kernels.

Tensors are plain ``numpy.ndarray`` objects of dtype float64 in C (row-major)
order. Every update rule of the factorization reduces to one of the
contractions below: a weighted sum of a tensor over all axes but one, with
weights given by products of factor entries (MTTKRP).

Axes here are 0-based numpy axes; the solver-facing modules translate from
the 1-based mode numbering used in configs.
"""

from __future__ import annotations

from typing import Mapping, Sequence

import numpy as np


def as_tensor(x) -> np.ndarray:
    """Return ``x`` as a C-contiguous float64 array."""
    return np.ascontiguousarray(x, dtype=np.float64)


def _as_vector(f) -> np.ndarray:
    v = np.asarray(f, dtype=np.float64)
    if v.ndim != 1:
        raise ValueError(f"expected a vector, got array of shape {v.shape}")
    if v.size == 0:
        raise ValueError("empty factor vector")
    return v


def outer_product(factors: Sequence) -> np.ndarray:
    """Outer product of a sequence of vectors.

    The entry at ``(i1, ..., im)`` is ``f1[i1] * ... * fm[im]``.
    """
    if len(factors) == 0:
        raise ValueError("outer_product needs at least one factor")
    vecs = [_as_vector(f) for f in factors]
    out = vecs[0]
    for v in vecs[1:]:
        out = np.multiply.outer(out, v)
    return as_tensor(out)


def rank_one_sum(components: Sequence[Sequence]) -> np.ndarray:
    """Sum of outer products, one per tuple of factor vectors."""
    if len(components) == 0:
        raise ValueError("rank_one_sum needs at least one component")
    total = None
    for comp in components:
        term = outer_product(comp)
        if total is None:
            total = term
        elif term.shape != total.shape:
            raise ValueError(
                f"component shape {term.shape} does not match {total.shape}"
            )
        else:
            total = total + term
    return total


def khatri_rao(matrices: Sequence[np.ndarray]) -> np.ndarray:
    """Column-wise Kronecker product in row-major order.

    For matrices of shapes ``(d_a, R), (d_b, R), ...`` the result has shape
    ``(d_a * d_b * ..., R)`` and row ``ia * d_b + ib`` (etc.) holds the
    product of the corresponding rows. This matches ``reshape`` of a
    C-ordered tensor over the same axes.
    """
    if len(matrices) == 0:
        raise ValueError("khatri_rao needs at least one matrix")
    rank = matrices[0].shape[1]
    out = matrices[0]
    for m in matrices[1:]:
        if m.shape[1] != rank:
            raise ValueError("khatri_rao matrices must share their column count")
        out = (out[:, None, :] * m[None, :, :]).reshape(-1, rank)
    return out


def cp_to_tensor(factors: Sequence[np.ndarray]) -> np.ndarray:
    """Dense tensor ``sum_r outer(U1[:, r], U2[:, r], ...)`` of factor matrices."""
    shape = tuple(f.shape[0] for f in factors)
    rank = factors[0].shape[1]
    if rank == 0:
        return np.zeros(shape)
    if len(factors) == 1:
        return as_tensor(factors[0].sum(axis=1))
    flat = factors[0] @ khatri_rao(list(factors[1:])).T
    return as_tensor(flat.reshape(shape))


def mttkrp(x: np.ndarray, factors: Mapping[int, np.ndarray], axis: int,
           rank: int | None = None) -> np.ndarray:
    """Matricized tensor times Khatri-Rao product.

    Parameters
    ----------
    x : ndarray
        Dense tensor.
    factors : mapping axis -> (x.shape[axis], R) matrix
        Weights for the axes to contract. Axes that are neither ``axis`` nor
        present in ``factors`` are summed with weight 1.
    axis : int
        Axis left uncontracted.
    rank : int, optional
        Column count of the result; only needed when ``factors`` is empty.

    Returns
    -------
    ndarray of shape (x.shape[axis], R)
        Column ``r`` holds, for each index ``k`` of ``axis``, the sum over all
        other indices of ``x`` times the product of the ``r``-th column
        entries of the supplied factors.
    """
    x = np.asarray(x, dtype=np.float64)
    if not 0 <= axis < x.ndim:
        raise ValueError(f"axis {axis} out of range for a {x.ndim}-mode tensor")
    if axis in factors:
        raise ValueError("the target axis must not carry a factor")
    for ax, f in factors.items():
        if not 0 <= ax < x.ndim:
            raise ValueError(f"factor axis {ax} out of range for a {x.ndim}-mode tensor")
        if f.ndim != 2 or f.shape[0] != x.shape[ax]:
            raise ValueError(
                f"factor for axis {ax} has shape {f.shape}, expected ({x.shape[ax]}, R)"
            )
        if rank is None:
            rank = f.shape[1]
        elif f.shape[1] != rank:
            raise ValueError("all factors must share the same rank")

    ndim = x.ndim
    summed = tuple(ax for ax in range(ndim) if ax != axis and ax not in factors)
    if summed:
        x = x.sum(axis=summed)
    kept = [ax for ax in range(ndim) if ax not in summed]
    new_axis = kept.index(axis)
    weighted = [factors[ax] for ax in kept if ax != axis]

    unfolded = np.moveaxis(x, new_axis, 0).reshape(x.shape[new_axis], -1)
    if not weighted:
        # nothing left to weight: every rank gets the plain sums
        return np.repeat(unfolded.sum(axis=1, keepdims=True), 1 if rank is None else rank, axis=1)
    return unfolded @ khatri_rao(weighted)


def sq_frobenius_distance(a, b) -> float:
    """Sum of squared entrywise differences."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")
    diff = (a - b).ravel()
    return float(diff @ diff)


def contract_leaving_mode(
    x,
    factors: Mapping[int, Sequence[float]],
    target_mode: int,
    sum_first_mode: bool = False,
) -> np.ndarray:
    """Weighted sum of ``x`` over every axis except ``target_mode``.

    ``factors`` maps each remaining axis to a weight vector. With
    ``sum_first_mode`` set, axis 0 may be left without a factor and is then
    summed with unit weight.
    """
    x = np.asarray(x, dtype=np.float64)
    if not 0 <= target_mode < x.ndim:
        raise ValueError(f"target_mode {target_mode} out of range for {x.ndim} modes")
    expected = {ax for ax in range(x.ndim) if ax != target_mode}
    if sum_first_mode and target_mode != 0:
        expected.discard(0)
    given = set(factors)
    missing = expected - given
    if missing:
        raise ValueError(f"missing factors for axes {sorted(missing)}")
    extra = given - expected - ({0} if sum_first_mode else set())
    if extra:
        raise ValueError(f"unexpected factors for axes {sorted(extra)}")
    mats = {}
    for ax, f in factors.items():
        v = _as_vector(f)
        if v.shape[0] != x.shape[ax]:
            raise ValueError(
                f"factor for axis {ax} has length {v.shape[0]}, expected {x.shape[ax]}"
            )
        mats[ax] = v[:, None]
    return mttkrp(x, mats, target_mode)[:, 0]


def contract_leaving_first(x, factors: Mapping[int, Sequence[float]]) -> np.ndarray:
    """Weighted sum of ``x`` over axes ``1..n-1``, one weight vector per axis."""
    return contract_leaving_mode(x, factors, 0)
