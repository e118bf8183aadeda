import numpy as np
import pytest

from stratntf import mu_updates as mu
from stratntf.model import EPS, StratifiedDataset, objective, reconstruct
from stratntf.reference import (
    naive_reconstruct, naive_update_codings, naive_update_strata, naive_update_topics,
)

from conftest import random_instance, random_model


def exact_dataset(model):
    return StratifiedDataset([naive_reconstruct(model, i) for i in range(model.n_strata)])


def test_fixed_point_when_exact(rng):
    _, m = random_instance(rng, low=0.1)
    ds = exact_dataset(m)
    for i in range(m.n_strata):
        for mode in range(2, m.ndim + 1):
            np.testing.assert_allclose(mu.update_strata_mode(m, ds, i, mode),
                                       m.strata_factors[i][mode - 2], rtol=1e-12)
        np.testing.assert_allclose(mu.update_codings(m, ds, i), m.codings[i], rtol=1e-12)
    for mode in range(2, m.ndim + 1):
        np.testing.assert_allclose(mu.update_topics_mode(m, ds, mode), m.topics[mode - 2], rtol=1e-12)


def test_zero_data_clips_numerator(rng):
    m = random_model(rng, [2], (3, 2), 1, [1], low=0.2)
    ds = StratifiedDataset([np.zeros((2, 3, 2))])
    new = mu.update_strata_mode(m, ds, 0, 2)
    numer, denom = mu.strata_terms(m, ds, 0, 2)
    np.testing.assert_allclose(new, m.strata_factors[0][0] * EPS / denom, rtol=1e-14)
    assert np.all(new < m.strata_factors[0][0])


def test_strata_rank_zero_is_noop(rng):
    ds, m = random_instance(rng, max_rp=0)
    out = mu.update_strata_mode(m, ds, 0, 2)
    assert out.shape == (ds.trailing_shape[0], 0)


def test_mode_out_of_range(rng):
    ds, m = random_instance(rng)
    with pytest.raises(ValueError):
        mu.update_strata_mode(m, ds, 0, m.ndim + 1)
    with pytest.raises(ValueError):
        mu.update_topics_mode(m, ds, 1)


def test_codings_with_unit_topics(rng):
    m = random_model(rng, [3], (2, 3), 1, [1])
    for h in m.topics:
        h[:] = 1
    ds = StratifiedDataset([rng.random((3, 2, 3))])
    expected = m.codings[0] * (ds[0].sum(axis=(1, 2)) / reconstruct(m, 0).sum(axis=(1, 2)))[:, None]
    np.testing.assert_allclose(mu.update_codings(m, ds, 0), expected, rtol=1e-13)


def test_topics_reduce_to_matrix_nmf(rng):
    """Single stratum, matrix data, no strata features: H <- H * (W^T A)/(W^T W H)."""
    m = random_model(rng, [5], (4,), 2, [0])
    A = rng.random((5, 4))
    ds = StratifiedDataset([A])
    W, Ht = m.codings[0], m.topics[0].T
    expected = Ht * (W.T @ A) / (W.T @ W @ Ht)
    np.testing.assert_allclose(mu.update_topics_mode(m, ds, 2), expected.T, rtol=1e-12)


def test_updates_match_literal_loops(rng):
    for _ in range(10):
        ds, m = random_instance(rng)
        for i in range(m.n_strata):
            for mode in range(2, m.ndim + 1):
                np.testing.assert_allclose(mu.update_strata_mode(m, ds, i, mode),
                                           naive_update_strata(m, ds, i, mode), rtol=1e-12)
            np.testing.assert_allclose(mu.update_codings(m, ds, i),
                                       naive_update_codings(m, ds, i), rtol=1e-12)
        for mode in range(2, m.ndim + 1):
            np.testing.assert_allclose(mu.update_topics_mode(m, ds, mode),
                                       naive_update_topics(m, ds, mode), rtol=1e-12)


def test_updates_preserve_nonnegativity(rng):
    ds, m = random_instance(rng)
    ds = StratifiedDataset([np.where(a > 0.5, a, 0.0) for a in ds])
    outs = [mu.update_codings(m, ds, i) for i in range(m.n_strata)]
    outs += [mu.update_topics_mode(m, ds, mode) for mode in range(2, m.ndim + 1)]
    outs += [mu.update_strata_mode(m, ds, i, 2) for i in range(m.n_strata)]
    assert all(np.all(o >= 0) for o in outs)


def test_single_update_does_not_increase_objective(rng):
    for _ in range(5):
        ds, m = random_instance(rng, low=0.05)
        before = objective(m, ds)
        m.topics[0] = mu.update_topics_mode(m, ds, 2)
        assert objective(m, ds) <= before * (1 + 1e-12)
