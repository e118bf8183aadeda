import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from stratntf import mu_updates as mu
from stratntf.model import StratifiedDataset, objective, reconstruct
from stratntf.reference import naive_update_topics
from stratntf.tv_reg import (
    normalize_topic, normalize_topics_mode, tv_seminorm, tv_split, tv_subgradient,
    update_topics_mode_regularized,
)

from conftest import random_instance, random_model


def test_seminorm_examples():
    assert tv_seminorm([0.3] * 5) == 0
    assert tv_seminorm([0, 1, 0, 1]) == 3
    assert tv_seminorm([0.5, 1.0, 2.5, 4.0]) == pytest.approx(3.5)
    with pytest.raises(ValueError):
        tv_seminorm([])


def test_subgradient_examples():
    np.testing.assert_array_equal(tv_subgradient([2.0, 2.0, 2.0]), [0, 0, 0])
    np.testing.assert_array_equal(tv_subgradient([0.0, 1.0, 2.0, 5.0]), [-1, 0, 0, 1])
    np.testing.assert_array_equal(tv_subgradient([0.0, 2.0, 1.0]), [-1, 2, -1])
    with pytest.raises(ValueError):
        tv_subgradient([1.0])


def central_diff(f, x, step):
    g = np.zeros_like(x)
    for k in range(x.size):
        e = np.zeros_like(x)
        e[k] = step
        g[k] = (f(x + e) - f(x - e)) / (2 * step)
    return g


@settings(max_examples=100, deadline=None)
@given(st.lists(st.floats(0, 10), min_size=2, max_size=12))
def test_subgradient_matches_finite_differences(values):
    h = np.array(values)
    if np.min(np.abs(np.diff(h))) <= 1e-3:
        return
    fd = central_diff(tv_seminorm, h, 1e-7)
    np.testing.assert_allclose(tv_subgradient(h), fd, atol=1e-4)


def test_split_examples(rng):
    s = tv_split([-1.0, 2.0, -1.0])
    np.testing.assert_array_equal(s.positive_part, [0, 2, 0])
    np.testing.assert_array_equal(s.negative_part, [1, 0, 1])
    z = tv_split(np.zeros(3))
    assert not z.positive_part.any() and not z.negative_part.any()
    g = rng.normal(size=20)
    s = tv_split(g)
    np.testing.assert_array_equal(s.positive_part - s.negative_part, g)
    assert not np.any((s.positive_part > 0) & (s.negative_part > 0))


def test_lambda_zero_is_bit_identical(rng):
    for _ in range(5):
        ds, m = random_instance(rng)
        for mode in range(2, m.ndim + 1):
            a = update_topics_mode_regularized(m, ds, mode, 0.0)
            b = mu.update_topics_mode(m, ds, mode)
            assert a.tobytes() == b.tobytes()


def test_double_fixed_point(rng):
    m = random_model(rng, [3, 2], (4, 3), 2, [1, 1], low=0.1)
    m.topics[0][:] = 0.5
    ds = StratifiedDataset([reconstruct(m, i) for i in range(2)])
    np.testing.assert_allclose(update_topics_mode_regularized(m, ds, 2, 5.0), m.topics[0], rtol=1e-12)


def test_regularized_matches_literal_loops(rng):
    for _ in range(5):
        ds, m = random_instance(rng)
        for mode in range(2, m.ndim + 1):
            np.testing.assert_allclose(
                update_topics_mode_regularized(m, ds, mode, 5.0),
                naive_update_topics(m, ds, mode, reg_strength=5.0), rtol=1e-12,
            )


def test_regularization_pressure(rng):
    m = random_model(rng, [3], (6, 2), 1, [0], low=0.1)
    m.codings[0][:] = 0
    m.topics[0][:, 0] = [0.1, 0.9, 0.2, 0.8, 0.3, 0.7]
    ds = StratifiedDataset([np.zeros((3, 6, 2))])
    multiplier = update_topics_mode_regularized(m, ds, 2, 5.0) / m.topics[0]
    split = tv_split(tv_subgradient(m.topics[0][:, 0]))
    assert np.all(multiplier[split.positive_part > 0, 0] < 1)
    assert np.all(multiplier[split.negative_part > 0, 0] > 1)


def test_normalize_examples():
    unit, scale = normalize_topic([3.0, 4.0])
    np.testing.assert_allclose(unit, [0.6, 0.8])
    assert scale == 5
    unit, scale = normalize_topic([0.6, 0.8])
    np.testing.assert_allclose(unit, [0.6, 0.8], rtol=1e-15)
    assert scale == pytest.approx(1, rel=1e-15)
    unit, scale = normalize_topic([0.0, 0.0, 0.0, 0.0])
    np.testing.assert_allclose(unit, [0.5] * 4)
    unit, scale = normalize_topic([1.0, 3.0], norm="l1")
    np.testing.assert_allclose(unit, [0.25, 0.75])


def test_normalization_preserves_reconstruction(rng):
    for norm in ("l2", "l1"):
        ds, m = random_instance(rng)
        before = [reconstruct(m, i) for i in range(m.n_strata)]
        obj = objective(m, ds)
        for mode in range(2, m.ndim + 1):
            normalize_topics_mode(m, mode, norm)
        for i in range(m.n_strata):
            np.testing.assert_allclose(reconstruct(m, i), before[i], rtol=1e-12)
        assert objective(m, ds) == pytest.approx(obj, rel=1e-12)


def test_regularized_multiplier_descends_half_data_plus_tv(rng):
    """The regularized update balances the halved data term against lambda*TV."""
    lam, step, checked = 5.0, 1e-6, 0
    for _ in range(10):
        ds, m = random_instance(rng, low=0.1)
        for t, h in enumerate(m.topics):
            if np.any(np.abs(np.diff(h, axis=0)) < 1e-4):
                continue
            multiplier = update_topics_mode_regularized(m, ds, t + 2, lam) / h

            def value():
                return 0.5 * objective(m, ds) + lam * sum(tv_seminorm(c) for c in h.T)

            for idx in np.ndindex(h.shape):
                orig = h[idx]
                h[idx] = orig + step
                up = value()
                h[idx] = orig - step
                down = value()
                h[idx] = orig
                grad = (up - down) / (2 * step)
                if abs(grad) > 1e-4:
                    checked += 1
                    assert np.sign(multiplier[idx] - 1) == np.sign(-grad)
    assert checked > 0
