import numpy as np
import pytest

from stratntf.model import objective
from stratntf.mu_updates import update_codings, update_strata_mode, update_topics_mode
from stratntf.synth import (
    PlantedSpec, apply_block_watermark, generate_planted, rescale_to_unit, salt_and_pepper,
)


def test_planted_exact_and_deterministic():
    spec = PlantedSpec((4, 3), (5, 2), topic_rank=2, strata_ranks=(1, 0), seed=11)
    ds, truth = generate_planted(spec)
    assert objective(truth, ds) == 0
    again, _ = generate_planted(spec)
    for a, b in zip(ds, again):
        assert a.tobytes() == b.tobytes()
    for i in range(2):
        np.testing.assert_allclose(update_codings(truth, ds, i), truth.codings[i], rtol=1e-12)
        np.testing.assert_allclose(update_strata_mode(truth, ds, i, 2),
                                   truth.strata_factors[i][0], rtol=1e-12)
    np.testing.assert_allclose(update_topics_mode(truth, ds, 3), truth.topics[1], rtol=1e-12)


def test_planted_noise_bound():
    spec = PlantedSpec((4, 3), (5, 2), topic_rank=2, noise=0.01, seed=1)
    ds, truth = generate_planted(spec)
    entries = sum(a.size for a in ds)
    assert 0 < objective(truth, ds) <= 0.01 ** 2 * entries


def test_sparse_and_support():
    spec = PlantedSpec((30, 30), (8, 8), topic_rank=3, strata_ranks=0, distribution="sparse",
                       density=0.3, topic_support=[(0,), (1, 2)], seed=2)
    _, truth = generate_planted(spec)
    assert not truth.codings[0][:, 1:].any()
    assert not truth.codings[1][:, 0].any()
    frac = np.mean(truth.topics[0] == 0)
    assert 0.5 < frac < 0.9


@pytest.mark.parametrize("kwargs", [
    dict(density=0), dict(noise=-1), dict(distribution="gauss"), dict(topic_support=[(5,), (0,)]),
])
def test_planted_spec_rejects(kwargs):
    with pytest.raises(ValueError):
        PlantedSpec((2, 2), (3,), topic_rank=2, **kwargs)


def test_rescale_keeps_truth_consistent():
    ds, truth = generate_planted(PlantedSpec((3, 3), (4, 4), topic_rank=2, strata_ranks=1, seed=5))
    scaled, truth2 = rescale_to_unit(ds, truth)
    assert max(a.max() for a in scaled) == pytest.approx(1.0)
    assert objective(truth2, scaled) < 1e-25


def test_salt_and_pepper():
    x = np.full((100, 1000), 0.5)
    np.testing.assert_array_equal(salt_and_pepper(x, 0.0, 1), x)
    noisy = salt_and_pepper(x, 0.15, 1)
    frac = np.mean(noisy != 0.5)
    assert 0.29 <= frac <= 0.31
    assert set(np.unique(noisy)) == {0.0, 0.5, 1.0}
    np.testing.assert_array_equal(noisy, salt_and_pepper(x, 0.15, 1))
    assert np.all(salt_and_pepper(x, 0.5, 1) != 0.5)
    with pytest.raises(ValueError):
        salt_and_pepper(x, 0.6, 1)


def test_block_watermark():
    x = np.zeros((2, 8, 6))
    np.testing.assert_array_equal(apply_block_watermark(x, [(0, 0), (0, 0)], 1.0), x)
    np.testing.assert_array_equal(apply_block_watermark(x, [(0, 8), (0, 6)], 1.0), np.ones_like(x))
    top = apply_block_watermark(np.zeros((8, 6)), [(0, 3), (0, 6)], 0.7)
    assert np.count_nonzero(top == 0.7) == 3 * 6
    y = apply_block_watermark(np.full((4, 4), 0.9), [(0, 2), (0, 2)], 0.5)
    assert np.all(y == 0.9)
    with pytest.raises(ValueError):
        apply_block_watermark(x, [(0, 9), (0, 6)], 1.0)
