import numpy as np
import pytest

from stratntf.model import ModelState, StratifiedDataset
from stratntf.synth import (
    PlantedSpec, apply_block_watermark, generate_planted, rescale_to_unit, salt_and_pepper,
)

ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


def random_model(rng, leading, dims, r, rps, low=0.0):
    strata = [[rng.uniform(low, 1.0, (d, rp)) for d in dims] for rp in rps]
    codings = [rng.uniform(low, 1.0, (d1, r)) for d1 in leading]
    topics = [rng.uniform(low, 1.0, (d, r)) for d in dims]
    return ModelState(strata, codings, topics)


def random_instance(rng, max_leading=3, max_dims=(4, 3, 3), max_strata=3, max_r=3,
                    max_rp=2, low=0.0):
    """Random dataset and model with shapes bounded by the arguments."""
    n_trailing = int(rng.integers(1, len(max_dims) + 1))
    dims = tuple(int(rng.integers(2, m + 1)) for m in max_dims[:n_trailing])
    s = int(rng.integers(1, max_strata + 1))
    leading = [int(rng.integers(1, max_leading + 1)) for _ in range(s)]
    r = int(rng.integers(1, max_r + 1))
    rps = [int(rng.integers(0, max_rp + 1)) for _ in range(s)]
    dataset = StratifiedDataset([rng.uniform(low, 1.0, (d1,) + dims) for d1 in leading])
    model = random_model(rng, leading, dims, r, rps, low)
    return dataset, model


def watermark_fixture(n_images=200, side=28, seed=7, p=0.15):
    """Two strata of noisy watermarked images with one shared "digit".

    Stratum 0 uses planted topics 0 and 1 and a block near the top; stratum 1
    uses topics 1 and 2 and a block near the bottom. Salt-and-pepper noise
    with probability ``p`` is applied last.
    """
    spec = PlantedSpec(
        (n_images, n_images), (side, side), topic_rank=3, strata_ranks=0,
        distribution="sparse", density=0.4, topic_support=[(0, 1), (1, 2)], seed=seed,
    )
    data, _ = generate_planted(spec)
    data, _ = rescale_to_unit(data)
    strata = []
    for i, a in enumerate(data):
        rows = (1, 6) if i == 0 else (side - 6, side - 1)
        a = apply_block_watermark(a, [rows, (4, side - 4)], 1.0)
        strata.append(salt_and_pepper(a, p, seed, stream=i))
    return StratifiedDataset(strata)


@pytest.fixture
def rng():
    return np.random.default_rng(20240601)
