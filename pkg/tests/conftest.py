"""Shared fixtures; caps BLAS threads before numpy loads so CPU-time
measurements are honest and GEMM results are reproducible."""

import os

for _var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
    os.environ.setdefault(_var, "1")

import numpy as np  # noqa: E402
import pytest  # noqa: E402

from ocuseg.config import RunConfig  # noqa: E402
from ocuseg.rng import Rng  # noqa: E402


@pytest.fixture
def tiny_config() -> RunConfig:
    """Miniature geometry for finite-difference tests."""
    return RunConfig(seed=3, crop_h=16, crop_w=16, d=4, widths=[4, 8], head_width=4)


@pytest.fixture
def rng() -> Rng:
    return Rng(0xC0FFEE)


@pytest.fixture
def tiny_batch(rng):
    images = rng.uniform_array(2 * 16 * 16).reshape(2, 16, 16)
    labels = (rng.u64_array(2 * 16 * 16) % 4).astype(np.int64).reshape(2, 16, 16)
    return images, labels
