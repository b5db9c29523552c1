import os
import sys

import numpy as np
import pytest

sys.path.insert(0, os.path.join(os.path.dirname(__file__), "..", "src"))

from latency.model import TwoTermModel  # noqa: E402
from prediction.predictor_model import ArchitectureConfig, Detector  # noqa: E402
from preprocessing.scenes import generate_scenes  # noqa: E402

SMALL_ARCH = ArchitectureConfig(channels=(4, 8, 8), kernel_size=3)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def tiny_dataset():
    """Eight 64x64 scenes with 1-3 objects."""
    return generate_scenes(seed=7, n_images=8, min_objects=1, max_objects=3)


@pytest.fixture
def tiny_detector():
    """Untrained small detector (float32)."""
    return Detector(SMALL_ARCH, class_names=["red", "green", "blue"], seed=0)


@pytest.fixture
def double_detector():
    """Untrained small detector in float64, for finite-difference checks."""
    return Detector(SMALL_ARCH, class_names=["red", "green", "blue"], seed=3).double()


@pytest.fixture
def two_term_model():
    """A calibrated-looking model: ~1 ms at |C| = 1000, 10 ms backbone."""
    return TwoTermModel(alpha=1.0, beta=2.0, s_iou=1e9, b=1e7, t_backbone=0.010)
