import numpy as np
import pytest

from cdfl import dataio
from cdfl.model import ArchConfig


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def separable():
    """Noise-free 4-class 16x16 fixture: 25 samples per class."""
    return dataio.synth_generate(4, 25, 16, 0.0, seed=3)


@pytest.fixture(scope="session")
def small_arch():
    return ArchConfig(in_channels=1, image_size=16, conv_channels=(4, 8), embed_dim=8, num_classes=4)
