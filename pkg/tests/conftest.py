import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))  # make oracles importable

from fehlberg_node import LorenzParams, generate_dataset


@pytest.fixture(scope="session")
def small_dataset():
    """200-point default-parameter dataset shared by the unit tests."""
    return generate_dataset(LorenzParams(), np.array([1.0, 1.0, 1.0]), n=200)


@pytest.fixture
def rng():
    return np.random.default_rng(20240612)
