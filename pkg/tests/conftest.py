import numpy as np
import pytest

from mvmdepart.model import Arc


@pytest.fixture
def rng():
    return np.random.default_rng(20261016)


@pytest.fixture
def example_arc():
    # 4 km link, 100/60 km/h, unit rates
    return Arc("e1", "A", "B", 4.0, 100.0, 60.0, 1.0, 1.0)
