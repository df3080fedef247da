import numpy as np
import pytest

from txembed.synthgen import GenConfig, generate, random_archetypes
from txembed.table import Dataset


@pytest.fixture(scope="session")
def small_world():
    """A 1500-client, 20-category dataset with 4 archetypes and its labels."""
    arch = random_archetypes(4, 20, seed=11)
    table, socio, labels = generate(GenConfig(1500, 20, 4, seed=3), archetypes=arch)
    return Dataset(table, socio, labels)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
