import numpy as np
import pytest

from rtopt.model import GeneratorConfig, generate


@pytest.fixture(scope="session")
def small_problem():
    """Generated problem reused by engine and solver tests."""
    return generate(GeneratorConfig(num_vars=120, num_rois=8,
                                    nnz_range=(50, 5000), seed=3))


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
