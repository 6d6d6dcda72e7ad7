import numpy as np
import pytest
from hypothesis import settings

from mtss import autodiff as ad

settings.register_profile("suite", deadline=None, max_examples=40)
settings.load_profile("suite")


@pytest.fixture
def f64():
    with ad.precision("f64"):
        yield


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
