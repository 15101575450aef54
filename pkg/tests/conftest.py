import pytest

from byb.data import generate_synthetic
from helpers import tiny_generator


@pytest.fixture
def tiny_data():
    return generate_synthetic(tiny_generator(seed=3))
