import numpy as np
import pytest
from hypothesis import settings

from imcf.grid import PeriodicGrid

settings.register_profile("imcf", max_examples=40, deadline=None)
settings.load_profile("imcf")

TWO_PI = 2.0 * np.pi


@pytest.fixture
def line64():
    return PeriodicGrid((64,), (TWO_PI,))


def line(n):
    return PeriodicGrid((n,), (TWO_PI,))
