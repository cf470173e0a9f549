import numpy as np
import pytest

from solarsight.rng import SplitMix64


@pytest.fixture
def rng():
    return SplitMix64(1234)


@pytest.fixture
def rng64():
    """Float64 helper stream for gradient-check inputs."""
    r = SplitMix64(99)

    def draw(*shape):
        return r.normal(int(np.prod(shape))).reshape(shape)

    return draw
