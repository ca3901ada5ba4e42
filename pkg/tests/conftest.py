import numpy as np
import pytest

from noisevc import backend


@pytest.fixture(params=["numpy", "numba"])
def any_backend(request):
    """Run a test under both kernel backends, restoring the default after."""
    prev = backend.active_backend()
    backend.set_backend(request.param)
    yield request.param
    backend.set_backend(prev)


@pytest.fixture
def rng():
    return np.random.default_rng(0)
