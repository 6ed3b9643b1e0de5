import numpy as np
import pytest

from ppwave import catalog
from ppwave.expr import VarSpace


@pytest.fixture(scope="session", autouse=True)
def warm_kernels():
    """Compile (or load cached) kernels once so timed tests measure the work."""
    from ppwave.geodesic import GeodesicState, integrate
    m = catalog.get("cahen_wallach").metric
    integrate(m, GeodesicState([0, 0, 0.1, 0.1], [1, 0, 0, 0]), (-0.1, 0.1))
    g = catalog.get("incomplete_recurrent").metric
    integrate(g, GeodesicState([0, 0, 0], [1, 0, 0]), (-0.1, 0.1))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def vs2():
    return VarSpace(2)
