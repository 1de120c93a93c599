import numpy as np
import pytest

from hhomin.mesh import lshape_initial, refine_uniform
from hhomin.operators import HHOSpace


@pytest.fixture(scope="session")
def lshape():
    return lshape_initial()


@pytest.fixture(scope="session")
def lshape1(lshape):
    return refine_uniform(lshape)


@pytest.fixture(scope="session")
def lshape2(lshape1):
    return refine_uniform(lshape1)


@pytest.fixture(scope="session")
def space_of():
    cache = {}

    def get(mesh, k):
        key = (id(mesh), k)
        if key not in cache:
            cache[key] = HHOSpace(mesh, k)
        return cache[key]

    return get


@pytest.fixture()
def rng():
    return np.random.default_rng(20240611)
