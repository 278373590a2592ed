import pytest

from stretchlab.acceptance import model, with_mean
from stretchlab.map_core import MapParams, compute_geometry
from stretchlab.observables import ItemALipschitz


@pytest.fixture(scope="session")
def half():
    """Map, operator and density for gamma = 1/2 on the default grid."""
    return model(0.5)


@pytest.fixture(scope="session")
def doubling():
    return model(1.0)


@pytest.fixture(scope="session")
def item_half(half):
    params, _, dens = half
    return with_mean(ItemALipschitz.from_params(params), dens)


@pytest.fixture(scope="session")
def geo_half():
    return compute_geometry(MapParams(0.5), 2000)
