import numpy as np
import pytest

import arlequin as aq


@pytest.fixture(scope="session")
def spec421():
    return aq.DomainSpec(4.0, 2.0, 1.0)


@pytest.fixture(scope="session")
def meshes421(spec421):
    """Default geometry at H=0.5, m=5: small enough for fast solver tests."""
    return aq.build_domain(spec421, 0.5, 5)


@pytest.fixture(scope="session")
def tiny_spec():
    return aq.DomainSpec(1.0, 0.5, 0.25)


@pytest.fixture(scope="session")
def tiny_meshes(tiny_spec):
    return aq.build_domain(tiny_spec, 0.25, 2)


@pytest.fixture(scope="session")
def spaces421(meshes421, spec421):
    coarse, fine, sub = meshes421
    cs = aq.CoarseSpace(coarse, spec421)
    fs = aq.FineSpace(fine, spec421)
    return cs, fs


@pytest.fixture(scope="session")
def coupling421(spaces421, meshes421):
    cs, fs = spaces421
    return aq.DcCoupling(cs, fs, meshes421[2].ratio)


def nodal_max_error(values, reference):
    return float(np.abs(np.asarray(values) - np.asarray(reference)).max())
