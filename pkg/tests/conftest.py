import numpy as np
import pytest

from canontrace.fields import random_field
from canontrace.spectral import ModelGeometry, build_operator

UNIT = (1.0, 1.0)


@pytest.fixture(scope="session")
def curved_torus():
    """Unit torus, N = 64, random band-2 conformal factor with sup 0.2, solved with eigenvectors."""
    phi = random_field(UNIT, 64, band=2, amplitude=0.2, seed=1)
    g = ModelGeometry.torus(UNIT, 64, phi)
    op = build_operator("laplacian", g)
    op.solve(vectors=True)
    return g, op


@pytest.fixture(scope="session")
def torus_direction():
    """Band-limited conformal direction on the unit torus."""
    return random_field(UNIT, 64, band=2, amplitude=0.3, seed=2)


@pytest.fixture(scope="session")
def circle_2pi():
    g = ModelGeometry.circle(2 * np.pi, 64)
    return g, build_operator("laplacian", g)


@pytest.fixture(scope="session")
def flat_torus():
    g = ModelGeometry.torus(UNIT, 64)
    return g, build_operator("laplacian", g)
