import numpy as np
import pytest

from fracmono.mesh import FracParams, graded_zmesh
from fracmono.monops import (GridSpec, LerayLionsField, make_linear_spd,
                             make_plap_grid, make_scalar)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def spd16():
    """Fixed 16x16 SPD matrix with spectrum in [0.1, 10]."""
    r = np.random.default_rng(7)
    Q, _ = np.linalg.qr(r.standard_normal((16, 16)))
    lam = np.geomspace(0.1, 10.0, 16)
    return Q @ np.diag(lam) @ Q.T


@pytest.fixture(scope="session")
def spd16_op(spd16):
    return make_linear_spd(spd16)


@pytest.fixture(scope="session")
def scalar4():
    return make_scalar(4.0)


@pytest.fixture(scope="session")
def plap8():
    field = LerayLionsField(p=3.0, lateral_bc="dirichlet")
    return make_plap_grid(field, GridSpec((8,)))


@pytest.fixture(scope="session")
def plap2():
    field = LerayLionsField(p=3.0, lateral_bc="neumann")
    return make_plap_grid(field, GridSpec((2,)))


@pytest.fixture
def mesh_mid():
    return graded_zmesh(256, 15.0, 2.0)


@pytest.fixture
def p_half():
    return FracParams(0.5)
