import numpy as np
import pytest

from opsplit.mesh import build_unit_square_mesh


@pytest.fixture(scope="session")
def mesh2():
    return build_unit_square_mesh(2)


@pytest.fixture(scope="session")
def mesh8():
    return build_unit_square_mesh(8)


def sinsin(x, t=0.0):
    return np.sin(np.pi * x[..., 0]) * np.sin(np.pi * x[..., 1])
