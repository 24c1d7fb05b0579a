import logging

import numpy as np
import pytest

from vesicle.mesh import build_uniform


@pytest.fixture(scope="session")
def mesh4():
    return build_uniform((0.0, 4.0, 0.0, 4.0), 4, 4)


@pytest.fixture(scope="session")
def mesh16():
    return build_uniform((0.0, 4.0, 0.0, 4.0), 16, 16)


@pytest.fixture(scope="session")
def mesh32():
    return build_uniform((0.0, 4.0, 0.0, 4.0), 32, 32)


@pytest.fixture(autouse=True)
def _quiet_solver_warnings(caplog):
    caplog.set_level(logging.ERROR, logger="vesicle")
    yield


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
