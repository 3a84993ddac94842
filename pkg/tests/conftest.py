import numpy as np
import pytest

from quadlab.model import RobotModel
from quadlab.terrain import generate


@pytest.fixture(scope="session")
def model() -> RobotModel:
    return RobotModel()


@pytest.fixture(scope="session")
def flat():
    return generate("flat", 0.0, seed=0)


@pytest.fixture()
def rng() -> np.random.Generator:
    return np.random.default_rng(0)
