import numpy as np
import pytest

from softtouch.imaging import preprocess
from softtouch.sensor import SensorConfig


@pytest.fixture(scope="session")
def sensor():
    return SensorConfig()


@pytest.fixture(scope="session")
def rest_raw(sensor):
    return sensor.reference()


@pytest.fixture(scope="session")
def rest_processed(rest_raw):
    return preprocess(rest_raw, threshold=False)


@pytest.fixture(scope="session")
def rng():
    return np.random.default_rng(20260808)
