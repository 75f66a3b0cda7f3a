import numpy as np
import pytest

from asymlab.instances import g1_instance, iv1_instance


@pytest.fixture(scope="session")
def g1():
    return g1_instance()


@pytest.fixture(scope="session")
def iv1():
    return iv1_instance()


@pytest.fixture()
def rng():
    return np.random.default_rng(20260810)
