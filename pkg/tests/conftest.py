import pytest

from auvsim.vehicle import reference_vehicle


@pytest.fixture(scope="session")
def ref():
    return reference_vehicle()
