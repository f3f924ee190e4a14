import pytest

from profile_engine import derive_constants


@pytest.fixture(scope="session")
def params():
    """p = 5, μ = 1: q = 5/3, β = 3/4."""
    return derive_constants(5.0, 1.0)
