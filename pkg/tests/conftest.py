import pytest

from lexcourt.mockserver import MockServer


@pytest.fixture(scope="session")
def mock_server():
    """One shared mock service instance for every network-facing test."""
    with MockServer(dim=8) as server:
        yield server
