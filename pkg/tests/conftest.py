import pytest


@pytest.fixture(scope="session")
def acceptance_dir(tmp_path_factory):
    """One cache shared by the desk-scale experiments, so a cell trained for
    one check is reused by the others."""
    return tmp_path_factory.mktemp("acceptance")
