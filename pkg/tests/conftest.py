import pytest

from flowtrees import load_fixture


@pytest.fixture(scope="session")
def double_well():
    return load_fixture("double-well-1d")


@pytest.fixture(scope="session")
def cusp_2d():
    return load_fixture("cusp-2d")


@pytest.fixture(scope="session")
def fold_morse():
    return load_fixture("fold-morse-1d")


@pytest.fixture(scope="session")
def lip_1d():
    return load_fixture("lip-1d")


@pytest.fixture(scope="session")
def torus():
    return load_fixture("torus-2d")


@pytest.fixture(scope="session")
def cusp_well():
    return load_fixture("cusp-well-2d")


@pytest.fixture(scope="session")
def cusp_tangent():
    return load_fixture("cusp-tangent-2d")
