import pytest

from cookiewalk.env import CookieConfig
from cookiewalk.kernel import build_kernel


@pytest.fixture(scope="session")
def half():
    """M=3, p_i = 3/4: alpha = 1/2, nu = 3/4."""
    return CookieConfig.uniform(3, "3/4")


@pytest.fixture(scope="session")
def critical():
    return CookieConfig.uniform(3, "5/6")


@pytest.fixture(scope="session")
def kernel_half(half):
    return build_kernel(half, 4096)


@pytest.fixture(scope="session")
def kernel_small(half):
    return build_kernel(half, 1024)
