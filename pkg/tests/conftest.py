import numpy as np
import pytest

from zipboost._kernels import warm_up


@pytest.fixture(scope="session", autouse=True)
def _compile_kernels():
    """JIT-compile the numba kernels once so timed tests measure steady state."""
    warm_up()


@pytest.fixture()
def rng():
    return np.random.default_rng(20240817)
