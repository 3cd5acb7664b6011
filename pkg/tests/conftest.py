import numpy as np
import pytest

from solvers.fem import build_problem
from solvers.mesh import build_uniform_mesh, interpolate


@pytest.fixture
def mesh4():
    return build_uniform_mesh(4)


@pytest.fixture
def mesh8():
    return build_uniform_mesh(8)


@pytest.fixture
def mesh16():
    return build_uniform_mesh(16)


@pytest.fixture
def rng():
    return np.random.default_rng(20240607)


@pytest.fixture
def circle_field():
    """Interpolant factory for x1^2 + x2^2 - 1/4."""
    return lambda mesh: interpolate(mesh, lambda x1, x2: x1**2 + x2**2 - 0.25)


@pytest.fixture
def linear_problem(mesh8):
    return build_problem(mesh8, u_bound=50.0)


@pytest.fixture
def semilinear_problem(mesh8):
    return build_problem(mesh8, u_bound=50.0, alpha=3.0)


def smooth_field(mesh, rng):
    """Random smooth nodal field with a nondegenerate zero level set."""
    a = rng.uniform(-1.0, 1.0, size=6)
    return interpolate(
        mesh,
        lambda x1, x2: a[0] * 0.3 + a[1] * x1 + a[2] * x2 + a[3] * x1**2
        + a[4] * np.sin(2.0 * x2) + a[5] * x1 * x2,
    )
