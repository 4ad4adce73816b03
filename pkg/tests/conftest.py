import numpy as np
import pytest

from wg_stokes.cases import get_case
from wg_stokes.mesh import Mesh, build_structured
from wg_stokes.settings import Settings


@pytest.fixture
def settings():
    """Small chunks so the thread pool and chunk concatenation are exercised."""
    return Settings(threads=2, chunk_size=7, direct_limit=500_000, max_unknowns=2_000_000,
                    solver_tol=1e-10, dense_infsup_limit=4000)


@pytest.fixture
def rng():
    return np.random.default_rng(20240531)


@pytest.fixture
def unit_mesh():
    return build_structured(1)


@pytest.fixture
def mesh4():
    return build_structured(4)


@pytest.fixture
def reference_mesh():
    """The single triangle (0,0), (1,0), (0,1); not a cover of the square."""
    return Mesh.from_triangles([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]], [[0, 1, 2]])


@pytest.fixture
def paper_case():
    return get_case("paper")
