import numpy as np
import pytest
from hypothesis import settings

from topofem.mesh import BackgroundMesh

settings.register_profile("topofem", deadline=None, max_examples=60)
settings.load_profile("topofem")

REFERENCE_TRIANGLE = np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]])


def single_triangle_mesh(corners=REFERENCE_TRIANGLE, h=1.0):
    return BackgroundMesh(np.asarray(corners, dtype=float), np.array([[0, 1, 2]]), h)


def unit_square_patch(h=1.0):
    """Unit square split along its (1, 1) diagonal: ``T1 = (0,0),(1,0),(1,1)`` and ``T2 = (0,0),(1,1),(0,1)``."""
    verts = np.array([[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0]])
    return BackgroundMesh(verts, np.array([[0, 1, 2], [0, 2, 3]]), h)


@pytest.fixture
def reference_mesh():
    return single_triangle_mesh()


@pytest.fixture
def square_patch():
    return unit_square_patch()
