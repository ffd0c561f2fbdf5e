import numpy as np
import pytest

from deepboard.scenes import SceneSpec, generate_scene
from deepboard.volume import build_octree


@pytest.fixture(scope="session")
def sphere32():
    return generate_scene(SceneSpec("sphere", 32))


@pytest.fixture(scope="session")
def sphere32_octree(sphere32):
    return build_octree(sphere32, 0.0)


@pytest.fixture(scope="session")
def all_scenes32():
    return {name: generate_scene(SceneSpec(name, 32))
            for name in ("sphere", "box", "lobed-sphere", "two-spheres")}


def random_unit_vectors(rng, n):
    v = rng.normal(size=(n, 3))
    return v / np.linalg.norm(v, axis=1, keepdims=True)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
