import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from targetgrasp.meshes import make_sphere
from targetgrasp.scene import (
    Scene,
    SceneObject,
    cloud_from_depth,
    generate_clutter,
    make_default_camera,
    render,
)


def make_sphere_scene(radius=0.03, depth=0.5, xy=(0.0, 0.0), segments=32):
    """Isolated sphere resting on the plane with its center at the given
    camera depth (the default camera looks straight down)."""
    camera = make_default_camera(height=depth + radius)
    obj = SceneObject(
        object_id=1,
        mesh=make_sphere(radius, segments),
        color=np.array([0.2, 0.7, 0.3]),
        position=np.array([xy[0], xy[1], radius]),
        kind="sphere",
        params={"radius": radius, "segments": segments},
    )
    return Scene(objects=[obj], camera=camera, seed=1)


@pytest.fixture(scope="session")
def sphere_scene():
    return make_sphere_scene()


@pytest.fixture(scope="session")
def sphere_image(sphere_scene):
    return render(sphere_scene)


@pytest.fixture(scope="session")
def sphere_cloud(sphere_scene, sphere_image):
    return cloud_from_depth(sphere_image, sphere_scene.camera)


@pytest.fixture(scope="session")
def clutter_scene():
    return generate_clutter(11, 5)


@pytest.fixture(scope="session")
def clutter_image(clutter_scene):
    return render(clutter_scene)
