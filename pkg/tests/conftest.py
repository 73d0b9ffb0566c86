from __future__ import annotations

import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).resolve().parent))

from vptdn import _kernels
from vptdn.scene import Camera, Environment, LightSet, PointLight, Scene
from vptdn.volume import TransferFunction, make_procedural_volume

_kernels.set_threads()


@pytest.fixture(scope="session")
def unit_grid():
    """8^3 all-ones grid spanning the unit cube."""
    return make_procedural_volume("constant", (8, 8, 8),
                                  {"value": 1.0, "spacing": (1 / 8, 1 / 8, 1 / 8)})


@pytest.fixture(scope="session")
def big_grid():
    """8^3 all-ones grid with unit voxel spacing (8-unit cube)."""
    return make_procedural_volume("constant", (8, 8, 8),
                                  {"value": 1.0, "spacing": (1.0, 1.0, 1.0)})


@pytest.fixture(scope="session")
def linear_tf():
    """White-albedo linear opacity ramp, density_scale 1."""
    return TransferFunction.from_points(
        [(0.0, (1, 1, 1), 0.0, (0, 0, 0)), (1.0, (1, 1, 1), 1.0, (0, 0, 0))], 1.0)


@pytest.fixture(scope="session")
def sphere_scene():
    """Scattering sphere lit by one point light inside a dark environment."""
    grid = make_procedural_volume("sphere", (32, 32, 32), {"radius": 0.35})
    tf = TransferFunction.from_points(
        [(0.0, (0.8, 0.8, 0.8), 0.0, (0, 0, 0)),
         (1.0, (0.8, 0.8, 0.8), 0.6, (0, 0, 0))], 6.0)
    lights = LightSet(point=(PointLight(position=(2.0, 2.2, -0.8),
                                        intensity=(40.0, 40.0, 40.0)),),
                      environment=Environment(radiance=(0.0, 0.0, 0.0)))
    return Scene(grid, tf, lights)


@pytest.fixture()
def small_camera():
    return Camera.look_at((0.5, 0.5, -1.6), (0.5, 0.5, 0.5), 0.5, 33, 33)
