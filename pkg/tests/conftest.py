import numpy as np
import pytest

from abatre.cli import benchmark_scene_path
from abatre.geometry import Pose
from abatre.kinematics import default_arm
from abatre.scene import load_scene


@pytest.fixture(scope="session")
def benchmark_world():
    return load_scene(benchmark_scene_path())


@pytest.fixture(scope="session")
def benchmark_arm():
    return default_arm(Pose(np.array([0.0, -0.6, 0.0]), np.array([1.0, 0.0, 0.0, 0.0])))
