import numpy as np
import pytest

from radarfield.geometry import SensorPose, desk_config
from radarfield.scene import Box, HalfSpace, Primitive, Scene, Sphere
from radarfield.simulate import benchmark_scene


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def unit_sphere_scene():
    return Scene((Primitive(Sphere([0.0, 0.0, 0.0], 1.0), 1),), feature_dim=8, feature_seed=3)


@pytest.fixture
def bench_scene():
    return benchmark_scene()


@pytest.fixture
def small_radar():
    return desk_config(num_samples_per_ray=128)


@pytest.fixture
def origin_pose():
    return SensorPose()


def pytest_terminal_summary(terminalreporter):
    from oracles.verdicts import VERDICTS

    if VERDICTS:
        terminalreporter.section("acceptance criteria")
        for _, line in sorted(VERDICTS):
            terminalreporter.write_line(line)
