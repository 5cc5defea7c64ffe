"""Sensor poses, rays, spherical coordinates and the radar ray grid.

Spherical convention (sensor frame): azimuth is measured in the x-y plane
from +x toward +y, elevation from the x-y plane toward +z.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "SensorPose",
    "Ray",
    "RadarConfig",
    "RayBundle",
    "spherical_to_cartesian",
    "cartesian_to_spherical",
    "build_ray_grid",
    "yaw_matrix",
    "zod_config",
    "vod_config",
    "desk_config",
]

LAPLACE = "laplace"
GAUSSIAN = "gaussian"
DENSITY_FAMILIES = (LAPLACE, GAUSSIAN)


def yaw_matrix(yaw):
    """Rotation about +z by ``yaw`` radians."""
    c, s = math.cos(yaw), math.sin(yaw)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


@dataclass(frozen=True)
class SensorPose:
    """World-from-sensor rigid transform at a time stamp."""

    position: np.ndarray = field(default_factory=lambda: np.zeros(3))
    orientation: np.ndarray = field(default_factory=lambda: np.eye(3))
    time: float = 0.0

    def __post_init__(self):
        pos = np.asarray(self.position, dtype=float).reshape(3)
        rot = np.asarray(self.orientation, dtype=float).reshape(3, 3)
        if not np.all(np.isfinite(pos)):
            raise ValueError("pose position must be finite")
        if not math.isfinite(self.time):
            raise ValueError("pose time must be finite")
        if not np.allclose(rot @ rot.T, np.eye(3), atol=1e-9) or abs(np.linalg.det(rot) - 1.0) > 1e-9:
            raise ValueError("pose orientation must be a proper rotation")
        pos.flags.writeable = False
        rot.flags.writeable = False
        object.__setattr__(self, "position", pos)
        object.__setattr__(self, "orientation", rot)
        object.__setattr__(self, "time", float(self.time))

    @classmethod
    def from_xyz_yaw(cls, x, y, z, yaw=0.0, time=0.0):
        return cls(np.array([x, y, z], dtype=float), yaw_matrix(yaw), time)

    def to_world(self, points):
        """Map sensor-frame points (..., 3) into the world frame."""
        return np.asarray(points, dtype=float) @ self.orientation.T + self.position

    def to_sensor(self, points):
        return (np.asarray(points, dtype=float) - self.position) @ self.orientation

    def shifted(self, offset):
        """Same pose translated by a sensor-frame offset."""
        return SensorPose(self.position + self.orientation @ np.asarray(offset, float),
                          self.orientation, self.time)


@dataclass(frozen=True)
class Ray:
    origin: np.ndarray
    direction: np.ndarray
    azimuth: float
    elevation: float


@dataclass(frozen=True)
class RadarConfig:
    """Radar field of view, ray grid pitch and decoding options.

    Angles are radians, distances meters.
    """

    azimuth_min: float = -0.8
    azimuth_max: float = 0.8
    elevation_min: float = -0.15
    elevation_max: float = 0.25
    ray_divergence_az: float = 0.1
    ray_divergence_el: float = 0.05
    max_range: float = 50.0
    num_samples_per_ray: int = 256
    density_family: str = LAPLACE
    max_offset: float = 1.5
    confidence_threshold: float = 0.5
    literal_eq4: bool = False

    def __post_init__(self):
        if not self.azimuth_max > self.azimuth_min:
            raise ValueError("azimuth_max must exceed azimuth_min")
        if not self.elevation_max > self.elevation_min:
            raise ValueError("elevation_max must exceed elevation_min")
        if not (self.ray_divergence_az > 0 and self.ray_divergence_el > 0):
            raise ValueError("ray divergences must be positive")
        if not self.max_range > 0:
            raise ValueError("max_range must be positive")
        if not 0.0 < self.confidence_threshold < 1.0:
            raise ValueError("confidence_threshold must lie in (0, 1)")
        if self.max_offset < 0:
            raise ValueError("max_offset must be non-negative")
        if self.density_family not in DENSITY_FAMILIES:
            raise ValueError(f"density_family must be one of {DENSITY_FAMILIES}")
        if self.num_samples_per_ray < 1:
            raise ValueError("num_samples_per_ray must be positive")

    @property
    def grid_shape(self):
        n_az = round((self.azimuth_max - self.azimuth_min) / self.ray_divergence_az)
        n_el = round((self.elevation_max - self.elevation_min) / self.ray_divergence_el)
        return int(n_az), int(n_el)

    @property
    def num_rays(self):
        n_az, n_el = self.grid_shape
        return n_az * n_el


def zod_config(**overrides):
    """Zenseact radar field of view: +-45.84 deg azimuth, -4.58..22.92 deg elevation."""
    kw = dict(
        azimuth_min=math.radians(-45.84), azimuth_max=math.radians(45.84),
        elevation_min=math.radians(-4.58), elevation_max=math.radians(22.92),
        ray_divergence_az=0.015, ray_divergence_el=0.015, max_range=250.0,
    )
    kw.update(overrides)
    return RadarConfig(**kw)


def vod_config(**overrides):
    """View-of-Delft radar: +-57.29 deg azimuth, -22.34..28.07 deg elevation."""
    kw = dict(
        azimuth_min=math.radians(-57.29), azimuth_max=math.radians(57.29),
        elevation_min=math.radians(-22.34), elevation_max=math.radians(28.07),
        ray_divergence_az=0.02, ray_divergence_el=0.02, max_range=100.0,
    )
    kw.update(overrides)
    return RadarConfig(**kw)


def desk_config(**overrides):
    """16 x 8 grid used for CPU-scale training."""
    return RadarConfig(**overrides)


def spherical_to_cartesian(rng, azimuth, elevation):
    """Vectorised (range, azimuth, elevation) -> (..., 3) sensor-frame points."""
    rng = np.asarray(rng, dtype=float)
    az = np.asarray(azimuth, dtype=float)
    el = np.asarray(elevation, dtype=float)
    ce = np.cos(el)
    return np.stack(np.broadcast_arrays(rng * ce * np.cos(az), rng * ce * np.sin(az),
                                        rng * np.sin(el)), axis=-1)


def cartesian_to_spherical(p):
    """Inverse of :func:`spherical_to_cartesian`; the origin maps to (0, 0, 0)."""
    p = np.asarray(p, dtype=float)
    x, y, z = p[..., 0], p[..., 1], p[..., 2]
    horiz = np.hypot(x, y)
    rng = np.hypot(horiz, z)
    return rng, np.arctan2(y, x), np.arctan2(z, horiz)


@dataclass(frozen=True)
class RayBundle:
    """Rays sharing one origin; arrays are row-aligned (N rays)."""

    origin: np.ndarray
    directions: np.ndarray  # world frame, (N, 3)
    azimuth: np.ndarray  # sensor frame, (N,)
    elevation: np.ndarray
    pose: SensorPose
    grid_shape: tuple = (0, 0)

    def __len__(self):
        return len(self.azimuth)

    def __getitem__(self, i):
        return Ray(self.origin, self.directions[i], float(self.azimuth[i]), float(self.elevation[i]))

    def take(self, index):
        index = np.asarray(index)
        return RayBundle(self.origin, self.directions[index], self.azimuth[index],
                         self.elevation[index], self.pose, self.grid_shape)


def build_ray_grid(pose, cfg):
    """Uniform azimuth x elevation grid of rays at cell centres.

    Rays are ordered azimuth-major: index = i_az * n_el + i_el.
    """
    n_az, n_el = cfg.grid_shape
    if n_az * n_el == 0:
        raise ValueError("radar configuration yields an empty ray grid")
    pitch_az = (cfg.azimuth_max - cfg.azimuth_min) / n_az
    pitch_el = (cfg.elevation_max - cfg.elevation_min) / n_el
    az = cfg.azimuth_min + (np.arange(n_az) + 0.5) * pitch_az
    el = cfg.elevation_min + (np.arange(n_el) + 0.5) * pitch_el
    az_g, el_g = np.meshgrid(az, el, indexing="ij")
    az_g, el_g = az_g.ravel(), el_g.ravel()
    local = spherical_to_cartesian(1.0, az_g, el_g)
    dirs = local @ pose.orientation.T
    for arr in (dirs, az_g, el_g):
        arr.flags.writeable = False
    return RayBundle(pose.position, dirs, az_g, el_g, pose, (n_az, n_el))
