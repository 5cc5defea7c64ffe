"""Synthetic radar scans over an analytic scene.

Each grid cell of the radar casts one probe ray at a uniformly jittered
angle inside the cell. A surface hit becomes a detection with a
material-dependent probability. The detection sits behind the visible
surface (the reflection centre is inside the object), carries Laplace
noise, and with a small probability is pushed further out as a multipath
ghost. At most one detection per cell.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np

from .geometry import SensorPose, spherical_to_cartesian, yaw_matrix
from .rfs import PointCloud
from .scene import Actor, Box, HalfSpace, Primitive, Scene, query_points

__all__ = ["SimulatorConfig", "TrajectoryConfig", "raycast", "simulate_scan",
           "benchmark_scene", "trajectory_poses"]


@dataclass(frozen=True)
class SimulatorConfig:
    detection_prob: dict = field(default_factory=lambda: {0: 0.03, 1: 0.7, 2: 0.7, 3: 0.85})
    penetration: float = 1.0  # reflection centre behind the visible surface (m)
    noise_scale: float = 0.1
    ghost_prob: float = 0.1
    ghost_range: tuple = (1.5, 4.0)
    max_detections: int = 0  # 0: one fewer than the number of cells

    def to_dict(self):
        d = asdict(self)
        d["detection_prob"] = {str(k): v for k, v in self.detection_prob.items()}
        d["ghost_range"] = list(self.ghost_range)
        return d

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        if "detection_prob" in d:
            d["detection_prob"] = {int(k): float(v) for k, v in d["detection_prob"].items()}
        if "ghost_range" in d:
            d["ghost_range"] = tuple(d["ghost_range"])
        return cls(**d)


@dataclass(frozen=True)
class TrajectoryConfig:
    num_frames: int = 16
    start: tuple = (0.0, 0.0, 0.7)
    velocity: tuple = (2.5, 0.0, 0.0)
    yaw: float = 0.0
    frame_dt: float = 0.2

    def to_dict(self):
        d = asdict(self)
        d["start"], d["velocity"] = list(self.start), list(self.velocity)
        return d

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        for k in ("start", "velocity"):
            if k in d:
                d[k] = tuple(d[k])
        return cls(**d)


def trajectory_poses(traj, lateral_shift=0.0):
    """Constant-velocity ego poses; ``lateral_shift`` moves along sensor +y."""
    rot = yaw_matrix(traj.yaw)
    start = np.asarray(traj.start, float) + rot @ np.array([0.0, lateral_shift, 0.0])
    vel = np.asarray(traj.velocity, float)
    return [SensorPose(start + vel * k * traj.frame_dt, rot, k * traj.frame_dt)
            for k in range(traj.num_frames)]


def benchmark_scene(feature_seed=7):
    """Ground plane, two static boxes and one moving box actor."""
    statics = (
        Primitive(HalfSpace([0.0, 0.0, 1.0], 0.0), 0),
        Primitive(Box([16.0, -4.0, 1.0], [1.5, 1.0, 1.0]), 1),
        Primitive(Box([22.0, 5.0, 1.5], [1.0, 2.0, 1.5]), 2),
    )
    actor = Actor(Primitive(Box([0.0, 0.0, 0.0], [2.2, 0.9, 0.8]), 3),
                  position0=[30.0, -0.5, 0.8], velocity=[-2.0, 0.3, 0.0], yaw_rate=0.05)
    return Scene(statics, (actor,), feature_dim=32, feature_seed=feature_seed)


def raycast(scene, origin, dirs, t, max_range, tol=1e-6, max_steps=512):
    """Sphere-trace rays; returns (hit distance or inf, material id or -1)."""
    dirs = np.asarray(dirs, float)
    tau = np.zeros(len(dirs))
    active = np.ones(len(dirs), dtype=bool)
    hit = np.zeros(len(dirs), dtype=bool)
    for _ in range(max_steps):
        if not active.any():
            break
        idx = np.flatnonzero(active)
        s, _, _ = query_points(scene, origin + tau[idx, None] * dirs[idx], t)
        done = s < tol
        hit[idx[done]] = True
        tau[idx[~done]] += s[~done]
        active[idx[done]] = False
        active[idx[tau[idx] > max_range]] = False
    dist = np.where(hit, tau, np.inf)
    pts = origin + np.where(hit, tau, 0.0)[:, None] * dirs
    _, _, mat = query_points(scene, pts, t)
    return dist, np.where(hit, mat, -1)


def simulate_scan(scene, pose, radar_cfg, sim_cfg=SimulatorConfig(), seed=0):
    """One synthetic radar scan as a sensor-frame point cloud."""
    rng = np.random.default_rng(seed)
    n_az, n_el = radar_cfg.grid_shape
    pa = (radar_cfg.azimuth_max - radar_cfg.azimuth_min) / n_az
    pe = (radar_cfg.elevation_max - radar_cfg.elevation_min) / n_el
    ia, ie = np.meshgrid(np.arange(n_az), np.arange(n_el), indexing="ij")
    ia, ie = ia.ravel(), ie.ravel()
    n = len(ia)
    u = rng.random((n, 2))
    az = radar_cfg.azimuth_min + (ia + u[:, 0]) * pa
    el = radar_cfg.elevation_min + (ie + u[:, 1]) * pe
    local = spherical_to_cartesian(1.0, az, el)
    dist, mat = raycast(scene, pose.position, local @ pose.orientation.T, pose.time,
                        radar_cfg.max_range)
    p_det = np.array([sim_cfg.detection_prob.get(int(m), 0.0) if m >= 0 else 0.0 for m in mat])
    u_det = rng.random(n)
    noise = rng.laplace(0.0, sim_cfg.noise_scale, (n, 3))
    u_ghost = rng.random(n)
    ghost = rng.uniform(*sim_cfg.ghost_range, n)
    rng_m = dist + sim_cfg.penetration + np.where(u_ghost < sim_cfg.ghost_prob, ghost, 0.0)
    keep = (u_det < p_det) & np.isfinite(dist)
    rng_m = np.where(keep, rng_m, 0.0)
    pts = spherical_to_cartesian(rng_m, az, el) + noise
    keep &= np.linalg.norm(pts, axis=1) <= radar_cfg.max_range
    cap = sim_cfg.max_detections or n - 1
    kept = np.flatnonzero(keep)[:cap]
    amplitude = np.array([10.0 + 5.0 * max(int(m), 0) for m in mat[kept]])
    return PointCloud(pts[kept], {
        "amplitude": amplitude,
        "range_rate": np.zeros(len(kept)),
        "mode": np.zeros(len(kept), dtype=int),
        "quality": np.full(len(kept), 2),
    })
