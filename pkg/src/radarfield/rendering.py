"""Volume rendering of ray features and expected depth over an SDF scene."""
from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from .geometry import spherical_to_cartesian
from .scene import query_points

__all__ = ["RaySamples", "RayRender", "OpacityParams", "sample_ray", "opacity",
           "composite_weights", "render_ray", "render_bundle", "stack_renders"]

DEPTH_EPS = 1e-8


@dataclass(frozen=True)
class OpacityParams:
    beta: float = 20.0

    def __post_init__(self):
        if not self.beta > 0:
            raise ValueError("beta must be positive")


@dataclass(frozen=True)
class RaySamples:
    distances: np.ndarray
    positions: np.ndarray
    max_range: float

    def __len__(self):
        return len(self.distances)


@dataclass(frozen=True)
class RayRender:
    feature: np.ndarray
    weights: np.ndarray
    expected_depth: float
    return_position: np.ndarray
    opacity_sum: float
    azimuth: float = 0.0
    elevation: float = 0.0


def _ray_seed(seed, ray):
    # keyed on the ray angles, not its index, so bundle order does not matter
    az, el = struct.unpack("<QQ", struct.pack("<dd", ray.azimuth, ray.elevation))
    return np.random.default_rng([int(seed) & (2**64 - 1), az, el])


def _stratified(rng, n, max_range):
    u = rng.random(n)
    width = max_range / n
    # map [0, 1) onto (lo, hi] so every sample stays inside (0, max_range]
    return (np.arange(n) + 1.0 - u) * width


def sample_ray(ray, cfg, rng_seed=0):
    """Stratified distances, one uniform draw in each of N equal strata."""
    n = cfg.num_samples_per_ray
    if n < 2:
        raise ValueError("need at least two samples per ray")
    tau = _stratified(_ray_seed(rng_seed, ray), n, cfg.max_range)
    pos = ray.origin + tau[:, None] * ray.direction
    return RaySamples(tau, pos, float(cfg.max_range))


def opacity(s, params=OpacityParams()):
    """Logistic SDF-to-opacity map ``1 / (1 + exp(beta * s))``."""
    z = params.beta * np.asarray(s, dtype=float)
    with np.errstate(over="ignore"):
        return np.where(z >= 0, np.exp(-np.abs(z)) / (1.0 + np.exp(-np.abs(z))),
                        1.0 / (1.0 + np.exp(-np.abs(z))))


def composite_weights(alpha):
    """omega_i = alpha_i * prod_{j<i}(1 - alpha_j) along the last axis."""
    alpha = np.asarray(alpha, dtype=float)
    trans = np.cumprod(1.0 - alpha, axis=-1)
    trans = np.concatenate([np.ones_like(alpha[..., :1]), trans[..., :-1]], axis=-1)
    return alpha * trans


def _composite(alpha, tau, feats, max_range, literal):
    w = composite_weights(alpha)
    wsum = w.sum(axis=-1)
    feature = np.einsum("...n,...nf->...f", w, feats)
    num = (w * tau).sum(axis=-1)
    if literal:
        depth = num
    else:
        depth = np.where(wsum > DEPTH_EPS, num / np.maximum(wsum, DEPTH_EPS), max_range)
    return w, wsum, feature, depth


def render_ray(scene, ray, samples, params=OpacityParams(), *, time=0.0, literal_eq4=False):
    s, f, _ = query_points(scene, samples.positions, time)
    alpha = opacity(s, params)
    w, wsum, feature, depth = _composite(alpha, samples.distances, f,
                                         samples.max_range, literal_eq4)
    pos = spherical_to_cartesian(depth, ray.azimuth, ray.elevation)
    return RayRender(feature, w, float(depth), pos, float(wsum), ray.azimuth, ray.elevation)


def render_bundle(scene, bundle, cfg, params=OpacityParams(), seed=0):
    """Render every ray of a bundle at the bundle pose time, preserving order."""
    if len(bundle) == 0:
        raise ValueError("empty ray bundle")
    n = cfg.num_samples_per_ray
    if n < 2:
        raise ValueError("need at least two samples per ray")
    rays = [bundle[i] for i in range(len(bundle))]
    tau = np.stack([_stratified(_ray_seed(seed, r), n, cfg.max_range) for r in rays])
    pts = bundle.origin + tau[..., None] * bundle.directions[:, None, :]
    s, f, _ = query_points(scene, pts, bundle.pose.time)
    alpha = opacity(s, params)
    w, wsum, feature, depth = _composite(alpha, tau, f, cfg.max_range, cfg.literal_eq4)
    pos = spherical_to_cartesian(depth, bundle.azimuth, bundle.elevation)
    return [RayRender(feature[i], w[i], float(depth[i]), pos[i], float(wsum[i]),
                      float(bundle.azimuth[i]), float(bundle.elevation[i]))
            for i in range(len(rays))]


def stack_renders(renders):
    """(features (N, F), return positions (N, 3)) arrays from a render list."""
    feats = np.stack([r.feature for r in renders])
    pos = np.stack([r.return_position for r in renders])
    return feats, pos
