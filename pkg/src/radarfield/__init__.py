"""Radar branch of a neural-rendering pipeline on an analytic stand-in scene.

Render ray features and expected depths, decode them into deterministic or
multi-Bernoulli radar point clouds, train with matching losses and score
with Chamfer / EMD / GOSPA.
"""
from .decoder import DecoderConfig, DecoderWeights
from .estimator import RadarDecoder, pack_renders, unpack_renders
from .geometry import (RadarConfig, SensorPose, build_ray_grid, cartesian_to_spherical,
                       spherical_to_cartesian)
from .losses import PredictionParams, deterministic_loss, probabilistic_loss
from .matching import chamfer, emd, gospa, solve_assignment
from .rendering import OpacityParams, render_bundle, render_ray, sample_ray
from .rfs import MultiBernoulli, PointCloud, mb_exact_set_log_density, mb_sample
from .scene import Scene, query, remove_actor
from .training import TrainConfig

__version__ = "0.1.0"
