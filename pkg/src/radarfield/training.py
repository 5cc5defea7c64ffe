"""Optimisation of decoder weights against matched radar losses."""
from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass

import numpy as np

from .decoder import backward, forward, init_weights
from .geometry import build_ray_grid
from .losses import (RADAR_LOSS_WEIGHT, PredictionParams, deterministic_loss,
                     probabilistic_loss)
from .rendering import OpacityParams, render_bundle, stack_renders

__all__ = ["TrainConfig", "Adam", "learning_rate", "scan_loss", "fit_arrays",
           "render_scans", "fit"]

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class TrainConfig:
    iterations: int = 2000
    lr_max: float = 1e-3
    lr_min: float = 1e-7
    warmup_steps: int = 500
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    loss_weight: float = RADAR_LOSS_WEIGHT
    seed: int = 0

    def __post_init__(self):
        if not self.lr_max >= self.lr_min > 0:
            raise ValueError("need lr_max >= lr_min > 0")
        if not 0 <= self.warmup_steps <= self.iterations:
            raise ValueError("warmup_steps must lie in [0, iterations]")

    def to_dict(self):
        return asdict(self)


def learning_rate(step, cfg):
    """Linear warmup to lr_max, then cosine decay down to lr_min."""
    if step < cfg.warmup_steps:
        return cfg.lr_max * (step + 1) / cfg.warmup_steps
    span = max(cfg.iterations - cfg.warmup_steps, 1)
    frac = min((step - cfg.warmup_steps) / span, 1.0)
    return cfg.lr_min + 0.5 * (cfg.lr_max - cfg.lr_min) * (1.0 + math.cos(math.pi * frac))


class Adam:
    def __init__(self, params, cfg):
        self.cfg = cfg
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}
        self.t = 0

    def step(self, params, grads, lr):
        c = self.cfg
        self.t += 1
        bc1 = 1.0 - c.beta1 ** self.t
        bc2 = 1.0 - c.beta2 ** self.t
        for k, g in grads.items():
            m = self.m[k] = c.beta1 * self.m[k] + (1.0 - c.beta1) * g
            v = self.v[k] = c.beta2 * self.v[k] + (1.0 - c.beta2) * g * g
            params[k] -= lr * (m / bc1) / (np.sqrt(v / bc2) + c.eps)


def scan_loss(params, truth, probabilistic, family):
    if probabilistic:
        return probabilistic_loss(params, truth, family)
    return deterministic_loss(params, truth)


def _batch_loss(outputs, truths, cfg, family):
    anchors, offsets, logit_r, log_scale = outputs
    total = 0.0
    g_off = np.zeros_like(offsets)
    g_l = np.zeros_like(logit_r)
    g_s = None if log_scale is None else np.zeros_like(log_scale)
    for b, truth in enumerate(truths):
        p = PredictionParams(anchors[b], offsets[b], logit_r[b],
                             None if log_scale is None else log_scale[b])
        rep = scan_loss(p, truth, cfg.probabilistic, family)
        total += rep.total
        g_off[b] = rep.gradient.offsets
        g_l[b] = rep.gradient.logit_r
        if g_s is not None:
            g_s[b] = rep.gradient.log_scale
    return total, g_off, g_l, g_s


def fit_arrays(features, positions, truths, dec_cfg, train_cfg, family="laplace",
               weights=None, callback=None):
    """Fit on pre-rendered scans.

    ``features`` (B, N, F) and ``positions`` (B, N, 3) hold the rendered
    features and return positions of B scans. Returns the final weights and
    the per-iteration weighted loss (summed over scans).
    """
    features = np.asarray(features, float)
    positions = np.asarray(positions, float)
    if features.ndim != 3 or len(features) != len(truths):
        raise ValueError("features must be (scans, rays, dim) aligned with truths")
    n_rays = features.shape[1]
    biggest = max(len(getattr(t, "points", t)) for t in truths)
    if n_rays <= biggest:
        raise ValueError(f"{n_rays} rays cannot cover a scan with {biggest} detections")
    if weights is None:
        weights = init_weights(dec_cfg, n_rays, train_cfg.seed)
    weights = weights.copy()
    opt = Adam(weights.tensors, train_cfg)
    lam = train_cfg.loss_weight
    curve = np.empty(train_cfg.iterations)
    for it in range(train_cfg.iterations):
        outputs, cache = forward(features, positions, weights)
        loss, g_off, g_l, g_s = _batch_loss(outputs, truths, dec_cfg, family)
        grads = backward(cache, weights, lam * g_off, lam * g_l,
                         None if g_s is None else lam * g_s)
        curve[it] = lam * loss
        if not np.isfinite(curve[it]):
            raise FloatingPointError(f"non-finite loss at iteration {it}")
        opt.step(weights.tensors, grads, learning_rate(it, train_cfg))
        if callback is not None:
            callback(it, weights, curve[it])
    return weights, curve


def render_scans(scene, poses, radar_cfg, opacity=OpacityParams(), seed=0):
    """Render every pose; returns stacked (features, positions)."""
    feats, pos = [], []
    for k, pose in enumerate(poses):
        bundle = build_ray_grid(pose, radar_cfg)
        f, p = stack_renders(render_bundle(scene, bundle, radar_cfg, opacity, seed + k))
        feats.append(f)
        pos.append(p)
    return np.stack(feats), np.stack(pos)


def fit(scene, poses, truths, radar_cfg, dec_cfg, train_cfg, opacity=OpacityParams()):
    """Render each scan from the scene, then fit the decoder on the renders."""
    if len(poses) != len(truths):
        raise ValueError("poses and truths must be aligned")
    feats, pos = render_scans(scene, poses, radar_cfg, opacity, train_cfg.seed)
    return fit_arrays(feats, pos, truths, dec_cfg, train_cfg, radar_cfg.density_family)
