"""scikit-learn style estimator around the radar decoder."""
from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_array, check_is_fitted

from .decoder import (DecoderConfig, decode, emit_deterministic, emit_probabilistic,
                      init_weights)
from .geometry import LAPLACE
from .matching import chamfer
from .rfs import PointCloud
from .training import TrainConfig, fit_arrays

__all__ = ["RadarDecoder", "pack_renders", "unpack_renders"]


def pack_renders(features, positions):
    """Stack features (B, N, F) and return positions (B, N, 3) into one array."""
    return np.concatenate([np.asarray(features, float), np.asarray(positions, float)], axis=-1)


def unpack_renders(X):
    X = np.asarray(X, dtype=float)
    return X[..., :-3], X[..., -3:]


def _as_cloud(y):
    return y if isinstance(y, PointCloud) else PointCloud(np.asarray(y, float).reshape(-1, 3))


class RadarDecoder(BaseEstimator):
    """Decode rendered radar rays into point clouds.

    ``X`` has shape (n_scans, n_rays, feature_dim + 3): the rendered ray
    feature followed by the ray return position (see :func:`pack_renders`).
    ``y`` is a sequence of :class:`PointCloud` (or (k, 3) arrays), one per scan.
    """

    def __init__(self, variant="transformer", probabilistic=True, density=LAPLACE,
                 hidden_dim=32, num_heads=2, num_layers=1, max_offset=1.5,
                 baseline_zero_offset=False, position_norm=100.0, layer_norm=True,
                 confidence_threshold=0.5,
                 iterations=2000, warmup_steps=500, lr_max=1e-3, lr_min=1e-7,
                 loss_weight=2e-2, random_state=0):
        self.variant = variant
        self.probabilistic = probabilistic
        self.density = density
        self.hidden_dim = hidden_dim
        self.num_heads = num_heads
        self.num_layers = num_layers
        self.max_offset = max_offset
        self.baseline_zero_offset = baseline_zero_offset
        self.position_norm = position_norm
        self.layer_norm = layer_norm
        self.confidence_threshold = confidence_threshold
        self.iterations = iterations
        self.warmup_steps = warmup_steps
        self.lr_max = lr_max
        self.lr_min = lr_min
        self.loss_weight = loss_weight
        self.random_state = random_state

    def _check_X(self, X):
        X = check_array(X, allow_nd=True, ensure_2d=False, dtype=float)
        if X.ndim == 2:
            X = X[None]
        if X.ndim != 3 or X.shape[-1] < 4:
            raise ValueError("X must have shape (n_scans, n_rays, feature_dim + 3)")
        return X

    def decoder_config(self, feature_dim):
        return DecoderConfig(variant=self.variant, feature_dim=feature_dim,
                             hidden_dim=self.hidden_dim, num_heads=self.num_heads,
                             num_layers=self.num_layers, max_offset=self.max_offset,
                             probabilistic=self.probabilistic,
                             baseline_zero_offset=self.baseline_zero_offset,
                             position_norm=self.position_norm, layer_norm=self.layer_norm)

    def train_config(self):
        return TrainConfig(iterations=self.iterations, warmup_steps=self.warmup_steps,
                           lr_max=self.lr_max, lr_min=self.lr_min,
                           loss_weight=self.loss_weight, seed=self.random_state)

    def initial_weights(self, X):
        X = self._check_X(X)
        return init_weights(self.decoder_config(X.shape[-1] - 3), X.shape[1], self.random_state)

    def fit(self, X, y):
        X = self._check_X(X)
        y = [_as_cloud(c) for c in y]
        if len(y) != len(X):
            raise ValueError("X and y disagree in number of scans")
        feats, pos = unpack_renders(X)
        cfg = self.decoder_config(feats.shape[-1])
        self.weights_, self.loss_curve_ = fit_arrays(feats, pos, y, cfg, self.train_config(),
                                                     self.density)
        self.n_rays_ = X.shape[1]
        self.n_features_in_ = X.shape[-1]
        return self

    def predict_params(self, X, weights=None):
        if weights is None:
            check_is_fitted(self, "weights_")
            weights = self.weights_
        X = self._check_X(X)
        feats, pos = unpack_renders(X)
        return [decode(f, p, weights) for f, p in zip(feats, pos)]

    def predict(self, X, seed=None, weights=None):
        """Point cloud per scan: thresholded, or sampled when probabilistic."""
        params = self.predict_params(X, weights)
        if not self.probabilistic:
            return [emit_deterministic(p, self.confidence_threshold) for p in params]
        base = self.random_state if seed is None else seed
        return [emit_probabilistic(p, self.density, (base, k)) for k, p in enumerate(params)]

    def score(self, X, y):
        """Negative median Chamfer distance over scans (higher is better)."""
        preds = self.predict(X)
        cds = [chamfer(p, _as_cloud(t)) if len(p) and len(_as_cloud(t)) else np.inf
               for p, t in zip(preds, y)]
        return -float(np.median(cds))
