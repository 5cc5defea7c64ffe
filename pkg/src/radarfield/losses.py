"""Matching-based radar losses with closed-form gradients.

Gradients treat the matching as fixed: the assignment is piecewise constant
in the parameters, so away from switch points this is the exact gradient.
"""
from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .geometry import GAUSSIAN, LAPLACE
from .matching import build_cost_matrix, solve_assignment
from .rfs import LOG_SQRT_2PI

__all__ = ["PredictionParams", "LossReport", "deterministic_loss",
           "probabilistic_loss", "finite_difference_check", "sigmoid",
           "softplus", "logit", "RADAR_LOSS_WEIGHT"]

RADAR_LOSS_WEIGHT = 2e-2


def sigmoid(x):
    x = np.asarray(x, dtype=float)
    e = np.exp(-np.abs(x))
    return np.where(x >= 0, 1.0 / (1.0 + e), e / (1.0 + e))


def softplus(x):
    x = np.asarray(x, dtype=float)
    return np.maximum(x, 0.0) + np.log1p(np.exp(-np.abs(x)))


def logit(p):
    p = np.asarray(p, dtype=float)
    return np.log(p) - np.log1p(-p)


@dataclass(frozen=True)
class PredictionParams:
    """Per-ray decoder outputs.

    anchors: ray return positions (N, 3); offsets (N, 3); logit_r (N,);
    log_scale (N, 3) or None for deterministic models.
    """

    anchors: np.ndarray
    offsets: np.ndarray
    logit_r: np.ndarray
    log_scale: np.ndarray = None

    def __post_init__(self):
        object.__setattr__(self, "anchors", np.asarray(self.anchors, float).reshape(-1, 3))
        object.__setattr__(self, "offsets", np.asarray(self.offsets, float).reshape(-1, 3))
        object.__setattr__(self, "logit_r", np.asarray(self.logit_r, float).reshape(-1))
        if self.log_scale is not None:
            object.__setattr__(self, "log_scale", np.asarray(self.log_scale, float).reshape(-1, 3))
        n = len(self.anchors)
        if len(self.offsets) != n or len(self.logit_r) != n or (
                self.log_scale is not None and len(self.log_scale) != n):
            raise ValueError("prediction arrays disagree in length")

    def __len__(self):
        return len(self.logit_r)

    @property
    def positions(self):
        return self.anchors + self.offsets

    @property
    def r(self):
        return sigmoid(self.logit_r)

    @property
    def scale(self):
        return None if self.log_scale is None else np.exp(self.log_scale)

    @classmethod
    def from_probabilities(cls, anchors, offsets, r, scale=None):
        return cls(anchors, offsets, logit(r), None if scale is None else np.log(scale))

    def zeros_like(self):
        return PredictionParams(np.zeros_like(self.anchors), np.zeros_like(self.offsets),
                                np.zeros_like(self.logit_r),
                                None if self.log_scale is None else np.zeros_like(self.log_scale))

    def flat(self):
        parts = [self.anchors.ravel(), self.offsets.ravel(), self.logit_r]
        if self.log_scale is not None:
            parts.append(self.log_scale.ravel())
        return np.concatenate(parts)

    def with_flat(self, v):
        n = len(self)
        a, o, l = v[:3 * n], v[3 * n:6 * n], v[6 * n:7 * n]
        s = None if self.log_scale is None else v[7 * n:10 * n]
        return PredictionParams(a, o, l, s)


@dataclass(frozen=True)
class LossReport:
    total: float
    matched_term: float
    unmatched_term: float
    gradient: PredictionParams
    assignment: object = None


def _truth_points(truth):
    return np.asarray(getattr(truth, "points", truth), dtype=float).reshape(-1, 3)


def _match(positions, r, truth_pts):
    if len(positions) <= len(truth_pts):
        raise ValueError(f"need more rays ({len(positions)}) than truth points ({len(truth_pts)})")
    if len(truth_pts) == 0:
        return solve_assignment(np.zeros((len(positions), 0)))
    return solve_assignment(build_cost_matrix(positions, r, truth_pts))


def deterministic_loss(params, truth, assignment=None):
    """sum over matches of (||y_hat - y|| - log r) minus sum over the rest of log(1 - r)."""
    Y = _truth_points(truth)
    pos = params.positions
    r = params.r
    A = assignment if assignment is not None else _match(pos, r, Y)
    i, j = A.pred_index, A.truth_index
    l = params.logit_r
    diff = pos[i] - Y[j]
    dist = np.sqrt((diff * diff).sum(axis=1))
    # -log r = softplus(-l); -log(1 - r) = softplus(l)
    matched = float(dist.sum() + softplus(-l[i]).sum())
    unmatched = float(softplus(l[A.unmatched]).sum())

    g_pos = np.zeros_like(pos)
    safe = np.where(dist > 0, dist, 1.0)
    g_pos[i] = np.where(dist[:, None] > 0, diff / safe[:, None], 0.0)
    g_l = np.zeros_like(l)
    g_l[i] = r[i] - 1.0
    g_l[A.unmatched] = r[A.unmatched]
    grad = PredictionParams(g_pos, g_pos.copy(), g_l,
                            None if params.log_scale is None else np.zeros_like(params.log_scale))
    return LossReport(matched + unmatched, matched, unmatched, grad, A)


def probabilistic_loss(params, truth, family=LAPLACE, assignment=None):
    """Negative log-likelihood of the multi-Bernoulli at the optimal matching."""
    if params.log_scale is None:
        raise ValueError("probabilistic loss needs log_scale predictions")
    Y = _truth_points(truth)
    mu = params.positions
    r = params.r
    A = assignment if assignment is not None else _match(mu, r, Y)
    i, j = A.pred_index, A.truth_index
    l = params.logit_r
    ls = params.log_scale[i]
    b = np.exp(ls)
    dev = Y[j] - mu[i]
    if family == LAPLACE:
        nll_axes = np.log(2.0) + ls + np.abs(dev) / b
        g_mu_m = -np.sign(dev) / b
        g_ls_m = 1.0 - np.abs(dev) / b
    elif family == GAUSSIAN:
        z = dev / b
        nll_axes = ls + LOG_SQRT_2PI + 0.5 * z * z
        g_mu_m = -dev / (b * b)
        g_ls_m = 1.0 - z * z
    else:
        raise ValueError(f"unknown density family {family!r}")
    matched = float(softplus(-l[i]).sum() + nll_axes.sum())
    unmatched = float(softplus(l[A.unmatched]).sum())

    g_mu = np.zeros_like(mu)
    g_mu[i] = g_mu_m
    g_ls = np.zeros_like(params.log_scale)
    g_ls[i] = g_ls_m
    g_l = np.zeros_like(l)
    g_l[i] = r[i] - 1.0
    g_l[A.unmatched] = r[A.unmatched]
    grad = PredictionParams(g_mu, g_mu.copy(), g_l, g_ls)
    return LossReport(matched + unmatched, matched, unmatched, grad, A)


def finite_difference_check(loss_fn, params, truth, h=1e-5, coords=None, floor=1e-6):
    """Max relative error between analytic and central-difference gradients.

    The matching is re-solved at every perturbed point; a change of matching
    raises ``ValueError`` because the gradient is not defined there.
    ``coords`` optionally restricts the check to flat parameter indices.
    """
    base = loss_fn(params, truth)
    pairs = base.assignment.pairs if base.assignment is not None else None
    analytic = base.gradient.flat()
    x0 = params.flat()
    idx = range(len(x0)) if coords is None else coords
    worst = 0.0
    for k in idx:
        xp, xm = x0.copy(), x0.copy()
        xp[k] += h
        xm[k] -= h
        rp = loss_fn(params.with_flat(xp), truth)
        rm = loss_fn(params.with_flat(xm), truth)
        if pairs is not None and (rp.assignment.pairs != pairs or rm.assignment.pairs != pairs):
            raise ValueError("matching switches within the finite-difference step")
        num = (rp.total - rm.total) / (2 * h)
        a = analytic[k]
        err = abs(a - num) / max(abs(a), abs(num), floor)
        worst = max(worst, err)
    return worst
