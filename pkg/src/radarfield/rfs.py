"""Bernoulli / multi-Bernoulli random finite sets over 3D radar detections."""
from __future__ import annotations

import csv
import itertools
import json
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.special import ndtri

from .geometry import GAUSSIAN, LAPLACE

__all__ = ["AxisDensity", "BernoulliComponent", "MultiBernoulli", "PointCloud",
           "axis_log_density", "log_density_terms", "bernoulli_set_log_density",
           "mb_exact_set_log_density", "mb_sample", "logsumexp",
           "write_cloud_jsonl", "read_cloud_jsonl", "write_cloud_csv",
           "read_cloud_csv", "read_cloud"]

LOG_SQRT_2PI = 0.5 * math.log(2.0 * math.pi)
ATTRIBUTE_KEYS = ("amplitude", "range_rate", "mode", "quality")


@dataclass(frozen=True)
class AxisDensity:
    family: str
    mu: float
    scale: float

    def __post_init__(self):
        if self.family not in (LAPLACE, GAUSSIAN):
            raise ValueError(f"unknown density family {self.family!r}")
        if not self.scale > 0:
            raise ValueError("density scale must be positive")


@dataclass(frozen=True)
class BernoulliComponent:
    r: float
    x: AxisDensity
    y: AxisDensity
    z: AxisDensity
    nff_anchor: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        if not 0.0 <= self.r <= 1.0:
            raise ValueError("existence probability must lie in [0, 1]")

    @property
    def axes(self):
        return (self.x, self.y, self.z)


@dataclass(frozen=True)
class MultiBernoulli:
    """Independent Bernoulli components stored as arrays.

    ``mu`` and ``scale`` are (N, 3); ``r`` is (N,).
    """

    r: np.ndarray
    mu: np.ndarray
    scale: np.ndarray
    family: str = LAPLACE

    def __post_init__(self):
        r = np.asarray(self.r, dtype=float).reshape(-1)
        mu = np.asarray(self.mu, dtype=float).reshape(-1, 3)
        scale = np.broadcast_to(np.asarray(self.scale, dtype=float), mu.shape).copy()
        if len(r) == 0:
            raise ValueError("multi-Bernoulli needs at least one component")
        if len(mu) != len(r):
            raise ValueError("r and mu disagree in length")
        if np.any((r < 0) | (r > 1)) or np.any(scale <= 0):
            raise ValueError("invalid multi-Bernoulli parameters")
        if self.family not in (LAPLACE, GAUSSIAN):
            raise ValueError(f"unknown density family {self.family!r}")
        object.__setattr__(self, "r", r)
        object.__setattr__(self, "mu", mu)
        object.__setattr__(self, "scale", scale)

    def __len__(self):
        return len(self.r)

    @classmethod
    def from_components(cls, components):
        comps = list(components)
        family = comps[0].x.family
        return cls(np.array([c.r for c in comps]),
                   np.array([[a.mu for a in c.axes] for c in comps]),
                   np.array([[a.scale for a in c.axes] for c in comps]), family)

    def component(self, i):
        ax = [AxisDensity(self.family, float(self.mu[i, k]), float(self.scale[i, k]))
              for k in range(3)]
        return BernoulliComponent(float(self.r[i]), *ax)


@dataclass
class PointCloud:
    """Finite set of sensor-frame detections with optional per-point attributes."""

    points: np.ndarray = field(default_factory=lambda: np.zeros((0, 3)))
    attributes: dict = field(default_factory=dict)

    def __post_init__(self):
        self.points = np.asarray(self.points, dtype=float).reshape(-1, 3)
        if not np.all(np.isfinite(self.points)):
            raise ValueError("point coordinates must be finite")
        self.attributes = {k: np.asarray(v) for k, v in self.attributes.items()}
        for k, v in self.attributes.items():
            if len(v) != len(self.points):
                raise ValueError(f"attribute {k!r} length mismatch")

    def __len__(self):
        return len(self.points)

    def subset(self, mask):
        return PointCloud(self.points[mask], {k: v[mask] for k, v in self.attributes.items()})

    def within_range(self, max_range):
        return self.subset(np.linalg.norm(self.points, axis=1) <= max_range)


def log_density_terms(family, v, mu, scale):
    """Elementwise per-axis log density; broadcasts over arrays."""
    v, mu, scale = (np.asarray(a, dtype=float) for a in (v, mu, scale))
    if family == LAPLACE:
        return -np.log(2.0 * scale) - np.abs(v - mu) / scale
    if family == GAUSSIAN:
        return -np.log(scale) - LOG_SQRT_2PI - 0.5 * ((v - mu) / scale) ** 2
    raise ValueError(f"unknown density family {family!r}")


def axis_log_density(d, v):
    return float(log_density_terms(d.family, v, d.mu, d.scale))


def _log(p):
    with np.errstate(divide="ignore"):
        return np.log(p)


def bernoulli_set_log_density(c, points):
    """Log of the Bernoulli set density for an empty or one-point set."""
    pts = np.asarray(points, dtype=float).reshape(-1, 3)
    if len(pts) == 0:
        return float(_log(1.0 - c.r))
    if len(pts) > 1:
        return -math.inf
    y = pts[0]
    return float(_log(c.r) + sum(axis_log_density(a, y[k]) for k, a in enumerate(c.axes)))


def logsumexp(a):
    a = np.asarray(a, dtype=float).ravel()
    if a.size == 0:
        return -math.inf
    m = a.max()
    if not np.isfinite(m):
        return float(m)
    return float(m + np.log(np.exp(a - m).sum()))


def mb_exact_set_log_density(mb, cloud):
    """Exact multi-Bernoulli log density by enumerating injective assignments.

    Exponential cost; meant for small instances (a handful of points).
    """
    pts = cloud.points if isinstance(cloud, PointCloud) else np.asarray(cloud, float).reshape(-1, 3)
    n, m = len(mb), len(pts)
    log_miss = _log(1.0 - mb.r)
    if m > n:
        return -math.inf
    if m == 0:
        return float(log_miss.sum())
    # detect[i, j]: component i generates point j
    detect = _log(mb.r)[:, None] + log_density_terms(
        mb.family, pts[None, :, :], mb.mu[:, None, :], mb.scale[:, None, :]).sum(axis=-1)
    perms = np.array(list(itertools.permutations(range(n), m)))
    cols = np.arange(m)
    hit = detect[perms, cols].sum(axis=1)
    used = np.zeros((len(perms), n), dtype=bool)
    used[np.arange(len(perms))[:, None], perms] = True
    missed = np.where(used, 0.0, log_miss[None, :]).sum(axis=1)
    return logsumexp(hit + missed)


def _laplace_icdf(u):
    c = u - 0.5
    return -np.sign(c) * np.log1p(-2.0 * np.abs(c))


def mb_sample(mb, rng_seed=0):
    """Draw one point cloud; components are sampled independently.

    Uniforms are drawn for every component regardless of existence so the
    stream layout only depends on the component count.
    """
    rng = np.random.default_rng(rng_seed)
    n = len(mb)
    u_exist = rng.random(n)
    u_axes = rng.random((n, 3))
    tiny = np.finfo(float).tiny
    u_axes = np.clip(u_axes, tiny, 1.0 - 2**-53)
    if mb.family == LAPLACE:
        z = _laplace_icdf(u_axes)
    else:
        z = ndtri(u_axes)
    keep = u_exist < mb.r
    pts = mb.mu[keep] + mb.scale[keep] * z[keep]
    return PointCloud(pts, {"component": np.flatnonzero(keep)})


# -- serialisation ----------------------------------------------------------

def _fmt(v):
    v = float(v)
    if not math.isfinite(v):
        raise ValueError("refusing to serialise a non-finite value")
    return repr(v)


def _attr_value(v):
    return v.item() if hasattr(v, "item") else v


def write_cloud_jsonl(cloud, path):
    keys = sorted(cloud.attributes)
    with open(path, "w") as fh:
        for i, p in enumerate(cloud.points):
            rec = {"x": float(p[0]), "y": float(p[1]), "z": float(p[2])}
            for k in keys:
                rec[k] = _attr_value(cloud.attributes[k][i])
            fh.write(json.dumps(rec) + "\n")


def read_cloud_jsonl(path):
    pts, attrs = [], {}
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
                pts.append([float(rec.pop("x")), float(rec.pop("y")), float(rec.pop("z"))])
            except (ValueError, KeyError) as exc:
                raise ValueError(f"{path}:{lineno}: malformed point record ({exc})") from exc
            for k, v in rec.items():
                attrs.setdefault(k, []).append(v)
    return PointCloud(np.array(pts).reshape(-1, 3), attrs)


def write_cloud_csv(cloud, path):
    keys = sorted(cloud.attributes)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["x", "y", "z", *keys])
        for i, p in enumerate(cloud.points):
            w.writerow([_fmt(p[0]), _fmt(p[1]), _fmt(p[2]),
                        *[_attr_value(cloud.attributes[k][i]) for k in keys]])


def read_cloud_csv(path):
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or header[:3] != ["x", "y", "z"]:
            raise ValueError(f"{path}: expected header starting with x,y,z")
        pts, cols = [], {k: [] for k in header[3:]}
        for lineno, row in enumerate(reader, 2):
            if len(row) != len(header):
                raise ValueError(f"{path}:{lineno}: expected {len(header)} fields")
            try:
                pts.append([float(v) for v in row[:3]])
            except ValueError as exc:
                raise ValueError(f"{path}:{lineno}: {exc}") from exc
            for k, v in zip(header[3:], row[3:]):
                cols[k].append(_parse_scalar(v))
    return PointCloud(np.array(pts).reshape(-1, 3), cols)


def _parse_scalar(v):
    for cast in (int, float):
        try:
            return cast(v)
        except ValueError:
            pass
    return v


def read_cloud(path):
    """Read a point cloud, choosing the format from the file suffix."""
    path = str(path)
    if path.endswith(".jsonl"):
        return read_cloud_jsonl(path)
    return read_cloud_csv(path)
