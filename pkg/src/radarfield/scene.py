"""Analytic signed-distance world standing in for a learned feature field.

A :class:`Scene` answers ``(x, t, d) -> (s, f)`` queries: ``s`` is the exact
signed distance to the nearest active primitive and ``f`` a fixed
per-material unit vector attenuated by ``exp(-max(s, 0))``. Features do not
depend on the view direction.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field, replace

import numpy as np

from .geometry import yaw_matrix

__all__ = ["Sphere", "Box", "HalfSpace", "Primitive", "Actor", "Scene",
           "query", "query_points", "remove_actor", "load_scene", "save_scene",
           "scene_to_dict", "scene_from_dict", "material_feature"]


def _vec(v, n=3):
    a = np.asarray(v, dtype=float).reshape(n)
    a.flags.writeable = False
    return a


@dataclass(frozen=True)
class Sphere:
    center: np.ndarray
    radius: float

    def __post_init__(self):
        object.__setattr__(self, "center", _vec(self.center))
        if not self.radius > 0:
            raise ValueError("sphere radius must be positive")

    def sdf(self, x):
        return np.linalg.norm(x - self.center, axis=-1) - self.radius

    def to_dict(self):
        return {"type": "sphere", "center": self.center.tolist(), "radius": self.radius}


@dataclass(frozen=True)
class Box:
    center: np.ndarray
    half_extents: np.ndarray
    rotation: np.ndarray = field(default_factory=lambda: np.eye(3))

    def __post_init__(self):
        object.__setattr__(self, "center", _vec(self.center))
        object.__setattr__(self, "half_extents", _vec(self.half_extents))
        rot = np.asarray(self.rotation, dtype=float).reshape(3, 3)
        rot.flags.writeable = False
        object.__setattr__(self, "rotation", rot)
        if np.any(self.half_extents <= 0):
            raise ValueError("box half extents must be positive")

    def sdf(self, x):
        local = (x - self.center) @ self.rotation
        q = np.abs(local) - self.half_extents
        outside = np.linalg.norm(np.maximum(q, 0.0), axis=-1)
        inside = np.minimum(q.max(axis=-1), 0.0)
        return outside + inside

    def to_dict(self):
        return {"type": "box", "center": self.center.tolist(),
                "half_extents": self.half_extents.tolist(),
                "rotation": self.rotation.tolist()}


@dataclass(frozen=True)
class HalfSpace:
    """Solid ``{x : n.x <= offset}``; its boundary is the plane n.x = offset."""

    normal: np.ndarray
    offset: float = 0.0

    def __post_init__(self):
        n = _vec(self.normal)
        if abs(np.linalg.norm(n) - 1.0) > 1e-9:
            raise ValueError("half-space normal must be unit length")
        object.__setattr__(self, "normal", n)

    def sdf(self, x):
        return x @ self.normal - self.offset

    def to_dict(self):
        return {"type": "halfspace", "normal": self.normal.tolist(), "offset": self.offset}


_SHAPES = {"sphere": Sphere, "box": Box, "halfspace": HalfSpace}


@dataclass(frozen=True)
class Primitive:
    shape: object
    material_id: int = 0

    def sdf(self, x):
        return self.shape.sdf(x)

    def to_dict(self):
        return {"shape": self.shape.to_dict(), "material_id": int(self.material_id)}

    @classmethod
    def from_dict(cls, d):
        shape = dict(d["shape"])
        kind = shape.pop("type")
        try:
            shape_cls = _SHAPES[kind]
        except KeyError:
            raise ValueError(f"unknown primitive type {kind!r}") from None
        return cls(shape_cls(**shape), int(d.get("material_id", 0)))


@dataclass(frozen=True)
class Actor:
    """Rigid body moving with constant velocity and yaw rate.

    The primitive is expressed in the actor frame, whose origin sits at
    ``position0 + velocity * t`` and is yawed by ``yaw_rate * t``.
    """

    primitive: Primitive
    position0: np.ndarray = field(default_factory=lambda: np.zeros(3))
    velocity: np.ndarray = field(default_factory=lambda: np.zeros(3))
    yaw_rate: float = 0.0
    active: bool = True

    def __post_init__(self):
        object.__setattr__(self, "position0", _vec(self.position0))
        object.__setattr__(self, "velocity", _vec(self.velocity))
        if not (np.all(np.isfinite(self.position0)) and np.all(np.isfinite(self.velocity))
                and np.isfinite(self.yaw_rate)):
            raise ValueError("actor trajectory must be finite")

    def sdf(self, x, t):
        origin = self.position0 + self.velocity * t
        rot = yaw_matrix(self.yaw_rate * t)
        return self.primitive.sdf((x - origin) @ rot)

    def to_dict(self):
        return {"primitive": self.primitive.to_dict(), "position0": self.position0.tolist(),
                "velocity": self.velocity.tolist(), "yaw_rate": self.yaw_rate,
                "active": self.active}

    @classmethod
    def from_dict(cls, d):
        return cls(Primitive.from_dict(d["primitive"]), d.get("position0", [0, 0, 0]),
                   d.get("velocity", [0, 0, 0]), float(d.get("yaw_rate", 0.0)),
                   bool(d.get("active", True)))


def material_feature(material_id, feature_seed, feature_dim):
    """Deterministic unit vector for a material."""
    rng = np.random.default_rng([int(feature_seed) & (2**64 - 1), int(material_id)])
    v = rng.standard_normal(feature_dim)
    return v / np.linalg.norm(v)


@dataclass(frozen=True)
class Scene:
    statics: tuple
    actors: tuple = ()
    feature_dim: int = 32
    feature_seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "statics", tuple(self.statics))
        object.__setattr__(self, "actors", tuple(self.actors))
        if self.feature_dim < 1:
            raise ValueError("feature_dim must be >= 1")
        if not self.statics and not self.actors:
            raise ValueError("scene needs at least one primitive")

    def material_table(self):
        ids = sorted({p.material_id for p in self.statics}
                     | {a.primitive.material_id for a in self.actors})
        return {m: material_feature(m, self.feature_seed, self.feature_dim) for m in ids}


def query_points(scene, x, t=0.0):
    """Vectorised query over points (..., 3). Returns (s, f, material_id)."""
    x = np.asarray(x, dtype=float)
    shape = x.shape[:-1]
    flat = x.reshape(-1, 3)
    dists, mats = [], []
    for p in scene.statics:
        dists.append(p.sdf(flat))
        mats.append(p.material_id)
    for a in scene.actors:
        if a.active:
            dists.append(a.sdf(flat, t))
            mats.append(a.primitive.material_id)
    if not dists:
        s = np.full(len(flat), np.inf)
        mat = np.full(len(flat), -1)
        f = np.zeros((len(flat), scene.feature_dim))
        return s.reshape(shape), f.reshape(shape + (scene.feature_dim,)), mat.reshape(shape)
    # stable sort by material id so argmin ties resolve to the lowest id
    order = np.argsort(mats, kind="stable")
    D = np.stack([dists[k] for k in order])
    M = np.asarray(mats)[order]
    nearest = np.argmin(D, axis=0)
    s = D[nearest, np.arange(D.shape[1])]
    mat = M[nearest]
    table = scene.material_table()
    vecs = np.stack([table[m] for m in M])
    f = vecs[nearest] * np.exp(-np.maximum(s, 0.0))[:, None]
    return s.reshape(shape), f.reshape(shape + (scene.feature_dim,)), mat.reshape(shape)


def query(scene, x, t=0.0, d=None):
    """Single-point query returning (signed distance, feature vector)."""
    if d is not None and abs(np.linalg.norm(d) - 1.0) > 1e-6:
        raise ValueError("view direction must be unit length")
    s, f, _ = query_points(scene, np.asarray(x, dtype=float)[None], t)
    return float(s[0]), f[0]


def remove_actor(scene, index):
    if not 0 <= index < len(scene.actors):
        raise IndexError(f"actor index {index} out of range")
    actors = list(scene.actors)
    actors[index] = replace(actors[index], active=False)
    return replace(scene, actors=tuple(actors))


def scene_to_dict(scene):
    return {"statics": [p.to_dict() for p in scene.statics],
            "actors": [a.to_dict() for a in scene.actors],
            "feature_dim": scene.feature_dim, "feature_seed": scene.feature_seed}


def scene_from_dict(d):
    unknown = set(d) - {"statics", "actors", "feature_dim", "feature_seed"}
    if unknown:
        raise ValueError(f"unknown scene keys: {sorted(unknown)}")
    return Scene(tuple(Primitive.from_dict(p) for p in d.get("statics", [])),
                 tuple(Actor.from_dict(a) for a in d.get("actors", [])),
                 int(d.get("feature_dim", 32)), int(d.get("feature_seed", 0)))


def load_scene(path):
    with open(path) as fh:
        return scene_from_dict(json.load(fh))


def save_scene(scene, path):
    with open(path, "w") as fh:
        json.dump(scene_to_dict(scene), fh, indent=2)
        fh.write("\n")
