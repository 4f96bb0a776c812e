"""Pinhole depth camera: one ray per pixel, nearest hit over every scene primitive."""
from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from ..vision import DepthImage
from . import geometry as G


@dataclass(frozen=True)
class SensorConfig:
    height: int = 64
    width: int = 64
    fov_deg: float = 90.0
    max_range: float = 20.0


@lru_cache(maxsize=16)
def _body_rays(height: int, width: int, fov_deg: float) -> np.ndarray:
    """Unit ray directions in the body frame (forward, left, up), row-major.

    The principal point sits at pixel (height/2, width/2), so that pixel looks
    straight along the forward axis.
    """
    f = (0.5 * width) / math.tan(math.radians(fov_deg) / 2.0)
    rows, cols = np.meshgrid(np.arange(height), np.arange(width), indexing="ij")
    fwd = np.ones(height * width)
    left = -(cols.reshape(-1) - 0.5 * width) / f
    up = -(rows.reshape(-1) - 0.5 * height) / f
    d = np.stack([fwd, left, up], axis=1)
    d /= np.linalg.norm(d, axis=1, keepdims=True)
    d.setflags(write=False)
    return d


def world_rays(yaw: float, sensor: SensorConfig) -> np.ndarray:
    b = _body_rays(sensor.height, sensor.width, float(sensor.fov_deg))
    c, s = math.cos(yaw), math.sin(yaw)
    return np.stack([c * b[:, 0] - s * b[:, 1], s * b[:, 0] + c * b[:, 1], b[:, 2]], axis=1)


def _scene_arrays(spec):
    cyl = spec.cylinders
    if cyl:
        cc = np.array([c.center for c in cyl], dtype=np.float64)
        cr = np.array([c.radius for c in cyl], dtype=np.float64)
        czl = np.array([c.z_lo for c in cyl])
        czh = np.array([c.z_hi for c in cyl])
    else:
        cc, cr, czl, czh = np.zeros((0, 3)), np.zeros(0), np.zeros(0), np.zeros(0)
    if spec.boxes:
        bc = np.array([b.center for b in spec.boxes], dtype=np.float64)
        bh = np.array([b.half_extents for b in spec.boxes], dtype=np.float64)
    else:
        bc, bh = np.zeros((0, 3)), np.zeros((0, 3))
    return cc, cr, czl, czh, bc, bh


def raycast(origin, yaw: float, spec, sensor: SensorConfig, others=(), other_radius: float = 0.3) -> np.ndarray:
    """True nearest-hit distance per pixel (``inf`` for no hit within range), shape (H, W)."""
    o = np.asarray(origin, dtype=np.float64)
    d = world_rays(yaw, sensor)
    cc, cr, czl, czh, bc, bh = _scene_arrays(spec)
    t = G.ray_cylinders(o, d, cc, cr, czl, czh)
    t = np.minimum(t, G.ray_boxes(o, d, bc, bh))
    if len(others):
        t = np.minimum(t, G.ray_spheres(o, d, np.asarray(others, dtype=np.float64), other_radius))
    if spec.terrain is not None:
        limit = np.minimum(t, sensor.max_range)
        t = np.minimum(t, G.ray_heightfield(o, d, spec.terrain, limit))
    t = np.where(t <= sensor.max_range, t, np.inf)
    return t.reshape(sensor.height, sensor.width)


def texture_offset(points: np.ndarray, texture) -> np.ndarray:
    if texture.amplitude == 0:
        return np.zeros(points.shape[0])
    f = texture.frequency
    p0, p1, p2 = texture.phases
    return texture.amplitude * (np.sin(f * points[:, 0] + p0) * np.sin(f * points[:, 1] + p1)
                                * np.cos(f * points[:, 2] + p2))


def render_from_pose(origin, yaw: float, spec, sensor: SensorConfig, others=(), other_radius: float = 0.3) -> DepthImage:
    t = raycast(origin, yaw, spec, sensor, others, other_radius).reshape(-1)
    depth = np.full(t.shape, float(sensor.max_range))
    hit = np.isfinite(t)
    if np.any(hit):
        d = world_rays(yaw, sensor)[hit]
        pts = np.asarray(origin, dtype=np.float64)[None, :] + t[hit, None] * d
        depth[hit] = np.clip(t[hit] + texture_offset(pts, spec.texture), 0.0, sensor.max_range)
    return DepthImage(depth.reshape(sensor.height, sensor.width), float(sensor.max_range))
