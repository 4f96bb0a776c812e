"""Vectorized ray intersections and point-to-surface distances.

Ray functions take origins ``o`` of shape (3,) and unit directions ``d`` of
shape (P, 3) and return the nearest positive hit distance per ray (``inf`` on
a miss).
"""
from __future__ import annotations

import numpy as np

_EPS = 1e-12


def ray_cylinders(o, d, centers, radii, z_lo, z_hi):
    """Finite vertical cylinders with flat caps.  centers: (K, 3)."""
    p = d.shape[0]
    if len(radii) == 0:
        return np.full(p, np.inf)
    px = o[0] - centers[:, 0]
    py = o[1] - centers[:, 1]
    r2 = radii * radii
    dx, dy, dz = d[:, 0:1], d[:, 1:2], d[:, 2:3]
    a = dx * dx + dy * dy
    b = 2.0 * (dx * px + dy * py)
    c = px * px + py * py - r2
    disc = b * b - 4.0 * a * c
    with np.errstate(invalid="ignore", divide="ignore"):
        t_side = (-b - np.sqrt(np.maximum(disc, 0.0))) / (2.0 * a)
    z_side = o[2] + t_side * dz
    side_ok = (disc >= 0) & (a > _EPS) & (t_side > 0) & (z_side >= z_lo) & (z_side <= z_hi)
    best = np.where(side_ok, t_side, np.inf)
    safe_dz = np.where(np.abs(dz) < _EPS, _EPS, dz)
    for zc in (z_lo, z_hi):
        t_cap = (zc - o[2]) / safe_dz
        qx = px + t_cap * dx
        qy = py + t_cap * dy
        cap_ok = (np.abs(dz) >= _EPS) & (t_cap > 0) & (qx * qx + qy * qy <= r2)
        best = np.minimum(best, np.where(cap_ok, t_cap, np.inf))
    return best.min(axis=1)


def ray_boxes(o, d, centers, halves):
    p = d.shape[0]
    if len(centers) == 0:
        return np.full(p, np.inf)
    lo = centers - halves
    hi = centers + halves
    safe = np.where(np.abs(d) < _EPS, np.copysign(_EPS, d + 0.0), d)
    inv = 1.0 / safe
    t1 = (lo[None, :, :] - o[None, None, :]) * inv[:, None, :]
    t2 = (hi[None, :, :] - o[None, None, :]) * inv[:, None, :]
    tmin = np.minimum(t1, t2).max(axis=2)
    tmax = np.maximum(t1, t2).min(axis=2)
    ok = (tmax >= tmin) & (tmin > 0)
    return np.where(ok, tmin, np.inf).min(axis=1)


def ray_spheres(o, d, centers, radius):
    p = d.shape[0]
    if len(centers) == 0:
        return np.full(p, np.inf)
    oc = o[None, :] - centers                # (K, 3)
    b = d @ oc.T                             # (P, K)
    c = np.sum(oc * oc, axis=1) - radius * radius
    disc = b * b - c
    t = -b - np.sqrt(np.maximum(disc, 0.0))
    ok = (disc >= 0) & (t > 0)
    return np.where(ok, t, np.inf).min(axis=1)


def ray_heightfield(o, d, terrain, t_limit, tol=1e-6, min_step=0.05, max_iter=800):
    """Nearest crossing of each ray with the terrain surface, up to ``t_limit``.

    Flat terrain is solved as a plane.  Otherwise rays advance by the vertical
    clearance divided by the fastest rate the clearance can shrink (a
    Lipschitz bound on the bilinear surface), never less than ``min_step``;
    a sign change triggers bisection.
    """
    p = d.shape[0]
    t_limit = np.broadcast_to(np.asarray(t_limit, dtype=np.float64), (p,))
    out = np.full(p, np.inf)
    dz = d[:, 2]
    if terrain.is_flat:
        with np.errstate(divide="ignore", invalid="ignore"):
            t = (terrain.h_max - o[2]) / dz
        ok = (dz < -_EPS) & (t > 0) & (t <= t_limit)
        out[ok] = t[ok]
        return out

    dxy = np.hypot(d[:, 0], d[:, 1])
    rate = terrain.lipschitz * dxy - dz
    idx = np.nonzero(rate > _EPS)[0]
    if o[2] - terrain.height(o[0], o[1]) <= 0:
        return np.zeros(p)
    t = np.zeros(idx.size)
    clear = np.full(idx.size, o[2] - float(terrain.height(o[0], o[1])))
    br_idx, br_lo, br_hi = [], [], []
    for _ in range(max_iter):
        if idx.size == 0:
            break
        step = np.maximum(clear / rate[idx], min_step)
        t_next = t + step
        pts = o[None, :] + t_next[:, None] * d[idx]
        clear_next = pts[:, 2] - terrain.height(pts[:, 0], pts[:, 1])
        within = t_next <= t_limit[idx] + min_step
        hit = within & (clear_next >= 0) & (clear_next <= tol)
        out[idx[hit]] = t_next[hit]
        crossed = within & (clear_next < 0)
        br_idx.append(idx[crossed])
        br_lo.append(t[crossed])
        br_hi.append(t_next[crossed])
        keep = (~hit) & (~crossed) & (t_next <= t_limit[idx])
        idx, t, clear = idx[keep], t_next[keep], clear_next[keep]
    if br_idx:
        bi = np.concatenate(br_idx)
        lo, hi = np.concatenate(br_lo), np.concatenate(br_hi)
        dd = d[bi]
        for _ in range(40):
            mid = 0.5 * (lo + hi)
            q = o[None, :] + mid[:, None] * dd
            below = q[:, 2] - terrain.height(q[:, 0], q[:, 1]) < 0
            hi = np.where(below, mid, hi)
            lo = np.where(below, lo, mid)
        out[bi] = lo
    out[out > t_limit] = np.inf
    return out


# -- distances ------------------------------------------------------------------
def point_cylinder_distance(q, centers, radii, z_lo, z_hi):
    """Signed distance from point q to each finite cylinder surface (negative inside)."""
    if len(radii) == 0:
        return np.empty(0)
    rho = np.hypot(q[0] - centers[:, 0], q[1] - centers[:, 1])
    dr = rho - radii
    dz = np.maximum(z_lo - q[2], q[2] - z_hi)
    outside = np.hypot(np.maximum(dr, 0.0), np.maximum(dz, 0.0))
    inside = np.minimum(np.maximum(dr, dz), 0.0)
    return outside + inside


def point_box_distance(q, centers, halves):
    if len(centers) == 0:
        return np.empty(0)
    dv = np.abs(q[None, :] - centers) - halves
    outside = np.linalg.norm(np.maximum(dv, 0.0), axis=1)
    inside = np.minimum(dv.max(axis=1), 0.0)
    return outside + inside


def bounds_distance(q, bounds) -> float:
    """Distance from q to the nearest face of the box (negative when outside)."""
    if bounds is None:
        return np.inf
    lo, hi = np.asarray(bounds[0]), np.asarray(bounds[1])
    return float(min(np.min(q - lo), np.min(hi - q)))
