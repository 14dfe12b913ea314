"""Analytic ray casting and signed distances for vertical cylinders and boxes.

All functions are vectorized: rays are rows of ``(R, 3)`` arrays and
obstacles are packed into flat arrays, so a whole LiDAR sweep against a whole
scene is a handful of numpy calls. Misses are reported as ``inf``.
"""

import math

import numba
import numpy as np

__all__ = [
    "cast_scene",
    "ray_cylinders",
    "ray_boxes",
    "sdf_cylinders",
    "sdf_boxes",
]


def _as_rays(origins, directions):
    d = np.atleast_2d(np.asarray(directions, dtype=float))
    o = np.asarray(origins, dtype=float)
    o = np.broadcast_to(o, d.shape) if o.ndim == 1 else np.atleast_2d(o)
    return o, d


def ray_cylinders(origins, directions, centers, radii, z_lo, z_hi):
    """Distance along each ray to the first cylinder surface, per cylinder.

    Cylinders are vertical and capped: side wall of radius ``radii`` around
    ``centers`` (K, 2), bounded by the planes ``z_lo`` and ``z_hi``.

    Returns an ``(R, K)`` array of the smallest positive hit parameter, ``inf``
    where the ray misses.
    """
    o, d = _as_rays(origins, directions)
    centers = np.asarray(centers, dtype=float).reshape(-1, 2)
    radii = np.asarray(radii, dtype=float)
    z_lo = np.asarray(z_lo, dtype=float)
    z_hi = np.asarray(z_hi, dtype=float)
    R, K = d.shape[0], centers.shape[0]
    if K == 0:
        return np.full((R, 0), np.inf)

    ox, oy, oz = o[:, 0:1], o[:, 1:2], o[:, 2:3]
    dx, dy, dz = d[:, 0:1], d[:, 1:2], d[:, 2:3]
    fx = ox - centers[None, :, 0]
    fy = oy - centers[None, :, 1]
    r2 = radii[None, :] ** 2

    a = dx * dx + dy * dy
    b = fx * dx + fy * dy
    c = fx * fx + fy * fy - r2
    disc = b * b - a * c

    best = np.full((R, K), np.inf)
    with np.errstate(invalid="ignore", divide="ignore"):
        sq = np.sqrt(np.where(disc >= 0, disc, np.nan))
        for sign in (-1.0, 1.0):
            t = (-b + sign * sq) / a
            z = oz + t * dz
            ok = (a > 0) & (t > 0) & (z >= z_lo) & (z <= z_hi)
            best = np.where(ok & (t < best), t, best)

        for plane in (z_lo, z_hi):
            t = (plane[None, :] - oz) / dz
            x = fx + t * dx
            y = fy + t * dy
            ok = (dz != 0) & (t > 0) & (x * x + y * y <= r2)
            best = np.where(ok & (t < best), t, best)
    return best


def ray_boxes(origins, directions, lo, hi):
    """Slab-method ray/box intersection, ``(R, B)`` hit parameters.

    A ray starting inside a box reports its exit distance.
    """
    o, d = _as_rays(origins, directions)
    lo = np.asarray(lo, dtype=float).reshape(-1, 3)
    hi = np.asarray(hi, dtype=float).reshape(-1, 3)
    R, B = d.shape[0], lo.shape[0]
    if B == 0:
        return np.full((R, 0), np.inf)

    tnear = np.full((R, B), -np.inf)
    tfar = np.full((R, B), np.inf)
    with np.errstate(divide="ignore", invalid="ignore"):
        for j in range(3):
            oj = o[:, j:j + 1]
            dj = d[:, j:j + 1]
            t1 = (lo[None, :, j] - oj) / dj
            t2 = (hi[None, :, j] - oj) / dj
            tmin = np.minimum(t1, t2)
            tmax = np.maximum(t1, t2)
            parallel = dj == 0
            inside = (oj >= lo[None, :, j]) & (oj <= hi[None, :, j])
            tmin = np.where(parallel, np.where(inside, -np.inf, np.inf), tmin)
            tmax = np.where(parallel, np.where(inside, np.inf, -np.inf), tmax)
            tnear = np.maximum(tnear, tmin)
            tfar = np.minimum(tfar, tmax)
    hit = (tnear <= tfar) & (tfar > 0)
    t = np.where(tnear > 0, tnear, tfar)
    return np.where(hit, t, np.inf)


def sdf_cylinders(points, centers, radii, z_lo, z_hi):
    """Signed distance from each point to each capped cylinder, ``(P, K)``.

    Negative inside.
    """
    p = np.atleast_2d(np.asarray(points, dtype=float))
    centers = np.asarray(centers, dtype=float).reshape(-1, 2)
    if centers.shape[0] == 0:
        return np.full((p.shape[0], 0), np.inf)
    radii = np.asarray(radii, dtype=float)
    dr = np.hypot(p[:, 0:1] - centers[None, :, 0], p[:, 1:2] - centers[None, :, 1]) - radii[None, :]
    dz = np.maximum(np.asarray(z_lo)[None, :] - p[:, 2:3], p[:, 2:3] - np.asarray(z_hi)[None, :])
    outside = np.hypot(np.maximum(dr, 0.0), np.maximum(dz, 0.0))
    inside = np.minimum(np.maximum(dr, dz), 0.0)
    return outside + inside


def sdf_boxes(points, lo, hi):
    """Signed distance from each point to each axis-aligned box, ``(P, B)``."""
    p = np.atleast_2d(np.asarray(points, dtype=float))
    lo = np.asarray(lo, dtype=float).reshape(-1, 3)
    hi = np.asarray(hi, dtype=float).reshape(-1, 3)
    if lo.shape[0] == 0:
        return np.full((p.shape[0], 0), np.inf)
    center = 0.5 * (lo + hi)
    half = 0.5 * (hi - lo)
    q = np.abs(p[:, None, :] - center[None]) - half[None]
    outside = np.linalg.norm(np.maximum(q, 0.0), axis=2)
    inside = np.minimum(q.max(axis=2), 0.0)
    return outside + inside


@numba.njit(cache=True, nogil=True)
def _cast_scene(o, d, cc, cr, czl, czh, blo, bhi, d_max):
    R = d.shape[0]
    out = np.empty(R)
    ox, oy, oz = o[0], o[1], o[2]
    for i in range(R):
        dx, dy, dz = d[i, 0], d[i, 1], d[i, 2]
        best = math.inf
        a = dx * dx + dy * dy
        for k in range(cc.shape[0]):
            fx = ox - cc[k, 0]
            fy = oy - cc[k, 1]
            r2 = cr[k] * cr[k]
            if a > 0:
                b = fx * dx + fy * dy
                disc = b * b - a * (fx * fx + fy * fy - r2)
                if disc >= 0:
                    sq = math.sqrt(disc)
                    for t in ((-b - sq) / a, (-b + sq) / a):
                        z = oz + t * dz
                        if t > 0 and z >= czl[k] and z <= czh[k] and t < best:
                            best = t
            if dz != 0:
                for plane in (czl[k], czh[k]):
                    t = (plane - oz) / dz
                    x = fx + t * dx
                    y = fy + t * dy
                    if t > 0 and x * x + y * y <= r2 and t < best:
                        best = t
        for k in range(blo.shape[0]):
            tnear = -math.inf
            tfar = math.inf
            for j in range(3):
                oj = o[j]
                dj = d[i, j]
                if dj == 0:
                    if oj < blo[k, j] or oj > bhi[k, j]:
                        tnear = math.inf
                        tfar = -math.inf
                    continue
                t1 = (blo[k, j] - oj) / dj
                t2 = (bhi[k, j] - oj) / dj
                tnear = max(tnear, min(t1, t2))
                tfar = min(tfar, max(t1, t2))
            if tnear <= tfar and tfar > 0:
                t = tnear if tnear > 0 else tfar
                if t < best:
                    best = t
        out[i] = best if best <= d_max else math.inf
    return out


def cast_scene(origin, directions, cyl_centers, cyl_radii, cyl_zlo, cyl_zhi, box_lo, box_hi, d_max):
    """First hit over a whole scene for rays from one ``origin``; ``inf`` beyond ``d_max``.

    Compiled equivalent of ``min(ray_cylinders, ray_boxes)`` per ray.
    """
    f = np.float64
    return _cast_scene(np.ascontiguousarray(origin, dtype=f), np.ascontiguousarray(directions, dtype=f),
                       np.ascontiguousarray(np.reshape(cyl_centers, (-1, 2)), dtype=f),
                       np.ascontiguousarray(cyl_radii, dtype=f), np.ascontiguousarray(cyl_zlo, dtype=f),
                       np.ascontiguousarray(cyl_zhi, dtype=f),
                       np.ascontiguousarray(np.reshape(box_lo, (-1, 3)), dtype=f),
                       np.ascontiguousarray(np.reshape(box_hi, (-1, 3)), dtype=f), float(d_max))
