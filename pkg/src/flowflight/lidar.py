"""LiDAR sweep simulation and the distance-map encoding.

Grids are stored ``[azimuth, elevation]``: a ``108 x 18`` raycast grid is an
array of shape ``(108, 18)`` whose first axis is the image width. Partition
numbers ``(m, n)`` are 1-based as in the encoding formula; array indices are
``(m - 1, n - 1)``.
"""

import math
from dataclasses import dataclass

import numba
import numpy as np

from .errors import ConfigError, OutOfFOVError
from .world import cast_rays

__all__ = [
    "LidarConfig",
    "ScanFrame",
    "RaycastGrid",
    "DistanceMap",
    "partition_index",
    "partition_indices",
    "scan",
    "encode_raycast_grid",
    "encode_distance_map",
    "write_pgm",
    "read_pgm",
]

POOL = 3


@dataclass
class LidarConfig:
    h_fov: tuple = (-math.pi, math.pi)
    v_fov: tuple = (math.radians(-7.0), math.radians(52.0))
    r_h: int = 108
    r_v: int = 18
    d_max: float = 10.0
    height_band: tuple = (-0.5, 1.5)
    rays_per_partition: int = 1
    jitter: bool = True

    @property
    def i_h(self):
        return (self.h_fov[1] - self.h_fov[0]) / self.r_h

    @property
    def i_v(self):
        return (self.v_fov[1] - self.v_fov[0]) / self.r_v

    def validate(self, path="lidar"):
        if not self.h_fov[0] < self.h_fov[1]:
            raise ConfigError(f"{path}.h_fov", "lower bound must be < upper bound")
        if not self.v_fov[0] < self.v_fov[1]:
            raise ConfigError(f"{path}.v_fov", "lower bound must be < upper bound")
        if self.h_fov[1] - self.h_fov[0] > 2 * math.pi + 1e-12:
            raise ConfigError(f"{path}.h_fov", "span exceeds 360 degrees")
        if not (-math.pi / 2 <= self.v_fov[0] and self.v_fov[1] <= math.pi / 2):
            raise ConfigError(f"{path}.v_fov", "must lie in [-pi/2, pi/2]")
        if not self.d_max > 0:
            raise ConfigError(f"{path}.d_max", "must be > 0")
        for name in ("r_h", "r_v"):
            n = getattr(self, name)
            if n < POOL or n % POOL:
                raise ConfigError(f"{path}.{name}", f"must be a positive multiple of {POOL}")
        if self.rays_per_partition < 1:
            raise ConfigError(f"{path}.rays_per_partition", "must be >= 1")
        if not self.height_band[0] < self.height_band[1]:
            raise ConfigError(f"{path}.height_band", "lower bound must be < upper bound")


@dataclass(eq=False)
class ScanFrame:
    points: np.ndarray  # (N, 3), body frame
    timestamp: float = 0.0

    @property
    def distances(self):
        return np.sqrt((self.points ** 2).sum(axis=1)) if len(self.points) else np.zeros(0)


@dataclass(eq=False)
class RaycastGrid:
    distance: np.ndarray  # (r_h, r_v), d_max where empty
    point: np.ndarray  # (r_h, r_v, 3), nan where empty
    source: np.ndarray  # (r_h, r_v) index into the frame's points, -1 where empty
    d_max: float


@dataclass(eq=False)
class DistanceMap:
    values: np.ndarray  # (r_h / 3, r_v / 3), meters
    d_max: float

    @property
    def normalized(self):
        return self.values / self.d_max


@numba.njit(cache=True, nogil=True)
def _cells(th, tv, d, h0, h1, v0, v1, ih, iv, r_h, r_v):
    N = th.shape[0]
    m = np.zeros(N, dtype=np.int64)
    n = np.zeros(N, dtype=np.int64)
    inside = np.zeros(N, dtype=np.bool_)
    for i in range(N):
        if d[i] > 0 and h0 <= th[i] <= h1 and v0 <= tv[i] <= v1:
            inside[i] = True
            m[i] = min(max(math.ceil((th[i] - h0) / ih), 1), r_h)
            n[i] = min(max(math.ceil((tv[i] - v0) / iv), 1), r_v)
    return m, n, inside


def partition_indices(points, cfg, d=None):
    """Vectorized partition lookup.

    Returns ``(m, n, inside)`` with 1-based ``m, n`` (0 where outside the FOV).
    """
    p = np.atleast_2d(np.asarray(points, dtype=float))
    if d is None:
        d = np.sqrt((p ** 2).sum(axis=1))
    with np.errstate(invalid="ignore", divide="ignore"):
        th = np.arctan2(p[:, 1], p[:, 0])
        tv = np.arcsin(np.clip(p[:, 2] / d, -1.0, 1.0))
    return _cells(th, tv, d, float(cfg.h_fov[0]), float(cfg.h_fov[1]), float(cfg.v_fov[0]), float(cfg.v_fov[1]),
                  float(cfg.i_h), float(cfg.i_v), int(cfg.r_h), int(cfg.r_v))


def partition_index(p, cfg):
    """Partition ``(m, n, s)`` of one body-frame point, ``s = r_h (n - 1) + m``."""
    m, n, inside = partition_indices(np.asarray(p, dtype=float)[None, :], cfg)
    if not inside[0]:
        raise OutOfFOVError(f"point {p!r} is outside the field of view")
    m, n = int(m[0]), int(n[0])
    return m, n, cfg.r_h * (n - 1) + m


@numba.njit(cache=True, nogil=True)
def _directions_kernel(fu, fv, h0, ih, v0, iv):
    R, V, K = fu.shape
    out = np.empty((R * V * K, 3))
    n = 0
    for m in range(R):
        for v in range(V):
            for j in range(K):
                th = h0 + (m + (j + fu[m, v, j]) / K) * ih
                tv = v0 + (v + fv[m, v, j]) * iv
                ct = math.cos(tv)
                out[n, 0] = ct * math.cos(th)
                out[n, 1] = ct * math.sin(th)
                out[n, 2] = math.sin(tv)
                n += 1
    return out


def _ray_directions(cfg, rng):
    shape = (cfg.r_h, cfg.r_v, cfg.rays_per_partition)
    if cfg.jitter and rng is not None:
        # stratified sample, kept strictly inside the partition
        eps = 1e-6
        fu = eps + (1.0 - 2.0 * eps) * rng.random(shape)
        fv = eps + (1.0 - 2.0 * eps) * rng.random(shape)
    else:
        fu = np.full(shape, 0.5)
        fv = np.full(shape, 0.5)
    return _directions_kernel(fu, fv, float(cfg.h_fov[0]), float(cfg.i_h), float(cfg.v_fov[0]), float(cfg.i_v))


_DIRECTION_CACHE = {}


def ray_directions(cfg, rng=None):
    """Unit ray directions for one sweep, ``(r_h * r_v * k, 3)``."""
    if cfg.jitter and rng is not None:
        return _ray_directions(cfg, rng)
    key = (cfg.h_fov, cfg.v_fov, cfg.r_h, cfg.r_v, cfg.rays_per_partition)
    if key not in _DIRECTION_CACHE:
        dirs = _ray_directions(cfg, None)
        dirs.setflags(write=False)
        _DIRECTION_CACHE[key] = dirs
    return _DIRECTION_CACHE[key]


def scan(world, cfg, rng=None):
    """Simulate one sweep from the quadrotor position.

    Rays are stratified inside every partition and jittered with ``rng`` when
    ``cfg.jitter`` is set. Points outside the relative height band are dropped.
    """
    dirs = ray_directions(cfg, rng)
    t = cast_rays(world, world.quad.p, dirs, cfg.d_max)
    hit = np.isfinite(t)
    pts = dirs[hit] * t[hit, None]
    keep = (pts[:, 2] >= cfg.height_band[0]) & (pts[:, 2] <= cfg.height_band[1])
    return ScanFrame(points=pts[keep], timestamp=world.quad.t)


@numba.njit(cache=True, nogil=True)
def _nearest_per_cell(cell, d, index, distance, source):
    # strict "<" keeps the first point in input order on ties
    for i in range(cell.shape[0]):
        c = cell[i]
        if source[c] < 0 or d[i] < distance[c]:
            distance[c] = d[i]
            source[c] = index[i]


def encode_raycast_grid(frame, cfg):
    """Keep the nearest point of every partition (first in input order on ties)."""
    shape = (cfg.r_h, cfg.r_v)
    ncell = cfg.r_h * cfg.r_v
    distance = np.full(ncell, float(cfg.d_max))
    point = np.full((ncell, 3), np.nan)
    source = np.full(ncell, -1, dtype=np.int64)

    pts = np.asarray(frame.points, dtype=float).reshape(-1, 3)
    if len(pts):
        d = np.sqrt((pts ** 2).sum(axis=1))
        m, n, inside = partition_indices(pts, cfg, d)
        ok = np.flatnonzero(inside & (d <= cfg.d_max))
        if ok.size:
            cell = (m[ok] - 1) * cfg.r_v + (n[ok] - 1)
            _nearest_per_cell(cell, d[ok], ok, distance, source)
            hit = source >= 0
            point[hit] = pts[source[hit]]
    return RaycastGrid(distance=distance.reshape(shape), point=point.reshape(shape + (3,)),
                       source=source.reshape(shape), d_max=float(cfg.d_max))


def min_pool(img, k=POOL):
    w, h = img.shape[-2:]
    return img.reshape(img.shape[:-2] + (w // k, k, h // k, k)).min(axis=(-3, -1))


def encode_distance_map(grid):
    """Grayscale image (``d / d_max``) and the min-pooled distance map."""
    gray = grid.distance / grid.d_max
    return gray, DistanceMap(values=min_pool(grid.distance), d_max=grid.d_max)


def write_pgm(path, img):
    """Binary 16-bit PGM; ``img`` is ``[u, v]`` in ``[0, 1]``, top row = highest ``v``."""
    img = np.asarray(img, dtype=float)
    q = np.round(np.clip(img, 0.0, 1.0) * 65535.0).astype(">u2")
    rows = q.T[::-1]  # (height, width), top row first
    h, w = rows.shape
    with open(path, "wb") as fh:
        fh.write(f"P5\n{w} {h}\n65535\n".encode("ascii"))
        fh.write(np.ascontiguousarray(rows).tobytes())


def read_pgm(path):
    """Inverse of :func:`write_pgm`; returns ``[u, v]`` floats in ``[0, 1]``."""
    with open(path, "rb") as fh:
        data = fh.read()
    tokens = []
    pos = 0
    while len(tokens) < 4:
        while data[pos:pos + 1].isspace():
            pos += 1
        if data[pos:pos + 1] == b"#":
            pos = data.index(b"\n", pos) + 1
            continue
        end = pos
        while not data[end:end + 1].isspace():
            end += 1
        tokens.append(data[pos:end].decode("ascii"))
        pos = end
    pos += 1
    magic, w, h, maxval = tokens[0], int(tokens[1]), int(tokens[2]), int(tokens[3])
    if magic != "P5":
        raise ValueError(f"{path}: not a binary PGM")
    dtype = ">u2" if maxval > 255 else "u1"
    rows = np.frombuffer(data, dtype=dtype, count=w * h, offset=pos).reshape(h, w)
    return rows[::-1].T.astype(float) / maxval
