"""Navigation reward: state, goal, LiDAR safety and dynamic-obstacle terms.

The dynamic-obstacle term reshapes each mover's distance field by a
coefficient ``k >= 1`` that grows inside the cone the obstacle is moving
toward (relative to the quadrotor), so approaching threats look closer than
they are. All dynamic-obstacle geometry is evaluated on the horizontal plane.
"""

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError

__all__ = [
    "RewardConfig",
    "RewardBreakdown",
    "DobsRunningMax",
    "limit",
    "state_reward",
    "goal_reward",
    "safety_reward",
    "reshape_coefficient",
    "dobs_reward",
    "total_reward",
    "reshaped_field",
    "COMPONENTS",
]

COMPONENTS = ("r_v", "r_a", "r_h", "r_j", "r_dir", "r_dis", "r_safety", "r_dobs")


@dataclass
class RewardConfig:
    lambda_v: float = 0.2
    lambda_a: float = 0.2
    lambda_h: float = 0.2
    lambda_j: float = 0.1
    lambda_dir: float = 1.0
    lambda_dis: float = 1.0
    lambda_s: float = 0.5
    lambda_d: float = 0.5
    beta_v: float = 1.0
    beta_a: float = 1.0
    beta_h: float = 1.0
    v_min: float = 1.0
    v_ref: float = 3.0
    a_min: float = 0.0
    a_ref: float = 6.0
    h_min: float = 1.0
    h_max: float = 2.0
    v_tr_factor: float = 0.4
    d_th: float = 1.0
    log_d_tr: float = -5.0
    gate_factor: float = 0.75
    d_max: float = 10.0
    goal_cutoff: float = 1.5

    @property
    def v_tr(self):
        return self.v_tr_factor * self.v_ref

    @property
    def gate_radius(self):
        return self.gate_factor * self.d_max

    def validate(self, path="reward"):
        for name in ("lambda_v", "lambda_a", "lambda_h", "lambda_j", "lambda_dir", "lambda_dis",
                     "lambda_s", "lambda_d"):
            if getattr(self, name) < 0:
                raise ConfigError(f"{path}.{name}", "weights must be >= 0")
        for name in ("beta_v", "beta_a", "beta_h", "d_th", "d_max", "gate_factor"):
            if not getattr(self, name) > 0:
                raise ConfigError(f"{path}.{name}", "must be > 0")
        if not self.v_min < self.v_ref:
            raise ConfigError(f"{path}.v_min", "must be < v_ref")
        if not self.a_min < self.a_ref:
            raise ConfigError(f"{path}.a_min", "must be < a_ref")
        if not self.h_min < self.h_max:
            raise ConfigError(f"{path}.h_min", "must be < h_max")
        if self.goal_cutoff < 0:
            raise ConfigError(f"{path}.goal_cutoff", "must be >= 0")


@dataclass
class RewardBreakdown:
    r_v: float = 0.0
    r_a: float = 0.0
    r_h: float = 0.0
    r_j: float = 0.0
    r_dir: float = 0.0
    r_dis: float = 0.0
    r_safety: float = 0.0
    r_dobs: float = 0.0
    total: float = 0.0
    k: tuple = field(default_factory=tuple)

    def as_array(self):
        return np.array([getattr(self, c) for c in COMPONENTS] + [self.total])


class DobsRunningMax:
    """Best dynamic-obstacle reward seen so far in the current episode."""

    def __init__(self, cfg, r_d):
        self.initial = cfg.lambda_d * _trunc_log(cfg.gate_radius - r_d, cfg.log_d_tr)
        self.value = self.initial

    def reset(self):
        self.value = self.initial

    def update(self, r_dobs):
        self.value = max(self.value, r_dobs)


def _trunc_log(x, floor):
    return math.log(x) if x > 0 and math.log(x) > floor else floor


def limit(s, beta, s_low, s_high):
    """Soft range constraint; equals ``log 2`` on ``[s_low, s_high]``.

    ``log(exp(-x) + 1)`` with ``x >= 0`` is written as ``log1p(exp(-x))``,
    which cannot overflow.
    """
    x = beta * (np.maximum(s_low - s, 0.0) + np.maximum(s - s_high, 0.0))
    out = np.log1p(np.exp(-x))
    return float(out) if np.ndim(out) == 0 else out


def state_reward(v, a, a_prev, p_z, cfg, near_goal=False):
    """``(r_v, r_a, r_h, r_j)``; ``r_v`` is cut off near the goal."""
    r_v = 0.0 if near_goal else limit(float(np.linalg.norm(v)), cfg.beta_v, cfg.v_min, cfg.v_ref)
    r_a = limit(float(np.linalg.norm(a)), cfg.beta_a, cfg.a_min, cfg.a_ref)
    r_h = limit(float(p_z), cfg.beta_h, cfg.h_min, cfg.h_max)
    r_j = 1.0 / (1.0 + float(np.linalg.norm(np.asarray(a) - np.asarray(a_prev))))
    return r_v, r_a, r_h, r_j


def goal_reward(p, v, p_g, d_g_prev, cfg):
    """``(r_dir, r_dis)``: truncated goal-ward speed and progress."""
    to_goal = np.asarray(p_g, dtype=float) - np.asarray(p, dtype=float)
    d_g = float(np.linalg.norm(to_goal))
    r_dir = 0.0 if d_g == 0 else min(float(np.dot(v, to_goal)) / d_g, cfg.v_tr)
    r_dis = 0.0 if d_g <= cfg.goal_cutoff else math.expm1(d_g_prev - d_g)
    return r_dir, r_dis


def safety_reward(d_li, r_d, cfg):
    """Two-stage LiDAR safety reward, already weighted by ``lambda_s``.

    Below ``d_th`` the mean gap of the close rays is used, otherwise the
    minimum gap. Misses must be excluded by the caller.
    """
    d = np.asarray(d_li, dtype=float).ravel()
    if d.size == 0:
        d_s = cfg.d_max - r_d
    elif d.min() < cfg.d_th:
        d_s = float(np.mean(d[d < cfg.d_th] - r_d))
    else:
        d_s = float(d.min() - r_d)
    return cfg.lambda_s * _trunc_log(d_s, cfg.log_d_tr)


def reshape_coefficient(p, v, p_dobs, v_dobs):
    """Distance-field reshaping coefficient ``k`` (horizontal plane).

    Broadcasts over leading axes of its arguments (last axis holds x, y[, z]).
    ``theta`` is the angle between ``p - p_dobs`` and ``v_dobs - v``; inside
    ``[0, pi/2)`` ``k = 1 + |v_rel| (1 - 2 theta / pi) exp(1 / (1 + d_v))``
    where ``d_v`` is the distance from ``p`` to the line through ``p_dobs``
    along ``v_dobs``. Elsewhere, and for zero relative speed, ``k = 1``.
    """
    p, v, p_dobs, v_dobs = (np.asarray(x, dtype=float)[..., :2] for x in (p, v, p_dobs, v_dobs))
    rel = p - p_dobs
    vr = v_dobs - v
    k_v = np.hypot(vr[..., 0], vr[..., 1])
    dist = np.hypot(rel[..., 0], rel[..., 1])
    with np.errstate(invalid="ignore", divide="ignore"):
        cos = (rel * vr).sum(-1) / (dist * k_v)
        theta = np.arccos(np.clip(cos, -1.0, 1.0))
        speed = np.hypot(v_dobs[..., 0], v_dobs[..., 1])
        cross = np.abs(rel[..., 0] * v_dobs[..., 1] - rel[..., 1] * v_dobs[..., 0])
        d_v = np.where(speed > 0, cross / np.where(speed > 0, speed, 1.0), dist)
    k_theta = 1.0 - 2.0 * theta / math.pi
    k_d = np.exp(1.0 / (1.0 + d_v))
    threat = (k_v > 0) & (dist > 0) & (theta < math.pi / 2)
    k = np.where(threat, 1.0 + k_v * k_theta * k_d, 1.0)
    return float(k) if np.ndim(k) == 0 else k


def dobs_reward(p, v, dyn_pos, dyn_vel, dyn_surface, running, r_d, cfg):
    """Dynamic-obstacle reward, weighted by ``lambda_d``.

    ``dyn_pos``/``dyn_vel`` are the movers' centers and velocities and
    ``dyn_surface`` their surface distances from ``p``. Movers whose center is
    within ``gate_factor * d_max`` contribute; with none in range the episode's
    running maximum is returned. The running maximum is updated afterwards.
    Returns ``(r_dobs, k)``.
    """
    dyn_pos = np.asarray(dyn_pos, dtype=float).reshape(-1, 3)
    dyn_vel = np.asarray(dyn_vel, dtype=float).reshape(-1, 3)
    dyn_surface = np.asarray(dyn_surface, dtype=float).ravel()
    center = np.hypot(dyn_pos[:, 0] - p[0], dyn_pos[:, 1] - p[1])
    near = center <= cfg.gate_radius
    if not near.any():
        r = running.value
        k = np.zeros(0)
    else:
        k = np.atleast_1d(reshape_coefficient(p, v, dyn_pos[near], dyn_vel[near]))
        gap = dyn_surface[near] - r_d
        terms = [_trunc_log(g / kk, cfg.log_d_tr) if g > 0 else cfg.log_d_tr for g, kk in zip(gap, k)]
        r = cfg.lambda_d / len(terms) * sum(terms)
    running.update(r)
    return r, k


def total_reward(v, a, a_prev, p, p_g, d_g_prev, d_li, dyn_pos, dyn_vel, dyn_surface, running, r_d, cfg):
    """Full reward with breakdown; ``r_safety``/``r_dobs`` carry their weights."""
    near_goal = float(np.linalg.norm(np.asarray(p_g) - np.asarray(p))) <= cfg.goal_cutoff
    r_v, r_a, r_h, r_j = state_reward(v, a, a_prev, p[2], cfg, near_goal)
    r_dir, r_dis = goal_reward(p, v, p_g, d_g_prev, cfg)
    r_s = safety_reward(d_li, r_d, cfg)
    r_d_obs, k = dobs_reward(p, v, dyn_pos, dyn_vel, dyn_surface, running, r_d, cfg)
    total = (cfg.lambda_v * r_v + cfg.lambda_a * r_a + cfg.lambda_h * r_h + cfg.lambda_j * r_j
             + cfg.lambda_dir * r_dir + cfg.lambda_dis * r_dis + r_s + r_d_obs)
    return RewardBreakdown(r_v, r_a, r_h, r_j, r_dir, r_dis, r_s, r_d_obs, total, tuple(float(x) for x in k))


def reshaped_field(window=5.0, resolution=0.05, v_quad=(0.0, 1.0), v_dobs=(1.0, 0.0),
                   obstacle_radius=0.3, r_d=0.2, floor=-5.0):
    """``k`` and reshaped log-distance on a square grid centered on an obstacle.

    The obstacle sits at the origin; each grid point is a candidate quadrotor
    position. Returns ``(x (N,), y (M,), k (M, N), log_d (M, N))`` with rows
    indexed by ``y``.
    """
    n = int(round(window / resolution)) + 1
    x = np.linspace(-window / 2, window / 2, n)
    y = np.linspace(-window / 2, window / 2, n)
    X, Y = np.meshgrid(x, y)
    P = np.stack([X, Y], axis=-1)
    vq = np.broadcast_to(np.asarray(v_quad, dtype=float)[:2], P.shape)
    vd = np.broadcast_to(np.asarray(v_dobs, dtype=float)[:2], P.shape)
    k = reshape_coefficient(P, vq, np.zeros_like(P), vd)
    gap = np.hypot(X, Y) - obstacle_radius - r_d
    with np.errstate(divide="ignore", invalid="ignore"):
        log_d = np.where(gap > 0, np.log(np.where(gap > 0, gap, 1.0) / k), floor)
    return x, y, k, np.maximum(log_d, floor)
