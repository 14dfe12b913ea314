"""Geometric world: obstacles, quadrotor double integrator, queries.

The world is a value. :func:`step` never mutates its input; it returns the
next :class:`WorldState`. Time is kept as an integer tick count so that
analytic motion laws are evaluated at exactly ``tick * dt``.
"""

import enum
import math
from dataclasses import dataclass, field, replace
from functools import cached_property

import numpy as np

from . import geometry
from .errors import ConfigError, InvalidActionError

__all__ = [
    "SimConfig",
    "ScenarioConfig",
    "Cylinder",
    "Box",
    "Motion",
    "Obstacle",
    "QuadState",
    "Scenario",
    "WorldState",
    "Termination",
    "sample_scenario",
    "initial_world",
    "step",
    "cast_ray",
    "cast_rays",
    "nearest_surface_distance",
    "obstacle_surface_distances",
    "check_termination",
    "scenario_to_dict",
    "scenario_from_dict",
]

MAX_OBSTACLE_SPEED = 5.0


@dataclass
class SimConfig:
    dt: float = 0.02
    v_ref: float = 3.0
    a_ref: float = 6.0
    v_limit_factor: float = 1.2
    a_limit_factor: float = 1.5
    corridor_half_width: float = 5.0
    collision_margin: float = 0.05
    goal_radius: float = 1.0
    h_min: float = 0.5
    h_max: float = 2.5
    max_episode_ticks: int = 600
    # training keeps flying after reaching the goal; evaluation stops there
    success_terminates: bool = True

    def validate(self, path="sim"):
        if not self.dt > 0:
            raise ConfigError(f"{path}.dt", "must be > 0")
        for name in ("v_ref", "a_ref", "v_limit_factor", "a_limit_factor", "goal_radius"):
            if not getattr(self, name) > 0:
                raise ConfigError(f"{path}.{name}", "must be > 0")
        if self.collision_margin < 0:
            raise ConfigError(f"{path}.collision_margin", "must be >= 0")
        if not self.h_min < self.h_max:
            raise ConfigError(f"{path}.h_min", "must be < h_max")
        if self.max_episode_ticks < 1:
            raise ConfigError(f"{path}.max_episode_ticks", "must be >= 1")


@dataclass
class ScenarioConfig:
    """Sampler settings for randomized scenarios (desk-scale defaults)."""

    field_x: tuple = (-6.0, 6.0)
    field_y: tuple = (-4.0, 4.0)
    field_z: tuple = (0.0, 3.0)
    start_offset: float = 5.0
    start_lateral: tuple = (-2.5, 2.5)
    flight_height: float = 1.5
    quad_radius: float = 0.2
    n_columns: tuple = (2, 4)
    column_radius: tuple = (0.25, 0.5)
    n_walls: tuple = (1, 1)
    wall_length: tuple = (1.5, 3.0)
    wall_thickness: float = 0.3
    n_dynamic: tuple = (2, 4)
    dynamic_radius: tuple = (0.25, 0.4)
    speed_range: tuple = (1.0, 5.0)
    motion: str = "linear"
    turn_rate: tuple = (-0.8, 0.8)
    speed_amplitude: tuple = (0.0, 0.5)
    speed_period: tuple = (2.0, 6.0)
    clearance: float = 1.5
    spacing: float = 0.6

    def validate(self, path="scenario"):
        for name in ("field_x", "field_y", "field_z"):
            lo, hi = getattr(self, name)
            if not lo < hi:
                raise ConfigError(f"{path}.{name}", "lower bound must be < upper bound")
        for name in ("column_radius", "dynamic_radius", "wall_length", "speed_range",
                     "start_lateral", "turn_rate", "speed_amplitude", "speed_period",
                     "n_columns", "n_walls", "n_dynamic"):
            lo, hi = getattr(self, name)
            if lo > hi:
                raise ConfigError(f"{path}.{name}", "range is empty")
        for name in ("column_radius", "dynamic_radius"):
            if getattr(self, name)[0] <= 0:
                raise ConfigError(f"{path}.{name}", "radius must be > 0")
        for name in ("n_columns", "n_walls", "n_dynamic"):
            if getattr(self, name)[0] < 0:
                raise ConfigError(f"{path}.{name}", "count must be >= 0")
        lo, hi = self.speed_range
        if lo < 0 or hi > MAX_OBSTACLE_SPEED:
            raise ConfigError(f"{path}.speed_range", f"must lie in [0, {MAX_OBSTACLE_SPEED}]")
        if self.quad_radius <= 0:
            raise ConfigError(f"{path}.quad_radius", "must be > 0")
        if self.motion not in ("linear", "curved"):
            raise ConfigError(f"{path}.motion", "must be 'linear' or 'curved'")
        if not self.field_x[0] < -self.start_offset < self.start_offset < self.field_x[1]:
            raise ConfigError(f"{path}.start_offset", "start/goal must lie inside the field")
        if not self.field_z[0] < self.flight_height < self.field_z[1]:
            raise ConfigError(f"{path}.flight_height", "must lie inside the field")


@dataclass(frozen=True)
class Cylinder:
    radius: float
    z_min: float
    z_max: float


@dataclass(frozen=True)
class Box:
    half_extents: tuple

    @staticmethod
    def from_corners(lo, hi):
        lo = np.asarray(lo, dtype=float)
        hi = np.asarray(hi, dtype=float)
        return Box(tuple(float(h) for h in 0.5 * (hi - lo))), 0.5 * (lo + hi)


@dataclass(frozen=True)
class Motion:
    """Motion law of an obstacle.

    ``linear`` is evaluated in closed form from ``origin`` and ``velocity``;
    ``curved`` turns at ``turn_rate`` with speed modulated sinusoidally around
    ``|velocity|``.
    """

    kind: str = "fixed"
    origin: tuple = (0.0, 0.0, 0.0)
    velocity: tuple = (0.0, 0.0, 0.0)
    turn_rate: float = 0.0
    speed_amplitude: float = 0.0
    speed_period: float = 1.0

    def speed(self, t):
        base = math.hypot(self.velocity[0], self.velocity[1])
        s = base * (1.0 + self.speed_amplitude * math.sin(2.0 * math.pi * t / self.speed_period))
        return min(max(s, 0.0), MAX_OBSTACLE_SPEED)


@dataclass(frozen=True, eq=False)
class Obstacle:
    shape: object
    kind: str
    position: np.ndarray
    velocity: np.ndarray = field(default_factory=lambda: np.zeros(3))
    motion: Motion = Motion()
    heading: float = 0.0
    turn_rate: float = 0.0

    def __post_init__(self):
        if isinstance(self.shape, Cylinder):
            if not self.shape.radius > 0:
                raise ValueError("cylinder radius must be > 0")
            if not self.shape.z_min < self.shape.z_max:
                raise ValueError("cylinder z_min must be < z_max")
        elif isinstance(self.shape, Box):
            if not all(h > 0 for h in self.shape.half_extents):
                raise ValueError("box min corner must be < max corner")
        else:
            raise TypeError(f"unknown shape {self.shape!r}")
        if self.kind not in ("static", "dynamic"):
            raise ValueError(f"unknown obstacle kind {self.kind!r}")
        if self.kind == "static" and self.motion.kind != "fixed":
            raise ValueError("static obstacles must have fixed motion")

    @property
    def horizontal_half_size(self):
        if isinstance(self.shape, Cylinder):
            return (self.shape.radius, self.shape.radius)
        return self.shape.half_extents[:2]


@dataclass(frozen=True, eq=False)
class QuadState:
    p: np.ndarray
    v: np.ndarray
    a_last: np.ndarray
    t: float = 0.0


@dataclass(frozen=True, eq=False)
class Scenario:
    field: tuple  # ((x_lo, x_hi), (y_lo, y_hi), (z_lo, z_hi))
    start: np.ndarray
    goal: np.ndarray
    obstacles: tuple
    quad_radius: float = 0.2
    seed: int = 0


class Termination(str, enum.Enum):
    RUNNING = "running"
    SUCCESS = "success"
    CRASH = "crash"
    STATE_LIMIT = "state-limit"
    CORRIDOR_EXIT = "corridor-exit"
    TIMEOUT = "timeout"


@dataclass(frozen=True, eq=False)
class WorldState:
    quad: QuadState
    obstacles: tuple
    tick: int = 0
    dt: float = 0.02
    field: tuple = ((-np.inf, np.inf), (-np.inf, np.inf), (-np.inf, np.inf))

    @cached_property
    def packed(self):
        """Flat arrays of obstacle geometry for the vectorized kernels."""
        cyl, box = [], []
        for i, ob in enumerate(self.obstacles):
            (cyl if isinstance(ob.shape, Cylinder) else box).append(i)
        obs = self.obstacles
        c = {
            "cyl_index": np.array(cyl, dtype=int),
            "cyl_center": np.array([obs[i].position[:2] for i in cyl], dtype=float).reshape(-1, 2),
            "cyl_radius": np.array([obs[i].shape.radius for i in cyl], dtype=float),
            "cyl_zlo": np.array([obs[i].shape.z_min for i in cyl], dtype=float),
            "cyl_zhi": np.array([obs[i].shape.z_max for i in cyl], dtype=float),
            "box_index": np.array(box, dtype=int),
        }
        half = np.array([obs[i].shape.half_extents for i in box], dtype=float).reshape(-1, 3)
        center = np.array([obs[i].position for i in box], dtype=float).reshape(-1, 3)
        c["box_lo"] = center - half
        c["box_hi"] = center + half
        c["dynamic"] = np.array([ob.kind == "dynamic" for ob in obs], dtype=bool)
        return c


def _fold(x, lo, hi):
    """Reflect coordinate ``x`` into ``[lo, hi]``; returns (value, sign)."""
    if lo <= x <= hi:
        return x, 1.0
    span = hi - lo
    if span <= 0:
        return 0.5 * (lo + hi), 1.0
    u = (x - lo) % (2.0 * span)
    if u <= span:
        return lo + u, 1.0
    return lo + 2.0 * span - u, -1.0


def _obstacle_at(ob, t, dt, field_xy):
    """Advance one obstacle to absolute time ``t`` (one tick after its state)."""
    m = ob.motion
    if m.kind == "fixed":
        return ob
    hx, hy = ob.horizontal_half_size
    bounds = ((field_xy[0][0] + hx, field_xy[0][1] - hx), (field_xy[1][0] + hy, field_xy[1][1] - hy))
    if m.kind == "linear":
        pos = np.array(m.origin, dtype=float)
        vel = np.array(m.velocity, dtype=float)
        for j in range(2):
            raw = m.origin[j] + m.velocity[j] * t
            pos[j], sign = _fold(raw, *bounds[j])
            vel[j] = m.velocity[j] * sign
        return replace(ob, position=pos, velocity=vel)
    if m.kind == "curved":
        t_mid = t - 0.5 * dt
        heading_mid = ob.heading + 0.5 * ob.turn_rate * dt
        s = m.speed(t_mid)
        pos = ob.position.copy()
        pos[0] += s * math.cos(heading_mid) * dt
        pos[1] += s * math.sin(heading_mid) * dt
        heading = ob.heading + ob.turn_rate * dt
        turn = ob.turn_rate
        for j in range(2):
            lo, hi = bounds[j]
            if pos[j] < lo or pos[j] > hi:
                pos[j], _ = _fold(pos[j], lo, hi)
                heading = (math.pi - heading) if j == 0 else -heading
                turn = -turn
        s_now = m.speed(t)
        vel = np.array([s_now * math.cos(heading), s_now * math.sin(heading), 0.0])
        return replace(ob, position=pos, velocity=vel, heading=heading, turn_rate=turn)
    raise ValueError(f"unknown motion kind {m.kind!r}")


def initial_world(scenario, cfg=None):
    dt = cfg.dt if cfg is not None else 0.02
    quad = QuadState(
        p=np.array(scenario.start, dtype=float),
        v=np.zeros(3),
        a_last=np.zeros(3),
        t=0.0,
    )
    return WorldState(quad=quad, obstacles=tuple(scenario.obstacles), tick=0, dt=dt,
                      field=scenario.field)


def step(world, a, cfg=None):
    """Advance the world by one tick under acceleration command ``a``."""
    a = np.asarray(a, dtype=float)
    if a.shape != (3,) or not np.all(np.isfinite(a)):
        raise InvalidActionError(f"acceleration command must be 3 finite values, got {a!r}")
    dt = cfg.dt if cfg is not None else world.dt
    q = world.quad
    tick = world.tick + 1
    t = tick * dt
    p = q.p + q.v * dt + 0.5 * a * dt * dt
    v = q.v + a * dt
    quad = QuadState(p=p, v=v, a_last=a.copy(), t=t)
    obstacles = tuple(_obstacle_at(ob, t, dt, world.field) for ob in world.obstacles)
    return WorldState(quad=quad, obstacles=obstacles, tick=tick, dt=dt, field=world.field)


def cast_rays(world, origin, directions, d_max):
    """Vectorized :func:`cast_ray`; returns distances with ``inf`` for misses."""
    directions = np.atleast_2d(np.asarray(directions, dtype=float))
    pk = world.packed
    return geometry.cast_scene(origin, directions, pk["cyl_center"], pk["cyl_radius"], pk["cyl_zlo"],
                               pk["cyl_zhi"], pk["box_lo"], pk["box_hi"], d_max)


def cast_ray(world, origin, direction, d_max):
    """First surface hit along a unit ray within ``d_max``; ``None`` on a miss."""
    direction = np.asarray(direction, dtype=float)
    if abs(np.linalg.norm(direction) - 1.0) > 1e-9:
        raise ValueError("direction must be a unit vector")
    t = cast_rays(world, origin, direction[None, :], d_max)[0]
    return None if math.isinf(t) else float(t)


def obstacle_surface_distances(world, p):
    """Signed surface distance from ``p`` to every obstacle, in obstacle order."""
    pk = world.packed
    out = np.empty(len(world.obstacles))
    p = np.asarray(p, dtype=float)[None, :]
    if pk["cyl_index"].size:
        out[pk["cyl_index"]] = geometry.sdf_cylinders(p, pk["cyl_center"], pk["cyl_radius"],
                                                      pk["cyl_zlo"], pk["cyl_zhi"])[0]
    if pk["box_index"].size:
        out[pk["box_index"]] = geometry.sdf_boxes(p, pk["box_lo"], pk["box_hi"])[0]
    return out


def nearest_surface_distance(world, p, kind=None, radius=None):
    """Minimum signed surface distance from ``p``; ``inf`` if nothing qualifies.

    ``kind`` restricts to ``"static"`` or ``"dynamic"`` obstacles; ``radius``
    keeps only obstacles whose reference center lies within that horizontal
    distance of ``p``.
    """
    d = obstacle_surface_distances(world, p)
    keep = np.ones(d.shape, dtype=bool)
    if kind is not None:
        keep &= world.packed["dynamic"] == (kind == "dynamic")
    if radius is not None and len(world.obstacles):
        centers = np.array([ob.position[:2] for ob in world.obstacles])
        keep &= np.hypot(*(centers - np.asarray(p)[:2]).T) <= radius
    return float(d[keep].min()) if keep.any() else math.inf


def _segment_distance_xy(p, a, b):
    p, a, b = (np.asarray(x, dtype=float)[:2] for x in (p, a, b))
    ab = b - a
    denom = float(ab @ ab)
    s = 0.0 if denom == 0 else min(max(float((p - a) @ ab) / denom, 0.0), 1.0)
    return float(np.linalg.norm(p - (a + s * ab)))


def check_termination(world, cfg, scenario):
    """Classify the world state; crash > state-limit > corridor-exit > success > timeout."""
    q = world.quad
    if nearest_surface_distance(world, q.p) < scenario.quad_radius + cfg.collision_margin:
        return Termination.CRASH
    if (np.linalg.norm(q.v) > cfg.v_limit_factor * cfg.v_ref
            or np.linalg.norm(q.a_last) > cfg.a_limit_factor * cfg.a_ref
            or not cfg.h_min <= q.p[2] <= cfg.h_max):
        return Termination.STATE_LIMIT
    (xlo, xhi), (ylo, yhi), _ = scenario.field
    if (_segment_distance_xy(q.p, scenario.start, scenario.goal) > cfg.corridor_half_width
            or not (xlo <= q.p[0] <= xhi and ylo <= q.p[1] <= yhi)):
        return Termination.CORRIDOR_EXIT
    if np.linalg.norm(q.p - scenario.goal) <= cfg.goal_radius:
        return Termination.SUCCESS
    if world.tick >= cfg.max_episode_ticks:
        return Termination.TIMEOUT
    return Termination.RUNNING


# -- scenario sampling -------------------------------------------------------

def _uniform(rng, bounds):
    lo, hi = bounds
    return float(rng.uniform(lo, hi)) if hi > lo else float(lo)


def _count(rng, bounds):
    lo, hi = bounds
    return int(rng.integers(lo, hi + 1))


def sample_scenario(cfg, seed):
    """Draw a scenario: centrosymmetric start/goal, columns, walls, movers.

    Identical ``(cfg, seed)`` always yields the identical scenario.
    """
    rng = np.random.default_rng(seed)
    (xlo, xhi), (ylo, yhi), (zlo, zhi) = cfg.field_x, cfg.field_y, cfg.field_z
    h = cfg.flight_height
    side = 1.0 if rng.random() < 0.5 else -1.0
    lateral = _uniform(rng, cfg.start_lateral)
    cx, cy = 0.5 * (xlo + xhi), 0.5 * (ylo + yhi)
    start = np.array([cx - side * cfg.start_offset, cy + lateral, h])
    goal = np.array([cx + side * cfg.start_offset, cy - lateral, h])

    placed = []  # (x, y, radius) of horizontal footprints

    def free(x, y, r):
        for px, py in (start[:2], goal[:2]):
            if math.hypot(x - px, y - py) < cfg.clearance + r:
                return False
        return all(math.hypot(x - ox, y - oy) >= r + orad + cfg.spacing for ox, oy, orad in placed)

    inner_x = (xlo + 0.5 * (xhi - xlo) * 0.2, xhi - 0.5 * (xhi - xlo) * 0.2)
    inner_y = (ylo + 0.5, yhi - 0.5)

    obstacles = []
    for _ in range(_count(rng, cfg.n_columns)):
        r = _uniform(rng, cfg.column_radius)
        for _attempt in range(100):
            x, y = _uniform(rng, inner_x), _uniform(rng, inner_y)
            if free(x, y, r):
                placed.append((x, y, r))
                obstacles.append(Obstacle(Cylinder(r, zlo, zhi), "static", np.array([x, y, 0.5 * (zlo + zhi)])))
                break

    for _ in range(_count(rng, cfg.n_walls)):
        length = _uniform(rng, cfg.wall_length)
        half_t = 0.5 * cfg.wall_thickness
        along_x = rng.random() < 0.5
        hx, hy = (0.5 * length, half_t) if along_x else (half_t, 0.5 * length)
        # walls reach the start/goal height so they can be overflown
        hz = 0.5 * (h - zlo)
        for _attempt in range(100):
            x, y = _uniform(rng, inner_x), _uniform(rng, inner_y)
            if free(x, y, max(hx, hy)):
                placed.append((x, y, max(hx, hy)))
                obstacles.append(Obstacle(Box((hx, hy, hz)), "static", np.array([x, y, zlo + hz])))
                break

    axis = goal[:2] - start[:2]
    axis_angle = math.atan2(axis[1], axis[0])
    for _ in range(_count(rng, cfg.n_dynamic)):
        r = _uniform(rng, cfg.dynamic_radius)
        speed = _uniform(rng, cfg.speed_range)
        # cross the start-goal line, within 45 degrees of perpendicular
        heading = axis_angle + (1 if rng.random() < 0.5 else -1) * math.pi / 2 + rng.uniform(-math.pi / 4, math.pi / 4)
        for _attempt in range(100):
            x = _uniform(rng, (xlo + r, xhi - r))
            y = _uniform(rng, (ylo + r, yhi - r))
            if math.hypot(x - start[0], y - start[1]) >= 2.0 * cfg.clearance:
                break
        p0 = np.array([x, y, 0.5 * (zlo + zhi)])
        v0 = (speed * math.cos(heading), speed * math.sin(heading), 0.0)
        if cfg.motion == "linear":
            motion = Motion("linear", tuple(p0), v0)
            turn = 0.0
        else:
            amp = _uniform(rng, cfg.speed_amplitude)
            # keep the modulated peak speed inside the configured range
            if speed * (1 + amp) > cfg.speed_range[1]:
                speed = cfg.speed_range[1] / (1 + amp)
                v0 = (speed * math.cos(heading), speed * math.sin(heading), 0.0)
            turn = _uniform(rng, cfg.turn_rate)
            motion = Motion("curved", tuple(p0), v0, turn, amp, _uniform(rng, cfg.speed_period))
        obstacles.append(Obstacle(Cylinder(r, zlo, zhi), "dynamic", p0, np.array(v0), motion,
                                  heading=heading, turn_rate=turn))

    return Scenario(
        field=((xlo, xhi), (ylo, yhi), (zlo, zhi)),
        start=start,
        goal=goal,
        obstacles=tuple(obstacles),
        quad_radius=cfg.quad_radius,
        seed=int(seed),
    )


# -- scenario files ------------------------------------------------------------

def _obstacle_to_dict(ob):
    d = {"kind": ob.kind}
    if isinstance(ob.shape, Cylinder):
        d.update(shape="cylinder", center=[float(ob.position[0]), float(ob.position[1])],
                 radius=ob.shape.radius, z=[ob.shape.z_min, ob.shape.z_max])
    else:
        # center and half extents are what the geometry stores, so they round-trip exactly
        d.update(shape="box", center=[float(x) for x in ob.position],
                 half_extents=[float(x) for x in ob.shape.half_extents])
    m = ob.motion
    if m.kind != "fixed":
        d["motion"] = {"kind": m.kind, "velocity": list(m.velocity[:2])}
        if m.kind == "curved":
            d["motion"].update(turn_rate=m.turn_rate, speed_amplitude=m.speed_amplitude,
                               speed_period=m.speed_period, heading=ob.heading)
    return d


def _obstacle_from_dict(d, path):
    kind = d.get("kind", "static")
    shape = d.get("shape")
    try:
        if shape == "cylinder":
            z = d.get("z", [0.0, 3.0])
            geom = Cylinder(float(d["radius"]), float(z[0]), float(z[1]))
            pos = np.array([float(d["center"][0]), float(d["center"][1]), 0.5 * (float(z[0]) + float(z[1]))])
        elif shape == "box":
            if "center" in d:
                geom = Box(tuple(float(x) for x in d["half_extents"]))
                pos = np.array([float(x) for x in d["center"]])
                if pos.shape != (3,) or len(geom.half_extents) != 3:
                    raise ConfigError(f"{path}.center", "box center and half_extents need 3 values")
            else:
                geom, pos = Box.from_corners(d["min"], d["max"])
        else:
            raise ConfigError(f"{path}.shape", f"unknown shape {shape!r}")
        motion = Motion()
        vel = np.zeros(3)
        heading = turn = 0.0
        m = d.get("motion")
        if m:
            v = (float(m["velocity"][0]), float(m["velocity"][1]), 0.0)
            vel = np.array(v)
            if m["kind"] == "linear":
                motion = Motion("linear", tuple(pos), v)
            elif m["kind"] == "curved":
                turn = float(m.get("turn_rate", 0.0))
                heading = float(m.get("heading", math.atan2(v[1], v[0])))
                motion = Motion("curved", tuple(pos), v, turn, float(m.get("speed_amplitude", 0.0)),
                                float(m.get("speed_period", 1.0)))
            else:
                raise ConfigError(f"{path}.motion.kind", f"unknown motion {m['kind']!r}")
        return Obstacle(geom, kind, pos, vel, motion, heading=heading, turn_rate=turn)
    except KeyError as exc:
        raise ConfigError(f"{path}.{exc.args[0]}", "missing") from None
    except ValueError as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(path, str(exc)) from None


def scenario_to_dict(sc):
    return {
        "seed": sc.seed,
        "field": {"x": list(sc.field[0]), "y": list(sc.field[1]), "z": list(sc.field[2])},
        "start": sc.start.tolist(),
        "goal": sc.goal.tolist(),
        "quad_radius": sc.quad_radius,
        "obstacles": [_obstacle_to_dict(ob) for ob in sc.obstacles],
    }


def scenario_from_dict(d, path="scenario"):
    known = {"seed", "field", "start", "goal", "quad_radius", "obstacles"}
    for k in d:
        if k not in known:
            raise ConfigError(f"{path}.{k}", "unknown key")
    for k in ("seed", "field", "start", "goal"):
        if k not in d:
            raise ConfigError(f"{path}.{k}", "missing")
    fld = d["field"]
    field_ = tuple(tuple(float(x) for x in fld[ax]) for ax in ("x", "y", "z"))
    for ax, (lo, hi) in zip("xyz", field_):
        if not lo < hi:
            raise ConfigError(f"{path}.field.{ax}", "lower bound must be < upper bound")
    start = np.array(d["start"], dtype=float)
    goal = np.array(d["goal"], dtype=float)
    for name, p in (("start", start), ("goal", goal)):
        if p.shape != (3,) or not all(lo <= c <= hi for c, (lo, hi) in zip(p, field_)):
            raise ConfigError(f"{path}.{name}", "must be a 3D point inside the field")
    r_d = float(d.get("quad_radius", 0.2))
    if not r_d > 0:
        raise ConfigError(f"{path}.quad_radius", "must be > 0")
    obstacles = tuple(_obstacle_from_dict(o, f"{path}.obstacles[{i}]") for i, o in enumerate(d.get("obstacles", [])))
    for i, ob in enumerate(obstacles):
        if ob.motion.kind != "fixed" and math.hypot(*ob.motion.velocity[:2]) > MAX_OBSTACLE_SPEED:
            raise ConfigError(f"{path}.obstacles[{i}].motion.velocity", f"speed exceeds {MAX_OBSTACLE_SPEED} m/s")
    return Scenario(field=field_, start=start, goal=goal, obstacles=obstacles, quad_radius=r_d, seed=int(d["seed"]))
