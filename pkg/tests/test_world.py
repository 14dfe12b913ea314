import math

import numba
import numpy as np
import pytest
from hypothesis import given, strategies as st

from flowflight import world as W
from flowflight.errors import ConfigError, InvalidActionError


def bare_world(obstacles=(), p=(0.0, 0.0, 1.0), v=(0.0, 0.0, 0.0)):
    q = W.QuadState(p=np.array(p, float), v=np.array(v, float), a_last=np.zeros(3))
    return W.WorldState(quad=q, obstacles=tuple(obstacles))


def column(x, y, r, z=(0.0, 3.0), kind="static", velocity=None):
    pos = np.array([x, y, 0.5 * sum(z)])
    if velocity is None:
        return W.Obstacle(W.Cylinder(r, *z), kind, pos)
    v = (velocity[0], velocity[1], 0.0)
    return W.Obstacle(W.Cylinder(r, *z), "dynamic", pos, np.array(v), W.Motion("linear", tuple(pos), v))


def box(lo, hi):
    shape, center = W.Box.from_corners(lo, hi)
    return W.Obstacle(shape, "static", center)


# -- step --------------------------------------------------------------------------

def test_step_zero_acceleration_fixed_point():
    w = W.step(bare_world(), np.zeros(3))
    assert w.quad.p.tolist() == [0, 0, 1] and w.quad.v.tolist() == [0, 0, 0]


def test_step_uniform_motion():
    w = W.step(bare_world(v=(1, 0, 0)), np.zeros(3))
    np.testing.assert_allclose(w.quad.p, [0.02, 0, 1], atol=1e-15)


def test_step_constant_acceleration():
    w = W.step(bare_world(), np.array([2.0, 0, 0]))
    np.testing.assert_allclose(w.quad.p, [0.0004, 0, 1], atol=1e-15)
    np.testing.assert_allclose(w.quad.v, [0.04, 0, 0], atol=1e-15)
    assert w.quad.a_last.tolist() == [2, 0, 0] and w.tick == 1


@pytest.mark.parametrize("a", [[np.nan, 0, 0], [0, np.inf, 0], [1, 2]])
def test_step_rejects_bad_action(a):
    with pytest.raises(InvalidActionError):
        W.step(bare_world(), np.array(a, float))


def test_step_does_not_mutate_input():
    w0 = bare_world(v=(1, 2, 3))
    W.step(w0, np.array([1.0, 1.0, 1.0]))
    assert w0.quad.p.tolist() == [0, 0, 1] and w0.tick == 0


@given(st.lists(st.floats(-5, 5), min_size=3, max_size=3))
def test_speed_constant_without_acceleration(v):
    w = bare_world(v=v)
    s0 = np.linalg.norm(w.quad.v)
    for _ in range(50):
        w = W.step(w, np.zeros(3))
    assert abs(np.linalg.norm(w.quad.v) - s0) <= 1e-12 * max(1.0, s0)


def test_linear_obstacle_matches_closed_form():
    ob = column(0.0, 0.0, 0.3, velocity=(0.7, -0.4))
    w = bare_world([ob], p=(50, 50, 1))
    w = W.WorldState(quad=w.quad, obstacles=w.obstacles, field=((-100, 100), (-100, 100), (0, 3)))
    for k in range(1, 300):
        w = W.step(w, np.zeros(3))
        t = k * 0.02
        assert w.obstacles[0].position[0] == 0.0 + 0.7 * t
        assert w.obstacles[0].position[1] == 0.0 + -0.4 * t


def test_obstacles_reflect_at_field_boundary():
    ob = column(0.0, 0.0, 0.5, velocity=(2.0, 0.0))
    w = bare_world([ob], p=(0, 3, 1))
    w = W.WorldState(quad=w.quad, obstacles=w.obstacles, field=((-2, 2), (-4, 4), (0, 3)))
    xs = []
    for _ in range(300):
        w = W.step(w, np.zeros(3))
        xs.append(w.obstacles[0].position[0])
    assert max(xs) <= 1.5 + 1e-12 and min(xs) >= -1.5 - 1e-12
    assert min(xs) < -1.4  # it bounced at least twice


def test_curved_motion_speed_is_clamped():
    pos = np.array([0.0, 0.0, 1.5])
    m = W.Motion("curved", tuple(pos), (4.8, 0.0, 0.0), 0.5, 0.5, 2.0)
    ob = W.Obstacle(W.Cylinder(0.3, 0, 3), "dynamic", pos, np.array([4.8, 0, 0]), m, 0.0, 0.5)
    w = bare_world([ob], p=(30, 30, 1))
    w = W.WorldState(quad=w.quad, obstacles=w.obstacles, field=((-50, 50), (-50, 50), (0, 3)))
    for _ in range(200):
        prev = w.obstacles[0].position
        w = W.step(w, np.zeros(3))
        assert np.linalg.norm(w.obstacles[0].velocity) <= W.MAX_OBSTACLE_SPEED + 1e-12
        assert np.linalg.norm(w.obstacles[0].position - prev) <= W.MAX_OBSTACLE_SPEED * 0.02 + 1e-12


# -- ray casting -------------------------------------------------------------------

def test_cast_ray_hits_cylinder():
    w = bare_world([column(5, 0, 1)])
    assert W.cast_ray(w, np.array([0, 0, 1.0]), np.array([1.0, 0, 0]), 10.0) == pytest.approx(4.0, abs=1e-12)


def test_cast_ray_miss():
    w = bare_world([column(5, 5, 1)])
    assert W.cast_ray(w, np.array([0, 0, 1.0]), np.array([1.0, 0, 0]), 10.0) is None
    assert W.cast_ray(bare_world(), np.array([0, 0, 1.0]), np.array([1.0, 0, 0]), 10.0) is None


def test_cast_ray_requires_unit_direction():
    with pytest.raises(ValueError):
        W.cast_ray(bare_world(), np.zeros(3), np.array([2.0, 0, 0]), 10.0)


@numba.njit(cache=True)
def _march(origin, dirs, cc, cr, czl, czh, blo, bhi, d_max, step):
    out = np.full(dirs.shape[0], np.inf)
    n = int(d_max / step)
    for i in range(dirs.shape[0]):
        for s in range(1, n + 1):
            t = s * step
            x = origin[0] + t * dirs[i, 0]
            y = origin[1] + t * dirs[i, 1]
            z = origin[2] + t * dirs[i, 2]
            inside = False
            for k in range(cc.shape[0]):
                if (x - cc[k, 0]) ** 2 + (y - cc[k, 1]) ** 2 <= cr[k] ** 2 and czl[k] <= z <= czh[k]:
                    inside = True
            for k in range(blo.shape[0]):
                if blo[k, 0] <= x <= bhi[k, 0] and blo[k, 1] <= y <= bhi[k, 1] and blo[k, 2] <= z <= bhi[k, 2]:
                    inside = True
            if inside:
                out[i] = t
                break
    return out


def random_scene(rng, n_cyl=4, n_box=3):
    obs = [column(*rng.uniform(-6, 6, 2), rng.uniform(0.2, 1.0), z=(rng.uniform(0, 0.5), rng.uniform(1.5, 3)))
           for _ in range(n_cyl)]
    for _ in range(n_box):
        lo = np.r_[rng.uniform(-6, 5, 2), rng.uniform(0, 1)]
        obs.append(box(lo, lo + rng.uniform(0.2, 2.0, 3)))
    return bare_world(obs, p=(0, 0, 1))


def test_cast_rays_match_marching_oracle():
    rng = np.random.default_rng(7)
    total = mism = 0
    for _ in range(10):
        w = random_scene(rng)
        origin = np.array([rng.uniform(-1, 1), rng.uniform(-1, 1), rng.uniform(0.8, 1.6)])
        if W.nearest_surface_distance(w, origin) <= 0:
            continue
        d = rng.normal(size=(1000, 3))
        d /= np.linalg.norm(d, axis=1, keepdims=True)
        got = W.cast_rays(w, origin, d, 10.0)
        pk = w.packed
        ref = _march(origin, d, pk["cyl_center"], pk["cyl_radius"], pk["cyl_zlo"], pk["cyl_zhi"],
                     pk["box_lo"], pk["box_hi"], 10.0, 1e-3)
        both = np.isfinite(got) & np.isfinite(ref)
        # marching overshoots the surface by less than one step
        assert np.all(np.abs(got[both] - ref[both]) <= 2e-3)
        mism += int(np.sum(np.isfinite(got) != np.isfinite(ref)))
        total += len(d)
    assert total >= 5000
    assert mism <= 2  # only grazing rays within a step of d_max or a silhouette


@given(st.floats(1.0, 10.0), st.floats(0.1, 1.0))
def test_shrinking_d_max_never_creates_hits(d_big, frac):
    rng = np.random.default_rng(3)
    w = random_scene(rng)
    d = rng.normal(size=(200, 3))
    d /= np.linalg.norm(d, axis=1, keepdims=True)
    o = np.array([0.0, 0.0, 1.0])
    big = W.cast_rays(w, o, d, d_big)
    small = W.cast_rays(w, o, d, d_big * frac)
    assert np.all(np.isinf(small) | np.isfinite(big))
    assert np.all(np.isinf(small) | (small == big))


# -- surface distance -------------------------------------------------------------

def test_surface_distance_cylinder_and_box_sign():
    w = bare_world([column(3, 0, 1)])
    assert W.nearest_surface_distance(w, np.array([0, 0, 1.0])) == pytest.approx(2.0)
    wb = bare_world([box((-1, -1, 0), (1, 1, 2))])
    assert W.nearest_surface_distance(wb, np.array([0.2, 0, 1.0])) < 0


def _surface_samples(ob, n=100_000):
    """Regular grid of points on the obstacle's surface."""
    if isinstance(ob.shape, W.Cylinder):
        r, z0, z1 = ob.shape.radius, ob.shape.z_min, ob.shape.z_max
        na = 400
        nz = n // (2 * na)
        a = np.linspace(0, 2 * np.pi, na, endpoint=False)
        zz = np.linspace(z0, z1, nz)
        A, Z = np.meshgrid(a, zz)
        side = np.stack([ob.position[0] + r * np.cos(A), ob.position[1] + r * np.sin(A), Z], -1).reshape(-1, 3)
        rr = np.linspace(0, r, nz)
        A, R = np.meshgrid(a, rr)
        disk = np.stack([ob.position[0] + R * np.cos(A), ob.position[1] + R * np.sin(A)], -1).reshape(-1, 2)
        caps = [np.c_[disk, np.full(len(disk), z)] for z in (z0, z1)]
        return np.concatenate([side] + caps)
    half = np.array(ob.shape.half_extents)
    lo, hi = ob.position - half, ob.position + half
    m = int(np.sqrt(n / 6))
    out = []
    for ax in range(3):
        o1, o2 = [i for i in range(3) if i != ax]
        u = np.linspace(lo[o1], hi[o1], m)
        v = np.linspace(lo[o2], hi[o2], m)
        U, V = np.meshgrid(u, v)
        for c in (lo[ax], hi[ax]):
            f = np.zeros((m * m, 3))
            f[:, ax], f[:, o1], f[:, o2] = c, U.ravel(), V.ravel()
            out.append(f)
    return np.concatenate(out)


def test_surface_distance_matches_surface_sampling():
    rng = np.random.default_rng(11)
    for _ in range(5):
        w = random_scene(rng, 2, 2)
        samples = [_surface_samples(ob) for ob in w.obstacles]
        for _ in range(20):
            p = np.r_[rng.uniform(-7, 7, 2), rng.uniform(0, 3)]
            got = W.obstacle_surface_distances(w, p)
            for g, s in zip(got, samples):
                ref = np.sqrt(((s - p) ** 2).sum(axis=1)).min()
                assert abs(abs(g) - ref) <= 5e-3


def test_nearest_surface_distance_filters():
    w = bare_world([column(3, 0, 1), column(0, 6, 0.5, velocity=(1, 0))])
    p = np.array([0, 0, 1.0])
    assert W.nearest_surface_distance(w, p, kind="dynamic") == pytest.approx(5.5)
    assert W.nearest_surface_distance(w, p, kind="static") == pytest.approx(2.0)
    assert W.nearest_surface_distance(w, p, kind="dynamic", radius=5.0) == math.inf


# -- termination ---------------------------------------------------------------------

def _scenario(obstacles=()):
    return W.Scenario(field=((-6, 6), (-4, 4), (0, 3)), start=np.array([-5, 0, 1.5]),
                      goal=np.array([5, 0, 1.5]), obstacles=tuple(obstacles))


def _at(p, v=(0, 0, 0), a=(0, 0, 0), obstacles=(), tick=0):
    q = W.QuadState(p=np.array(p, float), v=np.array(v, float), a_last=np.array(a, float))
    return W.WorldState(quad=q, obstacles=tuple(obstacles), tick=tick)


def test_termination_rules():
    cfg = W.SimConfig()
    sc = _scenario()
    T = W.Termination
    assert W.check_termination(_at((5, 0, 1.5)), cfg, sc) == T.SUCCESS
    assert W.check_termination(_at((0, 0, 1.5), v=(3.9, 0, 0)), cfg, sc) == T.STATE_LIMIT
    assert W.check_termination(_at((0, 0, 1.5), a=(9.5, 0, 0)), cfg, sc) == T.STATE_LIMIT
    assert W.check_termination(_at((0, 0, 2.6)), cfg, sc) == T.STATE_LIMIT
    assert W.check_termination(_at((0, 0, 1.5), tick=cfg.max_episode_ticks), cfg, sc) == T.TIMEOUT
    assert W.check_termination(_at((0, 0, 1.5)), cfg, sc) == T.RUNNING
    # a surface gap just below the quadrotor radius
    ob = column(0, 1.0 + 0.2 - 0.01, 1.0)
    assert W.check_termination(_at((0, 0, 1.5), obstacles=[ob]), cfg, _scenario([ob])) == T.CRASH


def test_termination_priority():
    cfg = W.SimConfig()
    ob = column(5, 1.1, 1.0)
    sc = _scenario([ob])
    # at the goal and too fast, but inside the crash margin: crash wins
    w = _at((5, 0, 1.5), v=(4, 0, 0), obstacles=[ob])
    assert W.check_termination(w, cfg, sc) == W.Termination.CRASH
    w = _at((5, 0, 1.5), v=(4, 0, 0))
    assert W.check_termination(w, cfg, _scenario()) == W.Termination.STATE_LIMIT


def test_corridor_exit():
    cfg = W.SimConfig(corridor_half_width=2.0)
    assert W.check_termination(_at((0, 2.5, 1.5)), cfg, _scenario()) == W.Termination.CORRIDOR_EXIT


# -- scenarios -----------------------------------------------------------------------

@given(st.integers(0, 2 ** 31 - 1))
def test_sample_scenario_deterministic_and_roundtrips(seed):
    cfg = W.ScenarioConfig()
    a = W.sample_scenario(cfg, seed)
    b = W.sample_scenario(cfg, seed)
    assert W.scenario_to_dict(a) == W.scenario_to_dict(b)
    c = W.scenario_from_dict(W.scenario_to_dict(a))
    assert W.scenario_to_dict(c) == W.scenario_to_dict(a)
    # start and goal are free and centrosymmetric about the field center
    w = W.initial_world(a)
    assert W.nearest_surface_distance(w, a.start) > a.quad_radius
    np.testing.assert_allclose(a.start[:2] + a.goal[:2], [0.0, 0.0], atol=1e-12)


@pytest.mark.parametrize("mutate, key", [
    (lambda d: d.update(bogus=1), "scenario.bogus"),
    (lambda d: d.pop("goal"), "scenario.goal"),
    (lambda d: d["field"].update(x=[3, 1]), "scenario.field.x"),
    (lambda d: d.update(start=[99, 0, 1]), "scenario.start"),
    (lambda d: d["obstacles"].append({"shape": "cone"}), "scenario.obstacles[0].shape"),
    (lambda d: d["obstacles"].append({"shape": "cylinder", "center": [0, 0], "radius": 0.3,
                                      "kind": "dynamic", "motion": {"kind": "linear", "velocity": [9, 0]}}),
     "scenario.obstacles[0].motion.velocity"),
])
def test_scenario_validation_names_key(mutate, key):
    d = W.scenario_to_dict(_scenario())
    mutate(d)
    with pytest.raises(ConfigError) as ei:
        W.scenario_from_dict(d)
    assert ei.value.key == key
