import math
import subprocess
import sys

import numpy as np
import pytest
from hypothesis import assume, given, strategies as st

from flowflight import reward as R

CFG = R.RewardConfig()
finite = st.floats(-10, 10, allow_nan=False)
vec2 = st.tuples(finite, finite)


# -- limiting function -----------------------------------------------------------

def test_limit_in_range_is_log2():
    assert R.limit(2.0, 1.0, 1.0, 3.0) == math.log(2.0)
    assert R.limit(1.0, 1.0, 1.0, 3.0) == math.log(2.0)
    assert R.limit(3.0, 1.0, 1.0, 3.0) == math.log(2.0)


def test_limit_outside_range():
    assert R.limit(4.0, 1.0, 1.0, 3.0) == pytest.approx(math.log(math.exp(-1.0) + 1.0), abs=1e-15)


def test_limit_does_not_overflow():
    assert R.limit(1e6, 1e3, 0.0, 1.0) == 0.0
    assert math.isfinite(R.limit(-1e300, 1.0, 0.0, 1.0))


@given(st.floats(-100, 100), st.floats(0.01, 10), st.floats(-5, 5), st.floats(0, 5))
def test_limit_bounded_and_peaks_in_range(s, beta, lo, span):
    val = R.limit(s, beta, lo, lo + span)
    assert 0.0 <= val <= math.log(2.0)
    if lo <= s <= lo + span:
        assert val == math.log(2.0)


# -- state and goal terms ----------------------------------------------------------

def test_jerk_reward():
    a = np.array([1.0, 2.0, 3.0])
    assert R.state_reward(np.zeros(3), a, a, 1.5, CFG)[3] == 1.0
    assert R.state_reward(np.zeros(3), a, a + [1, 0, 0], 1.5, CFG)[3] == 0.5


def test_speed_at_reference_is_log2():
    r_v = R.state_reward(np.array([CFG.v_ref, 0, 0]), np.zeros(3), np.zeros(3), 1.5, CFG)[0]
    assert r_v == math.log(2.0)


def test_speed_term_cut_off_near_goal():
    assert R.state_reward(np.array([2.0, 0, 0]), np.zeros(3), np.zeros(3), 1.5, CFG, near_goal=True)[0] == 0.0


def test_goal_reward_stationary():
    p = np.array([0.0, 0, 1.5])
    g = np.array([5.0, 0, 1.5])
    assert R.goal_reward(p, np.zeros(3), g, 5.0, CFG) == (0.0, 0.0)


def test_goal_reward_truncation():
    p = np.array([0.0, 0, 1.5])
    g = np.array([5.0, 0, 1.5])
    r_dir, _ = R.goal_reward(p, np.array([CFG.v_ref, 0, 0]), g, 5.0, CFG)
    assert r_dir == 0.4 * CFG.v_ref


def test_goal_progress():
    p = np.array([0.0, 0, 1.5])
    g = np.array([5.0, 0, 1.5])
    _, r_dis = R.goal_reward(p, np.zeros(3), g, 5.1, CFG)
    assert r_dis == pytest.approx(math.exp(0.1) - 1.0, rel=1e-12)


def test_goal_reward_at_goal():
    g = np.array([5.0, 0, 1.5])
    assert R.goal_reward(g, np.array([1.0, 0, 0]), g, 0.0, CFG) == (0.0, 0.0)


def test_progress_cut_off_inside_goal_radius():
    g = np.array([1.0, 0, 1.5])
    _, r_dis = R.goal_reward(np.zeros(3) + [0, 0, 1.5], np.zeros(3), g, 1.2, CFG)
    assert r_dis == 0.0


# -- safety --------------------------------------------------------------------------

def test_safety_far_rays_use_min():
    assert R.safety_reward(np.full(50, 10.0), 0.2, CFG) == CFG.lambda_s * math.log(9.8)


def test_safety_two_stage_switch():
    val = R.safety_reward([0.5, 0.8, 5.0], 0.2, CFG)
    assert val == pytest.approx(CFG.lambda_s * math.log(0.45), rel=1e-15)
    # a ray exactly at d_th does not switch stage
    assert R.safety_reward([1.0, 5.0], 0.2, CFG) == CFG.lambda_s * math.log(0.8)


def test_safety_floor():
    assert R.safety_reward([0.2 + math.exp(-6)], 0.2, CFG) == -5.0 * CFG.lambda_s
    assert R.safety_reward([0.1], 0.2, CFG) == -5.0 * CFG.lambda_s


def test_safety_empty_scan():
    assert R.safety_reward([], 0.2, CFG) == CFG.lambda_s * math.log(CFG.d_max - 0.2)


@given(st.lists(st.floats(0.05, 10.0), min_size=1, max_size=30), st.integers(0, 29), st.floats(0.0, 3.0))
def test_safety_monotone_within_stage(rays, i, inc):
    i %= len(rays)
    bumped = list(rays)
    bumped[i] += inc
    stage = lambda d: min(d) < CFG.d_th  # noqa: E731
    assume(stage(rays) == stage(bumped))
    # the set of near rays must not change either, or the mean changes composition
    assume([r < CFG.d_th for r in rays] == [r < CFG.d_th for r in bumped])
    assert R.safety_reward(bumped, 0.2, CFG) >= R.safety_reward(rays, 0.2, CFG) - 1e-15


# -- reshaping coefficient ---------------------------------------------------------

def test_k_head_on():
    k = R.reshape_coefficient([0, 0, 1], [0, 0, 0], [3, 0, 1], [-1, 0, 0])
    assert k == pytest.approx(1.0 + math.e, rel=1e-15)


def test_k_perpendicular_and_receding():
    # theta = pi/2: obstacle moving sideways relative to the quadrotor
    assert R.reshape_coefficient([0, 0, 0], [0, 0, 0], [3, 0, 0], [0, 1, 0]) == 1.0
    assert R.reshape_coefficient([0, 0, 0], [0, 0, 0], [3, 0, 0], [1, 0, 0]) == 1.0
    assert R.reshape_coefficient([0, 0, 0], [1, 0, 0], [3, 0, 0], [1, 0, 0]) == 1.0


def _theta(p, v, po, vo):
    rel = np.asarray(p)[:2] - np.asarray(po)[:2]
    vr = np.asarray(vo)[:2] - np.asarray(v)[:2]
    c = rel @ vr / (np.linalg.norm(rel) * np.linalg.norm(vr))
    return math.acos(max(-1.0, min(1.0, c)))


@given(vec2, vec2, vec2, vec2)
def test_k_at_least_one_and_exact_outside_cone(p, v, po, vo):
    p, v, po, vo = (np.r_[x, 0.0] for x in (p, v, po, vo))
    k = R.reshape_coefficient(p, v, po, vo)
    assert k >= 1.0
    if np.linalg.norm(vo - v) == 0 or np.linalg.norm(p - po) == 0:
        assert k == 1.0
    elif _theta(p, v, po, vo) > math.pi / 2 + 1e-9:
        assert k == 1.0


@given(st.floats(0.2, 5.0), st.floats(0.0, 1.5), st.floats(0.0, 1.5), st.floats(0.1, 3.0))
def test_k_non_increasing_in_theta(dist, t1, t2, speed):
    # obstacle at the origin moving along +x; the quadrotor sits on a circle around it
    lo, hi = sorted((t1, t2))
    vo = np.array([speed, 0.0, 0.0])
    pts = [np.array([dist * math.cos(t), dist * math.sin(t), 0.0]) for t in (lo, hi)]
    # keep d_v fixed so only theta varies: compare at equal |sin| is impossible, so use k_theta factor
    k = [R.reshape_coefficient(q, np.zeros(3), np.zeros(3), vo) for q in pts]
    kd = [math.exp(1.0 / (1.0 + abs(q[1]))) for q in pts]
    kth = [(kk - 1.0) / (speed * d) for kk, d in zip(k, kd)]
    assert kth[0] >= kth[1] - 1e-12


# -- dynamic-obstacle reward ---------------------------------------------------------

def _dobs(p, v, pos, vel, surface, running=None):
    running = running or R.DobsRunningMax(CFG, 0.2)
    return R.dobs_reward(np.asarray(p, float), np.asarray(v, float), np.asarray(pos, float),
                         np.asarray(vel, float), np.asarray(surface, float), running, 0.2, CFG)


def test_dobs_single_static_mover():
    r, _ = _dobs([0, 0, 1], [0, 0, 0], [[2.5, 0, 1]], [[0, 0, 0]], [2.0])
    assert r == pytest.approx(CFG.lambda_d * math.log(1.8), rel=1e-15)


def test_dobs_discount_by_k():
    # head-on mover at distance 2.5 with unit speed: k = 1 + e exactly on the line
    r, k = _dobs([0, 0, 1], [0, 0, 0], [[2.5, 0, 1]], [[-1, 0, 0]], [2.0])
    assert k[0] == pytest.approx(1.0 + math.e, rel=1e-15)
    assert r == pytest.approx(CFG.lambda_d * (math.log(1.8) - math.log(1.0 + math.e)), rel=1e-12)


def test_dobs_floor_and_gate():
    r, _ = _dobs([0, 0, 1], [0, 0, 0], [[0.3, 0, 1]], [[0, 0, 0]], [0.1])
    assert r == -5.0 * CFG.lambda_d
    run = R.DobsRunningMax(CFG, 0.2)
    assert run.value == CFG.lambda_d * math.log(0.75 * CFG.d_max - 0.2)
    r, k = _dobs([0, 0, 1], [0, 0, 0], [[9.0, 0, 1]], [[0, 0, 0]], [8.7], run)
    assert len(k) == 0 and r == run.initial


@given(st.lists(st.floats(0.0, 9.0), min_size=1, max_size=30))
def test_running_max_non_decreasing(dists):
    run = R.DobsRunningMax(CFG, 0.2)
    prev = run.value
    for d in dists:
        _dobs([0, 0, 1], [0, 0, 0], [[d + 0.3, 0, 1]], [[0, 0, 0]], [d], run)
        assert run.value >= prev
        prev = run.value
    run.reset()
    assert run.value == run.initial


# -- total -------------------------------------------------------------------------

def _total(cfg, v=(1.0, 0, 0), a=(0.5, 0, 0), a_prev=(0.5, 0, 0)):
    running = R.DobsRunningMax(cfg, 0.2)
    return R.total_reward(np.array(v), np.array(a), np.array(a_prev), np.array([0, 0, 1.5]),
                          np.array([5.0, 0, 1.5]), 5.0, np.array([3.0, 4.0]), np.zeros((0, 3)),
                          np.zeros((0, 3)), np.zeros(0), running, 0.2, cfg)


def test_total_all_weights_zero():
    cfg = R.RewardConfig(**{f"lambda_{n}": 0.0 for n in ("v", "a", "h", "j", "dir", "dis", "s", "d")})
    assert _total(cfg).total == 0.0


def test_total_only_jerk():
    cfg = R.RewardConfig(**{f"lambda_{n}": 0.0 for n in ("v", "a", "h", "dir", "dis", "s", "d")}, lambda_j=1.0)
    assert _total(cfg).total == 1.0


@given(st.lists(st.floats(-3, 3), min_size=9, max_size=9), st.floats(0.5, 9.0))
def test_total_equals_recomputation(xs, d_prev):
    v, a, a_prev = np.array(xs[:3]), np.array(xs[3:6]), np.array(xs[6:9])
    p, g = np.array([0.0, 0.0, 1.2]), np.array([5.0, 1.0, 1.5])
    rays = np.array([0.7, 0.9, 4.0])
    pos, vel, surf = np.array([[2.0, 0.5, 1.5]]), np.array([[-1.0, 0.2, 0.0]]), np.array([1.6])
    br = R.total_reward(v, a, a_prev, p, g, d_prev, rays, pos, vel, surf, R.DobsRunningMax(CFG, 0.2), 0.2, CFG)
    # independent evaluation of every term
    lim = lambda s, lo, hi: math.log(math.exp(-(max(lo - s, 0) + max(s - hi, 0))) + 1)  # noqa: E731
    d_g = float(np.linalg.norm(g - p))
    r_v = lim(np.linalg.norm(v), 1.0, 3.0)
    r_a = lim(np.linalg.norm(a), 0.0, 6.0)
    r_h = lim(p[2], 1.0, 2.0)
    r_j = 1 / (1 + np.linalg.norm(a - a_prev))
    r_dir = min(v @ (g - p) / d_g, 1.2)
    r_dis = math.exp(d_prev - d_g) - 1
    r_s = 0.5 * math.log(np.mean([0.5, 0.7]))
    k = R.reshape_coefficient(p, v, pos[0], vel[0])
    r_do = 0.5 * max(math.log(1.4 / k), -5)
    ref = 0.2 * (r_v + r_a + r_h) + 0.1 * r_j + r_dir + r_dis + r_s + r_do
    assert br.total == pytest.approx(ref, rel=1e-12, abs=1e-12)


# -- field (figure analogue) -----------------------------------------------------------

def test_reshaped_field_properties():
    x, y, k, log_d = R.reshaped_field()
    X, Y = np.meshgrid(x, y)
    rel = np.array([1.0, -1.0])  # v_dobs - v_quad
    dist = np.hypot(X, Y)
    with np.errstate(invalid="ignore"):
        theta = np.arccos(np.clip((X * rel[0] + Y * rel[1]) / (dist * np.linalg.norm(rel)), -1, 1))
    assert np.all(k[theta >= math.pi / 2] == 1.0)
    assert np.all(k >= 1.0)
    i = np.unravel_index(np.argmax(k), k.shape)
    assert abs(X[i] + Y[i]) < 1e-9  # on the relative-velocity ray
    assert log_d.min() == -5.0


def test_render_field_csv_regenerates_field(tmp_path):
    out = tmp_path / "f"
    res = subprocess.run([sys.executable, "-m", "flowflight", "render-field", "--out", str(out)],
                         capture_output=True, text=True)
    assert res.returncode == 0, res.stderr
    data = np.loadtxt(out / "field.csv", delimiter=",", comments="#", skiprows=2)
    x, y, k, log_d = R.reshaped_field()
    X, Y = np.meshgrid(x, y)
    assert np.array_equal(data[:, 0], X.ravel()) and np.array_equal(data[:, 1], Y.ravel())
    assert np.array_equal(data[:, 2], k.ravel()) and np.array_equal(data[:, 3], log_d.ravel())
    assert (out / "field.png").stat().st_size > 0
