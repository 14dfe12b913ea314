"""Episode logs, evaluation metrics, benchmark grids, latency and replay.

Episode logs are line-delimited JSON. Each episode is a ``header`` record,
one ``tick`` record per simulation step and a ``footer``::

    {"type": "header", "version": 1, "trial": 0, "seed": 17, "config_hash": "...",
     "scenario": {...}, "sim": {...}}
    {"type": "tick", "tick": 1, "t": 0.02, "p": [...], "v": [...], "a": [...],
     "reward": {"r_v": ..., ..., "total": ...}, "nearest": 4.1, "latency_ms": 1.9}
    {"type": "footer", "termination": "success", "ticks": 212}

Floats are written with ``repr`` precision, so a log replays bit-exactly.
"""

import copy
import json
import math
import time
from dataclasses import asdict, dataclass, field, fields

import numpy as np

from . import lidar as L, world as W
from .env import NavEnv
from .flow import PointFlowPipeline
from .reward import COMPONENTS

__all__ = [
    "LOG_VERSION",
    "EpisodeLog",
    "MetricsReport",
    "compute_metrics",
    "ablation_ratio",
    "write_logs",
    "read_logs",
    "evaluate",
    "RandomPolicy",
    "GoalSeekingPolicy",
    "NetworkPolicy",
    "density_grid",
    "benchmark",
    "speed_tiers",
    "latency_bench",
    "replay",
    "ReplayResult",
]

LOG_VERSION = 1

# reference density cells: (label, dynamic, static) on a 25 x 10 m field
DENSITY_CELLS = (
    ("7d/7s", 7, 7),
    ("13d/13s", 13, 13),
    ("25d/19s", 25, 19),
    ("25d", 25, 0),
    ("44s", 0, 44),
)
REFERENCE_FIELD_AREA = 250.0


@dataclass(eq=False)
class EpisodeLog:
    header: dict
    ticks: list = field(default_factory=list)
    termination: str = "running"

    @property
    def success(self):
        return self.termination == "success"

    def positions(self):
        start = np.asarray(self.header["scenario"]["start"], dtype=float)
        return np.vstack([start[None]] + [np.asarray(t["p"], dtype=float)[None] for t in self.ticks])

    def records(self):
        yield dict(self.header, type="header", version=LOG_VERSION)
        for t in self.ticks:
            yield dict(t, type="tick")
        yield {"type": "footer", "termination": self.termination, "ticks": len(self.ticks)}


@dataclass
class MetricsReport:
    trials: int
    successes: int
    eta: float
    v_a: float = None
    t_p: float = None
    R_l: float = None
    d_s: float = None
    d_s_min: float = None

    def row(self):
        return [_num(getattr(self, f.name)) for f in fields(self)]

    @staticmethod
    def columns():
        return [f.name for f in fields(MetricsReport)]


def _num(x):
    if x is None:
        return "NA"
    return repr(float(x)) if isinstance(x, float) else str(x)


def path_length(points):
    d = np.diff(np.asarray(points, dtype=float), axis=0)
    return float(np.sqrt((d * d).sum(axis=1)).sum())


def compute_metrics(logs):
    """Success rate over all trials; other metrics over successful trials only."""
    logs = list(logs)
    if not logs:
        raise ValueError("compute_metrics needs at least one episode log")
    ok = sorted((lg for lg in logs if lg.success), key=lambda lg: (lg.header.get("trial", 0), lg.header.get("seed", 0)))
    rep = MetricsReport(trials=len(logs), successes=len(ok), eta=len(ok) / len(logs))
    if not ok:
        return rep
    v_a, r_l, d_s, d_min, t_p = [], [], [], [], []
    for lg in ok:
        pts = lg.positions()
        length = path_length(pts)
        sc = lg.header["scenario"]
        straight = float(np.linalg.norm(np.subtract(sc["goal"], sc["start"])))
        duration = len(lg.ticks) * float(lg.header["sim"]["dt"])
        near = np.array([t["nearest"] for t in lg.ticks], dtype=float)
        v_a.append(length / duration)
        r_l.append(length / straight)
        d_s.append(float(near.mean()))
        d_min.append(float(near.min()))
        t_p.append(float(np.mean([t["latency_ms"] for t in lg.ticks])))
    rep.v_a, rep.R_l, rep.d_s = float(np.mean(v_a)), float(np.mean(r_l)), float(np.mean(d_s))
    rep.d_s_min, rep.t_p = float(np.mean(d_min)), float(np.mean(t_p))
    return rep


def ablation_ratio(ablated, reference):
    """``alpha_c``: ablated success rate over the reference success rate."""
    if reference.eta == 0:
        return math.nan
    return ablated.eta / reference.eta


def write_logs(path, logs):
    with open(path, "w") as fh:
        for lg in logs:
            for rec in lg.records():
                fh.write(json.dumps(rec) + "\n")


def read_logs(path):
    logs, cur = [], None
    with open(path) as fh:
        for n, line in enumerate(fh, 1):
            if not line.strip():
                continue
            rec = json.loads(line)
            kind = rec.pop("type", None)
            if kind == "header":
                if rec.get("version") != LOG_VERSION:
                    raise ValueError(f"{path}:{n}: unsupported log version {rec.get('version')!r}")
                cur = EpisodeLog(header=rec)
                logs.append(cur)
            elif kind == "tick" and cur is not None:
                cur.ticks.append(rec)
            elif kind == "footer" and cur is not None:
                cur.termination = rec["termination"]
                cur = None
            else:
                raise ValueError(f"{path}:{n}: unexpected record {kind!r}")
    return logs


# -- policies ------------------------------------------------------------------

class NetworkPolicy:
    """Deterministic actuation of a trained network: ``a_ref * tanh(mean)``."""

    def __init__(self, net, a_ref):
        self.net = net
        self.a_ref = float(a_ref)

    def __call__(self, obs, env):
        mean = self.net.forward(obs.sensing, obs.state)[0].astype(np.float64)
        return self.a_ref * np.tanh(mean)


class RandomPolicy:
    """Uniform random accelerations in ``[-a_ref, a_ref]^3``."""

    def __init__(self, a_ref, seed=0):
        self.a_ref = float(a_ref)
        self.rng = np.random.default_rng(seed)

    def __call__(self, obs, env):
        return self.rng.uniform(-self.a_ref, self.a_ref, (env.n_envs, 3))


class GoalSeekingPolicy:
    """Obstacle-blind PD controller toward the goal (reference baseline)."""

    def __init__(self, a_ref, speed, kp=2.0):
        self.a_ref, self.speed, self.kp = float(a_ref), float(speed), kp

    def __call__(self, obs, env):
        out = np.zeros((env.n_envs, 3))
        for i in np.flatnonzero(env.active):
            q, goal = env.worlds[i].quad, env.scenarios[i].goal
            d = goal - q.p
            dist = float(np.linalg.norm(d))
            want = d / dist * min(self.speed, dist) if dist > 0 else np.zeros(3)
            a = self.kp * (want - q.v)
            out[i] = np.clip(a, -self.a_ref, self.a_ref)
        return out


# -- evaluation ------------------------------------------------------------------

def trial_scenario(scenario_cfg, seed, trial):
    """Scenario of one evaluation trial, normalized through its file form."""
    ss = np.random.SeedSequence([int(seed), int(trial)])
    sc_seed = int(ss.generate_state(1)[0] % (2 ** 31 - 1))
    sc = W.sample_scenario(scenario_cfg, sc_seed)
    # the log stores the file form; evaluate on exactly what replay will rebuild
    return W.scenario_from_dict(W.scenario_to_dict(sc)), np.random.default_rng(ss.spawn(1)[0])


def evaluate(spec, policy, n_trials, seed=0, n_parallel=16, config_hash="", scenarios=None):
    """Run ``n_trials`` episodes (success terminates) and return their logs.

    Trial ``j`` runs in slot ``j % n_parallel``. ``scenarios`` optionally
    supplies ``(scenario, sensor_rng)`` per trial instead of sampling.
    """
    spec = copy.deepcopy(spec)
    spec.sim.success_terminates = True
    E = max(1, min(n_parallel, n_trials))
    queues = [list(range(i, n_trials, E)) for i in range(E)]
    logs = [None] * n_trials
    current = [None] * E

    def make_source(slot):
        def source(_i):
            if not queues[slot]:
                current[slot] = None
                return None
            j = queues[slot].pop(0)
            sc, rng = scenarios[j] if scenarios is not None else trial_scenario(spec.scenario, seed, j)
            current[slot] = j
            logs[j] = EpisodeLog(header={
                "trial": j, "seed": int(seed), "config_hash": config_hash,
                "scenario": W.scenario_to_dict(sc), "sim": asdict(spec.sim),
            })
            return sc, rng
        return source

    env = NavEnv(spec, [make_source(i) for i in range(E)], auto_reset=True)
    obs = env.reset()
    while env.active.any():
        t0 = time.perf_counter()
        a = policy(obs, env)
        fwd_ms = (time.perf_counter() - t0) * 1e3 / max(int(env.active.sum()), 1)
        slots = [(i, current[i]) for i in np.flatnonzero(env.active)]
        snap = {i: env.worlds[i] for i, _ in slots}
        obs, r, term, trunc, records, _ = env.step(a)
        for i, j in slots:
            rec = records[i]
            wd = W.step(snap[i], a[i], spec.sim)
            q = wd.quad
            tick = {
                "tick": wd.tick, "t": q.t, "p": q.p.tolist(), "v": q.v.tolist(), "a": [float(x) for x in a[i]],
                "reward": {c: float(getattr(rec.breakdown, c)) for c in COMPONENTS + ("total",)},
                "nearest": rec.nearest, "latency_ms": rec.encode_ms + fwd_ms,
            }
            logs[j].ticks.append(tick)
            if term[i] or trunc[i]:
                logs[j].termination = rec.termination
    return logs


def density_grid(factor, rows=DENSITY_CELLS):
    """Reference density cells scaled by ``factor`` (rounded obstacle counts)."""
    return [(label, int(round(nd * factor)), int(round(ns * factor))) for label, nd, ns in rows]


def default_density_factor(scenario_cfg):
    (x0, x1), (y0, y1) = scenario_cfg.field_x, scenario_cfg.field_y
    return (x1 - x0) * (y1 - y0) / REFERENCE_FIELD_AREA


def benchmark(spec, policy, grid, n_trials=20, seed=0, n_parallel=16, config_hash=""):
    """One :class:`MetricsReport` per ``(label, n_dynamic, n_static)`` cell."""
    out = []
    for label, nd, ns in grid:
        s = copy.deepcopy(spec)
        s.scenario.n_dynamic = (nd, nd)
        s.scenario.n_columns = (ns, ns)
        s.scenario.n_walls = (0, 0)
        logs = evaluate(s, policy, n_trials, seed, n_parallel, config_hash)
        out.append((label, nd, ns, compute_metrics(logs)))
    return out


SPEED_TIERS = ((0.5, 1.0), (1.0, 2.0), (2.0, 3.0))


def speed_tiers(spec, policy, tiers=SPEED_TIERS, n_trials=20, seed=0, n_parallel=16, config_hash=""):
    """Evaluate under obstacle-speed tiers; returns ``[(tier, MetricsReport)]``."""
    out = []
    for lo, hi in tiers:
        s = copy.deepcopy(spec)
        s.scenario.speed_range = (lo, hi)
        out.append(((lo, hi), compute_metrics(evaluate(s, policy, n_trials, seed, n_parallel, config_hash))))
    return out


def synthetic_scan(n_points, cfg, rng):
    """``n_points`` random in-FOV points at random ranges."""
    th = rng.uniform(cfg.h_fov[0], cfg.h_fov[1], n_points)
    tv = rng.uniform(cfg.v_fov[0], cfg.v_fov[1], n_points)
    d = rng.uniform(0.3, cfg.d_max, n_points)
    ct = np.cos(tv)
    pts = np.stack([d * ct * np.cos(th), d * ct * np.sin(th), d * np.sin(tv)], axis=1)
    return L.ScanFrame(points=pts)


def latency_bench(point_counts, net, lidar_cfg, flow_cfg, repeats=50, seed=0):
    """Wall-clock encode + flow + forward per tick for synthetic scans.

    Returns ``[(n_points, mean_ms, p95_ms, encode_mean_ms)]``. The flow history
    is warmed up first so every timed tick runs the full estimator.
    """
    rng = np.random.default_rng(seed)
    out = []
    for n in point_counts:
        pipe = PointFlowPipeline(flow_cfg, 1)
        frames = [synthetic_scan(n, lidar_cfg, rng) for _ in range(4)]
        state = np.zeros((1, 9))
        total, enc = [], []
        for k in range(flow_cfg.warmup + repeats):
            fr = frames[k % len(frames)]
            t0 = time.perf_counter()
            grid = L.encode_raycast_grid(fr, lidar_cfg)
            gray, dm = L.encode_distance_map(grid)
            t1 = time.perf_counter()
            pf = pipe.push(gray[None])
            sensing = np.concatenate([dm.normalized[None, None], pf], axis=1)
            net.forward(sensing, state)
            t2 = time.perf_counter()
            if k >= flow_cfg.warmup:
                total.append((t2 - t0) * 1e3)
                enc.append((t1 - t0) * 1e3)
        total = np.array(total)
        out.append((n, float(total.mean()), float(np.percentile(total, 95)), float(np.mean(enc))))
    return out


# -- replay ------------------------------------------------------------------------

@dataclass
class ReplayResult:
    ok: bool
    episodes: int
    message: str = ""


def _sim_from(d):
    known = {f.name for f in fields(W.SimConfig)}
    return W.SimConfig(**{k: v for k, v in d.items() if k in known})


def replay(logs):
    """Re-run every episode's actions and require bitwise equal states."""
    for lg in logs:
        sim = _sim_from(lg.header["sim"])
        sc = W.scenario_from_dict(lg.header["scenario"])
        wd = W.initial_world(sc, sim)
        where = f"trial {lg.header.get('trial')}"
        for rec in lg.ticks:
            wd = W.step(wd, np.array(rec["a"], dtype=float), sim)
            q = wd.quad
            if wd.tick != rec["tick"] or q.t != rec["t"]:
                return ReplayResult(False, len(logs), f"{where}: tick {rec['tick']} time mismatch")
            if q.p.tolist() != rec["p"] or q.v.tolist() != rec["v"]:
                return ReplayResult(False, len(logs), f"{where}: tick {rec['tick']} state mismatch")
            near = W.obstacle_surface_distances(wd, q.p)
            near = float(near.min()) if near.size else math.inf
            if near != rec["nearest"]:
                return ReplayResult(False, len(logs), f"{where}: tick {rec['tick']} nearest-distance mismatch")
        term = W.check_termination(wd, sim, sc).value if lg.ticks else "running"
        if term != lg.termination:
            return ReplayResult(False, len(logs), f"{where}: termination {term} != logged {lg.termination}")
    return ReplayResult(True, len(logs), "all episodes replay bitwise")
