"""Vectorized navigation environment: world + LiDAR + point flow + reward.

Every environment slot owns its world, flow history, running maximum and
random streams, so a slot's trajectory depends only on its own episode
source and the actions it receives.
"""

import math
import time
from dataclasses import dataclass, field, replace

import numpy as np

from . import lidar as L, world as W
from .flow import FlowConfig, PointFlowPipeline
from .reward import DobsRunningMax, RewardConfig, total_reward

__all__ = ["EnvSpec", "NavEnv", "Observation", "TickRecord", "training_source", "STATE_DIM"]

STATE_DIM = 9


@dataclass
class EnvSpec:
    sim: W.SimConfig = field(default_factory=W.SimConfig)
    scenario: W.ScenarioConfig = field(default_factory=W.ScenarioConfig)
    lidar: L.LidarConfig = field(default_factory=L.LidarConfig)
    flow: FlowConfig = field(default_factory=FlowConfig)
    reward: RewardConfig = field(default_factory=RewardConfig)
    zero_flow: bool = False  # "w/o flow" ablation

    def reward_config(self):
        # reference values are owned by the simulator and the sensor
        return replace(self.reward, v_ref=self.sim.v_ref, a_ref=self.sim.a_ref, d_max=self.lidar.d_max)


@dataclass(eq=False)
class Observation:
    sensing: np.ndarray  # (E, 3, 36, 6)
    state: np.ndarray  # (E, 9): goal direction, v / v_ref, a_last / a_ref


@dataclass(eq=False)
class TickRecord:
    """Per-slot diagnostics of one step."""

    termination: str
    breakdown: object
    nearest: float
    encode_ms: float


def training_source(spec, seed, i):
    """Endless stream of sampled scenarios for slot ``i``; depends only on ``(seed, i)``."""
    ss = np.random.SeedSequence([int(seed), int(i)])
    scen_rng = np.random.default_rng(ss.spawn(1)[0])

    def source(_slot):
        sc_seed = int(scen_rng.integers(0, 2 ** 31 - 1))
        return W.sample_scenario(spec.scenario, sc_seed), np.random.default_rng(sc_seed)

    return source


def goal_direction(p, goal):
    d = np.asarray(goal, dtype=float) - np.asarray(p, dtype=float)
    n = float(np.linalg.norm(d))
    return d / n if n > 0 else np.zeros(3)


class NavEnv:
    """``n_envs`` independent slots stepped in lockstep.

    ``sources[i](i)`` returns ``(scenario, sensor_rng)`` for the next episode
    of slot ``i``, or ``None`` to retire the slot. Retired slots are skipped
    and report ``active == False``.
    """

    def __init__(self, spec, sources, auto_reset=True):
        self.spec = spec
        self.n_envs = len(sources)
        self.sources = list(sources)
        self.auto_reset = auto_reset
        self.reward_cfg = spec.reward_config()
        self.pipeline = PointFlowPipeline(spec.flow, self.n_envs)
        if spec.zero_flow:
            self.pipeline.estimator = None
        E = self.n_envs
        self.scenarios = [None] * E
        self.worlds = [None] * E
        self.rngs = [None] * E
        self.running = [None] * E
        self.d_goal = np.zeros(E)
        self.active = np.zeros(E, dtype=bool)
        self.episode = np.zeros(E, dtype=int)
        shp = (3,) + tuple(spec.flow.out_shape)
        self.sensing = np.zeros((E,) + shp)
        self.state = np.zeros((E, STATE_DIM))

    @classmethod
    def for_training(cls, spec, n_envs, seed):
        return cls(spec, [training_source(spec, seed, i) for i in range(n_envs)])

    # -- internals -------------------------------------------------------------

    def _sense(self, idx):
        """Sensing update for slots ``idx``; returns (frames, encode ms)."""
        frames, grays, dmaps = [], [], []
        t0 = time.perf_counter()
        for i in idx:
            fr = L.scan(self.worlds[i], self.spec.lidar, self.rngs[i])
            grid = L.encode_raycast_grid(fr, self.spec.lidar)
            gray, dm = L.encode_distance_map(grid)
            frames.append(fr)
            grays.append(gray)
            dmaps.append(dm.normalized)
        if len(idx):
            pf = self.pipeline.push(np.stack(grays), idx)
            self.sensing[idx, 0] = np.stack(dmaps)
            self.sensing[idx, 1:] = 0.0 if self.spec.zero_flow else pf
        ms = (time.perf_counter() - t0) * 1e3 / max(len(idx), 1)
        for i in idx:
            q = self.worlds[i].quad
            self.state[i, :3] = goal_direction(q.p, self.scenarios[i].goal)
            self.state[i, 3:6] = q.v / self.spec.sim.v_ref
            self.state[i, 6:9] = q.a_last / self.spec.sim.a_ref
        return frames, ms

    def _begin(self, i):
        nxt = self.sources[i](i)
        if nxt is None:
            self.active[i] = False
            self.sensing[i] = 0.0
            self.state[i] = 0.0
            return False
        sc, rng = nxt
        self.scenarios[i] = sc
        self.rngs[i] = rng
        self.worlds[i] = W.initial_world(sc, self.spec.sim)
        self.running[i] = DobsRunningMax(self.reward_cfg, sc.quad_radius)
        self.d_goal[i] = float(np.linalg.norm(sc.goal - sc.start))
        self.pipeline.reset([i])
        self.active[i] = True
        self.episode[i] += 1
        return True

    def observation(self):
        return Observation(self.sensing.copy(), self.state.copy())

    # -- API ---------------------------------------------------------------------

    def reset(self):
        self.episode[:] = 0
        started = [i for i in range(self.n_envs) if self._begin(i)]
        self._sense(np.array(started, dtype=int))
        return self.observation()

    def step(self, actions):
        """Apply actuated accelerations ``(E, 3)`` to every active slot.

        Returns ``(obs, reward, terminated, truncated, records, final_obs)``.
        ``final_obs`` holds the observation reached by the step for slots that
        ended (before any auto-reset), keyed by slot index.
        """
        actions = np.asarray(actions, dtype=float).reshape(self.n_envs, 3)
        E = self.n_envs
        idx = np.flatnonzero(self.active)
        reward = np.zeros(E)
        terminated = np.zeros(E, dtype=bool)
        truncated = np.zeros(E, dtype=bool)
        records = [None] * E
        prev_a = {}
        for i in idx:
            prev_a[i] = self.worlds[i].quad.a_last
            self.worlds[i] = W.step(self.worlds[i], actions[i], self.spec.sim)
        frames, ms = self._sense(idx)
        rcfg = self.reward_cfg
        for j, i in enumerate(idx):
            wd, sc = self.worlds[i], self.scenarios[i]
            q = wd.quad
            surf = W.obstacle_surface_distances(wd, q.p)
            dyn = wd.packed["dynamic"]
            dyn_obs = [ob for ob, d in zip(wd.obstacles, dyn) if d]
            dyn_pos = np.array([ob.position for ob in dyn_obs]).reshape(-1, 3)
            dyn_vel = np.array([ob.velocity for ob in dyn_obs]).reshape(-1, 3)
            br = total_reward(q.v, q.a_last, prev_a[i], q.p, sc.goal, self.d_goal[i], frames[j].distances,
                              dyn_pos, dyn_vel, surf[dyn], self.running[i], sc.quad_radius, rcfg)
            self.d_goal[i] = float(np.linalg.norm(sc.goal - q.p))
            term = W.check_termination(wd, self.spec.sim, sc)
            if term == W.Termination.SUCCESS and not self.spec.sim.success_terminates:
                term = W.Termination.RUNNING
                if wd.tick >= self.spec.sim.max_episode_ticks:
                    term = W.Termination.TIMEOUT
            reward[i] = br.total
            terminated[i] = term not in (W.Termination.RUNNING, W.Termination.TIMEOUT)
            truncated[i] = term == W.Termination.TIMEOUT
            records[i] = TickRecord(term.value, br, float(surf.min()) if surf.size else math.inf, ms)
        done = np.flatnonzero(terminated | truncated)
        final_obs = {int(i): (self.sensing[i].copy(), self.state[i].copy()) for i in done}
        if self.auto_reset and done.size:
            restarted = [i for i in done if self._begin(i)]
            self._sense(np.array(restarted, dtype=int))
        elif done.size:
            self.active[done] = False
        return self.observation(), reward, terminated, truncated, records, final_obs
