"""PPO: rollout collection, GAE, clipped-surrogate updates, training loop.

The policy is a diagonal Gaussian over pre-squash actions ``u``; the
environment receives ``a_ref * tanh(u)``. Log-probabilities are those of the
Gaussian, the squashing is part of the actuator.
"""

import copy
import csv
import hashlib
import math
import os
from dataclasses import dataclass

import numpy as np

from .env import NavEnv
from .errors import ConfigError, NonFiniteError
from .nn import ActorCritic, NetSpec, save_checkpoint
from .reward import COMPONENTS

__all__ = [
    "TrainConfig",
    "RolloutBuffer",
    "Adam",
    "GaussianPolicy",
    "collect",
    "gae",
    "gae_direct",
    "ppo_loss",
    "update",
    "train",
    "CURVE_FIELDS",
]

LOG_2PI = math.log(2.0 * math.pi)


@dataclass
class TrainConfig:
    n_envs: int = 128
    horizon: int = 64
    gamma: float = 0.99
    gae_lambda: float = 0.95
    clip: float = 0.2
    epochs: int = 4
    minibatch: int = 512
    lr: float = 3e-4
    entropy_coef: float = 0.01
    value_coef: float = 0.5
    max_grad_norm: float = 0.5
    # stop the epochs once an epoch's mean approx KL exceeds 1.5 * target_kl; 0 = off
    target_kl: float = 0.0
    # the critic head predicts return / value_scale (fixed, not a running statistic)
    value_scale: float = 100.0
    total_steps: int = 1_000_000
    adam_betas: tuple = (0.9, 0.999)
    adam_eps: float = 1e-8
    checkpoint_every: int = 0  # updates; 0 = only at the end
    zero_flow: bool = False
    no_dobs: bool = False

    def validate(self, path="train"):
        if not 0 < self.gamma <= 1:
            raise ConfigError(f"{path}.gamma", "must lie in (0, 1]")
        if not 0 < self.gae_lambda <= 1:
            raise ConfigError(f"{path}.gae_lambda", "must lie in (0, 1]")
        if not self.clip > 0:
            raise ConfigError(f"{path}.clip", "must be > 0")
        for name in ("n_envs", "horizon", "epochs", "minibatch"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{path}.{name}", "must be >= 1")
        if self.total_steps < 0:
            raise ConfigError(f"{path}.total_steps", "must be >= 0")
        if not self.lr > 0:
            raise ConfigError(f"{path}.lr", "must be > 0")
        if self.target_kl < 0:
            raise ConfigError(f"{path}.target_kl", "must be >= 0")
        if self.max_grad_norm <= 0:
            raise ConfigError(f"{path}.max_grad_norm", "must be > 0")
        if not self.value_scale > 0:
            raise ConfigError(f"{path}.value_scale", "must be > 0")


class RolloutBuffer:
    """Fixed ``(horizon, n_envs)`` storage of one rollout."""

    def __init__(self, horizon, n_envs, sensing_shape, state_dim, action_dim=3):
        T, E = horizon, n_envs
        self.horizon, self.n_envs = T, E
        self.sensing = np.zeros((T, E) + tuple(sensing_shape), dtype=np.float32)
        self.state = np.zeros((T, E, state_dim), dtype=np.float32)
        self.u = np.zeros((T, E, action_dim))
        self.logp = np.zeros((T, E))
        self.value = np.zeros((T, E))
        self.reward = np.zeros((T, E))
        self.terminated = np.zeros((T, E), dtype=bool)
        self.truncated = np.zeros((T, E), dtype=bool)
        self.components = np.zeros((T, E, len(COMPONENTS)))
        self.kind = np.full((T, E), "", dtype=object)
        self.last_value = np.zeros(E)
        self.advantages = None
        self.returns = None

    @property
    def done(self):
        return self.terminated | self.truncated

    def __len__(self):
        return self.horizon * self.n_envs

    def flat(self):
        n = len(self)
        return {
            "sensing": self.sensing.reshape((n,) + self.sensing.shape[2:]),
            "state": self.state.reshape(n, -1),
            "u": self.u.reshape(n, -1),
            "logp": self.logp.reshape(n),
            "value": self.value.reshape(n),
            "adv": self.advantages.reshape(n),
            "ret": self.returns.reshape(n),
        }

    def digest(self):
        h = hashlib.sha256()
        for arr in (self.sensing, self.state, self.u, self.logp, self.value, self.reward,
                    self.terminated, self.truncated, self.components):
            h.update(np.ascontiguousarray(arr).tobytes())
        return h.hexdigest()


class GaussianPolicy:
    """Sampling and log-probabilities on top of :class:`ActorCritic`."""

    def __init__(self, net, a_ref, value_scale=1.0):
        self.net = net
        self.a_ref = float(a_ref)
        self.value_scale = float(value_scale)

    def act(self, sensing, state, rngs=None):
        """Returns ``(u, logp, value, actuated a)``; deterministic (mean) without ``rngs``."""
        mean, log_std, value, _ = self.net.forward(sensing, state)
        mean = mean.astype(np.float64)
        log_std = log_std.astype(np.float64)
        if rngs is None:
            u = mean
        else:
            noise = np.stack([r.standard_normal(mean.shape[1]) for r in rngs])
            u = mean + np.exp(log_std) * noise
        return u, log_prob(u, mean, log_std), self.value_scale * value.astype(np.float64), self.squash(u)

    def squash(self, u):
        return self.a_ref * np.tanh(u)

    def value(self, sensing, state):
        return self.value_scale * self.net.forward(sensing, state)[2].astype(np.float64)


def log_prob(u, mean, log_std):
    z = (u - mean) * np.exp(-log_std)
    return (-0.5 * z * z - log_std - 0.5 * LOG_2PI).sum(axis=-1)


def entropy(log_std):
    return float(np.sum(log_std + 0.5 * (LOG_2PI + 1.0)))


class Adam:
    """``m = b1 m + (1-b1) g``; ``v = b2 v + (1-b2) g^2``;
    ``x -= lr * m_hat / (sqrt(v_hat) + eps)`` with bias-corrected moments."""

    def __init__(self, size, lr, betas=(0.9, 0.999), eps=1e-8):
        self.lr, self.b1, self.b2, self.eps = lr, betas[0], betas[1], eps
        self.m = np.zeros(size)
        self.v = np.zeros(size)
        self.t = 0

    def step(self, params, grad):
        self.t += 1
        self.m = self.b1 * self.m + (1 - self.b1) * grad
        self.v = self.b2 * self.v + (1 - self.b2) * grad * grad
        m_hat = self.m / (1 - self.b1 ** self.t)
        v_hat = self.v / (1 - self.b2 ** self.t)
        new = params.astype(np.float64) - self.lr * m_hat / (np.sqrt(v_hat) + self.eps)
        params[...] = new.astype(params.dtype)


def action_rngs(seed, n_envs):
    return [np.random.default_rng(np.random.SeedSequence([int(seed), int(i), 1])) for i in range(n_envs)]


def collect(env, policy, buf, obs, rngs, gamma, stats=None):
    """Fill ``buf`` with ``buf.horizon`` steps of every environment.

    Time-limit truncation is not a terminal state: its reward is augmented by
    ``gamma * V(final observation)`` so the advantage recursion may cut there.
    Returns the observation after the rollout.
    """
    for t in range(buf.horizon):
        u, logp, value, a = policy.act(obs.sensing, obs.state, rngs)
        buf.sensing[t] = obs.sensing
        buf.state[t] = obs.state
        buf.u[t], buf.logp[t], buf.value[t] = u, logp, value
        obs, r, term, trunc, records, final = env.step(a)
        if trunc.any():
            idx = np.flatnonzero(trunc)
            fs = np.stack([final[int(i)][0] for i in idx])
            fst = np.stack([final[int(i)][1] for i in idx])
            r = r.copy()
            r[idx] += gamma * policy.value(fs, fst)
        buf.reward[t] = r
        buf.terminated[t] = term
        buf.truncated[t] = trunc
        for i, rec in enumerate(records):
            if rec is not None:
                buf.components[t, i] = [getattr(rec.breakdown, c) for c in COMPONENTS]
                buf.kind[t, i] = rec.termination
        if stats is not None:
            stats.observe(env, term | trunc, records)
    buf.last_value = policy.value(obs.sensing, obs.state)
    return obs


def gae(rewards, values, dones, last_values, gamma, lam):
    """Recursive GAE over ``(T, E)`` arrays; returns ``(advantages, returns)``.

    ``delta_t = r_t + gamma V_{t+1} (1 - done_t) - V_t``,
    ``A_t = delta_t + gamma lam (1 - done_t) A_{t+1}``.
    """
    rewards = np.asarray(rewards, dtype=float)
    values = np.asarray(values, dtype=float)
    notdone = 1.0 - np.asarray(dones, dtype=float)
    T = rewards.shape[0]
    adv = np.zeros_like(rewards)
    nxt_v = np.asarray(last_values, dtype=float)
    nxt_a = np.zeros_like(rewards[0])
    for t in range(T - 1, -1, -1):
        delta = rewards[t] + gamma * nxt_v * notdone[t] - values[t]
        nxt_a = delta + gamma * lam * notdone[t] * nxt_a
        adv[t] = nxt_a
        nxt_v = values[t]
    return adv, adv + values


def gae_direct(rewards, values, dones, last_value, gamma, lam):
    """O(T^2) reference for one environment: ``A_t = sum_l (gamma lam)^l delta_{t+l}`` up to the first done."""
    T = len(rewards)
    v_next = list(values[1:]) + [last_value]
    deltas = [rewards[t] + gamma * v_next[t] * (1 - dones[t]) - values[t] for t in range(T)]
    adv = []
    for t in range(T):
        total, w = 0.0, 1.0
        for l in range(t, T):
            total += w * deltas[l]
            if dones[l]:
                break
            w *= gamma * lam
        adv.append(total)
    return np.array(adv)


def ppo_loss(net, batch, cfg):
    """``(loss, stats, grad)`` for one minibatch; ``grad`` is flat."""
    mean, log_std, value, cache = net.forward(batch["sensing"], batch["state"])
    mean = mean.astype(np.float64)
    log_std = log_std.astype(np.float64)
    value = value.astype(np.float64)
    n = len(value)
    u, adv, ret = batch["u"], batch["adv"], batch["ret"]
    logp = log_prob(u, mean, log_std)
    ratio = np.exp(logp - batch["logp"])
    clipped = np.clip(ratio, 1.0 - cfg.clip, 1.0 + cfg.clip)
    surr1, surr2 = ratio * adv, clipped * adv
    policy_loss = -float(np.mean(np.minimum(surr1, surr2)))
    # value loss in head units: (V / s - R / s)^2
    vs = cfg.value_scale
    value_loss = float(np.mean((value - ret / vs) ** 2))
    ent = entropy(log_std)
    loss = policy_loss + cfg.value_coef * value_loss - cfg.entropy_coef * ent
    if not math.isfinite(loss):
        raise NonFiniteError(f"non-finite PPO loss {loss}")

    # d loss / d logp: the unclipped branch carries the gradient when it is the minimum
    active = surr1 <= surr2
    d_logp = np.where(active, -adv * ratio / n, 0.0)
    inv_var = np.exp(-2.0 * log_std)
    diff = u - mean
    d_mean = d_logp[:, None] * diff * inv_var
    d_log_std = (d_logp[:, None] * (diff * diff * inv_var - 1.0)).sum(axis=0) - cfg.entropy_coef
    d_value = cfg.value_coef * 2.0 * (value - ret / vs) / n
    grad = net.backward(cache, d_mean, d_log_std, d_value).astype(np.float64)
    stats = {
        "loss": loss,
        "policy_loss": policy_loss,
        "value_loss": value_loss,
        "entropy": ent,
        # (r - 1) - log r: unbiased and never negative
        "approx_kl": float(np.mean(ratio - 1.0 - (logp - batch["logp"]))),
        "clip_frac": float(np.mean(np.abs(ratio - 1.0) > cfg.clip)),
    }
    return loss, stats, grad


def update(net, buf, opt, cfg, rng, dump_dir=None):
    """Clipped-surrogate epochs over the buffer; returns mean statistics."""
    data = buf.flat()
    adv = data["adv"]
    data["adv"] = (adv - adv.mean()) / (adv.std() + 1e-8)
    n = len(buf)
    mb = min(cfg.minibatch, n)
    acc = {}
    count = epochs = 0
    for _ in range(cfg.epochs):
        perm = rng.permutation(n)
        epochs += 1
        kl = []
        for s in range(0, n, mb):
            idx = perm[s:s + mb]
            batch = {k: v[idx] for k, v in data.items()}
            try:
                _, stats, grad = ppo_loss(net, batch, cfg)
            except NonFiniteError:
                if dump_dir is not None:
                    os.makedirs(dump_dir, exist_ok=True)
                    np.savez(os.path.join(dump_dir, "nonfinite_buffer.npz"), **data)
                raise
            norm = float(np.sqrt(np.sum(grad * grad)))
            if norm > cfg.max_grad_norm:
                grad = grad * (cfg.max_grad_norm / norm)
            opt.step(net.params.flat, grad)
            if not np.all(np.isfinite(net.params.flat)):
                raise NonFiniteError("parameters became non-finite")
            stats["grad_norm"] = norm
            for k, v in stats.items():
                acc[k] = acc.get(k, 0.0) + v
            count += 1
            kl.append(stats["approx_kl"])
        if cfg.target_kl > 0 and np.mean(kl) > 1.5 * cfg.target_kl:
            break
    out = {k: v / max(count, 1) for k, v in acc.items()}
    out["epochs"] = epochs
    return out


class EpisodeStats:
    """Outcome counters for episodes finishing during training."""

    def __init__(self, n_envs, goal_radius):
        self.reached = np.zeros(n_envs, dtype=bool)
        self.goal_radius = goal_radius
        self.finished = []

    def observe(self, env, done, records):
        for i, rec in enumerate(records):
            if rec is None:
                continue
            if rec.termination == "success" or env.d_goal[i] <= self.goal_radius:
                self.reached[i] = True
            if done[i]:
                self.finished.append((rec.termination, bool(self.reached[i] or rec.termination == "success")))
                self.reached[i] = False

    def drain(self):
        out, self.finished = self.finished, []
        return out


CURVE_FIELDS = (["update", "env_steps"] + [f"mean_{c}" for c in COMPONENTS] + ["mean_reward",
                "episodes", "goal_rate", "crash_rate", "policy_loss", "value_loss", "entropy",
                "approx_kl", "clip_frac", "grad_norm", "epochs"])


def train(env_spec, net_spec, cfg, seed, out_dir=None, meta=None, progress=None):
    """Run PPO for ``cfg.total_steps`` environment steps.

    Returns ``(net, curves)``; with ``out_dir`` also writes ``curves.csv``
    and ``policy.ckpt`` (plus periodic checkpoints).
    """
    cfg.validate()
    spec = copy.deepcopy(env_spec)
    # reaching the goal must not cut off a stream of positive rewards
    spec.sim.success_terminates = False
    if cfg.zero_flow:
        spec.zero_flow = True
    if cfg.no_dobs:
        spec.reward.lambda_d = 0.0
    rng = np.random.default_rng(np.random.SeedSequence([int(seed), 2 ** 20]))
    net = ActorCritic(net_spec or NetSpec(), rng=rng)
    policy = GaussianPolicy(net, spec.sim.a_ref, cfg.value_scale)
    meta = dict(meta or {}, seed=seed)
    curves = []
    writer = fh = None
    if out_dir is not None:
        os.makedirs(out_dir, exist_ok=True)
        fh = open(os.path.join(out_dir, "curves.csv"), "w", newline="")
        writer = csv.writer(fh)
        writer.writerow(CURVE_FIELDS)

    steps_per_update = cfg.n_envs * cfg.horizon
    n_updates = cfg.total_steps // steps_per_update
    try:
        if n_updates:
            env = NavEnv.for_training(spec, cfg.n_envs, seed)
            obs = env.reset()
            rngs = action_rngs(seed, cfg.n_envs)
            buf = RolloutBuffer(cfg.horizon, cfg.n_envs, obs.sensing.shape[1:], obs.state.shape[1])
            opt = Adam(net.params.size, cfg.lr, cfg.adam_betas, cfg.adam_eps)
            stats = EpisodeStats(cfg.n_envs, spec.sim.goal_radius)
        for k in range(n_updates):
            obs = collect(env, policy, buf, obs, rngs, cfg.gamma, stats)
            buf.advantages, buf.returns = gae(buf.reward, buf.value, buf.done, buf.last_value,
                                              cfg.gamma, cfg.gae_lambda)
            ls = update(net, buf, opt, cfg, rng, dump_dir=out_dir)
            eps = stats.drain()
            row = {"update": k + 1, "env_steps": (k + 1) * steps_per_update}
            comp = buf.components.reshape(-1, len(COMPONENTS)).mean(axis=0)
            for c, v in zip(COMPONENTS, comp):
                row[f"mean_{c}"] = float(v)
            row["mean_reward"] = float(buf.reward.mean())
            row["episodes"] = len(eps)
            row["goal_rate"] = float(np.mean([g for _, g in eps])) if eps else float("nan")
            row["crash_rate"] = float(np.mean([t == "crash" for t, _ in eps])) if eps else float("nan")
            for key in ("policy_loss", "value_loss", "entropy", "approx_kl", "clip_frac", "grad_norm", "epochs"):
                row[key] = ls[key]
            curves.append(row)
            if writer is not None:
                writer.writerow([_fmt(row[f]) for f in CURVE_FIELDS])
                fh.flush()
                if cfg.checkpoint_every and (k + 1) % cfg.checkpoint_every == 0:
                    save_checkpoint(os.path.join(out_dir, f"policy_{k + 1:05d}.ckpt"), net,
                                    dict(meta, env_steps=row["env_steps"]))
            if progress is not None:
                progress(row)
    finally:
        if fh is not None:
            fh.close()
    if out_dir is not None:
        save_checkpoint(os.path.join(out_dir, "policy.ckpt"), net,
                        dict(meta, env_steps=n_updates * steps_per_update))
    return net, curves


def _fmt(x):
    return repr(x) if isinstance(x, float) else str(x)

