"""High-level training: a task policy emitting latents for a frozen low-level policy."""
from __future__ import annotations

import logging
import time
from dataclasses import dataclass

import numpy as np

from .. import skills, toyenv
from ..numkit import Adam, FeedForwardNet
from ..policy import GaussianPolicy
from .common import RolloutBuffer, eval_violations, make_constraints, rng_streams
from .ppo import compute_gae, ppo_update

log = logging.getLogger(__name__)

HIGH_OBS_DIM = toyenv.OBS_DIM + 4


def task_reward(x_eef, x_d):
    """exp(-10 * ||x_eef - x_d||)."""
    return np.exp(-10.0 * np.linalg.norm(np.asarray(x_eef) - np.asarray(x_d), axis=-1))


def high_observation(state, last_action, target, cfg, rng=None):
    base = np.asarray(state)[..., toyenv.BASE_POS]
    eef = toyenv.end_effector(state, cfg)
    return np.concatenate(
        [toyenv.observe(state, last_action, cfg, rng), target - base, target - eef], axis=-1
    )


def sample_targets(rng, n, radii):
    r = rng.uniform(radii[0], radii[1], size=n)
    ang = rng.uniform(-np.pi, np.pi, size=n)
    return np.stack([r * np.cos(ang), r * np.sin(ang)], axis=-1)


class FrozenLowLevel:
    """Deterministic (mean-action) view of a trained low-level policy.

    Holds its own copy of the parameters so nothing done here can leak back
    into the low-level agent.
    """

    def __init__(self, policy: GaussianPolicy):
        self.policy = policy.copy()

    def act(self, state, last_action, z, cfg, rng=None):
        obs = toyenv.observe(state, last_action, cfg, rng)
        return self.policy.mean(np.concatenate([obs, z], axis=-1))


@dataclass
class HighLevelAgent:
    policy: GaussianPolicy
    value: FeedForwardNet

    @classmethod
    def build(cls, ppo_cfg, rng, latent_dim=skills.LATENT_DIM):
        policy = GaussianPolicy.build(HIGH_OBS_DIM, latent_dim, ppo_cfg.hidden, ppo_cfg.init_std, rng)
        value = FeedForwardNet.build([HIGH_OBS_DIM, *ppo_cfg.hidden, 1], activation="tanh", rng=rng)
        return cls(policy, value)


class TaskEnvs:
    """Point-reaching episodes: base starts at the origin, target on an annulus."""

    def __init__(self, n, env_cfg, radii, rng):
        self.n, self.cfg, self.radii, self.rng = n, env_cfg, radii, rng
        self.state = toyenv.neutral_state(env_cfg, n)
        self.last_action = np.zeros((n, toyenv.ACTION_DIM))
        self.target = np.zeros((n, 2))
        self.z = np.zeros((n, skills.LATENT_DIM))
        self.episode_step = np.zeros(n, dtype=int)
        self.episode_return = np.zeros(n)
        self.reset(np.arange(n))

    def reset(self, idx):
        if len(idx) == 0:
            return
        self.state[idx] = toyenv.neutral_state(self.cfg)
        self.last_action[idx] = 0.0
        self.target[idx] = sample_targets(self.rng, len(idx), self.radii)
        self.z[idx] = skills.sample_latent(self.rng, len(idx))
        self.episode_step[idx] = 0
        self.episode_return[idx] = 0.0

    def observe(self):
        return high_observation(self.state, self.last_action, self.target, self.cfg, self.rng)


def run_low_level(low: FrozenLowLevel, envs: TaskEnvs, z, period, constraints):
    """Apply latent ``z`` for ``period`` low-level steps; returns mean task reward and c+ per step."""
    reward = np.zeros(envs.n)
    viol = []
    for _ in range(period):
        act = low.act(envs.state, envs.last_action, z, envs.cfg, envs.rng)
        viol.append(eval_violations(constraints, envs.state, act))
        envs.state = toyenv.step(envs.state, act, envs.cfg)
        envs.last_action = np.clip(act, -1.0, 1.0)
        reward += task_reward(toyenv.end_effector(envs.state, envs.cfg), envs.target)
    return reward / period, np.stack(viol, axis=1)


def collect_high_level_rollout(agent: HighLevelAgent, low: FrozenLowLevel, envs: TaskEnvs, period, steps,
                               constraints, action_rng) -> RolloutBuffer:
    n = envs.n
    buf = RolloutBuffer(
        obs=np.zeros((steps, n, HIGH_OBS_DIM)),
        states=np.zeros((steps, n, toyenv.STATE_DIM)),
        next_states=np.zeros((steps, n, toyenv.STATE_DIM)),
        actions=np.zeros((steps, n, agent.policy.act_dim)),
        logp=np.zeros((steps, n)),
        values=np.zeros((steps, n)),
        deltas=np.zeros((steps, n)),
        violations=np.zeros((steps, n, period, len(constraints))),
        dones=np.zeros((steps, n)),
        latents=np.zeros((steps, n, skills.LATENT_DIM)),
        r_task=np.zeros((steps, n)),
    )
    std = np.exp(agent.policy.log_std)
    for t in range(steps):
        obs = envs.observe()
        mu = agent.policy.mean(obs)
        raw = mu + std * action_rng.standard_normal(mu.shape)
        if not np.all(np.isfinite(raw)):
            raise FloatingPointError("non-finite high-level action")
        z = skills.project_latent(raw, envs.z)
        envs.z = z
        buf.obs[t], buf.states[t], buf.actions[t], buf.latents[t] = obs, envs.state, raw, z
        buf.logp[t] = agent.policy.log_prob(mu, raw)
        buf.values[t] = agent.value.predict(obs)[:, 0]
        r, viol = run_low_level(low, envs, z, period, constraints)
        buf.r_task[t] = r
        buf.violations[t] = viol
        buf.next_states[t] = envs.state
        envs.episode_step += period
        done = envs.episode_step >= envs.cfg.episode_length
        buf.dones[t] = done
        envs.reset(np.flatnonzero(done))
    buf.rewards = buf.r_task
    buf.last_value = agent.value.predict(envs.observe())[:, 0]
    return buf


class HierarchicalController:
    """Deterministic high-level + low-level stack for evaluation."""

    def __init__(self, high_policy: GaussianPolicy, low: FrozenLowLevel, period, cfg):
        self.high, self.low, self.period, self.cfg = high_policy, low, period, cfg

    def reset(self, n):
        self.z = np.zeros((n, skills.LATENT_DIM))
        self.z[:, 0] = 1.0
        self.k = 0

    def act(self, state, last_action, target):
        if self.k % self.period == 0:
            raw = self.high.mean(high_observation(state, last_action, target, self.cfg))
            self.z = skills.project_latent(raw, self.z)
        self.k += 1
        return self.low.act(state, last_action, self.z, self.cfg)


class HighLevelTrainer:
    def __init__(self, cfg, env_cfg, low_policy: GaussianPolicy, seed: int, low_cat_cfg=None):
        from ..config import CatConfig

        self.cfg, self.env_cfg = cfg, env_cfg
        self.rng = rng_streams(seed)
        self.low = FrozenLowLevel(low_policy)
        self.agent = HighLevelAgent.build(cfg.ppo, self.rng["init"])
        self.constraints = make_constraints(low_cat_cfg or CatConfig(), env_cfg)
        self.policy_opt = Adam(self.agent.policy.params(), lr=cfg.ppo.lr)
        self.value_opt = Adam(self.agent.value.params(), lr=cfg.ppo.value_lr)
        self.envs = TaskEnvs(cfg.ppo.n_envs, env_cfg, cfg.target_radii, self.rng["env"])
        self.epoch = 0

    def run_epoch(self):
        from .evaluate import evaluate

        cfg, ppo, rng = self.cfg, self.cfg.ppo, self.rng
        ret_before = self.envs.episode_return.copy()
        buf = collect_high_level_rollout(
            self.agent, self.low, self.envs, cfg.period, ppo.rollout_steps, self.constraints, rng["action"]
        )
        finished = []
        acc = ret_before
        for t in range(buf.shape[0]):
            acc = acc + buf.rewards[t]
            d = buf.dones[t] > 0
            finished.extend(acc[d].tolist())
            acc = np.where(d, 0.0, acc)
        self.envs.episode_return = acc
        adv, ret = compute_gae(buf.rewards, buf.values, buf.last_value, None, buf.dones, ppo.gamma, ppo.lam)
        batch = {
            "obs": buf.flat("obs"),
            "actions": buf.flat("actions"),
            "logp": buf.flat("logp"),
            "advantages": adv.reshape(-1),
            "returns": ret.reshape(-1),
        }
        ppo_update(self.agent.policy, self.agent.value, batch, ppo, rng["ppo"], self.policy_opt, self.value_opt)
        eef_error = None
        if cfg.eval_every and (self.epoch + 1) % cfg.eval_every == 0:
            ctrl = HierarchicalController(self.agent.policy, self.low, cfg.period, self.env_cfg)
            rep = evaluate(ctrl, cfg.eval_episodes, rng["eval"], self.env_cfg, cfg.target_radii, self.constraints)
            eef_error = rep.mean_error
        row = {
            "epoch": self.epoch,
            "mean_rD": None,
            "mean_rE": None,
            "diversity_loss": None,
            "disc_loss": None,
            "disc_score_policy": None,
            "disc_score_dataset": None,
            "mean_delta": 0.0,
            "violation_frac": float(np.mean(np.any(buf.violations > 0.0, axis=-1))),
            "episode_return": float(np.mean(finished)) if finished else None,
            "eef_error_eval": eef_error,
        }
        self.epoch += 1
        return row

    def controller(self):
        return HierarchicalController(self.agent.policy, self.low, self.cfg.period, self.env_cfg)


def train_high_level(cfg, env_cfg, low_policy, seed=0, epochs=None, on_epoch=None, trainer=None, low_cat_cfg=None):
    trainer = trainer or HighLevelTrainer(cfg, env_cfg, low_policy, seed, low_cat_cfg)
    total = cfg.epochs if epochs is None else epochs
    rows = []
    while trainer.epoch < total:
        t0 = time.perf_counter()
        row = trainer.run_epoch()
        rows.append(row)
        log.info(
            "high epoch %d return=%s eef_err=%s viol=%.4f (%.2fs)",
            row["epoch"], row["episode_return"], row["eef_error_eval"], row["violation_frac"],
            time.perf_counter() - t0,
        )
        if on_epoch is not None:
            on_epoch(trainer, row)
    return trainer, rows
