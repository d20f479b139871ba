"""Low-level training: latent-conditioned imitation with a GAN or diffusion discriminator."""
from __future__ import annotations

import logging
import time
from dataclasses import dataclass

import numpy as np

from .. import adversary, diffdisc, skills, toyenv
from ..cat import delta as cat_delta
from ..cat import schedule_pmax, update_cmax
from ..motion import FEATURE_SETS, MotionDataset, sample_dataset_transitions
from ..numkit import Adam, FeedForwardNet, clip_grad_norm
from ..policy import GaussianPolicy
from .common import (
    RolloutBuffer,
    eval_violations,
    make_cat_state,
    make_constraints,
    rng_streams,
)
from .ppo import compute_gae, ppo_update

log = logging.getLogger(__name__)


class Discriminator:
    """Uniform face over the two discriminator kinds."""

    def __init__(self, model, kind, lr):
        self.model = model
        self.kind = kind
        self.opt = Adam(model.params(), lr=lr)

    @classmethod
    def build(cls, disc_cfg, transition_dim, rng):
        if disc_cfg.kind == "gan":
            model = adversary.GanDiscriminator.build(transition_dim, disc_cfg.hidden, disc_cfg.weight_decay, rng)
            model.gradient_penalty = disc_cfg.gradient_penalty
        else:
            model = diffdisc.DiffusionDiscriminator.build(
                transition_dim, disc_cfg.hidden, disc_cfg.diffusion_k, disc_cfg.diffusion_steps,
                disc_cfg.weight_decay, rng,
            )
        return cls(model, disc_cfg.kind, disc_cfg.lr)

    def score(self, x, rng):
        if self.kind == "gan":
            return adversary.discriminate(self.model, x)
        return diffdisc.diffusion_discriminate(self.model, x, rng)

    def loss(self, xm, xp, rng):
        if self.kind == "gan":
            return adversary.gan_loss(self.model, xm, xp)
        return diffdisc.train_loss(self.model, xm, xp, rng)

    def update(self, xm, xp, rng):
        loss, grads = self.loss(xm, xp, rng)
        self.opt.step(grads)
        return loss


@dataclass
class LowLevelAgent:
    policy: GaussianPolicy
    value: FeedForwardNet
    encoder: skills.SkillEncoder
    disc: Discriminator
    robot: str = "planar_arm"

    @property
    def latent_dim(self):
        return self.encoder.net.output_dim

    @classmethod
    def build(cls, cfg, transition_dim, rng):
        obs_dim = toyenv.OBS_DIM + skills.LATENT_DIM
        ppo = cfg.ppo
        policy = GaussianPolicy.build(obs_dim, toyenv.ACTION_DIM, ppo.hidden, ppo.init_std, rng)
        value = FeedForwardNet.build([obs_dim, *ppo.hidden, 1], activation="tanh", rng=rng)
        encoder = skills.SkillEncoder.build(transition_dim, skills.LATENT_DIM, cfg.encoder_hidden, cfg.kappa, rng)
        disc = Discriminator.build(cfg.disc, transition_dim, rng)
        return cls(policy, value, encoder, disc)


class LowLevelEnvs:
    """N planar environments with reference-state resets and periodic latent resampling."""

    def __init__(self, n, env_cfg, dataset: MotionDataset, latent_period, rng):
        self.n = n
        self.cfg = env_cfg
        self.frames = dataset.all_frames()
        self.period = latent_period
        self.rng = rng
        self.state = np.zeros((n, toyenv.STATE_DIM))
        self.last_action = np.zeros((n, toyenv.ACTION_DIM))
        self.z = np.zeros((n, skills.LATENT_DIM))
        self.episode_step = np.zeros(n, dtype=int)
        self.latent_timer = np.zeros(n, dtype=int)
        self.episode_return = np.zeros(n)
        self.reset(np.arange(n))
        # stagger episode and latent clocks so boundaries spread over epochs
        self.episode_step = rng.integers(0, env_cfg.episode_length, size=n)
        self.latent_timer = rng.integers(0, latent_period, size=n)

    def reset(self, idx):
        if len(idx) == 0:
            return
        s = self.frames[self.rng.integers(0, len(self.frames), size=len(idx))].copy()
        s[:, toyenv.BASE_POS] = 0.0
        self.state[idx] = s
        self.last_action[idx] = 0.0
        self.z[idx] = skills.sample_latent(self.rng, len(idx))
        self.episode_step[idx] = 0
        self.latent_timer[idx] = 0
        self.episode_return[idx] = 0.0

    def observe(self):
        return toyenv.observe(self.state, self.last_action, self.cfg, self.rng)


def policy_input(obs, z):
    return np.concatenate([obs, z], axis=-1)


def collect_low_level_rollout(agent: LowLevelAgent, envs: LowLevelEnvs, constraints, cat, cat_enabled,
                              steps, action_rng) -> RolloutBuffer:
    """Roll the stochastic policy for ``steps`` steps in every environment.

    Rewards are left for :func:`label_rewards`; c+ and the termination
    probability are recorded per step.
    """
    n = envs.n
    in_dim = agent.policy.obs_dim
    buf = RolloutBuffer(
        obs=np.zeros((steps, n, in_dim)),
        states=np.zeros((steps, n, toyenv.STATE_DIM)),
        next_states=np.zeros((steps, n, toyenv.STATE_DIM)),
        actions=np.zeros((steps, n, toyenv.ACTION_DIM)),
        logp=np.zeros((steps, n)),
        values=np.zeros((steps, n)),
        deltas=np.zeros((steps, n)),
        violations=np.zeros((steps, n, len(constraints))),
        dones=np.zeros((steps, n)),
        latents=np.zeros((steps, n, skills.LATENT_DIM)),
    )
    std = np.exp(agent.policy.log_std)
    for t in range(steps):
        inp = policy_input(envs.observe(), envs.z)
        mu = agent.policy.mean(inp)
        act = mu + std * action_rng.standard_normal(mu.shape)
        bad = ~np.all(np.isfinite(act), axis=1)
        if np.any(bad):
            raise FloatingPointError(f"non-finite action in environment {int(np.flatnonzero(bad)[0])}")
        buf.obs[t] = inp
        buf.states[t] = envs.state
        buf.actions[t] = act
        buf.logp[t] = agent.policy.log_prob(mu, act)
        buf.values[t] = agent.value.predict(inp)[:, 0]
        buf.latents[t] = envs.z
        c_plus = eval_violations(constraints, envs.state, act)
        buf.violations[t] = c_plus
        if cat_enabled:
            buf.deltas[t] = cat_delta(cat, c_plus)
        envs.state = toyenv.step(envs.state, act, envs.cfg)
        envs.last_action = np.clip(act, -1.0, 1.0)
        buf.next_states[t] = envs.state

        envs.episode_step += 1
        envs.latent_timer += 1
        done = envs.episode_step >= envs.cfg.episode_length
        buf.dones[t] = done
        switch = np.flatnonzero((envs.latent_timer >= envs.period) & ~done)
        if len(switch):
            envs.z[switch] = skills.sample_latent(envs.rng, len(switch))
            envs.latent_timer[switch] = 0
        envs.reset(np.flatnonzero(done))
    buf.last_value = agent.value.predict(policy_input(envs.observe(), envs.z))[:, 0]
    return buf


def transitions_of(buf: RolloutBuffer, robot="planar_arm"):
    idx, _ = FEATURE_SETS[robot]
    return np.concatenate([buf.flat("states")[:, idx], buf.flat("next_states")[:, idx]], axis=1)


def label_rewards(agent: LowLevelAgent, buf: RolloutBuffer, beta, disc_rng):
    """Attach r_D, r_E and r = r_D + beta * r_E to the buffer in one batched pass."""
    T, N = buf.shape
    x = transitions_of(buf, agent.robot)
    score = agent.disc.score(x, disc_rng)
    r_d = adversary.imitation_reward(score)
    r_e = skills.skill_reward(agent.encoder, x, buf.flat("latents"))
    buf.r_disc = r_d.reshape(T, N)
    buf.r_enc = r_e.reshape(T, N)
    buf.rewards = buf.r_disc + beta * buf.r_enc
    buf.extras["disc_score"] = score.reshape(T, N)
    return buf


def update_discriminator(agent, x_policy, dataset, disc_cfg, rng):
    losses = []
    n = x_policy.shape[0]
    mb = min(disc_cfg.batch, n)
    for _ in range(disc_cfg.passes):
        perm = rng.permutation(n)
        for start in range(0, n - mb + 1, mb):
            xp = x_policy[perm[start:start + mb]]
            xm = sample_dataset_transitions(dataset, mb, rng).pairs
            losses.append(agent.disc.update(xm, xp, rng))
    return float(np.mean(losses))


def update_encoder(agent, x, z, opt, cfg, rng):
    losses = []
    n = x.shape[0]
    mb = min(cfg.encoder_batch, n)
    for _ in range(cfg.encoder_passes):
        perm = rng.permutation(n)
        for start in range(0, n - mb + 1, mb):
            idx = perm[start:start + mb]
            loss, grads = skills.encoder_loss(agent.encoder, x[idx], z[idx])
            grads, _ = clip_grad_norm(grads, 1.0)
            opt.step(grads)
            losses.append(loss)
    return float(np.mean(losses))


class LowLevelTrainer:
    """Stateful low-level training loop; one :meth:`run_epoch` per PPO iteration."""

    def __init__(self, cfg, env_cfg, dataset: MotionDataset, seed: int, agent: LowLevelAgent | None = None):
        self.cfg = cfg
        self.env_cfg = env_cfg
        self.dataset = dataset
        self.rng = rng_streams(seed)
        tdim = 2 * len(FEATURE_SETS[dataset.robot][0])
        self.agent = agent or LowLevelAgent.build(cfg, tdim, self.rng["init"])
        self.constraints = make_constraints(cfg.cat, env_cfg)
        self.cat = make_cat_state(cfg.cat, self.constraints)
        ppo = cfg.ppo
        self.policy_opt = Adam(self.agent.policy.params(), lr=ppo.lr)
        self.value_opt = Adam(self.agent.value.params(), lr=ppo.value_lr)
        self.encoder_opt = Adam(self.agent.encoder.params(), lr=cfg.encoder_lr)
        self.envs = LowLevelEnvs(ppo.n_envs, env_cfg, dataset, cfg.latent_period, self.rng["env"])
        self.epoch = 0
        self.last_buffer = None

    def run_epoch(self):
        cfg, ppo, rng = self.cfg, self.cfg.ppo, self.rng
        if cfg.cat.enabled:
            schedule_pmax(self.cat, self.epoch + 1, cfg.epochs)
        envs = self.envs
        ret_before = envs.episode_return.copy()
        buf = collect_low_level_rollout(
            self.agent, envs, self.constraints, self.cat, cfg.cat.enabled, ppo.rollout_steps, rng["action"]
        )
        label_rewards(self.agent, buf, ppo.beta, rng["disc"])
        finished = self._episode_returns(buf, ret_before)

        x = transitions_of(buf, self.agent.robot)
        z = buf.flat("latents")
        x_data = sample_dataset_transitions(self.dataset, min(2048, x.shape[0]), rng["disc"]).pairs
        score_data = float(np.mean(self.agent.disc.score(x_data, rng["disc"])))
        disc_loss = update_discriminator(self.agent, x, self.dataset, cfg.disc, rng["disc"])
        update_encoder(self.agent, x, z, self.encoder_opt, cfg, rng["encoder"])

        adv, ret = compute_gae(buf.rewards, buf.values, buf.last_value, buf.deltas, buf.dones, ppo.gamma, ppo.lam)
        batch = {
            "obs": buf.flat("obs"),
            "actions": buf.flat("actions"),
            "logp": buf.flat("logp"),
            "advantages": adv.reshape(-1),
            "returns": ret.reshape(-1),
        }
        obs_only = batch["obs"][:, : toyenv.OBS_DIM]
        div_rng = rng["diversity"]

        def diversity_fn(idx):
            idx = idx[: cfg.diversity_batch]
            z2 = skills.sample_latent(div_rng, len(idx))
            return skills.diversity_loss(self.agent.policy, obs_only[idx], z[idx], z2)

        stats = ppo_update(
            self.agent.policy, self.agent.value, batch, ppo, rng["ppo"], self.policy_opt, self.value_opt,
            diversity_fn if ppo.diversity_weight > 0 else None,
        )
        update_cmax(self.cat, buf.violations.reshape(-1, len(self.constraints)))
        row = {
            "epoch": self.epoch,
            "mean_rD": float(np.mean(buf.r_disc)),
            "mean_rE": float(np.mean(buf.r_enc)),
            "diversity_loss": stats["diversity_loss"],
            "disc_loss": disc_loss,
            "disc_score_policy": float(np.mean(buf.extras["disc_score"])),
            "disc_score_dataset": score_data,
            "mean_delta": float(np.mean(buf.deltas)),
            "violation_frac": float(np.mean(np.any(buf.violations > 0.0, axis=-1))),
            "episode_return": float(np.mean(finished)) if len(finished) else None,
            "eef_error_eval": None,
        }
        self.last_buffer = buf
        self.epoch += 1
        return row

    def _episode_returns(self, buf, ret_before):
        finished = []
        acc = ret_before
        T, _ = buf.shape
        for t in range(T):
            acc = acc + buf.rewards[t]
            done = buf.dones[t] > 0
            finished.extend(acc[done].tolist())
            acc = np.where(done, 0.0, acc)
        self.envs.episode_return = acc
        return finished


def train_low_level(cfg, env_cfg, dataset, seed=0, epochs=None, on_epoch=None, trainer=None):
    """Run the low-level loop; returns ``(trainer, metrics rows)``.

    ``on_epoch(trainer, row)`` is called after every epoch (checkpointing,
    logging).
    """
    trainer = trainer or LowLevelTrainer(cfg, env_cfg, dataset, seed)
    total = cfg.epochs if epochs is None else epochs
    rows = []
    while trainer.epoch < total:
        t0 = time.perf_counter()
        row = trainer.run_epoch()
        rows.append(row)
        log.info(
            "low epoch %d rD=%.3f rE=%.3f Dpol=%.3f Ddata=%.3f viol=%.4f (%.2fs)",
            row["epoch"], row["mean_rD"], row["mean_rE"], row["disc_score_policy"],
            row["disc_score_dataset"], row["violation_frac"], time.perf_counter() - t0,
        )
        if on_epoch is not None:
            on_epoch(trainer, row)
    return trainer, rows


def alignment_scores(agent: LowLevelAgent, buf: RolloutBuffer, rng):
    """Mean kappa mu_q^T z on on-policy pairs and with the latents randomly re-paired."""
    x = transitions_of(buf, agent.robot)
    z = buf.flat("latents")
    matched = float(np.mean(skills.skill_reward(agent.encoder, x, z)))
    shuffled = float(np.mean(skills.skill_reward(agent.encoder, x, z[rng.permutation(len(z))])))
    return matched, shuffled
