"""Planar loco-manipulation toy: holonomic point base carrying a 2-link arm.

State layout (8 values): base position (2), base velocity (2), joint angles (2),
joint velocities (2). Actions are 4 values in [-1, 1]: base acceleration (2)
and joint acceleration (2), scaled by the config.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .motion import MotionClip, MotionDataset

STATE_DIM = 8
ACTION_DIM = 4
BASE_POS = slice(0, 2)
BASE_VEL = slice(2, 4)
JOINT_POS = slice(4, 6)
JOINT_VEL = slice(6, 8)


@dataclass(frozen=True)
class EnvConfig:
    dt: float = 0.02  # 50 Hz
    link1: float = 0.5
    link2: float = 0.5
    base_accel_scale: float = 4.0
    joint_accel_scale: float = 20.0
    v_max: float = 2.0
    joint_limit: float = 2.6
    qd_max: float = 8.0
    q_neutral: tuple = (0.8, -1.6)
    accel_limit: float = 2.5  # constraint threshold on commanded base acceleration
    episode_length: int = 500
    obs_noise: float = 0.0
    # scripted expert gains
    base_kp: float = 3.0
    arm_kp: float = 60.0
    arm_kd: float = 8.0

    @property
    def reach(self) -> float:
        return self.link1 + self.link2


DEFAULT_CONFIG = EnvConfig()


@dataclass
class ConstraintSpec:
    name: str
    evaluator: object  # callable (state, action) -> c
    final_pmax: float = 0.2
    ramp_start_fraction: float = 0.7

    def __post_init__(self):
        if not 0.0 <= self.final_pmax <= 1.0:
            raise ValueError("final_pmax must lie in [0, 1]")


def neutral_state(cfg: EnvConfig = DEFAULT_CONFIG, n=None) -> np.ndarray:
    s = np.zeros(STATE_DIM)
    s[JOINT_POS] = cfg.q_neutral
    return s if n is None else np.tile(s, (n, 1))


def step(state, action, cfg: EnvConfig = DEFAULT_CONFIG) -> np.ndarray:
    """Advance one semi-implicit Euler step. Works on single states or batches."""
    state = np.asarray(state, dtype=np.float64)
    if not np.all(np.isfinite(state)):
        raise FloatingPointError("non-finite state passed to step")
    a = np.clip(np.asarray(action, dtype=np.float64), -1.0, 1.0)
    if not np.all(np.isfinite(a)):
        raise FloatingPointError("non-finite action passed to step")
    out = state.copy()
    dt = cfg.dt

    v = state[..., BASE_VEL] + cfg.base_accel_scale * a[..., 0:2] * dt
    speed = np.linalg.norm(v, axis=-1, keepdims=True)
    v = np.where(speed > cfg.v_max, v * (cfg.v_max / np.maximum(speed, 1e-300)), v)
    out[..., BASE_VEL] = v
    out[..., BASE_POS] = state[..., BASE_POS] + v * dt

    qd = np.clip(state[..., JOINT_VEL] + cfg.joint_accel_scale * a[..., 2:4] * dt, -cfg.qd_max, cfg.qd_max)
    q = state[..., JOINT_POS] + qd * dt
    hit = np.abs(q) > cfg.joint_limit
    out[..., JOINT_POS] = np.clip(q, -cfg.joint_limit, cfg.joint_limit)
    out[..., JOINT_VEL] = np.where(hit, 0.0, qd)
    return out


def end_effector(state, cfg: EnvConfig = DEFAULT_CONFIG) -> np.ndarray:
    state = np.asarray(state, dtype=np.float64)
    q1 = state[..., 4]
    q12 = q1 + state[..., 5]
    x = state[..., 0] + cfg.link1 * np.cos(q1) + cfg.link2 * np.cos(q12)
    y = state[..., 1] + cfg.link1 * np.sin(q1) + cfg.link2 * np.sin(q12)
    return np.stack([x, y], axis=-1)


def contact_force_analog(state, action, cfg: EnvConfig = DEFAULT_CONFIG):
    """Commanded base acceleration norm minus its limit; positive means violated."""
    a = np.clip(np.asarray(action, dtype=np.float64), -1.0, 1.0)
    return cfg.base_accel_scale * np.linalg.norm(a[..., 0:2], axis=-1) - cfg.accel_limit


def default_constraints(cfg: EnvConfig = DEFAULT_CONFIG, final_pmax=0.2, ramp_start_fraction=0.7):
    return [
        ConstraintSpec(
            "base_accel",
            lambda s, a: contact_force_analog(s, a, cfg),
            final_pmax,
            ramp_start_fraction,
        )
    ]


def observe(state, last_action, cfg: EnvConfig = DEFAULT_CONFIG, rng=None) -> np.ndarray:
    """Policy observation: base velocity, joint angles/velocities and the previous action."""
    state = np.asarray(state, dtype=np.float64)
    obs = np.concatenate([state[..., 2:8], np.asarray(last_action, dtype=np.float64)], axis=-1)
    if cfg.obs_noise > 0.0 and rng is not None:
        obs = obs + rng.uniform(-cfg.obs_noise, cfg.obs_noise, size=obs.shape)
    return obs


OBS_DIM = 10


# scripted experts -----------------------------------------------------------

def arm_pd_action(state, q_target, cfg: EnvConfig = DEFAULT_CONFIG) -> np.ndarray:
    q, qd = state[..., JOINT_POS], state[..., JOINT_VEL]
    acc = cfg.arm_kp * (np.asarray(q_target) - q) - cfg.arm_kd * qd
    return np.clip(acc / cfg.joint_accel_scale, -1.0, 1.0)


def base_velocity_action(state, v_target, cfg: EnvConfig = DEFAULT_CONFIG) -> np.ndarray:
    acc = cfg.base_kp * (np.asarray(v_target) - state[..., BASE_VEL])
    return np.clip(acc / cfg.base_accel_scale, -1.0, 1.0)


def two_link_ik(target, cfg: EnvConfig = DEFAULT_CONFIG):
    """Elbow-down (q2 <= 0) joint angles placing the tip at ``target`` relative to the shoulder."""
    x, y = float(target[0]), float(target[1])
    l1, l2 = cfg.link1, cfg.link2
    r2 = x * x + y * y
    c2 = (r2 - l1 * l1 - l2 * l2) / (2.0 * l1 * l2)
    if not -1.0 <= c2 <= 1.0:
        raise ValueError(f"target at radius {np.sqrt(r2):.3f} is outside the reachable annulus")
    q2 = -np.arccos(c2)
    q1 = np.arctan2(y, x) - np.arctan2(l2 * np.sin(q2), l1 + l2 * np.cos(q2))
    q1 = (q1 + np.pi) % (2.0 * np.pi) - np.pi
    return np.array([q1, q2])


def _rollout(state, controller, n_steps, cfg):
    frames = [state]
    for _ in range(n_steps):
        state = step(state, controller(state), cfg)
        frames.append(state)
    return np.array(frames)


def _walk_controller(v_cmd, cfg):
    def ctrl(s):
        return np.concatenate(
            [base_velocity_action(s, v_cmd, cfg), arm_pd_action(s, cfg.q_neutral, cfg)], axis=-1
        )
    return ctrl


def _reach_controller(q_goal, cfg):
    def ctrl(s):
        return np.concatenate(
            [base_velocity_action(s, np.zeros_like(s[..., BASE_VEL]), cfg), arm_pd_action(s, q_goal, cfg)],
            axis=-1,
        )
    return ctrl


def sample_walk_command(rng):
    speed = rng.uniform(0.3, 1.0)
    heading = rng.uniform(-np.pi, np.pi)
    return speed * np.array([np.cos(heading), np.sin(heading)])


def generate_walk_clip(rng, duration=10.0, cfg: EnvConfig = DEFAULT_CONFIG, clip_id="walk") -> MotionClip:
    """Base tracks a random constant velocity command while the arm holds its neutral pose."""
    v_cmd = sample_walk_command(rng)
    n = int(round(duration / cfg.dt))
    clip = MotionClip(clip_id, cfg.dt, _rollout(neutral_state(cfg), _walk_controller(v_cmd, cfg), n, cfg))
    clip.command = v_cmd
    return clip


def sample_reach_target(rng, cfg: EnvConfig = DEFAULT_CONFIG, r_min=0.3, r_max=0.95, margin=0.05):
    """Point in the reach annulus whose elbow-down solution respects the joint limits."""
    while True:
        r = rng.uniform(r_min, r_max)
        ang = rng.uniform(-np.pi, np.pi)
        target = r * np.array([np.cos(ang), np.sin(ang)])
        try:
            q = two_link_ik(target, cfg)
        except ValueError:
            continue
        if np.all(np.abs(q) <= cfg.joint_limit - margin):
            return target, q


def generate_reach_clip(rng, duration=10.0, cfg: EnvConfig = DEFAULT_CONFIG, clip_id="reach") -> MotionClip:
    """Base held at the origin while joint PD drives the tip to a sampled nearby point."""
    target, q_goal = sample_reach_target(rng, cfg)
    n = int(round(duration / cfg.dt))
    clip = MotionClip(clip_id, cfg.dt, _rollout(neutral_state(cfg), _reach_controller(q_goal, cfg), n, cfg))
    clip.target = target
    return clip


def generate_dataset(rng, n_walk=120, n_reach=20, duration=10.0, cfg: EnvConfig = DEFAULT_CONFIG) -> MotionDataset:
    """Walk clips followed by reach clips; all clips of one kind are simulated as one batch."""
    n = int(round(duration / cfg.dt))
    clips = []
    if n_walk:
        v_cmd = np.array([sample_walk_command(rng) for _ in range(n_walk)])
        frames = _rollout(neutral_state(cfg, n_walk), _walk_controller(v_cmd, cfg), n, cfg)
        clips += [MotionClip(f"walk_{i:03d}", cfg.dt, frames[:, i]) for i in range(n_walk)]
    if n_reach:
        q_goal = np.array([sample_reach_target(rng, cfg)[1] for _ in range(n_reach)])
        frames = _rollout(neutral_state(cfg, n_reach), _reach_controller(q_goal, cfg), n, cfg)
        clips += [MotionClip(f"reach_{i:03d}", cfg.dt, frames[:, i]) for i in range(n_reach)]
    return MotionDataset(clips, robot="planar_arm")
