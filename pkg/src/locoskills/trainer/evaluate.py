"""Point-reaching evaluation of any controller on the toy environment."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .. import toyenv
from .common import eval_violations
from .highlevel import sample_targets


@dataclass
class EvalReport:
    final_errors: np.ndarray  # one row per episode
    violation_frac: np.ndarray  # fraction of steps with any c+ > 0, per episode
    fell: np.ndarray  # bool per episode

    @property
    def n(self):
        return len(self.final_errors)

    @property
    def mean_error(self):
        return float(np.mean(self.final_errors))

    @property
    def std_error(self):
        return float(np.std(self.final_errors))

    @property
    def violation_percent(self):
        return 100.0 * float(np.mean(self.violation_frac))

    @property
    def fall_percent(self):
        return 100.0 * float(np.mean(self.fell))

    def success_rate(self, tol=0.1):
        return float(np.mean(self.final_errors <= tol))

    def rows(self):
        return [
            {"episode": i, "final_error": float(e), "violation_frac": float(v), "fell": bool(f)}
            for i, (e, v, f) in enumerate(zip(self.final_errors, self.violation_frac, self.fell))
        ]

    def summary(self):
        return (
            f"final error {100 * self.mean_error:.2f} +/- {100 * self.std_error:.2f} cm | "
            f"violation {self.violation_percent:.4f} % | fall analog {self.fall_percent:.2f} % | "
            f"success(<=0.1) {100 * self.success_rate():.1f} % over {self.n} episodes"
        )


class ScriptedReacher:
    """Oracle controller: walk until the target is within arm reach, stop, then reach with IK."""

    def __init__(self, cfg: toyenv.EnvConfig, standoff=0.6, speed=0.8):
        self.cfg, self.standoff, self.speed = cfg, standoff, speed

    def reset(self, n):
        pass

    def act(self, state, last_action, target):
        cfg = self.cfg
        n = state.shape[0]
        base = state[:, toyenv.BASE_POS]
        rel = target - base
        dist = np.linalg.norm(rel, axis=1, keepdims=True)
        # approach to a standoff point, decelerating smoothly near it
        gap = dist - self.standoff
        v_des = rel / np.maximum(dist, 1e-9) * np.clip(1.5 * gap, -self.speed, self.speed)
        base_act = toyenv.base_velocity_action(state, v_des, cfg)
        q_goal = np.tile(np.asarray(cfg.q_neutral, dtype=float), (n, 1))
        for i in range(n):
            if dist[i, 0] <= cfg.reach - 1e-3:
                try:
                    q = toyenv.two_link_ik(rel[i], cfg)
                except ValueError:
                    continue
                # mirror to the elbow-up branch when the shoulder would pass its limit
                for cand in (q, _elbow_up(q, rel[i])):
                    if np.all(np.abs(cand) <= cfg.joint_limit):
                        q_goal[i] = cand
                        break
        return np.concatenate([base_act, toyenv.arm_pd_action(state, q_goal, cfg)], axis=1)


def _elbow_up(q, rel):
    ang = np.arctan2(rel[1], rel[0])
    q1 = 2.0 * ang - q[0]
    return np.array([(q1 + np.pi) % (2.0 * np.pi) - np.pi, -q[1]])


def evaluate(controller, n_episodes, rng, env_cfg=toyenv.DEFAULT_CONFIG, radii=(1.0, 2.0), constraints=None,
             fall_seconds=0.5):
    """Run ``n_episodes`` full-length episodes in parallel from the origin.

    ``controller`` provides ``reset(n)`` and ``act(state, last_action, target)``.
    Final error is measured at the last step of the episode.
    """
    from ..config import CatConfig
    from .common import make_constraints

    rng = np.random.default_rng(rng)
    constraints = constraints or make_constraints(CatConfig(), env_cfg)
    n = n_episodes
    state = toyenv.neutral_state(env_cfg, n)
    last = np.zeros((n, toyenv.ACTION_DIM))
    target = sample_targets(rng, n, radii)
    controller.reset(n)
    violated = np.zeros(n)
    run = np.zeros(n, dtype=int)
    fell = np.zeros(n, dtype=bool)
    fall_steps = int(round(fall_seconds / env_cfg.dt))
    for _ in range(env_cfg.episode_length):
        act = controller.act(state, last, target)
        violated += np.any(eval_violations(constraints, state, act) > 0.0, axis=-1)
        state = toyenv.step(state, act, env_cfg)
        last = np.clip(act, -1.0, 1.0)
        saturated = np.linalg.norm(state[:, toyenv.BASE_VEL], axis=1) >= env_cfg.v_max - 1e-9
        run = np.where(saturated, run + 1, 0)
        fell |= run > fall_steps
    err = np.linalg.norm(toyenv.end_effector(state, env_cfg) - target, axis=1)
    return EvalReport(err, violated / env_cfg.episode_length, fell)
