"""Shared training plumbing: rng streams, rollout buffer, constraints, metrics rows."""
from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field

import numpy as np

from .. import toyenv
from ..cat import CatState

METRIC_COLUMNS = [
    "epoch",
    "mean_rD",
    "mean_rE",
    "diversity_loss",
    "disc_loss",
    "disc_score_policy",
    "disc_score_dataset",
    "mean_delta",
    "violation_frac",
    "episode_return",
    "eef_error_eval",
]

STREAMS = ("init", "env", "action", "disc", "encoder", "ppo", "diversity", "eval")


def rng_streams(seed: int) -> dict:
    """Independent generators per component, derived from the master seed by fixed index."""
    children = np.random.SeedSequence(seed).spawn(len(STREAMS))
    return {name: np.random.default_rng(s) for name, s in zip(STREAMS, children)}


@dataclass
class RolloutBuffer:
    """Rectangular (T, N, ...) record of one rollout."""

    obs: np.ndarray  # network input (observation, plus latent for the low level)
    states: np.ndarray
    next_states: np.ndarray
    actions: np.ndarray
    logp: np.ndarray
    values: np.ndarray
    deltas: np.ndarray
    violations: np.ndarray  # c+ per constraint
    dones: np.ndarray
    latents: np.ndarray | None = None
    r_disc: np.ndarray | None = None
    r_enc: np.ndarray | None = None
    r_task: np.ndarray | None = None
    rewards: np.ndarray | None = None
    last_value: np.ndarray | None = None
    extras: dict = field(default_factory=dict)

    @property
    def shape(self):
        return self.logp.shape

    def flat(self, name):
        x = getattr(self, name) if hasattr(self, name) else self.extras[name]
        T, N = self.shape
        return x.reshape(T * N, *x.shape[2:])


def make_constraints(cat_cfg, env_cfg):
    """Constraint evaluators from the CaT config; only 'base_accel' exists in the toy env."""
    out = []
    for name, spec in cat_cfg.constraints.items():
        if name != "base_accel":
            raise ValueError(f"unknown constraint {name!r}")
        limit = float(spec["limit"])
        out.append(
            toyenv.ConstraintSpec(
                name,
                lambda s, a, limit=limit: env_cfg.base_accel_scale
                * np.linalg.norm(np.clip(a, -1.0, 1.0)[..., 0:2], axis=-1)
                - limit,
                float(spec["final_pmax"]),
                float(spec["ramp_start_fraction"]),
            )
        )
    return out


def make_cat_state(cat_cfg, constraints) -> CatState:
    return CatState(
        [c.name for c in constraints],
        [c.final_pmax for c in constraints],
        constraints[0].ramp_start_fraction,
        cat_cfg.ema_rate,
    )


def eval_violations(constraints, state, action):
    return np.stack([np.maximum(0.0, c.evaluator(state, action)) for c in constraints], axis=-1)


def format_value(v):
    if v is None or v == "":
        return ""
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return repr(float(v))


def metrics_to_csv(rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(METRIC_COLUMNS)
    for row in rows:
        w.writerow([format_value(row.get(c)) for c in METRIC_COLUMNS])
    return buf.getvalue()


def read_metrics(path):
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames != METRIC_COLUMNS:
            raise ValueError(f"{path}: unexpected metrics header {reader.fieldnames}")
        return [
            {k: (float(v) if v not in ("", None) else None) for k, v in row.items()}
            for row in reader
        ]
