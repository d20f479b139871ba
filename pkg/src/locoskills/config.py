"""Run configuration. Desk-scale defaults; reference-scale values noted alongside."""
from __future__ import annotations

import dataclasses
import hashlib
import json
from dataclasses import dataclass, field

from .toyenv import EnvConfig


@dataclass
class PpoConfig:
    gamma: float = 0.99
    lam: float = 0.95
    clip: float = 0.2
    ppo_epochs: int = 4
    minibatch: int = 1024
    lr: float = 3e-4
    value_lr: float = 3e-4
    entropy_coef: float = 0.0
    rollout_steps: int = 64
    n_envs: int = 128  # reference scale: 4096 parallel environments
    beta: float = 0.1  # weight of the skill-discovery reward; 0.5 let r_E swamp the imitation term
    diversity_weight: float = 0.01
    max_kl: float = 1.0
    max_grad_norm: float = 1.0
    min_log_std: float = -5.0
    max_log_std: float = 1.0
    init_std: float = 0.5
    hidden: tuple = (256, 128)

    def __post_init__(self):
        if not (0.0 < self.gamma < 1.0 and 0.0 < self.lam < 1.0):
            raise ValueError("gamma and lam must lie in (0, 1)")
        if self.clip <= 0.0:
            raise ValueError("clip must be positive")


def _default_constraints():
    # only the commanded base acceleration is constrained in the toy environment
    return {"base_accel": {"limit": 2.5, "final_pmax": 0.2, "ramp_start_fraction": 0.7}}


@dataclass
class CatConfig:
    enabled: bool = False
    ema_rate: float = 0.05
    constraints: dict = field(default_factory=_default_constraints)

    def __post_init__(self):
        for name, spec in self.constraints.items():
            missing = {"limit", "final_pmax", "ramp_start_fraction"} - set(spec)
            if missing:
                raise ValueError(f"constraint {name!r} lacks {sorted(missing)}")
            if not 0.0 <= spec["final_pmax"] <= 1.0:
                raise ValueError(f"constraint {name!r}: final_pmax must lie in [0, 1]")


@dataclass
class DiscConfig:
    kind: str = "gan"  # or "diffusion"
    hidden: tuple = (256, 256)
    lr: float = 1e-5  # faster discriminators saturate against the small desk batch
    weight_decay: float = 1e-4
    passes: int = 2
    batch: int = 512  # policy rows per minibatch, matched by as many dataset rows
    diffusion_steps: int = 100
    diffusion_k: int = 4
    gradient_penalty: bool = False

    def __post_init__(self):
        if self.kind not in ("gan", "diffusion"):
            raise ValueError(f"discriminator kind must be 'gan' or 'diffusion', not {self.kind!r}")


@dataclass
class LowLevelConfig:
    epochs: int = 300  # reference scale: 7000
    latent_period: int = 150
    kappa: float = 5.0
    encoder_hidden: tuple = (256, 256)
    encoder_lr: float = 3e-4
    encoder_passes: int = 1
    encoder_batch: int = 1024
    diversity_batch: int = 256  # rows of each PPO minibatch used for the diversity term
    checkpoint_every: int = 50
    ppo: PpoConfig = field(default_factory=PpoConfig)
    disc: DiscConfig = field(default_factory=DiscConfig)
    cat: CatConfig = field(default_factory=CatConfig)


@dataclass
class HighLevelConfig:
    epochs: int = 200  # reference scale: 2000
    period: int = 5  # low-level steps per latent (50 Hz / 10 Hz)
    target_radii: tuple = (1.0, 2.0)
    eval_every: int = 10
    eval_episodes: int = 32
    checkpoint_every: int = 50
    ppo: PpoConfig = field(
        default_factory=lambda: PpoConfig(
            rollout_steps=32, n_envs=128, minibatch=1024, beta=0.0, diversity_weight=0.0, init_std=0.5
        )
    )

    def __post_init__(self):
        r0, r1 = self.target_radii
        if not 0.0 < r0 < r1:
            raise ValueError("target radii must be positive and ordered")


@dataclass
class RunConfig:
    seed: int = 0
    env: EnvConfig = field(default_factory=EnvConfig)
    low: LowLevelConfig = field(default_factory=LowLevelConfig)
    high: HighLevelConfig = field(default_factory=HighLevelConfig)
    dataset_path: str | None = None
    low_checkpoint: str | None = None
    out_dir: str = "runs/default"
    n_walk: int = 120
    n_reach: int = 20
    eval_episodes: int = 256

    def to_dict(self) -> dict:
        return _plain(dataclasses.asdict(self))

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    def hash(self) -> str:
        # the output location does not influence results, so moving a run keeps its hash
        d = self.to_dict()
        d.pop("out_dir")
        canon = json.dumps(d, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(canon.encode()).hexdigest()[:16]

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        return _build(cls, d)


def _plain(x):
    if isinstance(x, dict):
        return {k: _plain(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_plain(v) for v in x]
    return x


def _build(cls, d):
    if not isinstance(d, dict):
        raise ValueError(f"expected a mapping for {cls.__name__}")
    fields = {f.name: f for f in dataclasses.fields(cls)}
    unknown = set(d) - set(fields)
    if unknown:
        raise ValueError(f"unknown {cls.__name__} keys: {sorted(unknown)}")
    kwargs = {}
    for name, value in d.items():
        f = fields[name]
        default = _default_of(f)
        if dataclasses.is_dataclass(default):
            if not isinstance(value, dict):
                raise ValueError(f"expected a mapping for {cls.__name__}.{name}")
            merged = {k: v for k, v in dataclasses.asdict(default).items()
                      if not dataclasses.is_dataclass(getattr(default, k))}
            merged.update(value)
            kwargs[name] = _build(type(default), merged)
        elif isinstance(default, tuple):
            kwargs[name] = tuple(value)
        else:
            kwargs[name] = value
    return cls(**kwargs)


def _default_of(f):
    if f.default is not dataclasses.MISSING:
        return f.default
    if f.default_factory is not dataclasses.MISSING:
        return f.default_factory()
    return None


def load_config(path) -> RunConfig:
    with open(path, encoding="utf-8") as fh:
        return RunConfig.from_dict(json.load(fh))
