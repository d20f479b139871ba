"""Diffusion discriminator: a label-conditioned noise predictor turned into a classifier.

The classifier compares the denoising error under the policy label with the
error under the dataset label, evaluated on the same sampled timesteps and
noise for both labels.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .adversary import imitation_reward
from .numkit import FeedForwardNet, log_sigmoid, sigmoid

LABEL_DATASET = np.array([1.0, 0.0])
LABEL_POLICY = np.array([0.0, 1.0])


@dataclass
class DiffusionSchedule:
    steps: int = 100
    beta_start: float = 1e-4
    beta_end: float = 0.02
    betas: np.ndarray = field(init=False)
    alpha_bar: np.ndarray = field(init=False)

    def __post_init__(self):
        self.betas = np.linspace(self.beta_start, self.beta_end, self.steps)
        self.alpha_bar = np.cumprod(1.0 - self.betas)

    def alpha_bar_at(self, t):
        t = np.asarray(t)
        if np.any(t < 1) or np.any(t > self.steps):
            raise ValueError(f"diffusion timestep must lie in [1, {self.steps}]")
        return self.alpha_bar[t - 1]


def add_noise(x, alpha_bar, eps):
    ab = np.asarray(alpha_bar, dtype=np.float64)
    return np.sqrt(ab) * x + np.sqrt(1.0 - ab) * eps


def noise_transition(schedule: DiffusionSchedule, x, t, eps):
    """Forward-process sample sqrt(abar_t) x + sqrt(1 - abar_t) eps."""
    ab = schedule.alpha_bar_at(t)
    return add_noise(x, np.asarray(ab)[..., None] if np.ndim(ab) else ab, eps)


@dataclass
class DiffusionDiscriminator:
    net: FeedForwardNet  # [noised x (2F), t/T, label one-hot (2)] -> predicted noise (2F)
    schedule: DiffusionSchedule = field(default_factory=DiffusionSchedule)
    k: int = 4
    weight_decay: float = 1e-4
    label_dataset: np.ndarray = field(default_factory=lambda: LABEL_DATASET.copy())
    label_policy: np.ndarray = field(default_factory=lambda: LABEL_POLICY.copy())

    @classmethod
    def build(cls, transition_dim, hidden=(256, 256), k=4, steps=100, weight_decay=1e-4, rng=None):
        net = FeedForwardNet.build([transition_dim + 3, *hidden, transition_dim], activation="relu", rng=rng)
        return cls(net, DiffusionSchedule(steps), k, weight_decay)

    @property
    def transition_dim(self):
        return self.net.output_dim

    def params(self):
        return self.net.params()

    def sample_noise(self, n, rng):
        """Stratified timesteps (n, k) and Gaussian noise (n, k, 2F)."""
        T, k = self.schedule.steps, self.k
        edges = np.linspace(0.0, T, k + 1)
        u = rng.uniform(size=(n, k))
        t = np.floor(edges[:-1] + u * (edges[1:] - edges[:-1])).astype(int) + 1
        t = np.clip(t, 1, T)
        eps = rng.standard_normal((n, k, self.transition_dim))
        return t, eps

    def _inputs(self, x, t, eps, label):
        n, k = t.shape
        ab = self.schedule.alpha_bar_at(t)[..., None]
        xn = add_noise(x[:, None, :], ab, eps)
        tt = (t / self.schedule.steps)[..., None]
        lab = np.broadcast_to(label, (n, k, 2))
        return np.concatenate([xn, tt, lab], axis=-1).reshape(n * k, -1)

    def losses(self, x, label, t, eps, cache=False):
        """Per-row diffusion loss (mean over the k samples of ||eps_hat - eps||^2)."""
        x = np.atleast_2d(x)
        n, k = t.shape
        inp = self._inputs(x, t, eps, label)
        if cache:
            pred, c = self.net.forward_cached(inp)
        else:
            pred, c = self.net.predict(inp), None
        err = pred.reshape(n, k, -1) - eps
        loss = np.sum(err * err, axis=-1).mean(axis=1)
        return (loss, err, c) if cache else loss


def diffusion_loss(d: DiffusionDiscriminator, x, label, rng=None, noise=None):
    """Denoising loss of transitions ``x`` under ``label`` ('dataset' or 'policy')."""
    lab = _label(d, label)
    x = np.atleast_2d(x)
    t, eps = noise if noise is not None else d.sample_noise(x.shape[0], rng)
    return d.losses(x, lab, t, eps)


def _label(d, label):
    if isinstance(label, str):
        if label == "dataset":
            return d.label_dataset
        if label == "policy":
            return d.label_policy
        raise ValueError(f"label must be 'dataset' or 'policy', not {label!r}")
    return np.asarray(label, dtype=np.float64)


def loss_gap(d: DiffusionDiscriminator, x, rng=None, noise=None):
    """L(x, policy label) - L(x, dataset label) with common random numbers."""
    x = np.atleast_2d(x)
    t, eps = noise if noise is not None else d.sample_noise(x.shape[0], rng)
    return d.losses(x, d.label_policy, t, eps) - d.losses(x, d.label_dataset, t, eps)


def diffusion_discriminate(d: DiffusionDiscriminator, x, rng=None, noise=None):
    return sigmoid(loss_gap(d, x, rng, noise))


def diffusion_reward(d: DiffusionDiscriminator, x, rng=None, noise=None):
    return imitation_reward(diffusion_discriminate(d, x, rng, noise))


def train_loss(d: DiffusionDiscriminator, dataset_batch, policy_batch, rng=None, noise=None):
    """Cross-entropy of the diffusion classifier (dataset -> 1, policy -> 0) plus weight decay.

    ``noise`` optionally fixes the ``(t, eps)`` samples for the stacked
    ``[dataset_batch; policy_batch]`` rows. Returns ``(loss, grads)``.
    """
    xm = np.atleast_2d(dataset_batch)
    xp = np.atleast_2d(policy_batch)
    if len(xm) == 0 or len(xp) == 0:
        raise ValueError("both batches must be non-empty")
    x = np.concatenate([xm, xp], axis=0)
    n = x.shape[0]
    y = np.concatenate([np.ones(len(xm)), np.zeros(len(xp))])
    t, eps = noise if noise is not None else d.sample_noise(n, rng)
    lp, err_p, cp = d.losses(x, d.label_policy, t, eps, cache=True)
    lm, err_m, cm = d.losses(x, d.label_dataset, t, eps, cache=True)
    gap = lp - lm
    # mean over each half so a balanced batch weighs both classes equally
    w = np.where(y == 1.0, 1.0 / len(xm), 1.0 / len(xp))
    bce = -(y * log_sigmoid(gap) + (1.0 - y) * log_sigmoid(-gap))
    loss = float(np.sum(w * bce))
    g_gap = w * (sigmoid(gap) - y)
    k = t.shape[1]
    g_pred_p = (2.0 / k) * g_gap[:, None, None] * err_p
    g_pred_m = -(2.0 / k) * g_gap[:, None, None] * err_m
    gp, _ = d.net.backward(g_pred_p.reshape(n * k, -1), cp, input_grad=False)
    gm, _ = d.net.backward(g_pred_m.reshape(n * k, -1), cm, input_grad=False)
    params = d.net.params()
    decay = 0.5 * d.weight_decay * sum(float(np.sum(p * p)) for p in params[0::2])
    grads = []
    for j, (a, b) in enumerate(zip(gp, gm)):
        g = a + b
        if j % 2 == 0:
            g = g + d.weight_decay * params[j]
        grads.append(g)
    return loss + decay, grads
