"""Diagonal-Gaussian policy with a network mean and a state-independent log std."""
from __future__ import annotations

import numpy as np

from .numkit import FeedForwardNet

LOG_2PI = np.log(2.0 * np.pi)


class GaussianPolicy:
    def __init__(self, mean_net: FeedForwardNet, log_std=None, init_std=0.5):
        self.mean_net = mean_net
        n = mean_net.output_dim
        self.log_std = (
            np.full(n, np.log(init_std)) if log_std is None else np.asarray(log_std, dtype=np.float64).copy()
        )

    @classmethod
    def build(cls, obs_dim, act_dim, hidden=(256, 128), init_std=0.5, rng=None):
        net = FeedForwardNet.build([obs_dim, *hidden, act_dim], activation="tanh", rng=rng)
        # small output layer keeps initial actions near zero
        net.layers[-1].weight *= 0.01
        return cls(net, init_std=init_std)

    @property
    def obs_dim(self):
        return self.mean_net.input_dim

    @property
    def act_dim(self):
        return self.mean_net.output_dim

    def params(self):
        return self.mean_net.params() + [self.log_std]

    def mean(self, obs):
        return self.mean_net.predict(obs)

    def sample(self, obs, rng):
        mu = self.mean(obs)
        return mu + np.exp(self.log_std) * rng.standard_normal(mu.shape)

    def log_prob(self, mu, actions):
        z = (actions - mu) * np.exp(-self.log_std)
        return -0.5 * np.sum(z * z, axis=-1) - np.sum(self.log_std) - 0.5 * self.act_dim * LOG_2PI

    def entropy(self):
        return float(np.sum(self.log_std) + 0.5 * self.act_dim * (1.0 + LOG_2PI))

    def copy(self):
        return GaussianPolicy(self.mean_net.copy(), self.log_std)


def gaussian_kl_shared_std(mu1, mu2, log_std):
    """KL(N(mu1, s) || N(mu2, s)) for diagonal Gaussians with the same std."""
    d = (mu1 - mu2) * np.exp(-log_std)
    return 0.5 * np.sum(d * d, axis=-1)
