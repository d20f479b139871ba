"""Skill latents on the unit hypersphere, the vMF skill encoder and the diversity objective."""
from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .numkit import FeedForwardNet
from .policy import GaussianPolicy

log = logging.getLogger(__name__)

LATENT_DIM = 7


def sample_latent(rng, n=None, dim=LATENT_DIM) -> np.ndarray:
    """Uniform draw(s) from the unit sphere via normalised standard normals."""
    shape = (dim,) if n is None else (n, dim)
    z = rng.standard_normal(shape)
    norms = np.linalg.norm(z, axis=-1, keepdims=True)
    # redraw degenerate rows; practically never taken
    while np.any(norms < 1e-12):
        bad = (norms < 1e-12)[..., 0]
        z[bad] = rng.standard_normal((int(np.sum(bad)), dim)) if z.ndim == 2 else rng.standard_normal(dim)
        norms = np.linalg.norm(z, axis=-1, keepdims=True)
    return z / norms


def project_latent(z_bar, previous=None) -> np.ndarray:
    """Project raw latents onto the unit sphere.

    Rows with norm below 1e-12 keep ``previous`` (required in that case).
    """
    z_bar = np.asarray(z_bar, dtype=np.float64)
    if not np.all(np.isfinite(z_bar)):
        raise FloatingPointError("non-finite latent")
    norms = np.linalg.norm(z_bar, axis=-1, keepdims=True)
    small = norms < 1e-12
    out = z_bar / np.where(small, 1.0, norms)
    if np.any(small):
        if previous is None:
            raise ValueError("latent has near-zero norm and no previous latent to hold")
        log.warning("near-zero latent norm; holding previous latent")
        out = np.where(small, previous, out)
    return out


def latent_distance(z1, z2):
    """Cosine distance 0.5 * (1 - z1.z2), in [0, 1] for unit vectors."""
    return 0.5 * (1.0 - np.sum(np.asarray(z1) * np.asarray(z2), axis=-1))


@dataclass
class SkillEncoder:
    net: FeedForwardNet  # transition features (2F) -> raw mean direction (7)
    kappa: float = 5.0

    @classmethod
    def build(cls, transition_dim, latent_dim=LATENT_DIM, hidden=(256, 256), kappa=5.0, rng=None):
        return cls(FeedForwardNet.build([transition_dim, *hidden, latent_dim], activation="relu", rng=rng), kappa)

    def mean_direction(self, transitions):
        u = self.net.predict(transitions)
        return u / np.linalg.norm(u, axis=-1, keepdims=True)

    def params(self):
        return self.net.params()


def skill_reward(encoder: SkillEncoder, transitions, z):
    """kappa * mu_q(s, s')^T z, the vMF log-density without its normaliser."""
    mu = encoder.mean_direction(transitions)
    return encoder.kappa * np.sum(mu * z, axis=-1)


def encoder_loss(encoder: SkillEncoder, transitions, z):
    """Negative mean alignment and its gradients w.r.t. the encoder parameters."""
    transitions = np.atleast_2d(transitions)
    z = np.atleast_2d(z)
    u, cache = encoder.net.forward_cached(transitions)
    norm = np.linalg.norm(u, axis=-1, keepdims=True)
    mu = u / norm
    n = u.shape[0]
    loss = -encoder.kappa * float(np.mean(np.sum(mu * z, axis=-1)))
    g_mu = -encoder.kappa * z / n
    # d(u/|u|)/du = (I - mu mu^T) / |u|
    g_u = (g_mu - mu * np.sum(g_mu * mu, axis=-1, keepdims=True)) / norm
    grads, _ = encoder.net.backward(g_u, cache, input_grad=False)
    return loss, grads


def diversity_loss(policy: GaussianPolicy, obs, z1, z2, min_distance=1e-3):
    """Mean of (KL(pi(.|s,z1) || pi(.|s,z2)) / D_z(z1, z2) - 1)^2 over pairs.

    ``obs`` excludes the latent; the policy input is ``[obs, z]``. Returns
    ``(loss, grads)`` with grads ordered like ``policy.params()``.
    """
    obs, z1, z2 = np.atleast_2d(obs), np.atleast_2d(z1), np.atleast_2d(z2)
    dz = latent_distance(z1, z2)
    keep = dz >= min_distance
    zero_grads = [np.zeros_like(p) for p in policy.params()]
    if not np.any(keep):
        log.warning("diversity loss: every latent pair was too close; skipped")
        return 0.0, zero_grads
    obs, z1, z2, dz = obs[keep], z1[keep], z2[keep], dz[keep]
    net = policy.mean_net
    mu1, c1 = net.forward_cached(np.concatenate([obs, z1], axis=1))
    mu2, c2 = net.forward_cached(np.concatenate([obs, z2], axis=1))
    inv_var = np.exp(-2.0 * policy.log_std)
    diff = mu1 - mu2
    kl = 0.5 * np.sum(diff * diff * inv_var, axis=1)
    ratio = kl / dz
    n = obs.shape[0]
    loss = float(np.mean((ratio - 1.0) ** 2))
    g_kl = 2.0 * (ratio - 1.0) / dz / n  # d loss / d kl
    g_mu1 = g_kl[:, None] * diff * inv_var
    grads1, _ = net.backward(g_mu1, c1, input_grad=False)
    grads2, _ = net.backward(-g_mu1, c2, input_grad=False)
    grads = [a + b for a, b in zip(grads1, grads2)]
    # d kl / d log_std = -(diff^2 * inv_var) per dimension
    g_logstd = -np.sum(g_kl[:, None] * diff * diff * inv_var, axis=0)
    return loss, grads + [g_logstd]

