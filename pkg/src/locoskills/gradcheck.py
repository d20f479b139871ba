"""Finite-difference checks for every trainable network, on its real training loss."""
from __future__ import annotations

import numpy as np

from . import adversary, diffdisc, skills, toyenv
from .numkit import FeedForwardNet, grad_check
from .policy import GaussianPolicy
from .trainer.ppo import surrogate_loss, value_loss


def check_all(rng=None, tolerance=1e-4, h=1e-5, hidden=(32, 16), batch=16, max_entries=40) -> dict:
    """Returns ``{network name: GradCheckReport}``.

    Networks use the production layer structure and activations with small
    widths so the central differences finish in seconds. Relu kinks make a
    finite difference wrong whenever a pre-activation sits within ``h`` of
    zero; with random float64 inputs that has negligible probability.
    """
    rng = np.random.default_rng(rng)
    tdim = 12
    obs_dim = toyenv.OBS_DIM + skills.LATENT_DIM
    out = {}

    policy = GaussianPolicy.build(obs_dim, toyenv.ACTION_DIM, hidden, 0.5, rng)
    # scale up the output layer so the check is not dominated by near-zero weights
    policy.mean_net.layers[-1].weight *= 50.0
    obs = rng.normal(size=(batch, obs_dim))
    acts = policy.mean(obs) + 0.5 * rng.normal(size=(batch, toyenv.ACTION_DIM))
    logp_old = policy.log_prob(policy.mean(obs), acts) + rng.normal(scale=0.05, size=batch)
    adv = rng.normal(size=batch)
    out["policy mean (PPO surrogate)"] = grad_check(
        policy.params(), lambda: surrogate_loss(policy, obs, acts, logp_old, adv, clip=10.0)[:2],
        tolerance, h, max_entries, rng,
    )
    z1 = skills.sample_latent(rng, batch)
    z2 = skills.sample_latent(rng, batch)
    obs_only = obs[:, : toyenv.OBS_DIM]
    out["policy mean (diversity)"] = grad_check(
        policy.params(), lambda: skills.diversity_loss(policy, obs_only, z1, z2), tolerance, h, max_entries, rng,
    )

    value = FeedForwardNet.build([obs_dim, *hidden, 1], activation="tanh", rng=rng)
    returns = rng.normal(size=batch)
    out["value"] = grad_check(value.params(), lambda: value_loss(value, obs, returns), tolerance, h, max_entries, rng)

    gan = adversary.GanDiscriminator.build(tdim, hidden, 1e-4, rng)
    xm, xp = rng.normal(size=(batch, tdim)), rng.normal(size=(batch, tdim))
    out["D_net"] = grad_check(gan.params(), lambda: adversary.gan_loss(gan, xm, xp), tolerance, h, max_entries, rng)

    enc = skills.SkillEncoder.build(tdim, skills.LATENT_DIM, hidden, 5.0, rng)
    z = skills.sample_latent(rng, batch)
    out["mu_q"] = grad_check(enc.params(), lambda: skills.encoder_loss(enc, xp, z), tolerance, h, max_entries, rng)

    dd = diffdisc.DiffusionDiscriminator.build(tdim, hidden, 4, 100, 1e-4, rng)
    noise = dd.sample_noise(2 * batch, rng)
    out["eps_phi"] = grad_check(
        dd.params(), lambda: diffdisc.train_loss(dd, xm, xp, noise=noise), tolerance, h, max_entries, rng,
    )
    return out
